import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ellipdyn.geometry import (DomainFamilyCache, FlowField, HypothesisViolation, area_density,
                               asymptotic_profile, boundary_points, builtin_level, coarea_integrate,
                               cubic_perturbed_ellipse, ellipse_level, eval_mean_curvature, eval_sigma,
                               flow_jacobian, flow_map, flow_points, observed_order, polynomial_level,
                               quartic_perturbed_level, radial_level, ray_radius, sigma0_formula,
                               validate_level_function)
from ellipdyn.spectral import CircleBasis, SphereBasis


# ---------------------------------------------------------------------------
# sigma and mean curvature


@pytest.mark.parametrize("n", [2, 3])
def test_sigma_radial_is_one(n):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((10, n))
    assert np.allclose(eval_sigma(radial_level(n), x), 1.0)


def test_sigma_ellipse_axis_point(ellipse):
    # psi = x^2/4 + y^2 at (2, 0): 2*1/|(1, 0)| = 2
    assert eval_sigma(ellipse, np.array([[2.0, 0.0]]))[0] == pytest.approx(2.0, abs=1e-14)


def test_sigma_matches_normal_difference_of_sqrt_psi(ellipse):
    x = np.array([[1.2, 0.5]])
    nu = ellipse.grad(x) / np.linalg.norm(ellipse.grad(x))
    h = 1e-6
    t = lambda p: np.sqrt(ellipse.value(p))  # noqa: E731
    dt = (t(x + h * nu) - t(x - h * nu)) / (2 * h)
    assert eval_sigma(ellipse, x)[0] == pytest.approx(1 / dt[0], rel=1e-8)


def test_sigma_rejects_origin():
    with pytest.raises(ValueError):
        eval_sigma(radial_level(2), np.zeros((1, 2)))
    with pytest.raises(ValueError):
        eval_sigma(ellipse_level(2, 1), np.zeros((1, 2)))


@pytest.mark.parametrize("n,expected", [(2, 1.0), (3, 2.0)])
@pytest.mark.parametrize("t", [0.1, 0.5, 2.0])
def test_mean_curvature_sphere(n, expected, t):
    x = np.zeros((1, n))
    x[0, -1] = t
    assert eval_mean_curvature(radial_level(n), x)[0] == pytest.approx(expected / t, rel=1e-13)


def test_mean_curvature_ellipse_vertex(ellipse):
    # classical curvature a/b^2 at the end of the major axis
    assert eval_mean_curvature(ellipse, np.array([[2.0, 0.0]]))[0] == pytest.approx(2.0, rel=1e-13)


def test_mean_curvature_matches_divergence_of_normal(ellipse):
    x = np.array([0.7, 0.6])
    h = 1e-5

    def nu(p):
        g = ellipse.grad(p[None])[0]
        return g / np.linalg.norm(g)

    div = sum((nu(x + h * e)[i] - nu(x - h * e)[i]) / (2 * h) for i, e in enumerate(np.eye(2)))
    assert eval_mean_curvature(ellipse, x[None])[0] == pytest.approx(div, rel=1e-7)


# ---------------------------------------------------------------------------
# flow


def test_flow_radial_is_scaling():
    x = np.array([[0.3, -0.4, 0.1]])
    assert np.allclose(flow_map(radial_level(3), x, -0.7), np.exp(-0.7) * x, atol=0, rtol=1e-15)
    assert np.allclose(flow_jacobian(radial_level(3), x, -0.7)[0], np.exp(-0.7) * np.eye(3))


def test_flow_normal_only_radial_is_scaling():
    level = radial_level(2)
    x = np.array([[0.6, 0.8]])
    assert np.allclose(flow_map(level, x, 0.4, tangential=False), np.exp(0.4) * x, rtol=1e-14)


@pytest.mark.parametrize("tau", [0.0])
def test_flow_identity_at_zero(ellipse, tau):
    x = np.array([[1.0, 0.5], [-1.5, 0.2]])
    assert np.array_equal(flow_map(ellipse, x, tau), x)
    assert np.allclose(flow_jacobian(ellipse, x, tau), np.eye(2))


def test_flow_level_identity_ellipse_point(ellipse):
    p = flow_map(ellipse, np.array([[2.0, 0.0]]), -1.0)
    assert ellipse.value(p)[0] == pytest.approx(np.exp(-2.0), rel=1e-9)


def test_flow_jacobian_matches_finite_differences(ellipse):
    x = np.array([1.1, 0.6])
    tau = -0.8
    J = flow_jacobian(ellipse, x[None], tau)[0]
    h = 1e-6
    fd = np.column_stack([(flow_map(ellipse, (x + h * e)[None], tau) - flow_map(ellipse, (x - h * e)[None], tau))[0]
                          / (2 * h) for e in np.eye(2)])
    assert np.allclose(J, fd, atol=1e-7)


def test_flow_points_matches_flow_map(ellipse):
    x = np.array([[1.0, 0.5], [-1.2, -0.3], [0.1, 0.9]])
    taus = np.array([-0.5, -1.5, 0.3])
    batch = flow_points(ellipse, x, taus)
    for k in range(3):
        assert np.allclose(batch[k], flow_map(ellipse, x[k:k + 1], taus[k])[0], atol=1e-9)


def test_jacobian_determinant_positive(ellipse):
    y, _ = boundary_points(ellipse, 2 * np.pi * np.arange(16) / 16)
    J = flow_jacobian(ellipse, y, -2.0)
    assert np.all(np.linalg.det(J) > 0)


@settings(max_examples=25, deadline=None)
@given(theta=st.floats(0, 2 * np.pi), r=st.floats(0.2, 1.5), tau=st.floats(-4, 1))
def test_level_set_identity_property(theta, r, tau):
    level = ellipse_level(2.0, 1.0)
    x = r * np.array([[2 * np.cos(theta), np.sin(theta)]])
    p = flow_map(level, x, tau)
    target = np.exp(2 * tau) * level.value(x)[0]
    assert abs(level.value(p)[0] - target) <= 1e-8 * max(1.0, np.exp(2 * tau))


@settings(max_examples=15, deadline=None)
@given(theta=st.floats(0, 2 * np.pi), t1=st.floats(-2, 0.5), t2=st.floats(-2, 0.5))
def test_group_law_property(theta, t1, t2):
    level = ellipse_level(2.0, 1.0)
    x = np.array([[2 * np.cos(theta), np.sin(theta)]])
    lhs = flow_map(level, flow_map(level, x, t2), t1)
    rhs = flow_map(level, x, t1 + t2)
    assert np.max(np.abs(lhs - rhs)) <= 1e-6


def test_flow_field_equals_position_inside_cutoff(ellipse):
    field = FlowField(ellipse)
    x = 0.2 * field.rho * np.array([[0.6, 0.8], [-1.0, 0.1]])
    assert np.allclose(field(x), x, atol=1e-14)


def test_flow_field_normal_part(ellipse):
    field = FlowField(ellipse, tangential=False)
    x = np.array([[1.0, 0.7]])
    X = field(x)
    g = ellipse.grad(x)
    # Xt . grad psi = 2 psi keeps psi(phi_tau) = e^{2 tau} psi
    assert np.einsum("mi,mi->m", X, g)[0] == pytest.approx(2 * ellipse.value(x)[0], rel=1e-14)


# ---------------------------------------------------------------------------
# validation


@pytest.mark.parametrize("desc,n", [("radial", 2), ("radial", 3), ("ellipse 2 1", 2), ("ellipse 1 2 3", 3),
                                    ("quartic-perturbed 0.3", 2), ("ellipse-cubic 2 1 0.02", 2)])
def test_builtins_validate(desc, n):
    assert validate_level_function(builtin_level(desc, n)).ok


def test_saddle_rejected():
    report = validate_level_function(builtin_level("saddle", 2))
    assert not report.ok
    with pytest.raises(HypothesisViolation, match="Hessian"):
        report.raise_if_failed()


def test_degenerate_hessian_rejected():
    # no quadratic part: the Hessian at the origin vanishes
    level = polynomial_level(2, [0, 0, 0])
    report = validate_level_function(level)
    assert not report.ok


def test_unknown_descriptor():
    with pytest.raises(ValueError):
        builtin_level("torus", 2)


def test_ray_radius_on_level(ellipse):
    omega = np.array([[np.cos(0.3), np.sin(0.3)]])
    r = ray_radius(ellipse, omega)
    assert ellipse.value(r[:, None] * omega)[0] == pytest.approx(1.0, abs=1e-13)


# ---------------------------------------------------------------------------
# cache, area density and asymptotics


def test_cache_level_sets(ellipse_cache):
    cache, _ = ellipse_cache
    for t in [1e-3, 0.05, 0.5, 1.0]:
        x, _ = cache.flow(t)
        assert np.allclose(np.sqrt(cache.level.value(x)), t, rtol=1e-9)


def test_cache_sigma_consistency(ellipse_cache):
    """sigma from the closed form equals the normal velocity of the flow."""
    cache, _ = ellipse_cache
    for t in [0.01, 0.3, 0.9]:
        snap = cache.snapshot(t)
        vn = np.einsum("mi,mi->m", snap.velocity, snap.normal)
        assert np.allclose(vn, snap.sigma, atol=1e-6)


def test_area_density_radial():
    y = np.array([[0.0, 0.0, 1.0]])
    assert area_density(radial_level(3), y, 0.3)[0] == pytest.approx(0.09)


def test_area_density_identity_at_one(ellipse):
    y, _ = boundary_points(ellipse, np.linspace(0, 6, 5))
    assert np.allclose(area_density(ellipse, y, 1.0), 1.0, atol=1e-14)


def test_area_density_matches_cache(ellipse_cache):
    cache, _ = ellipse_cache
    snap = cache.snapshot(0.1)
    direct = area_density(cache.level, cache.y[:6], 0.1)
    assert np.allclose(direct, snap.area[:6], rtol=1e-7)


def test_power_law_bounds(ellipse_cache):
    cache, _ = ellipse_cache
    ts = np.geomspace(1e-3, 0.5, 12)
    det = np.array([cache.snapshot(t).det_jac / t**2 for t in ts])
    area = np.array([cache.snapshot(t).area / t for t in ts])
    assert det.min() > 0 and np.isfinite(det.max())
    assert area.min() > 0 and np.isfinite(area.max())
    # the bounded ratios stabilise as t -> 0
    assert np.allclose(det[0], det[1], rtol=1e-3)
    assert np.allclose(area[0], area[1], rtol=1e-3)


def test_first_variation_of_area(ellipse_cache):
    cache, basis = ellipse_cache
    t, h = 0.4, 1e-4
    lhs = (np.log(cache.snapshot(t + h).area) - np.log(cache.snapshot(t - h).area)) / (2 * h)
    snap = cache.snapshot(t)
    rhs = snap.sigma * snap.H + cache.tangential_divergence_gamma(t, basis)
    assert np.max(np.abs(lhs - rhs)) < 1e-5


@pytest.mark.parametrize("n", [2, 3])
def test_asymptotic_profile_radial(n):
    y = np.zeros(n)
    y[0] = 1.0
    prof = asymptotic_profile(radial_level(n), y)
    assert prof.sigma0 == pytest.approx(1.0)
    assert prof.H0 == pytest.approx(n - 1.0)
    assert np.allclose(prof.xhat, y)


def test_asymptotic_profile_ellipse_vertex(ellipse):
    prof = asymptotic_profile(ellipse, np.array([2.0, 0.0]))
    A = np.diag([0.5, 2.0])
    assert prof.converged
    assert prof.sigma0 == pytest.approx(sigma0_formula(A, prof.xhat))
    assert prof.sigma0 == pytest.approx(eval_sigma(ellipse, 1e-3 * prof.xhat[None])[0], rel=1e-8)
    assert prof.sigma0 == pytest.approx(2.0, rel=1e-10)


def test_convergence_order_perturbed():
    level = cubic_perturbed_ellipse(2.0, 1.0, 0.02)
    cache = DomainFamilyCache(level, 2 * np.pi * np.arange(8) / 8)
    orders = [asymptotic_profile(level, y, levels=8).orders(level) for y in cache.y[:3]]
    for o_s, o_h in orders:
        assert o_s >= 0.9 and o_h >= 0.9


def test_observed_order_recovers_slope():
    ts = 1e-2 * 2.0 ** -np.arange(6)
    assert observed_order(ts, 3 * ts**1.5) == pytest.approx(1.5)
    assert observed_order(ts, np.zeros(6)) == np.inf


# ---------------------------------------------------------------------------
# coarea


def test_coarea_annulus():
    basis = CircleBasis(8)
    cache = DomainFamilyCache(radial_level(2), basis.params)
    vol = coarea_integrate(lambda x: np.ones(len(x)), cache, basis.param_weights, 0.5, 1.0)
    assert vol == pytest.approx(3 * np.pi / 4, rel=1e-12)


def test_coarea_shell():
    basis = SphereBasis(4)
    cache = DomainFamilyCache(radial_level(3), basis.params)
    vol = coarea_integrate(lambda x: np.ones(len(x)), cache, basis.param_weights, 0.5, 1.0)
    assert vol == pytest.approx(4 * np.pi / 3 * (1 - 1 / 8), rel=1e-12)


def test_coarea_rejects_bad_interval():
    basis = CircleBasis(4)
    cache = DomainFamilyCache(radial_level(2), basis.params)
    with pytest.raises(ValueError):
        coarea_integrate(lambda x: x[:, 0], cache, basis.weights, 1.0, 0.5)


def test_coarea_ellipse_ring_weighted(ellipse_cache):
    cache, basis = ellipse_cache
    # int x^2 over the ring 1/4 <= psi <= 1 of x^2/4 + y^2: pi a^3 b / 4 (1 - 1/2^4)
    val = coarea_integrate(lambda x: x[:, 0] ** 2, cache, basis.param_weights, 0.5, 1.0)
    assert val == pytest.approx(np.pi * 8 / 4 * (1 - 1 / 16), rel=1e-6)
