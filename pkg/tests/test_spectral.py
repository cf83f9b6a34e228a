import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from ellipdyn.geometry import DomainFamilyCache, boundary_points, eval_sigma, radial_level
from ellipdyn.spectral import (AliasingWarning, BoundaryBasis, BoundaryFunction, CircleBasis, SphereBasis,
                               UnsupportedGeometry, assemble_surface_operators, make_basis, real_sph_harm,
                               sobolev_norm)
from ellipdyn.geometry import ellipse_level


@pytest.mark.parametrize("basis", [CircleBasis(12), SphereBasis(6)], ids=["circle", "sphere"])
def test_gram_is_identity(basis):
    assert np.allclose(basis.gram(), np.eye(basis.dim), atol=1e-10)


def test_circle_laplacian_eigen():
    b = CircleBasis(10)
    assert np.allclose(-b.laplacian(), np.diag(b.mu), atol=1e-10)


def test_sphere_laplacian_eigen():
    """Laplace-Beltrami by finite differences in the angles reproduces l(l+1)."""
    b = SphereBasis(4)
    th, ph, h = 1.1, 0.7, 1e-4
    for k, (l, m) in enumerate(b.labels):
        Y = lambda a, p: real_sph_harm(l, m, np.array([a]), np.array([p]))[0]  # noqa: E731
        d_th = (np.sin(th + h) * (Y(th + 2 * h, ph) - Y(th, ph)) - np.sin(th - h) * (Y(th, ph) - Y(th - 2 * h, ph))) \
            / (4 * h * h * np.sin(th))
        d_ph = (Y(th, ph + h) - 2 * Y(th, ph) + Y(th, ph - h)) / (h * h * np.sin(th) ** 2)
        assert -(d_th + d_ph) == pytest.approx(b.mu[k] * Y(th, ph), abs=1e-5)


@pytest.mark.parametrize("basis,k,mu", [(SphereBasis(3), 0, 0.0), (SphereBasis(3), 4, 6.0),
                                         (CircleBasis(4), CircleBasis(4).index(3), 9.0)])
def test_beltrami_eigenvalue(basis, k, mu):
    assert basis.beltrami_eigenvalue(k) == mu


def test_beltrami_eigenvalue_out_of_range():
    with pytest.raises(IndexError):
        CircleBasis(3).beltrami_eigenvalue(7)


def test_sphere_index_layout():
    b = SphereBasis(4)
    assert b.index(2, -2) == 4 and b.labels[b.index(3, 1)] == (3, 1)


def test_sobolev_norm_examples():
    s = SphereBasis(3)
    c = np.zeros(s.dim)
    c[0] = 1
    assert sobolev_norm(c, s, 0.7) == pytest.approx(1.0)
    c = np.zeros(s.dim)
    c[s.index(1, 0)] = 1
    assert sobolev_norm(c, s, 0.5) == pytest.approx(3**0.25)


@pytest.mark.parametrize("basis", [CircleBasis(8), SphereBasis(5)], ids=["circle", "sphere"])
def test_parseval(basis):
    rng = np.random.default_rng(3)
    c = rng.standard_normal(basis.dim)
    vals = basis.synthesize(c)
    assert sobolev_norm(c, basis, 0.0) == pytest.approx(np.sqrt(basis.weights @ vals**2), rel=1e-10)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, 33, elements=st.floats(-1e3, 1e3)))
def test_roundtrip_property(c):
    b = CircleBasis(16)
    assert np.allclose(b.analyze(b.synthesize(c)), c, atol=1e-10 * max(1.0, np.abs(c).max()))


def test_roundtrip_sphere():
    b = SphereBasis(6)
    c = np.random.default_rng(1).standard_normal(b.dim)
    assert np.max(np.abs(b.analyze(b.synthesize(c)) - c)) < 1e-10


def test_constant_mode_synthesizes_constant():
    b = CircleBasis(5)
    c = np.zeros(b.dim)
    c[0] = 1
    assert np.allclose(b.synthesize(c), 1 / np.sqrt(2 * np.pi))


@pytest.mark.parametrize("n,N", [(2, 6), (3, 4)])
def test_aliasing_flagged(n, N):
    b = make_basis(n, N)
    if n == 2:
        vals = np.cos((N + 2) * b.params)
    else:
        vals = real_sph_harm(N + 2, 1, b.params[:, 0], b.params[:, 1])
    with pytest.warns(AliasingWarning):
        b.analyze(vals)


def test_resolved_data_not_flagged():
    b = CircleBasis(6)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        b.analyze(np.cos(3 * b.params))


def test_boundary_function_json_roundtrip():
    b = SphereBasis(2)
    f = BoundaryFunction(b, np.arange(b.dim, dtype=float))
    g = BoundaryFunction.from_json(f.to_json())
    assert isinstance(g.basis, SphereBasis) and np.array_equal(g.coeffs, f.coeffs)


def test_boundary_function_rejects_bad_coeffs():
    b = CircleBasis(2)
    with pytest.raises(ValueError):
        BoundaryFunction(b, np.ones(3))
    with pytest.raises(ValueError):
        BoundaryFunction(b, np.array([1, 2, np.nan, 0, 0]))


def test_descriptor_roundtrip():
    b = CircleBasis(7, oversample=3)
    c = BoundaryBasis.from_descriptor(b.descriptor())
    assert c.N == 7 and c.nodes == b.nodes


def test_circle_derivative_matches_analytic():
    b = CircleBasis(8)
    vals, ders = b.evaluate(np.array([0.3, 2.0]), derivative=True)
    h = 1e-6
    fd = (b.evaluate(np.array([0.3, 2.0]) + h) - b.evaluate(np.array([0.3, 2.0]) - h)) / (2 * h)
    assert np.allclose(ders[..., 0], fd, atol=1e-8)


def test_sphere_derivative_matches_fd():
    b = SphereBasis(4)
    p = np.array([[0.9, 1.3]])
    _, ders = b.evaluate(p, derivative=True)
    h = 1e-6
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        fd = (b.evaluate(p + e) - b.evaluate(p - e)) / (2 * h)
        assert np.allclose(ders[..., j], fd, atol=1e-8)


# ---------------------------------------------------------------------------
# surface operators


@pytest.mark.parametrize("n,N", [(2, 6), (3, 3)])
def test_radial_operators_closed_form(n, N):
    b = make_basis(n, N)
    cache = DomainFamilyCache(radial_level(n), b.params, t_min=0.1)
    ops = assemble_surface_operators(cache, b, 0.5)
    assert ops.diagonal
    assert np.array_equal(ops.T, np.zeros_like(ops.T))
    assert np.allclose(ops.L, -np.diag(b.mu) / 0.25)


def test_ellipse_operator_annihilates_constants(ellipse_cache):
    cache, basis = ellipse_cache
    for t in [1.0, 0.3]:
        ops = assemble_surface_operators(cache, basis, t)
        assert np.max(np.abs(ops.L[:, 0])) < 1e-10
        assert np.max(np.abs(ops.T[:, 0])) < 1e-10


def test_ellipse_operator_self_adjoint(ellipse_cache):
    cache, basis = ellipse_cache
    t = 0.5
    ops = assemble_surface_operators(cache, basis, t)
    w = basis.weights * ops.extras["metric"]
    f = np.zeros(basis.dim)
    h = np.zeros(basis.dim)
    f[basis.index(1)], f[basis.index(-2)] = 1.0, 0.3
    h[basis.index(2)], h[basis.index(-1)] = 0.7, -0.4
    Lf, Lh = basis.synthesize(ops.L @ f), basis.synthesize(ops.L @ h)
    lhs = np.sum(w * Lf * basis.synthesize(h))
    rhs = np.sum(w * basis.synthesize(f) * Lh)
    assert lhs == pytest.approx(rhs, rel=1e-6, abs=1e-8)


def _fd_arclength_laplacian(level, fun, M=4000):
    th = 2 * np.pi * np.arange(M) / M
    y, dy = boundary_points(level, th)
    s = np.linalg.norm(dy[..., 0], axis=-1)
    sigma = eval_sigma(level, y)
    h = 2 * np.pi / M
    f = fun(th)
    # conservative central differences on the periodic grid
    flux = (sigma / s + np.roll(sigma / s, -1)) / 2 * (np.roll(f, -1) - f) / h
    return th, (flux - np.roll(flux, 1)) / h / s


def test_ellipse_operator_spectral_convergence():
    level = ellipse_level(2.0, 1.0)
    fun = lambda th: np.cos(th) + 0.5 * np.sin(2 * th)  # noqa: E731
    th_ref, ref = _fd_arclength_laplacian(level, fun, M=20000)
    errors = []
    for N in (16, 32, 64):
        b = CircleBasis(N)
        cache = DomainFamilyCache(level, b.params, t_min=0.5)
        ops = assemble_surface_operators(cache, b, 1.0)
        Lf = ops.L @ b.analyze(fun(b.params))
        oracle = np.interp(b.params, th_ref, ref, period=2 * np.pi)
        errors.append(np.max(np.abs(b.synthesize(Lf) - oracle)))
    # geometric decay in N down to the accuracy of the second-order reference
    assert errors[0] > 10 * errors[1] > 100 * errors[2]
    assert errors[2] < 1e-5


def test_norm_scaling_bounds(ellipse_cache):
    cache, basis = ellipse_cache
    f = np.zeros(basis.dim)
    f[basis.index(1)] = 1.0
    ratios = []
    for t in np.geomspace(1e-3, 1.0, 10):
        snap = cache.snapshot(t)
        l2 = np.sqrt(np.sum(basis.weights * snap.area * basis.synthesize(f) ** 2))
        ratios.append(l2 / (np.sqrt(t) * sobolev_norm(f, basis, 0.0)))
    ratios = np.array(ratios)
    assert ratios.min() > 0.1 and ratios.max() < 10


def test_nonradial_3d_unsupported():
    b = SphereBasis(2)
    cache = DomainFamilyCache(ellipse_level(1.0, 1.0, 2.0), b.params, t_min=0.5)
    with pytest.raises(UnsupportedGeometry):
        assemble_surface_operators(cache, b, 0.7)


def test_operator_csv_dump(tmp_path, ellipse_cache):
    cache, basis = ellipse_cache
    ops = assemble_surface_operators(cache, basis, 1.0)
    ops.dump_csv(tmp_path / "ops.csv")
    back = np.loadtxt(tmp_path / "ops.csv", delimiter=",")
    assert np.array_equal(back, np.hstack([ops.T, ops.L]))
