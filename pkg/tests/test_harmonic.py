import numpy as np
import pytest
from hypothesis import given, strategies as st

from ellipdyn.dynamics import CauchyPair, LinearSystemSpec, rhs_linear
from ellipdyn.harmonic import (CenterDegeneracyWarning, HarmonicMode, asymptotic_block, exact_trace,
                               exact_trace_derivative, exact_trace_vector, rate_pair, spatial_eigenvalue)


@pytest.mark.parametrize("l,branch,expected", [(0, "+", 0.5), (2, "-", -2.5), (3, "+", 3.5), (0, "-", -0.5)])
def test_spatial_eigenvalue_ball(l, branch, expected):
    assert spatial_eigenvalue(HarmonicMode(3, l, 0, branch, 0.5)) == expected


def test_spatial_eigenvalue_disk_m0_flagged():
    with pytest.warns(CenterDegeneracyWarning):
        spatial_eigenvalue(HarmonicMode(2, m=0, alpha=0.5))


def test_spatial_eigenvalue_disk():
    assert spatial_eigenvalue(HarmonicMode(2, m=-3, branch="-", alpha=0.5)) == -2.5


def test_exact_trace_examples():
    assert exact_trace(HarmonicMode(3, 0, 0, "+"), 0.7) == (1.0, 0.0)
    assert exact_trace(HarmonicMode(3, 1, 0, "+"), 0.5) == (0.5, 1.0)
    f, g = exact_trace(HarmonicMode(3, 1, 1, "-"), 0.5)
    assert f == pytest.approx(4.0) and g == pytest.approx(-16.0)


def test_exact_trace_log_branch():
    f, g = exact_trace(HarmonicMode(2, m=0, branch="log"), 0.5)
    assert f == pytest.approx(np.log(0.5)) and g == pytest.approx(2.0)


def test_mode_validation():
    with pytest.raises(ValueError):
        HarmonicMode(3, 1, 2)
    with pytest.raises(ValueError):
        HarmonicMode(3, 1, 0, "log")
    with pytest.raises(ValueError):
        exact_trace(HarmonicMode(3, 1), 0.0)


@pytest.mark.parametrize("l", range(6))
@pytest.mark.parametrize("alpha", [0.25, 0.5, 0.75])
def test_block_eigenvalues_match_rates(l, alpha):
    ev = np.sort(np.linalg.eigvals(asymptotic_block(l, alpha, 3)).real)[::-1]
    nu_p = spatial_eigenvalue(HarmonicMode(3, l, 0, "+", alpha))
    nu_m = spatial_eigenvalue(HarmonicMode(3, l, 0, "-", alpha))
    assert np.allclose(ev, [nu_p, nu_m], atol=1e-12)
    # characteristic polynomial written for the ball
    mu = l * (l + 1)
    for nu in (nu_p, nu_m):
        assert nu**2 - (2 * alpha - 1) * nu + (alpha * (alpha - 1) - mu) == pytest.approx(0, abs=1e-12)
        assert nu == pytest.approx(((2 * alpha - 1) + np.sign(nu - alpha + 0.5) * np.sqrt(4 * mu + 1)) / 2)


@pytest.mark.parametrize("n,k", [(3, 0), (3, 4), (2, 1), (2, 5)])
def test_block_eigenvectors(n, k):
    B = asymptotic_block(k, 0.5, n)
    for nu in rate_pair(k, 0.5, n):
        v = np.array([1.0, nu - 0.5])
        assert np.allclose(B @ v, nu * v, atol=1e-12)


@given(alpha=st.floats(0.01, 0.99), l=st.integers(0, 30))
def test_alpha_window_separates_rates(alpha, l):
    nu_p, nu_m = rate_pair(l, alpha, 3)
    assert nu_p > 0 > nu_m


@pytest.mark.parametrize("branch", ["+", "-"])
@pytest.mark.parametrize("l", range(6))
def test_exact_traces_satisfy_linear_system_ball(ball_system, l, branch):
    spec = LinearSystemSpec(ball_system, 0.0, 0.0)
    basis = ball_system.basis
    for m in range(-l, l + 1):
        mode = HarmonicMode(3, l, m, branch)
        for t in np.linspace(0.1, 1.0, 4):
            y = exact_trace_vector(mode, basis, t)
            d = rhs_linear(CauchyPair.from_vector(y, t), spec, ball_system.ops(t)).vector
            df, dg = exact_trace_derivative(mode, t)
            expected = np.zeros_like(y)
            i = mode.index(basis)
            expected[i], expected[basis.dim + i] = df, dg
            assert np.max(np.abs(d - expected)) <= 1e-10 * max(1.0, np.abs(expected).max())


@pytest.mark.parametrize("m,branch", [(0, "+"), (0, "log"), (2, "+"), (-3, "-")])
def test_exact_traces_satisfy_linear_system_disk(disk_system, m, branch):
    spec = LinearSystemSpec(disk_system, 0.0, 0.0)
    mode = HarmonicMode(2, m=m, branch=branch)
    for t in (0.2, 0.9):
        y = exact_trace_vector(mode, disk_system.basis, t)
        d = rhs_linear(CauchyPair.from_vector(y, t), spec, disk_system.ops(t)).vector
        df, dg = exact_trace_derivative(mode, t)
        i = mode.index(disk_system.basis)
        assert d[i] == pytest.approx(df, rel=1e-12, abs=1e-12)
        assert d[disk_system.basis.dim + i] == pytest.approx(dg, rel=1e-12, abs=1e-12)
