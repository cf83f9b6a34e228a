import math

import numpy as np
import pytest

from ellipdyn.dynamics import BoundarySystem, LinearSystemSpec
from ellipdyn.geometry import DomainFamilyCache, ellipse_level, radial_level
from ellipdyn.spectral import CircleBasis, SphereBasis


def bessel_j(m: int, x: float, deriv: bool = False) -> float:
    """Power series of J_m (or J_m') summed until the terms stop mattering."""
    total, k = 0.0, 0
    while True:
        c = (-1) ** k / (math.factorial(k) * math.factorial(k + m))
        p = 2 * k + m
        term = c * (p * (x / 2) ** (p - 1) / 2 if deriv else (x / 2) ** p) if (p or not deriv) else 0.0
        total += term
        if k > 5 and abs(term) < 1e-18 * max(1.0, abs(total)):
            return total
        k += 1


def bessel_zero(m: int, k: int, deriv: bool = False) -> float:
    """k-th positive zero of J_m (or J_m') by a sign scan and bisection."""
    found, x, step = 0, 1e-3, 1e-2
    f0 = bessel_j(m, x, deriv)
    while True:
        x1 = x + step
        f1 = bessel_j(m, x1, deriv)
        if f0 == 0 or f0 * f1 < 0:
            found += 1
            if found == k:
                lo, hi = x, x1
                for _ in range(100):
                    mid = 0.5 * (lo + hi)
                    if bessel_j(m, lo, deriv) * bessel_j(m, mid, deriv) <= 0:
                        hi = mid
                    else:
                        lo = mid
                return 0.5 * (lo + hi)
        x, f0 = x1, f1


def _disk_moment(p: int, q: int) -> float:
    if p % 2 or q % 2:
        return 0.0
    return 2 * math.gamma((p + 1) / 2) * math.gamma((q + 1) / 2) / ((p + q + 2) * math.gamma((p + q + 2) / 2))


def ellipse_dirichlet_ground(a: float, b: float, degree: int) -> float:
    """Rayleigh-Ritz for the first Dirichlet eigenvalue of x^2/a^2 + y^2/b^2 < 1.

    Trial space: (1 - psi) times even monomials of total degree <= degree.
    """
    import scipy.linalg

    def mul(P, Q):
        out = {}
        for (i, j), c in P.items():
            for (k, l), d in Q.items():
                out[i + k, j + l] = out.get((i + k, j + l), 0.0) + c * d
        return out

    def diff(P, axis):
        out = {}
        for (i, j), c in P.items():
            e = (i, j)[axis]
            if e:
                key = (i - 1, j) if axis == 0 else (i, j - 1)
                out[key] = out.get(key, 0.0) + c * e
        return out

    def integral(P):
        return sum(c * a ** (i + 1) * b ** (j + 1) * _disk_moment(i, j) for (i, j), c in P.items())

    bubble = {(0, 0): 1.0, (2, 0): -1 / a**2, (0, 2): -1 / b**2}
    trial = [mul(bubble, {(i, k - i): 1.0}) for k in range(0, degree + 1, 2) for i in range(0, k + 1, 2)]
    n = len(trial)
    A, M = np.zeros((n, n)), np.zeros((n, n))
    for r in range(n):
        for s in range(n):
            A[r, s] = sum(integral(mul(diff(trial[r], ax), diff(trial[s], ax))) for ax in (0, 1))
            M[r, s] = integral(mul(trial[r], trial[s]))
    return float(scipy.linalg.eigh(A, M, eigvals_only=True)[0])


@pytest.fixture(scope="session")
def disk_basis():
    return CircleBasis(16)


@pytest.fixture(scope="session")
def disk_system(disk_basis):
    cache = DomainFamilyCache(radial_level(2), disk_basis.params, t_min=1e-4)
    return BoundarySystem(cache, disk_basis)


@pytest.fixture(scope="session")
def ball_basis():
    return SphereBasis(5)


@pytest.fixture(scope="session")
def ball_system(ball_basis):
    cache = DomainFamilyCache(radial_level(3), ball_basis.params, t_min=1e-4)
    return BoundarySystem(cache, ball_basis)


@pytest.fixture(scope="session")
def ellipse():
    return ellipse_level(2.0, 1.0)


@pytest.fixture(scope="session")
def wide_ellipse():
    """Ellipse whose tangential cutoff covers the closed domain, so the flow is ``e^tau x``."""
    import dataclasses
    return dataclasses.replace(ellipse_level(2.0, 1.0), cutoff_radius=10.0)


@pytest.fixture(scope="session")
def ellipse_cache(ellipse):
    basis = CircleBasis(24)
    return DomainFamilyCache(ellipse, basis.params, t_min=1e-3), basis


@pytest.fixture
def disk_spec(disk_system):
    return LinearSystemSpec(disk_system, 0.0, 0.0)
