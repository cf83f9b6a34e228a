"""Closed-form harmonic Cauchy data on balls and disks.

Used as ground truth: regular branches ``r^l Y`` and singular branches
``r^{-l-1} Y`` (``r^{-m}`` in the plane, plus ``log r`` for ``m=0``).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


class CenterDegeneracyWarning(UserWarning):
    pass


@dataclass(frozen=True)
class HarmonicMode:
    """A separated harmonic.  For ``n=2`` the signed ``m`` picks cos (``m>0``),
    sin (``m<0``) or the constant (``m=0``); ``l`` is ignored there."""

    n: int
    l: int = 0
    m: int = 0
    branch: str = "+"
    alpha: float = 0.5

    def __post_init__(self):
        if self.n not in (2, 3):
            raise ValueError("n must be 2 or 3")
        if self.branch not in ("+", "-", "log"):
            raise ValueError("branch is '+', '-' or 'log'")
        if self.n == 3 and (self.l < 0 or abs(self.m) > self.l):
            raise ValueError("need l >= 0 and |m| <= l")
        if self.branch == "log" and (self.n != 2 or self.m != 0):
            raise ValueError("the log branch exists only for n=2, m=0")

    @property
    def degree(self) -> int:
        return self.l if self.n == 3 else abs(self.m)

    @property
    def mu(self) -> float:
        k = self.degree
        return float(k * (k + 1)) if self.n == 3 else float(k * k)

    def index(self, basis) -> int:
        return basis.index(self.l, self.m) if self.n == 3 else basis.index(self.m)


def spatial_eigenvalue(mode: HarmonicMode) -> float:
    """Growth rate in ``tau`` of the rescaled trace of this branch."""
    a, k = mode.alpha, mode.degree
    if mode.n == 2 and k == 0:
        warnings.warn("m=0 in the plane: the pair {1, log r} gives a Jordan block, "
                      "both rates equal alpha", CenterDegeneracyWarning, stacklevel=2)
        return a
    if mode.n == 3:
        return a + k if mode.branch == "+" else a - k - 1
    return a + k if mode.branch == "+" else a - k


def exact_trace(mode: HarmonicMode, t: float) -> tuple[float, float]:
    """Radial factors ``(f, g)`` of the Cauchy data on the sphere of radius t.

    The angular factor is the unit-normalised basis mode itself, so these are
    the coefficients on that mode.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    k = mode.degree
    if mode.branch == "log":
        return float(np.log(t)), 1.0 / t
    if mode.branch == "+":
        return t**k, (k * t ** (k - 1) if k else 0.0)
    if mode.n == 3:
        return t ** (-k - 1), -(k + 1) * t ** (-k - 2)
    if k == 0:
        # the second plane solution for m=0 is the log branch
        return float(np.log(t)), 1.0 / t
    return t ** (-k), -k * t ** (-k - 1)


def exact_trace_derivative(mode: HarmonicMode, t: float) -> tuple[float, float]:
    """``d/dt`` of :func:`exact_trace`."""
    k = mode.degree
    if mode.branch == "log" or (mode.branch == "-" and mode.n == 2 and k == 0):
        return 1.0 / t, -1.0 / t**2
    if mode.branch == "+":
        return (k * t ** (k - 1) if k else 0.0), (k * (k - 1) * t ** (k - 2) if k > 1 else 0.0)
    p = -k - 1 if mode.n == 3 else -k
    return p * t ** (p - 1), p * (p - 1) * t ** (p - 2)


def exact_trace_vector(mode: HarmonicMode, basis, t: float) -> np.ndarray:
    """Stacked coefficient vector ``(f; g)`` in ``basis``."""
    f, g = exact_trace(mode, t)
    out = np.zeros(2 * basis.dim)
    i = mode.index(basis)
    out[i], out[basis.dim + i] = f, g
    return out


def asymptotic_block(k: int, alpha: float, n: int) -> np.ndarray:
    """``tau -> -inf`` limit of the rescaled radial system on a mode of degree k."""
    mu = k * (k + 1) if n == 3 else k * k
    return np.array([[alpha, 1.0], [float(mu), alpha + 2.0 - n]])


def rate_pair(k: int, alpha: float, n: int) -> tuple[float, float]:
    """Eigenvalues ``(nu+, nu-)`` of :func:`asymptotic_block` in closed form."""
    mu = k * (k + 1) if n == 3 else k * k
    c = (2.0 - n) / 2.0
    root = np.sqrt(mu + c * c)
    return alpha + c + root, alpha + c - root
