"""Passing between fields on shells ``Omega_{a,b}`` and Cauchy-data histories."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline

from .dynamics import CauchyPair, NonlinearityModel, Trajectory
from .geometry import (DomainFamilyCache, _directions, boundary_points, flow_points, unit_normal)
from .spectral import BoundaryBasis, sobolev_norm


class FiniteDifferenceWarning(UserWarning):
    pass


class QuadratureWarning(UserWarning):
    pass


class OutOfShellError(ValueError):
    pass


@dataclass
class FieldSampler:
    """A field with optional gradient.  ``shell(t, snapshot)`` may return
    ``(u, grad u)`` directly on the flowed reference nodes."""

    value: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray] | None = None
    shell: Callable | None = None
    name: str = "field"


def fd_gradient(value, x, h=1e-6):
    x = np.asarray(x, float)
    out = np.empty_like(x)
    for i in range(x.shape[-1]):
        e = np.zeros(x.shape[-1])
        e[i] = h
        out[..., i] = (value(x + e) - value(x - e)) / (2 * h)
    return out


def _gradient(u: FieldSampler, x):
    if u.grad is not None:
        return u.grad(x)
    warnings.warn(f"no gradient for {u.name}; using central differences", FiniteDifferenceWarning, stacklevel=3)
    return fd_gradient(u.value, x)


def surface_gradient(tangents, dparam):
    """Tangential gradient from parameter derivatives; ``tangents`` is
    ``(M, n, k)`` and ``dparam`` is ``(M, k)``."""
    G = np.einsum("mik,mil->mkl", tangents, tangents)
    coef = np.linalg.solve(G, dparam[..., None])[..., 0]
    return np.einsum("mik,mk->mi", tangents, coef)


# ---------------------------------------------------------------------------
# histories


class TraceHistory:
    """Cubic-in-t interpolation of coefficient vectors ``f(t_k), g(t_k)``."""

    def __init__(self, basis: BoundaryBasis, times, F, G):
        times = np.asarray(times, float)
        F, G = np.atleast_2d(np.asarray(F, float)), np.atleast_2d(np.asarray(G, float))
        if len(times) < 2:
            raise ValueError("a history needs at least two times")
        if np.any(np.diff(times) <= 0):
            raise ValueError("history times must be strictly increasing")
        if F.shape != (len(times), basis.dim) or G.shape != F.shape:
            raise ValueError("coefficient arrays do not match the basis and time grid")
        self.basis, self.times, self.F, self.G = basis, times, F, G
        self._f = CubicSpline(times, F, axis=0)
        self._g = CubicSpline(times, G, axis=0)

    @property
    def t_min(self):
        return float(self.times[0])

    @property
    def t_max(self):
        return float(self.times[-1])

    def f(self, t, nu=0):
        return self._f(t, nu)

    def g(self, t, nu=0):
        return self._g(t, nu)

    def at(self, t) -> CauchyPair:
        return CauchyPair(self.f(t), self.g(t), float(t))

    @classmethod
    def from_function(cls, basis, times, fn):
        """``fn(t) -> (f, g)`` coefficient vectors."""
        pairs = [fn(float(t)) for t in times]
        return cls(basis, times, [p[0] for p in pairs], [p[1] for p in pairs])

    @classmethod
    def from_trajectory(cls, basis, traj: Trajectory):
        d = basis.dim
        order = np.argsort(traj.times)
        return cls(basis, traj.times[order], traj.states[order, :d], traj.states[order, d:])

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "block", "mode_index", "coeff"])
            for k, t in enumerate(self.times):
                for name, arr in (("f", self.F), ("g", self.G)):
                    for i, c in enumerate(arr[k]):
                        w.writerow([f"{t:.17g}", name, i, f"{c:.17g}"])

    @classmethod
    def read_csv(cls, path, basis):
        rows: dict[float, dict] = {}
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                t = float(row["t"])
                entry = rows.setdefault(t, {"f": np.zeros(basis.dim), "g": np.zeros(basis.dim)})
                i = int(row["mode_index"])
                if not 0 <= i < basis.dim or row["block"] not in ("f", "g"):
                    raise ValueError(f"bad history row {row}")
                entry[row["block"]][i] = float(row["coeff"])
        if len(rows) < 2:
            raise ValueError(f"history {path} has fewer than two time levels")
        times = sorted(rows)
        return cls(basis, times, [rows[t]["f"] for t in times], [rows[t]["g"] for t in times])


# ---------------------------------------------------------------------------
# traces and reconstruction


def trace_of_field(u: FieldSampler, cache: DomainFamilyCache, basis: BoundaryBasis, t: float,
                   check: bool = True) -> CauchyPair:
    snap = cache.snapshot(t)
    if u.shell is not None:
        vals, grad = u.shell(t, snap)
    else:
        vals = u.value(snap.points)
        grad = _gradient(u, snap.points)
    dn = np.einsum("mi,mi->m", grad, snap.normal)
    return CauchyPair(basis.analyze(vals, check), basis.analyze(dn, check), t)


def reconstruct_field(history: TraceHistory, cache: DomainFamilyCache, a: float | None = None,
                      b: float | None = None) -> FieldSampler:
    """Field on the shell whose traces are the history.

    A point ``x`` is sent to its level ``t = sqrt(psi(x))`` and pulled back
    to the reference boundary by the inverse flow; the value is the history's
    ``f(t)`` at that reference angle.  The gradient combines ``g`` along the
    normal with the tangential derivative of ``f``.
    """
    basis = history.basis
    level = cache.level
    a = history.t_min if a is None else a
    b = history.t_max if b is None else b
    same_nodes = cache.params.shape == basis.params.shape and np.array_equal(cache.params, basis.params)
    if same_nodes:
        _, node_der = basis.evaluate(basis.params, derivative=True)

    def locate(x):
        x = np.atleast_2d(np.asarray(x, float))
        t = np.sqrt(level.value(x))
        if np.any(t < a * (1 - 1e-12)) or np.any(t > b * (1 + 1e-12)):
            raise OutOfShellError(f"query outside the shell {a} <= t <= {b}")
        return x, t

    def value(x):
        x, t = locate(x)
        y = flow_points(cache.field, x, -np.log(t))
        S = basis.evaluate(basis.params_of(y))
        return np.einsum("mk,mk->m", S, history.f(t))

    def grad(x):
        x, t = locate(x)
        y, Kb = flow_points(cache.field, x, -np.log(t), jacobian=True)
        params = basis.params_of(y)
        S, dS = basis.evaluate(params, derivative=True)
        _, dy = boundary_points(level, params)
        tangents = np.linalg.solve(Kb, dy)
        f, g = history.f(t), history.g(t)
        dpar = np.einsum("mkj,mk->mj", dS, f)
        normal = unit_normal(level, x)
        return np.einsum("mk,mk->m", S, g)[:, None] * normal + surface_gradient(tangents, dpar)

    shell = None
    if same_nodes:
        def shell(t, snap):
            f, g = history.f(t), history.g(t)
            vals = basis.synthesize(f)
            dpar = np.einsum("mkj,k->mj", node_der, f)
            return vals, basis.synthesize(g)[:, None] * snap.normal + surface_gradient(snap.tangents, dpar)

    return FieldSampler(value, grad, shell, name="reconstructed")


# ---------------------------------------------------------------------------
# removable singularity


@dataclass
class SingularityReport:
    bounded: bool
    sup: float
    order: float
    marginal: bool
    times: np.ndarray
    q: np.ndarray


def singularity_quantity(history: TraceHistory, p: float, n: int) -> np.ndarray:
    """``t^p |f|_{1/2} + t^{n-p-1} |g|_{-1/2}`` on the history's grid."""
    b = history.basis
    t = history.times
    fn = np.array([sobolev_norm(f, b, 0.5) for f in history.F])
    gn = np.array([sobolev_norm(g, b, -0.5) for g in history.G])
    return t**p * fn + t ** (n - p - 1) * gn


def removable_singularity_check(history: TraceHistory, p: float, n: int, tail_decades: float = 1.0,
                                marginal_band: float = 0.05) -> SingularityReport:
    """Fit the power of t governing the bound quantity as ``t -> 0``.

    The fit uses grid points within ``tail_decades`` of the smallest time;
    the history counts as bounded when the fitted order is nonnegative.
    """
    if not 0 < p < n / 2:
        raise ValueError(f"p must lie in (0, {n / 2})")
    if history.t_min > 1e-2:
        warnings.warn(f"history starts at t={history.t_min:.3g}; small-t behaviour is extrapolated",
                      UserWarning, stacklevel=2)
    q = singularity_quantity(history, p, n)
    t = history.times
    if np.all(q == 0):
        return SingularityReport(True, 0.0, float("inf"), False, t, q)
    tail = (t <= history.t_min * 10**tail_decades) & (q > 0)
    if tail.sum() < 3:
        tail = np.zeros_like(tail)
        tail[: max(3, len(t) // 3)] = True
        tail &= q > 0
    order = float(np.polyfit(np.log(t[tail]), np.log(q[tail]), 1)[0])
    return SingularityReport(order >= 0, float(q.max()), order, abs(order) < marginal_band, t, q)


# ---------------------------------------------------------------------------
# weak residual


def _angular_tests(n):
    """Low-degree polynomials in the reference direction and their gradients."""
    if n == 2:
        polys = [
            (lambda w: np.ones(len(w)), lambda w: np.zeros_like(w)),
            (lambda w: w[:, 0], lambda w: np.stack([np.ones(len(w)), np.zeros(len(w))], -1)),
            (lambda w: w[:, 1], lambda w: np.stack([np.zeros(len(w)), np.ones(len(w))], -1)),
            (lambda w: w[:, 0] * w[:, 1], lambda w: np.stack([w[:, 1], w[:, 0]], -1)),
            (lambda w: w[:, 0] ** 2 - w[:, 1] ** 2, lambda w: np.stack([2 * w[:, 0], -2 * w[:, 1]], -1)),
        ]
    else:
        z = lambda w: np.zeros(len(w))  # noqa: E731
        o = lambda w: np.ones(len(w))  # noqa: E731
        polys = [
            (o, lambda w: np.zeros_like(w)),
            (lambda w: w[:, 0], lambda w: np.stack([o(w), z(w), z(w)], -1)),
            (lambda w: w[:, 1], lambda w: np.stack([z(w), o(w), z(w)], -1)),
            (lambda w: w[:, 2], lambda w: np.stack([z(w), z(w), o(w)], -1)),
            (lambda w: w[:, 0] * w[:, 1], lambda w: np.stack([w[:, 1], w[:, 0], z(w)], -1)),
        ]
    return polys


def _bump(t, lo, hi):
    """C^2 bump ``(1 - s^2)^3`` on ``(lo, hi)`` and its t-derivative."""
    c, h = 0.5 * (lo + hi), 0.5 * (hi - lo)
    s = (t - c) / h
    inside = np.abs(s) < 1
    v = np.where(inside, (1 - s * s) ** 3, 0.0)
    dv = np.where(inside, -6 * s * (1 - s * s) ** 2 / h, 0.0)
    return v, dv


@dataclass
class ResidualReport:
    max_residual: float
    residuals: np.ndarray
    norms: np.ndarray
    supports: list = field(default_factory=list)


def weak_residual(u: FieldSampler, model: NonlinearityModel, cache: DomainFamilyCache, weights,
                  a: float, b: float, M: int = 20, nt: int = 24) -> ResidualReport:
    """Normalised weak-form defects ``|int grad u . grad v - int F(u) v| / |v|_{H^1}``.

    Test functions are products of C^2 bumps in t, supported in ``(a, b)``,
    with low-degree polynomials in the reference direction; integrals use
    the coarea rule on the cache nodes with ``weights`` the reference
    parameter weights.
    """
    if not 0 < a < b:
        raise ValueError("need 0 < a < b")
    if nt < 8:
        warnings.warn("fewer than 8 t-nodes per bump; the quadrature is likely under-resolved",
                      QuadratureWarning, stacklevel=2)
    n = cache.n
    weights = np.asarray(weights, float)
    angular = _angular_tests(n)
    n_rad = int(np.ceil(M / len(angular)))
    supports = []
    for i in range(n_rad):
        lo = a + (b - a) * i / (n_rad + 1)
        supports.append((lo, lo + 2 * (b - a) / (n_rad + 1)))
    tests = [(s, ang) for s in supports for ang in angular][:M]

    omega, domega = _directions(n, cache.params)
    c_vals = [ang[0](omega) for ang in angular]
    c_dpar = [np.einsum("mi,mik->mk", ang[1](omega), domega) for ang in angular]
    gl_x, gl_w = np.polynomial.legendre.leggauss(nt)

    res = np.zeros(len(tests))
    norms = np.zeros(len(tests))
    shells: dict[float, tuple] = {}
    for k, ((lo, hi), ang) in enumerate(tests):
        j = angular.index(ang)
        ts = 0.5 * (hi - lo) * gl_x + 0.5 * (hi + lo)
        wt = 0.5 * (hi - lo) * gl_w
        lhs = rhs = nrm = 0.0
        for t, w in zip(ts, wt):
            key = float(t)
            if key not in shells:
                snap = cache.snapshot(key)
                if u.shell is not None:
                    uv, gu = u.shell(key, snap)
                else:
                    uv = u.value(snap.points)
                    gu = _gradient(u, snap.points)
                Fu = model.F(snap.points, uv)
                vol = w * snap.sigma * snap.metric * weights
                shells[key] = (snap, gu, Fu, vol / w)
            snap, gu, Fu, vol_unit = shells[key]
            vol = w * vol_unit
            bv, dbv = _bump(t, lo, hi)
            # v is constant along the flow at fixed reference angle, so its
            # normal derivative absorbs the tangential drift gamma
            tan = bv * surface_gradient(snap.tangents, c_dpar[j])
            v = bv * c_vals[j]
            dn = (dbv * c_vals[j] - np.einsum("mi,mi->m", snap.gamma, tan)) / snap.sigma
            gv = dn[:, None] * snap.normal + tan
            lhs += np.sum(vol * np.einsum("mi,mi->m", gu, gv))
            rhs += np.sum(vol * Fu * v)
            nrm += np.sum(vol * (v * v + np.einsum("mi,mi->m", gv, gv)))
        norms[k] = np.sqrt(nrm)
        res[k] = abs(lhs - rhs) / norms[k]
    return ResidualReport(float(res.max()), res, norms, [t[0] for t in tests])
