"""Boundary-data evolution in t and in log-time, frame propagation, dichotomy rates.

The t-system for Cauchy data ``(f, g)`` on ``d Omega_t`` is

    f' = T f + sigma g
    g' = -sigma F(f) - L f + (T - sigma H) g

and the rescaled variables ``ft = t^a f``, ``gt = t^(1+a) g`` evolve in
``tau = log t`` under

    ft' = (a + t T) ft + sigma gt
    gt' = t^2 (sigma (V - lam) - L) ft + (1 + a + t (T - sigma H)) gt

in the linear case ``F(u) = -(V - lam) u``.
"""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sps
from scipy.integrate import solve_ivp
from scipy.linalg import subspace_angles

from .geometry import DomainFamilyCache
from .harmonic import CenterDegeneracyWarning
from .spectral import BoundaryBasis, SurfaceOperatorSet, assemble_surface_operators

OVERFLOW = 1e12
RTOL = 1e-10
ATOL = 1e-12


class OverflowAbort(RuntimeError):
    """State norm crossed the overflow guard; carries the time of failure."""

    def __init__(self, time: float, norm: float = np.inf):
        super().__init__(f"state norm exceeded the overflow guard at time {time:.6g}")
        self.time = time
        self.norm = norm


class RankCollapse(RuntimeError):
    pass


class PoorFitWarning(UserWarning):
    pass


# ---------------------------------------------------------------------------
# states


@dataclass
class CauchyPair:
    f: np.ndarray
    g: np.ndarray
    t: float

    def __post_init__(self):
        self.f = np.asarray(self.f, float)
        self.g = np.asarray(self.g, float)
        if self.t <= 0:
            raise ValueError("t must be positive")
        if self.f.shape != self.g.shape:
            raise ValueError("f and g must share a basis")

    @property
    def vector(self):
        return np.concatenate([self.f, self.g])

    @classmethod
    def from_vector(cls, y, t):
        d = len(y) // 2
        return cls(y[:d], y[d:], t)


@dataclass
class RescaledState:
    ft: np.ndarray
    gt: np.ndarray
    tau: float
    alpha: float

    @property
    def vector(self):
        return np.concatenate([self.ft, self.gt])


def rescale_to_tau(state: CauchyPair, alpha: float) -> RescaledState:
    t = state.t
    return RescaledState(t**alpha * state.f, t ** (1 + alpha) * state.g, float(np.log(t)), alpha)


def unscale(rstate: RescaledState) -> CauchyPair:
    t = np.exp(rstate.tau)
    a = rstate.alpha
    return CauchyPair(t ** (-a) * rstate.ft, t ** (-1 - a) * rstate.gt, t)


# ---------------------------------------------------------------------------
# models and systems


@dataclass
class NonlinearityModel:
    """``F(x, u)`` applied nodally; ``x`` has shape ``(M, n)``."""

    F: Callable[[np.ndarray, np.ndarray], np.ndarray]
    dF: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    name: str = "custom"

    @classmethod
    def power(cls, p: int, coef: float = 1.0):
        return cls(lambda x, u: coef * u**p, lambda x, u: coef * p * u ** (p - 1), name=f"{coef:g}*u^{p}")

    @classmethod
    def zero(cls):
        return cls(lambda x, u: np.zeros_like(u), lambda x, u: np.zeros_like(u), name="0")


def _as_potential(V):
    if V is None:
        return lambda x: np.zeros(len(x))
    if callable(V):
        return V
    c = float(V)
    return lambda x: np.full(len(x), c)


class BoundarySystem:
    """Reference basis plus the domain family; serves operator sets by t."""

    def __init__(self, cache: DomainFamilyCache, basis: BoundaryBasis):
        if cache.size != basis.nodes:
            raise ValueError("cache must be built on the basis quadrature nodes")
        self.cache = cache
        self.basis = basis
        self._ops: dict[float, SurfaceOperatorSet] = {}

    @property
    def radial(self):
        return self.cache.level.radial

    @property
    def n(self):
        return self.basis.n

    def ops(self, t: float) -> SurfaceOperatorSet:
        t = float(t)
        op = self._ops.get(t)
        if op is None:
            op = assemble_surface_operators(self.cache, self.basis, t)
            if len(self._ops) > 256:
                self._ops.clear()
            self._ops[t] = op
        return op


@dataclass
class LinearSystemSpec:
    """``Delta u = (V - lam) u`` on the family.  ``potential`` is a constant or
    a callable on points ``(M, n)``."""

    system: BoundarySystem
    potential: float | Callable | None = 0.0
    lam: float = 0.0

    def potential_nodal(self, points) -> np.ndarray:
        return np.asarray(_as_potential(self.potential)(points), float)

    @property
    def constant_potential(self) -> float | None:
        if self.potential is None:
            return 0.0
        if callable(self.potential):
            return None
        return float(self.potential)

    def model(self) -> NonlinearityModel:
        V, lam = _as_potential(self.potential), self.lam
        return NonlinearityModel(lambda x, u: -(V(x) - lam) * u, lambda x, u: -(V(x) - lam) + 0 * u,
                                 name="linear")

    def shifted(self, lam: float) -> "LinearSystemSpec":
        return LinearSystemSpec(self.system, self.potential, lam)


# ---------------------------------------------------------------------------
# right-hand sides


def rhs_nonlinear(state: CauchyPair, model: NonlinearityModel, ops: SurfaceOperatorSet,
                  basis: BoundaryBasis) -> CauchyPair:
    if abs(ops.t - state.t) > 1e-12 * state.t:
        raise ValueError(f"operators assembled at t={ops.t}, state at t={state.t}")
    fv = basis.synthesize(state.f)
    gv = basis.synthesize(state.g)
    sg = ops.sigma * gv
    df = basis.P @ sg
    dg = -(ops.L @ state.f) - basis.P @ (ops.sigma * ops.H * gv)
    Fv = model.F(ops.points, fv)
    dg = dg - basis.analyze(ops.sigma * Fv, check=False)
    if not ops.diagonal:
        df = df + ops.T @ state.f
        dg = dg + ops.T @ state.g
    return CauchyPair(df, dg, state.t)


def rhs_linear(state: CauchyPair, spec: LinearSystemSpec, ops: SurfaceOperatorSet) -> CauchyPair:
    return rhs_nonlinear(state, spec.model(), ops, spec.system.basis)


def rescaled_derivative(rstate: RescaledState, dstate: CauchyPair) -> RescaledState:
    """Chain rule from ``d/dt (f, g)`` to ``d/dtau (ft, gt)``."""
    t, a = np.exp(rstate.tau), rstate.alpha
    return RescaledState(a * rstate.ft + t ** (1 + a) * dstate.f,
                         (1 + a) * rstate.gt + t ** (2 + a) * dstate.g, rstate.tau, a)


def rhs_rescaled(rstate: RescaledState, spec: LinearSystemSpec | None, ops: SurfaceOperatorSet,
                 model: NonlinearityModel | None = None, basis: BoundaryBasis | None = None) -> RescaledState:
    state = unscale(rstate)
    if model is None:
        d = rhs_linear(state, spec, ops)
    else:
        d = rhs_nonlinear(state, model, ops, basis if basis is not None else spec.system.basis)
    return rescaled_derivative(rstate, d)


# ---------------------------------------------------------------------------
# block operators


class RescaledBlock:
    """Matrix of the linear rescaled system as a function of ``tau``.

    For radial families with constant potential it is ``B0 + exp(2 tau) C``
    with sparse ``B0, C``; otherwise assembled from the surface operators.
    """

    def __init__(self, spec: LinearSystemSpec, alpha: float):
        self.spec = spec
        self.alpha = float(alpha)
        system = spec.system
        self.basis = system.basis
        d = self.basis.dim
        self.dim = d
        c = spec.constant_potential
        self.fast = system.radial and c is not None
        if self.fast:
            n = system.n
            eye = sps.identity(d, format="csr")
            self.B0 = sps.bmat([[self.alpha * eye, eye],
                                [sps.diags(self.basis.mu), (1 + self.alpha - (n - 1)) * eye]], format="csr")
            self.C = sps.bmat([[None, sps.csr_matrix((d, d))],
                               [(c - spec.lam) * eye, None]], format="csr")

    def matrix(self, tau: float):
        if self.fast:
            return self.B0 + np.exp(2 * tau) * self.C
        return rescaled_block_dense(self.spec, float(np.exp(tau)), self.alpha)

    def apply(self, tau: float, Y: np.ndarray) -> np.ndarray:
        if self.fast:
            return self.B0 @ Y + np.exp(2 * tau) * (self.C @ Y)
        return self.matrix(tau) @ Y

    def segment_propagators(self, edges, rtol=RTOL, atol=1e-13) -> np.ndarray:
        """Per-mode 2x2 propagators over each ``[edges[k], edges[k+1]]``.

        Only for the decoupled (radial, constant potential) block.  All
        segments are integrated together in a local time ``s``; returns an
        array of shape ``(nseg, dim, 2, 2)``.
        """
        if not self.fast:
            raise ValueError("segment propagators need a decoupled block")
        n = self.spec.system.n
        c = self.spec.constant_potential - self.spec.lam
        mus, inverse = np.unique(self.basis.mu, return_inverse=True)
        edges = np.asarray(edges, float)
        starts, h = edges[:-1], np.diff(edges)
        nseg, nm = len(starts), len(mus)
        a, dd = self.alpha, 1 + self.alpha - (n - 1)
        y0 = np.broadcast_to(np.eye(2), (nseg, nm, 2, 2)).ravel()

        def rhs(s, y):
            Phi = y.reshape(nseg, nm, 2, 2)
            tau = starts + s * h
            e = c * np.exp(2 * tau)[:, None]
            out = np.empty_like(Phi)
            out[:, :, 0, :] = a * Phi[:, :, 0, :] + Phi[:, :, 1, :]
            out[:, :, 1, :] = ((mus[None, :] + e)[..., None] * Phi[:, :, 0, :] + dd * Phi[:, :, 1, :])
            return (out * h[:, None, None, None]).ravel()

        sol = solve_ivp(rhs, (0.0, 1.0), y0, method="DOP853", rtol=rtol, atol=atol)
        if sol.status != 0:
            raise RuntimeError(f"propagator integration failed: {sol.message}")
        return sol.y[:, -1].reshape(nseg, nm, 2, 2)[:, inverse]


def linear_block(spec: LinearSystemSpec, t: float) -> np.ndarray:
    """``[[T, S], [S (V - lam) - L, T - S H]]`` with ``S`` multiplication by sigma."""
    system = spec.system
    b = system.basis
    ops = system.ops(t)
    Vn = spec.potential_nodal(ops.points) - spec.lam
    Sg = b.multiply(ops.sigma)
    return np.block([[ops.T, Sg], [b.multiply(ops.sigma * Vn) - ops.L, ops.T - b.multiply(ops.sigma * ops.H)]])


def rescaled_block_dense(spec: LinearSystemSpec, t: float, alpha: float) -> np.ndarray:
    system = spec.system
    b = system.basis
    ops = system.ops(t)
    d = b.dim
    eye = np.eye(d)
    Vn = spec.potential_nodal(ops.points) - spec.lam
    return np.block([[alpha * eye + t * ops.T, b.multiply(ops.sigma)],
                     [t * t * (b.multiply(ops.sigma * Vn) - ops.L),
                      (1 + alpha) * eye + t * (ops.T - b.multiply(ops.sigma * ops.H))]])


# ---------------------------------------------------------------------------
# integration


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (len(times), 2d)
    sol: object = None

    def write_csv(self, path, rescaled=True):
        d = self.states.shape[1] // 2
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tau" if rescaled else "t", "mode_index", "f_coeff", "g_coeff"])
            for time, y in zip(self.times, self.states):
                for k in range(d):
                    w.writerow([f"{time:.17g}", k, f"{y[k]:.17g}", f"{y[d + k]:.17g}"])


def integrate_state(rhs: Callable[[float, np.ndarray], np.ndarray], y0, span, rtol=RTOL, atol=ATOL,
                    t_eval=None, overflow=OVERFLOW, dense=False, max_step=np.inf) -> Trajectory:
    """Adaptive DOP853 in either direction with a norm overflow guard."""
    y0 = np.asarray(y0, float)
    if not np.all(np.isfinite(y0)):
        raise ValueError("non-finite initial state")
    span = (float(span[0]), float(span[1]))
    if span[0] == span[1]:
        return Trajectory(np.array([span[0]]), y0[None].copy())

    def guard(_, y):
        return overflow - np.linalg.norm(y)

    guard.terminal = True
    with np.errstate(over="ignore", invalid="ignore"):
        sol = solve_ivp(rhs, span, y0, method="DOP853", rtol=rtol, atol=atol, t_eval=t_eval,
                        events=guard, dense_output=dense, max_step=max_step)
    if sol.status == 1 or (sol.status == -1 and not np.all(np.isfinite(sol.y))):
        tf = float(sol.t_events[0][0]) if sol.t_events and len(sol.t_events[0]) else float(sol.t[-1])
        raise OverflowAbort(tf)
    if sol.status != 0:
        raise RuntimeError(f"integration failed: {sol.message}")
    return Trajectory(sol.t, sol.y.T, sol.sol)


def t_rhs(spec_or_model, system: BoundarySystem) -> Callable:
    """``(t, y) -> y'`` for the t-system with a linear spec or a nonlinearity."""
    basis = system.basis
    if isinstance(spec_or_model, LinearSystemSpec):
        model = spec_or_model.model()
    else:
        model = spec_or_model

    def rhs(t, y):
        return rhs_nonlinear(CauchyPair.from_vector(y, t), model, system.ops(t), basis).vector

    return rhs


def tau_rhs(spec_or_model, system: BoundarySystem, alpha: float) -> Callable:
    """``(tau, y) -> y'`` for the rescaled system."""
    if isinstance(spec_or_model, LinearSystemSpec):
        block = RescaledBlock(spec_or_model, alpha)
        if block.fast:
            return block.apply
    base = t_rhs(spec_or_model, system)
    d = system.basis.dim

    def rhs(tau, y):
        t = float(np.exp(tau))
        ft, gt = y[:d], y[d:]
        f, g = t ** (-alpha) * ft, t ** (-1 - alpha) * gt
        dy = base(t, np.concatenate([f, g]))
        return np.concatenate([alpha * ft + t ** (1 + alpha) * dy[:d], (1 + alpha) * gt + t ** (2 + alpha) * dy[d:]])

    return rhs


# ---------------------------------------------------------------------------
# frames


def h_weights(basis: BoundaryBasis) -> np.ndarray:
    """Diagonal weights realising the ``H^{1/2} x H^{-1/2}`` inner product."""
    return np.concatenate([basis.sobolev_weights(0.25), basis.sobolev_weights(-0.25)])


@dataclass
class SubspaceFrame:
    """Columns are stacked ``(ft; gt)`` coefficient vectors, H-orthonormal."""

    basis: BoundaryBasis
    Y: np.ndarray
    tau: float
    alpha: float
    log_growth: np.ndarray = field(default=None)

    @property
    def rank(self):
        return self.Y.shape[1]

    def weighted(self):
        return h_weights(self.basis)[:, None] * self.Y

    def f_block(self):
        return self.Y[: self.basis.dim]

    def g_block(self):
        return self.Y[self.basis.dim:]


def h_orthonormalize(Y: np.ndarray, w: np.ndarray, rank_tol: float = 1e-12):
    """QR in the weighted inner product.  Returns ``(Y_orth, diag(R))``."""
    Q, R = np.linalg.qr(w[:, None] * Y)
    diag = np.abs(np.diag(R))
    if diag.size and diag.min() < rank_tol * diag.max():
        raise RankCollapse(f"frame lost rank: |R_kk| ratio {diag.min() / diag.max():.2e}")
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return (Q * signs) / w[:, None], diag


def make_frame(basis, Y, tau, alpha) -> SubspaceFrame:
    Yo, _ = h_orthonormalize(np.asarray(Y, float), h_weights(basis))
    return SubspaceFrame(basis, Yo, float(tau), float(alpha), np.zeros(Yo.shape[1]))


def propagate_frame(frame: SubspaceFrame, block: RescaledBlock, tau1: float, dtau: float = 0.1,
                    rtol: float = RTOL, atol: float = 1e-13, rank_tol: float = 1e-12,
                    record: Callable | None = None) -> SubspaceFrame:
    """Carry the span of the frame from ``frame.tau`` to ``tau1``.

    Columns are re-orthonormalised every ``dtau``; the accumulated
    ``log |R_kk|`` is kept in ``log_growth``.  ``record(tau, frame)`` is
    called after each segment.
    """
    w = h_weights(frame.basis)
    Y = frame.Y.copy()
    k = Y.shape[1]
    growth = np.zeros(k) if frame.log_growth is None else frame.log_growth.copy()
    tau = frame.tau
    if tau1 == tau:
        return SubspaceFrame(frame.basis, Y, tau, frame.alpha, growth)
    direction = np.sign(tau1 - tau)
    nseg = max(1, int(np.ceil(abs(tau1 - tau) / dtau - 1e-9)))
    edges = np.linspace(tau, tau1, nseg + 1)
    shape = Y.shape

    def rhs(s, y):
        return block.apply(s, y.reshape(shape)).ravel()

    props = block.segment_propagators(edges, rtol, atol) if getattr(block, "fast", False) else None
    d = shape[0] // 2
    for k, (a, b) in enumerate(zip(edges[:-1], edges[1:])):
        if props is not None:
            P = props[k]
            Ynew = np.concatenate([P[:, 0, 0, None] * Y[:d] + P[:, 0, 1, None] * Y[d:],
                                   P[:, 1, 0, None] * Y[:d] + P[:, 1, 1, None] * Y[d:]])
        else:
            sol = solve_ivp(rhs, (a, b), Y.ravel(), method="DOP853", rtol=rtol, atol=atol)
            if sol.status != 0:
                raise RuntimeError(f"frame integration failed: {sol.message}")
            Ynew = sol.y[:, -1].reshape(shape)
        Y, diag = h_orthonormalize(Ynew, w, rank_tol)
        growth += direction * np.log(diag)
        if record is not None:
            record(b, SubspaceFrame(frame.basis, Y, b, frame.alpha, growth.copy()))
    return SubspaceFrame(frame.basis, Y, float(tau1), frame.alpha, growth)


def principal_angles(frame_a, frame_b) -> np.ndarray:
    """Principal angles between two spans measured in the H inner product."""
    A = frame_a.weighted() if isinstance(frame_a, SubspaceFrame) else frame_a
    B = frame_b.weighted() if isinstance(frame_b, SubspaceFrame) else frame_b
    return np.sort(subspace_angles(A, B))


# ---------------------------------------------------------------------------
# dichotomy rates


@dataclass
class RateReport:
    alpha: float
    eta_u: float
    eta_s: float
    fit_r2: float
    exponents: np.ndarray
    center_degenerate: bool = False
    notes: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({"alpha": self.alpha, "eta_u": self.eta_u, "eta_s": self.eta_s,
                           "fit_r2": self.fit_r2}, indent=2)


def _fit(x, y):
    slope, icept = np.polyfit(x, y, 1)
    resid = y - (slope * x + icept)
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss if ss > 0 else 1.0
    return float(slope), float(r2)


def estimate_rates(spec: LinearSystemSpec, alpha: float, window=(-10.0, -5.0), burn_in: float = 6.0,
                   dtau: float = 0.1, gap_tol: float = 1e-2) -> RateReport:
    """Discrete-QR growth rates of the full rescaled flow over a tau window.

    The probe set is a complete frame of ``2 * dim`` directions.  After a
    burn-in the column ``k`` grows like the k-th largest rate; ``eta_u`` is
    the smallest positive rate, ``eta_s`` the magnitude of the largest
    negative one, and each is a least-squares slope of accumulated
    ``log |R_kk|`` over the window.
    """
    block = RescaledBlock(spec, alpha)
    basis = spec.system.basis
    d = basis.dim
    frame = make_frame(basis, np.eye(2 * d), window[0] - burn_in, alpha)
    frame = propagate_frame(frame, block, window[0], dtau)
    taus, logs = [window[0]], [frame.log_growth.copy()]

    def record(tau, fr):
        taus.append(tau)
        logs.append(fr.log_growth.copy())

    propagate_frame(frame, block, window[1], dtau, record=record)
    taus = np.array(taus)
    logs = np.array(logs)
    fits = [_fit(taus, logs[:, k]) for k in range(2 * d)]
    exps = np.array([f[0] for f in fits])
    r2 = np.array([f[1] for f in fits])
    pos = np.where(exps > gap_tol)[0]
    neg = np.where(exps < -gap_tol)[0]
    notes = []
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("no exponential dichotomy detected in the window")
    ku = pos[np.argmin(exps[pos])]
    ks = neg[np.argmax(exps[neg])]
    degenerate = len(pos) != d or len(neg) != d
    if degenerate:
        notes.append(f"center degeneracy: {len(pos)} growing and {len(neg)} decaying directions for dimension {d}")
        warnings.warn(notes[-1], CenterDegeneracyWarning, stacklevel=2)
    fit_r2 = float(min(r2[ku], r2[ks]))
    if fit_r2 < 0.99:
        warnings.warn(f"growth not exponential over the window (R^2={fit_r2:.4f})", PoorFitWarning, stacklevel=2)
    return RateReport(alpha, float(exps[ku]), float(-exps[ks]), fit_r2, exps, degenerate, notes)
