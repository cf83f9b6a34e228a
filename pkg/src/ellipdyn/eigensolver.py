"""Eigenvalue detection by intersecting the unstable subspace with a boundary subspace.

``lam`` is an eigenvalue of ``-Delta u + V u = lam u`` on ``Omega_1`` with
Dirichlet (Neumann) conditions exactly when the span of traces of solutions
regular at the origin contains a state with vanishing f-block (g-block).
The span is seeded near the origin, carried to ``tau = 0`` by
:func:`propagate_frame`, and the intersection is measured by the smallest
singular value of the relevant block.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .dynamics import (LinearSystemSpec, RescaledBlock, SubspaceFrame, make_frame, propagate_frame,
                       rescaled_block_dense)

__all__ = ["SubspaceFrame", "BoundarySubspace", "DIRICHLET", "NEUMANN", "seed_unstable",
           "intersection_measure", "frame_at_one", "s_min_curve", "eigenvalue_sweep", "Root",
           "EdgeMinimumWarning", "default_alpha"]


class EdgeMinimumWarning(UserWarning):
    pass


@dataclass(frozen=True)
class BoundarySubspace:
    """States whose ``block`` ("f" or "g") vanishes."""

    name: str
    block: str

    def contains(self, state: np.ndarray, dim: int, tol: float = 0.0) -> bool:
        part = state[:dim] if self.block == "f" else state[dim:]
        return bool(np.linalg.norm(part) <= tol)


DIRICHLET = BoundarySubspace("dirichlet", "f")
NEUMANN = BoundarySubspace("neumann", "g")


def default_alpha(n: int) -> float:
    """``(n-2)/2`` clamped into ``(0, n/2 - 1]`` in 3D; ``1/2`` in the plane."""
    if n == 3:
        return float(min(max((n - 2) / 2, 1e-3), n / 2 - 1))
    return 0.5


def _frobenius(degree: int, n: int, c: float, t: float, tol: float = 1e-17):
    """Regular radial solution ``t^k sum a_j t^(2j)`` of ``u'' + (n-1)u'/t - mu u/t^2 = c u``
    and its derivative, with ``a_0 = 1``."""
    a, u, du = 1.0, 0.0, 0.0
    tt = t * t
    for j in range(0, 400):
        if j:
            a *= c * tt / (2 * j * (2 * j + 2 * degree + n - 2))
        p = degree + 2 * j
        u += a
        du += p * a
        if abs(a) < tol * abs(u) and j > 2:
            break
    return t**degree * u, (t ** (degree - 1) * du if (degree or du) else 0.0)


def seed_unstable(spec: LinearSystemSpec, alpha: float, t0: float = 1e-3, K: int | None = None) -> SubspaceFrame:
    """Frame spanned by the K slowest-growing regular branches at ``t0``.

    Radial families use the regular power series of each mode about the
    origin with the potential frozen at ``V(0)``.  Otherwise the frozen
    rescaled block at ``t0`` is diagonalised and the eigenvectors with the
    largest real parts are taken greedily while they add rank.
    """
    system = spec.system
    basis = system.basis
    d = basis.dim
    K = d if K is None else int(K)
    if not 0 < K <= d:
        raise ValueError(f"K={K} outside 1..{d} for this truncation")
    tau0 = float(np.log(t0))
    if system.radial:
        V0 = float(spec.potential_nodal(np.zeros((1, basis.n)))[0])
        c = V0 - spec.lam
        degrees = basis.m if basis.n == 2 else basis.l
        order = np.argsort(degrees, kind="stable")[:K]
        Y = np.zeros((2 * d, K))
        for col, i in enumerate(order):
            u, du = _frobenius(int(degrees[i]), basis.n, c, t0)
            Y[i, col] = t0**alpha * u
            Y[d + i, col] = t0 ** (1 + alpha) * du
        # scale columns to O(1) before orthonormalising
        Y /= np.linalg.norm(Y, axis=0)
        return make_frame(basis, Y, tau0, alpha)
    B = rescaled_block_dense(spec, t0, alpha)
    vals, vecs = np.linalg.eig(B)
    order = np.argsort(-vals.real, kind="stable")
    chosen: list[np.ndarray] = []
    for i in order:
        v = vecs[:, i]
        cands = [v.real, v.imag] if abs(vals[i].imag) > 1e-12 else [v.real]
        for w_ in cands:
            if np.linalg.norm(w_) < 1e-14:
                continue
            trial = np.column_stack(chosen + [w_ / np.linalg.norm(w_)])
            if np.linalg.matrix_rank(trial, tol=1e-8) == trial.shape[1]:
                chosen.append(w_ / np.linalg.norm(w_))
            if len(chosen) == K:
                break
        if len(chosen) == K:
            break
    return make_frame(basis, np.column_stack(chosen), tau0, alpha)


def frame_at_one(spec: LinearSystemSpec, alpha: float, t0: float = 1e-3, dtau: float = 0.1,
                 rtol: float = 1e-10) -> SubspaceFrame:
    frame = seed_unstable(spec, alpha, t0)
    return propagate_frame(frame, RescaledBlock(spec, alpha), 0.0, dtau, rtol=rtol)


def intersection_measure(frame: SubspaceFrame, subspace: BoundarySubspace = DIRICHLET,
                         all_values: bool = False):
    """Smallest singular value of the H-weighted f-block (or g-block).

    Zero exactly when the frame's span meets the subspace."""
    basis = frame.basis
    if subspace.block == "f":
        block = basis.sobolev_weights(0.25)[:, None] * frame.f_block()
    else:
        block = basis.sobolev_weights(-0.25)[:, None] * frame.g_block()
    sv = np.linalg.svd(block, compute_uv=False)
    return np.sort(sv) if all_values else float(sv.min())


def s_min_curve(spec: LinearSystemSpec, lams, alpha: float, t0: float = 1e-3,
                subspace: BoundarySubspace = DIRICHLET, **kw) -> np.ndarray:
    return np.array([intersection_measure(frame_at_one(spec.shifted(float(l)), alpha, t0, **kw), subspace)
                     for l in lams])


@dataclass
class Root:
    lam: float
    multiplicity: int
    s_min: float
    singular_values: list = field(default_factory=list)

    def to_dict(self):
        return {"lambda": self.lam, "multiplicity": self.multiplicity, "s_min": self.s_min}


def _golden(fun, a, b, tol):
    g = (np.sqrt(5) - 1) / 2
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = fun(c), fun(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = fun(d)
    return (c, fc) if fc < fd else (d, fd)


def _smin_task(args):
    spec, lam, alpha, t0, subspace, dtau, rtol = args
    return intersection_measure(frame_at_one(spec.shifted(lam), alpha, t0, dtau, rtol), subspace)


def _scan(spec, lams, alpha, t0, subspace, dtau, rtol, workers):
    """Grid scan in worker processes; ``None`` when the linear system cannot be pickled."""
    import pickle
    from concurrent.futures import ProcessPoolExecutor

    try:
        pickle.dumps(spec)
    except Exception:
        return None
    jobs = [(spec, float(l), alpha, t0, subspace, dtau, rtol) for l in lams]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return np.array(list(pool.map(_smin_task, jobs)))


@dataclass
class SweepResult:
    lams: np.ndarray
    s_min: np.ndarray
    roots: list


def eigenvalue_sweep(spec: LinearSystemSpec, interval, grid: int = 80, alpha: float | None = None,
                     t0: float = 1e-3, subspace: BoundarySubspace = DIRICHLET, threshold: float = 1e-2,
                     tol: float = 1e-6, merge: float = 1e-3, dtau: float = 0.1, rtol: float = 1e-10,
                     workers: int = 1) -> SweepResult:
    """Scan ``s_min(lam)`` on a uniform grid, refine each local minimum by
    golden section, and keep refined minima below ``threshold``."""
    alpha = default_alpha(spec.system.n) if alpha is None else alpha
    lo, hi = map(float, interval)
    lams = np.linspace(lo, hi, grid)
    memo: dict[float, SubspaceFrame] = {}

    def frame(l):
        l = float(l)
        if l not in memo:
            memo[l] = frame_at_one(spec.shifted(l), alpha, t0, dtau, rtol)
        return memo[l]

    def smin(l):
        return intersection_measure(frame(l), subspace)

    vals = _scan(spec, lams, alpha, t0, subspace, dtau, rtol, workers) if workers > 1 else None
    if vals is None:
        vals = np.array([smin(l) for l in lams])
    roots: list[Root] = []
    for i in range(len(lams)):
        left = vals[i - 1] if i > 0 else np.inf
        right = vals[i + 1] if i < len(lams) - 1 else np.inf
        if not (vals[i] <= left and vals[i] < right) and not (vals[i] < left and vals[i] <= right):
            continue
        if i in (0, len(lams) - 1):
            warnings.warn(f"minimum of s_min at interval edge lam={lams[i]:.6g}", EdgeMinimumWarning,
                          stacklevel=2)
        a = lams[max(i - 1, 0)]
        b = lams[min(i + 1, len(lams) - 1)]
        lam_star, s_star = _golden(smin, a, b, tol)
        if s_star >= threshold:
            continue
        sv = intersection_measure(frame(lam_star), subspace, all_values=True)
        mult = int(np.sum(sv < max(10 * s_star, 1e-6)))
        roots.append(Root(float(lam_star), mult, float(s_star), [float(x) for x in sv[:4]]))
    roots.sort(key=lambda r: r.lam)
    merged: list[Root] = []
    for r in roots:
        if merged and r.lam - merged[-1].lam < merge:
            prev = merged[-1]
            keep = prev if prev.s_min <= r.s_min else r
            merged[-1] = Root(keep.lam, prev.multiplicity + r.multiplicity, keep.s_min, keep.singular_values)
        else:
            merged.append(r)
    return SweepResult(lams, vals, merged)
