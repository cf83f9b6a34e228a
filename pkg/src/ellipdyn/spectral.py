"""Laplace-Beltrami eigenbases on the reference boundary and the surface operators.

Functions on the reference boundary are stored as coefficient vectors in a
real orthonormal eigenbasis of the parameter circle/sphere.  Nodal products
(multiplication by sigma, H, the potential, or a nonlinearity) go through the
quadrature grid: synthesize, multiply, analyze.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import sph_harm_y


class AliasingWarning(UserWarning):
    pass


class UnsupportedGeometry(ValueError):
    pass


ALIAS_TOL = 1e-9


class BoundaryBasis:
    """Common interface.  Subclasses set ``n, N, mu, labels, params, weights,
    S`` (nodal values of the modes, shape ``(M, dim)``)."""

    n: int
    N: int
    mu: np.ndarray
    labels: list
    params: np.ndarray
    weights: np.ndarray
    S: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.mu)

    @property
    def nodes(self) -> int:
        return len(self.weights)

    @property
    def P(self) -> np.ndarray:
        """Quadrature projection onto the modes, ``S^T diag(w)``."""
        if not hasattr(self, "_P"):
            self._P = self.S.T * self.weights
        return self._P

    def beltrami_eigenvalue(self, k: int) -> float:
        if not 0 <= k < self.dim:
            raise IndexError(f"mode index {k} outside basis of size {self.dim}")
        return float(self.mu[k])

    def synthesize(self, coeffs) -> np.ndarray:
        return self.S @ np.asarray(coeffs, float)

    def analyze(self, values, check: bool = True) -> np.ndarray:
        values = np.asarray(values, float)
        c = self.P @ values
        if check:
            resid = (values - self.S @ c).reshape(len(values), -1)
            scale = max(np.sqrt(self.weights @ (values.reshape(len(values), -1) ** 2).sum(-1)), 1e-300)
            err = np.sqrt(self.weights @ (resid**2).sum(-1))
            if err > ALIAS_TOL * scale:
                warnings.warn(f"nodal data not resolved by the basis (relative residual {err / scale:.2e})",
                              AliasingWarning, stacklevel=2)
        return c

    def multiply(self, nodal) -> np.ndarray:
        """Matrix of ``f -> analyze(nodal * synthesize(f))``."""
        return self.P @ (np.asarray(nodal, float)[:, None] * self.S)

    def sobolev_weights(self, s: float) -> np.ndarray:
        return (1.0 + self.mu) ** s

    def gram(self) -> np.ndarray:
        return self.P @ self.S

    def descriptor(self) -> dict:
        raise NotImplementedError

    @staticmethod
    def from_descriptor(d: dict) -> "BoundaryBasis":
        if d["kind"] == "circle":
            return CircleBasis(d["N"], d.get("oversample", 2))
        if d["kind"] == "sphere":
            return SphereBasis(d["N"], d.get("oversample", 2))
        raise ValueError(f"unknown basis kind {d['kind']!r}")


class CircleBasis(BoundaryBasis):
    """``1/sqrt(2 pi), cos(m th)/sqrt(pi), sin(m th)/sqrt(pi)`` for ``m <= N`` on
    ``oversample * (2N+1)`` equispaced nodes."""

    n = 2

    def __init__(self, N: int = 32, oversample: int = 2):
        if N < 0:
            raise ValueError("N must be nonnegative")
        self.N, self.oversample = int(N), int(oversample)
        M = max(self.oversample * (2 * self.N + 1), 2 * self.N + 2)
        self.params = 2 * np.pi * np.arange(M) / M
        self.weights = np.full(M, 2 * np.pi / M)
        self.param_weights = self.weights
        self.labels = [(0, 0)]
        for m in range(1, self.N + 1):
            self.labels += [(m, 1), (m, -1)]
        self.m = np.array([abs(l[0]) for l in self.labels])
        self.mu = self.m.astype(float) ** 2
        th = self.params
        cols, d1, d2 = [], [], []
        for m, kind in self.labels:
            if m == 0:
                c = np.full(M, 1 / np.sqrt(2 * np.pi))
                cols.append(c)
                d1.append(0 * c)
                d2.append(0 * c)
            elif kind == 1:
                cols.append(np.cos(m * th) / np.sqrt(np.pi))
                d1.append(-m * np.sin(m * th) / np.sqrt(np.pi))
                d2.append(-m * m * np.cos(m * th) / np.sqrt(np.pi))
            else:
                cols.append(np.sin(m * th) / np.sqrt(np.pi))
                d1.append(m * np.cos(m * th) / np.sqrt(np.pi))
                d2.append(-m * m * np.sin(m * th) / np.sqrt(np.pi))
        self.S = np.stack(cols, 1)
        self.S_th = np.stack(d1, 1)
        self.S_thth = np.stack(d2, 1)

    def index(self, m: int) -> int:
        """Signed wavenumber to mode index (``m>0`` cosine, ``m<0`` sine)."""
        if abs(m) > self.N:
            raise IndexError(f"|m|={abs(m)} exceeds truncation {self.N}")
        return 0 if m == 0 else 2 * abs(m) - (1 if m > 0 else 0)

    def evaluate(self, params, derivative: bool = False):
        """Mode values at arbitrary angles, optionally with ``d/dtheta`` as a
        trailing axis of length one."""
        th = np.asarray(params, float).reshape(-1)
        vals = np.empty((len(th), self.dim))
        ders = np.empty((len(th), self.dim, 1))
        for k, (m, kind) in enumerate(self.labels):
            if m == 0:
                vals[:, k] = 1 / np.sqrt(2 * np.pi)
                ders[:, k, 0] = 0.0
            elif kind == 1:
                vals[:, k] = np.cos(m * th) / np.sqrt(np.pi)
                ders[:, k, 0] = -m * np.sin(m * th) / np.sqrt(np.pi)
            else:
                vals[:, k] = np.sin(m * th) / np.sqrt(np.pi)
                ders[:, k, 0] = m * np.cos(m * th) / np.sqrt(np.pi)
        return (vals, ders) if derivative else vals

    def params_of(self, directions) -> np.ndarray:
        d = np.asarray(directions, float)
        return np.mod(np.arctan2(d[..., 1], d[..., 0]), 2 * np.pi)

    def differentiate_nodal(self, values) -> np.ndarray:
        """Spectral derivative in the angle of nodal data."""
        values = np.asarray(values, float)
        M = len(values)
        k = np.fft.rfftfreq(M, 1.0 / M)
        vh = np.fft.rfft(values)
        if M % 2 == 0:
            vh[-1] = 0.0
        return np.fft.irfft(1j * k * vh, M)

    def laplacian(self) -> np.ndarray:
        return self.P @ self.S_thth

    def descriptor(self):
        return {"kind": "circle", "N": self.N, "oversample": self.oversample}


def real_sph_harm(l: int, m: int, theta, phi) -> np.ndarray:
    """Real orthonormal spherical harmonic; ``theta`` polar, ``phi`` azimuth."""
    if m == 0:
        return np.real(sph_harm_y(l, 0, theta, phi))
    y = sph_harm_y(l, abs(m), theta, phi)
    sign = (-1) ** abs(m)
    return np.sqrt(2) * sign * (np.real(y) if m > 0 else np.imag(y))


class SphereBasis(BoundaryBasis):
    """Real spherical harmonics ``l <= L`` on a Gauss-Legendre x uniform grid."""

    n = 3

    def __init__(self, L: int = 15, oversample: int = 2):
        self.N = int(L)
        self.oversample = int(oversample)
        nth = self.oversample * (self.N + 1)
        nph = 2 * self.oversample * (self.N + 1)
        x, w = np.polynomial.legendre.leggauss(nth)
        th = np.arccos(x)
        ph = 2 * np.pi * np.arange(nph) / nph
        TH, PH = np.meshgrid(th, ph, indexing="ij")
        self.params = np.stack([TH.ravel(), PH.ravel()], -1)
        self.weights = (w[:, None] * np.full(nph, 2 * np.pi / nph)[None, :]).ravel()
        # d(polar) d(azimuth) weights, for integrals that carry their own metric
        self.param_weights = self.weights / np.sin(self.params[:, 0])
        self.labels = [(l, m) for l in range(self.N + 1) for m in range(-l, l + 1)]
        self.l = np.array([l for l, _ in self.labels])
        self.mu = (self.l * (self.l + 1)).astype(float)
        self.S = np.stack([real_sph_harm(l, m, self.params[:, 0], self.params[:, 1])
                           for l, m in self.labels], 1)

    def evaluate(self, params, derivative: bool = False):
        """Mode values at ``(polar, azimuth)`` pairs, optionally with the two
        parameter derivatives as a trailing axis."""
        params = np.atleast_2d(np.asarray(params, float))
        th, ph = params[:, 0], params[:, 1]
        vals = np.stack([real_sph_harm(l, m, th, ph) for l, m in self.labels], 1)
        if not derivative:
            return vals
        ders = np.empty(vals.shape + (2,))
        cot = np.cos(th) / np.sin(th)
        for k, (l, m) in enumerate(self.labels):
            am = abs(m)
            y = sph_harm_y(l, am, th, ph)
            up = sph_harm_y(l, am + 1, th, ph) if am < l else 0.0
            dy = am * cot * y + np.sqrt((l - am) * (l + am + 1)) * np.exp(-1j * ph) * up
            if m == 0:
                ders[:, k, 0] = np.real(dy)
                ders[:, k, 1] = 0.0
            else:
                sign = np.sqrt(2) * (-1) ** am
                ders[:, k, 0] = sign * (np.real(dy) if m > 0 else np.imag(dy))
                ders[:, k, 1] = -m * vals[:, self.index(l, -m)]
        return vals, ders

    def params_of(self, directions) -> np.ndarray:
        d = np.asarray(directions, float)
        d = d / np.linalg.norm(d, axis=-1, keepdims=True)
        return np.stack([np.arccos(np.clip(d[..., 2], -1, 1)),
                         np.mod(np.arctan2(d[..., 1], d[..., 0]), 2 * np.pi)], -1)

    def index(self, l: int, m: int) -> int:
        if l > self.N or abs(m) > l:
            raise IndexError(f"(l, m)=({l}, {m}) outside truncation {self.N}")
        return l * l + (m + l)

    def descriptor(self):
        return {"kind": "sphere", "N": self.N, "oversample": self.oversample}


def make_basis(n: int, N: int, oversample: int = 2) -> BoundaryBasis:
    if n == 2:
        return CircleBasis(N, oversample)
    if n == 3:
        return SphereBasis(N, oversample)
    raise ValueError("only n = 2 or 3 supported")


def sobolev_norm(coeffs, basis: BoundaryBasis, s: float) -> float:
    c = np.asarray(getattr(coeffs, "coeffs", coeffs), float)
    return float(np.sqrt(np.sum(basis.sobolev_weights(s) * c**2)))


@dataclass
class BoundaryFunction:
    basis: BoundaryBasis
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, float)
        if self.coeffs.shape != (self.basis.dim,):
            raise ValueError(f"expected {self.basis.dim} coefficients, got {self.coeffs.shape}")
        if not np.all(np.isfinite(self.coeffs)):
            raise ValueError("non-finite coefficients")

    @classmethod
    def from_values(cls, basis, values, check=True):
        return cls(basis, basis.analyze(values, check=check))

    def values(self):
        return self.basis.synthesize(self.coeffs)

    def norm(self, s=0.0):
        return sobolev_norm(self.coeffs, self.basis, s)

    def to_json(self) -> str:
        return json.dumps({"basis": self.basis.descriptor(), "coeffs": [float(c) for c in self.coeffs]})

    @classmethod
    def from_json(cls, text: str) -> "BoundaryFunction":
        d = json.loads(text)
        return cls(BoundaryBasis.from_descriptor(d["basis"]), np.array(d["coeffs"], float))


@dataclass
class SurfaceOperatorSet:
    """``T_t``, ``L_t`` in the basis plus the nodal factors used by the t-system."""

    t: float
    T: np.ndarray
    L: np.ndarray
    sigma: np.ndarray  # nodal
    H: np.ndarray  # nodal
    points: np.ndarray  # phi_t at the nodes
    area: np.ndarray  # a_t at the nodes
    diagonal: bool = False
    extras: dict = field(default_factory=dict)

    def dump_csv(self, path):
        np.savetxt(path, np.hstack([self.T, self.L]), delimiter=",", fmt="%.17g")


def assemble_surface_operators(cache, basis: BoundaryBasis, t: float) -> SurfaceOperatorSet:
    """Surface operators on ``d Omega_t`` pulled back to the reference nodes.

    ``T_t f = gamma . grad(f o phi_t^-1)`` and
    ``L_t f = div(sigma grad(f o phi_t^-1))``, both composed with ``phi_t``.
    """
    if cache.level.radial:
        snap = cache.snapshot(t)
        d = basis.dim
        return SurfaceOperatorSet(t, np.zeros((d, d)), -np.diag(basis.mu) / t**2, snap.sigma, snap.H,
                                  snap.points, snap.area, diagonal=True)
    if basis.n != 2:
        raise UnsupportedGeometry("surface operators for nonradial psi are implemented for n=2 only")
    snap = cache.snapshot(t)
    s = snap.metric
    e_tan = snap.tangents[..., 0] / s[:, None]
    gs = np.einsum("mi,mi->m", snap.gamma, e_tan)
    sig_s = snap.sigma / s
    dsig_s = basis.differentiate_nodal(sig_s)
    T = basis.P @ ((gs / s)[:, None] * basis.S_th)
    L = basis.P @ ((snap.sigma / s**2)[:, None] * basis.S_thth + (dsig_s / s)[:, None] * basis.S_th)
    return SurfaceOperatorSet(t, T, L, snap.sigma, snap.H, snap.points, snap.area,
                              extras={"metric": s, "gamma_s": gs})
