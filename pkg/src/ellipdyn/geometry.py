"""Level-set domain families and the geometry of their boundary flow.

The domains are ``Omega_t = {psi < t**2}``.  Boundary points of the
reference domain ``Omega_1`` are carried to ``d Omega_t`` by the flow of
an autonomous field ``Xt`` integrated in log-time ``tau = log t``.  To keep
the integration well scaled near the origin we evolve

    z = exp(-tau) * phi_tau(x),    K = exp(-tau) * D phi_tau(x),

which converge as ``tau -> -inf`` (to ``x_hat`` and ``M`` respectively).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp

RTOL = 1e-10
ATOL = 1e-12


class HypothesisViolation(ValueError):
    """A level function fails one of the standing assumptions on psi."""

    def __init__(self, name: str, detail: str):
        super().__init__(f"{name}: {detail}")
        self.name = name


class FlowIntegrationError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# level functions


class Polynomial:
    """Polynomial in n variables stored as ``{exponent tuple: coefficient}``."""

    def __init__(self, terms: dict[tuple[int, ...], float], n: int):
        self.n = n
        self.terms = {tuple(e): float(c) for e, c in terms.items() if c != 0.0}
        for e in self.terms:
            if len(e) != n:
                raise ValueError(f"exponent {e} does not match dimension {n}")
        self.degree = max((sum(e) for e in self.terms), default=0)

    def _eval(self, terms, x):
        out = np.zeros(x.shape[:-1])
        for e, c in terms.items():
            mono = np.full(x.shape[:-1], c)
            for i, k in enumerate(e):
                if k:
                    mono = mono * x[..., i] ** k
            out = out + mono
        return out

    @staticmethod
    def _derivative(terms, i):
        out: dict[tuple[int, ...], float] = {}
        for e, c in terms.items():
            if e[i] == 0:
                continue
            e2 = list(e)
            e2[i] -= 1
            out[tuple(e2)] = out.get(tuple(e2), 0.0) + c * e[i]
        return out

    def value(self, x):
        return self._eval(self.terms, np.asarray(x, float))

    def grad(self, x):
        x = np.asarray(x, float)
        return np.stack([self._eval(self._derivative(self.terms, i), x) for i in range(self.n)], -1)

    def hess(self, x):
        x = np.asarray(x, float)
        rows = []
        for i in range(self.n):
            di = self._derivative(self.terms, i)
            rows.append(np.stack([self._eval(self._derivative(di, j), x) for j in range(self.n)], -1))
        return np.stack(rows, -2)


@dataclass(frozen=True)
class LevelFunction:
    """The domain-defining function psi with analytic gradient and Hessian.

    ``cutoff_radius`` is the outer radius of the cutoff used for the
    tangential correction of the flow; ``None`` selects the default
    (a quarter of the distance from the origin to ``d Omega``).
    """

    n: int
    value: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], np.ndarray]
    name: str = "custom"
    radial: bool = False
    cutoff_radius: float | None = None

    @property
    def hessian_at_origin(self) -> np.ndarray:
        return np.asarray(self.hess(np.zeros(self.n)), float)

    @classmethod
    def from_polynomial(cls, poly: Polynomial, name="polynomial", radial=False, cutoff_radius=None):
        return cls(poly.n, poly.value, poly.grad, poly.hess, name=name, radial=radial,
                   cutoff_radius=cutoff_radius)


def _poly(n, quad: dict, extra: dict | None = None):
    terms = dict(quad)
    for e, c in (extra or {}).items():
        terms[e] = terms.get(e, 0.0) + c
    return Polynomial(terms, n)


def _unit(n, i, k):
    e = [0] * n
    e[i] = k
    return tuple(e)


def radial_level(n: int) -> LevelFunction:
    poly = _poly(n, {_unit(n, i, 2): 1.0 for i in range(n)})
    return LevelFunction.from_polynomial(poly, name="radial", radial=True)


def ellipse_level(*axes: float) -> LevelFunction:
    """``psi = sum x_i**2 / a_i**2``; two axes give an ellipse, three an ellipsoid."""
    n = len(axes)
    if n not in (2, 3) or min(axes) <= 0:
        raise ValueError("ellipse needs 2 or 3 positive semi-axes")
    poly = _poly(n, {_unit(n, i, 2): 1.0 / a**2 for i, a in enumerate(axes)})
    radial = len(set(axes)) == 1 and axes[0] == 1.0
    return LevelFunction.from_polynomial(poly, name="ellipse " + " ".join(f"{a:g}" for a in axes),
                                         radial=radial)


def quartic_perturbed_level(eps: float, n: int = 2) -> LevelFunction:
    """``psi = |x|**2 + eps * x_1**4``."""
    poly = _poly(n, {_unit(n, i, 2): 1.0 for i in range(n)}, {_unit(n, 0, 4): eps})
    return LevelFunction.from_polynomial(poly, name=f"quartic-perturbed {eps:g}")


def cubic_perturbed_ellipse(a: float, b: float, eps: float) -> LevelFunction:
    """``psi = x**2/a**2 + y**2/b**2 + eps * x**3``.  Only locally proper."""
    poly = _poly(2, {(2, 0): 1 / a**2, (0, 2): 1 / b**2}, {(3, 0): eps})
    return LevelFunction.from_polynomial(poly, name=f"ellipse-cubic {a:g} {b:g} {eps:g}")


def polynomial_level(n: int, quadratic: Sequence[float], cubic: Sequence[float] = ()) -> LevelFunction:
    """Quadratic plus cubic monomial coefficients in graded lexicographic order.

    For ``n=2`` the quadratic monomials are ``x1^2, x1 x2, x2^2`` and the cubic
    ones ``x1^3, x1^2 x2, x1 x2^2, x2^3``.
    """

    def monomials(deg):
        return sorted((e for e in product(range(deg + 1), repeat=n) if sum(e) == deg), reverse=True)

    quad = monomials(2)
    cub = monomials(3)
    if len(quadratic) != len(quad) or (cubic and len(cubic) != len(cub)):
        raise ValueError(f"expected {len(quad)} quadratic and {len(cub)} cubic coefficients")
    terms = dict(zip(quad, map(float, quadratic)))
    terms.update(zip(cub, map(float, cubic)))
    return LevelFunction.from_polynomial(Polynomial(terms, n), name="polynomial")


def builtin_level(descriptor: str, n: int = 2) -> LevelFunction:
    """Parse ``radial``, ``ellipse a b [c]``, ``quartic-perturbed eps`` or
    ``ellipse-cubic a b eps``."""
    parts = descriptor.split()
    if not parts:
        raise ValueError("empty level-function descriptor")
    kind, args = parts[0], [float(p) for p in parts[1:]]
    if kind == "radial":
        return radial_level(n)
    if kind == "ellipse":
        return ellipse_level(*args)
    if kind == "quartic-perturbed":
        return quartic_perturbed_level(args[0], n)
    if kind == "ellipse-cubic":
        return cubic_perturbed_ellipse(*args)
    if kind == "saddle":
        return LevelFunction.from_polynomial(_poly(2, {(2, 0): 1.0, (0, 2): -1.0}), name="saddle")
    raise ValueError(f"unknown level function {descriptor!r}")


# ---------------------------------------------------------------------------
# pointwise geometry


def _check_regular(level: LevelFunction, x):
    g = level.grad(x)
    gn = np.linalg.norm(g, axis=-1)
    if np.any(gn == 0.0):
        raise ValueError("sigma/H undefined at a critical point of psi")
    return g, gn


def eval_sigma(level: LevelFunction, x) -> np.ndarray:
    """Normal speed ``2 sqrt(psi) / |grad psi|``."""
    x = np.asarray(x, float)
    if level.radial:
        if np.any(np.linalg.norm(x, axis=-1) == 0):
            raise ValueError("sigma undefined at the origin")
        return np.ones(x.shape[:-1])
    _, gn = _check_regular(level, x)
    return 2.0 * np.sqrt(np.maximum(level.value(x), 0.0)) / gn


def eval_mean_curvature(level: LevelFunction, x) -> np.ndarray:
    """Divergence of the unit normal, ``(lap psi - hess(nu, nu)) / |grad psi|``."""
    x = np.asarray(x, float)
    g, gn = _check_regular(level, x)
    hs = level.hess(x)
    nu = g / gn[..., None]
    lap = np.trace(hs, axis1=-2, axis2=-1)
    return (lap - np.einsum("...i,...ij,...j->...", nu, hs, nu)) / gn


def unit_normal(level: LevelFunction, x) -> np.ndarray:
    g = level.grad(np.asarray(x, float))
    return g / np.linalg.norm(g, axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# the generating field


def _smooth_step(s):
    """C-infinity step: 0 for s<=0, 1 for s>=1.  Returns value and derivative."""
    s = np.clip(s, 0.0, 1.0)

    def h(u):
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            return np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)

    def dh(u):
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            safe = np.where(u > 0, u, 1.0)
            return np.where(u > 0, np.exp(-1.0 / safe) / safe**2, 0.0)

    a, b = h(s), h(1.0 - s)
    den = a + b
    val = a / den
    dval = (dh(s) * b + a * dh(1.0 - s)) / den**2
    return val, dval


@dataclass
class FlowField:
    """Generator ``Xt = 2 psi grad psi / |grad psi|^2 + chi * T`` of the log-time flow.

    ``T`` is the tangential projection of the position field and ``chi`` a
    smooth cutoff equal to one on ``|x| <= rho/2`` and zero on ``|x| >= rho``.
    """

    level: LevelFunction
    tangential: bool = True
    rho: float | None = None

    def __post_init__(self):
        if self.rho is None:
            self.rho = self.level.cutoff_radius
        if self.rho is None and self.tangential and not self.level.radial:
            self.rho = 0.25 * boundary_distance(self.level)

    def cutoff(self, x):
        r = np.linalg.norm(x, axis=-1)
        s = (self.rho - r) / (0.5 * self.rho)
        val, dval = _smooth_step(s)
        with np.errstate(invalid="ignore", divide="ignore"):
            radial_dir = np.where(r[..., None] > 0, x / np.where(r > 0, r, 1.0)[..., None], 0.0)
        grad = (dval * (-2.0 / self.rho))[..., None] * radial_dir
        inside = (s > 0) & (s < 1)
        grad = np.where(inside[..., None], grad, 0.0)
        return val, grad

    def __call__(self, x):
        return self.evaluate(x, jacobian=False)[0]

    def jacobian(self, x):
        return self.evaluate(x, jacobian=True)[1]

    def evaluate(self, x, jacobian=True):
        x = np.asarray(x, float)
        n = x.shape[-1]
        eye = np.eye(n)
        if self.level.radial:
            return x.copy(), (np.broadcast_to(eye, x.shape + (n,)).copy() if jacobian else None)
        psi = self.level.value(x)
        g = self.level.grad(x)
        q = np.einsum("...i,...i->...", g, g)
        tiny = q == 0.0
        q = np.where(tiny, 1.0, q)
        normal = (2.0 * psi / q)[..., None] * g
        out = normal
        J = None
        if jacobian:
            hs = self.level.hess(x)
            hg = np.einsum("...ij,...j->...i", hs, g)
            J = (2.0 * np.einsum("...i,...j->...ij", g, g) + 2.0 * psi[..., None, None] * hs) / q[..., None, None]
            J -= 4.0 * psi[..., None, None] * np.einsum("...i,...j->...ij", g, hg) / (q**2)[..., None, None]
        if self.tangential:
            chi, dchi = self.cutoff(x)
            p = np.einsum("...i,...i->...", x, g)
            T = x - (p / q)[..., None] * g
            out = out + chi[..., None] * T
            if jacobian:
                hx = np.einsum("...ij,...j->...i", hs, x)
                dT = eye - (np.einsum("...i,...j->...ij", g, g + hx) + p[..., None, None] * hs) / q[..., None, None]
                dT += 2.0 * p[..., None, None] * np.einsum("...i,...j->...ij", g, hg) / (q**2)[..., None, None]
                J = J + chi[..., None, None] * dT + np.einsum("...i,...j->...ij", T, dchi)
        if np.any(tiny):
            # the origin: Xt(0) = 0, grad Xt(0) = I with the correction
            out = np.where(tiny[..., None], 0.0, out)
            if jacobian:
                J = np.where(tiny[..., None, None], eye if self.tangential else 0.0, J)
        return out, J


# ---------------------------------------------------------------------------
# the reference boundary


def ray_radius(level: LevelFunction, omega: np.ndarray, level_value: float = 1.0) -> np.ndarray:
    """Radius ``r`` with ``psi(r * omega) = level_value`` along unit directions."""
    omega = np.asarray(omega, float)
    A = level.hessian_at_origin
    quad = 0.5 * np.einsum("...i,ij,...j->...", omega, A, omega)
    if np.any(quad <= 0):
        raise HypothesisViolation("hessian", "Hessian at origin is not positive definite")
    r = np.sqrt(level_value / quad)
    for _ in range(100):
        x = r[..., None] * omega
        slope = np.einsum("...i,...i->...", level.grad(x), omega)
        res = level.value(x) - level_value
        step = res / np.where(slope > 0, slope, np.inf)
        step = np.clip(step, -0.5 * r, 0.5 * r)
        r = r - step
        if np.max(np.abs(step) / r) < 1e-15:
            break
    x = r[..., None] * omega
    if np.max(np.abs(level.value(x) - level_value)) > 1e-11 * max(level_value, 1.0):
        raise HypothesisViolation("star-shaped", "could not locate the boundary along a ray")
    return r


def _directions(n, params):
    params = np.asarray(params, float)
    if n == 2:
        th = params.reshape(-1)
        omega = np.stack([np.cos(th), np.sin(th)], -1)
        d = np.stack([-np.sin(th), np.cos(th)], -1)[..., None]
        return omega, d
    th, ph = params[..., 0].reshape(-1), params[..., 1].reshape(-1)
    st, ct, sp, cp = np.sin(th), np.cos(th), np.sin(ph), np.cos(ph)
    omega = np.stack([st * cp, st * sp, ct], -1)
    d_th = np.stack([ct * cp, ct * sp, -st], -1)
    d_ph = np.stack([-st * sp, st * cp, np.zeros_like(st)], -1)
    return omega, np.stack([d_th, d_ph], -1)


def boundary_points(level: LevelFunction, params):
    """Points of ``d Omega`` in ray parametrisation and their parameter tangents.

    ``params`` is an angle array for n=2 or an ``(M, 2)`` array of
    (polar, azimuth) angles for n=3.  Returns ``(y, dy)`` with ``dy`` of
    shape ``(M, n, n-1)``.
    """
    omega, domega = _directions(level.n, params)
    r = ray_radius(level, omega)
    y = r[:, None] * omega
    g = level.grad(y)
    gw = np.einsum("mi,mi->m", g, omega)
    dr = -r[:, None] * np.einsum("mi,mik->mk", g, domega) / gw[:, None]
    dy = omega[:, :, None] * dr[:, None, :] + r[:, None, None] * domega
    return y, dy


def boundary_distance(level: LevelFunction, samples: int = 720) -> float:
    if level.n == 2:
        params = np.linspace(0, 2 * np.pi, samples, endpoint=False)
    else:
        th = np.linspace(0, np.pi, samples // 8 + 2)[1:-1]
        ph = np.linspace(0, 2 * np.pi, samples // 4, endpoint=False)
        params = np.stack(np.meshgrid(th, ph, indexing="ij"), -1).reshape(-1, 2)
    omega, _ = _directions(level.n, params)
    return float(np.min(ray_radius(level, omega)))


# ---------------------------------------------------------------------------
# validation


@dataclass
class ValidationItem:
    name: str
    passed: bool
    margin: float
    detail: str = ""


@dataclass
class ValidationReport:
    items: list[ValidationItem]
    hessian_eigenvalues: np.ndarray

    @property
    def ok(self) -> bool:
        return all(i.passed for i in self.items)

    def raise_if_failed(self):
        for item in self.items:
            if not item.passed:
                raise HypothesisViolation(item.name, item.detail)

    def lines(self):
        return [f"{i.name:24s} {'pass' if i.passed else 'FAIL'}  margin={i.margin:.3e}  {i.detail}"
                for i in self.items]


def validate_level_function(level: LevelFunction, angular: int = 64, radial: int = 64,
                            inner_fraction: float = 0.05) -> ValidationReport:
    """Check psi against the standing hypotheses on a polar/spherical product grid.

    Properness is only spot-checked through ``psi >= c |x|^2`` on the grid.
    """
    n = level.n
    zero = np.zeros(n)
    items = []
    A = level.hessian_at_origin
    eig = np.linalg.eigvalsh(0.5 * (A + A.T))
    origin_margin = max(abs(float(level.value(zero))), float(np.linalg.norm(level.grad(zero))))
    items.append(ValidationItem("minimum-at-origin", origin_margin < 1e-12, -origin_margin,
                                "psi(0)=0 and grad psi(0)=0"))
    pd = bool(eig.min() > 1e-12)
    items.append(ValidationItem("hessian-positive-definite", pd, float(eig.min()),
                                "Hessian not positive definite" if not pd else f"eigenvalues {np.round(eig, 12)}"))
    if not pd:
        return ValidationReport(items, eig)

    if n == 2:
        params = np.linspace(0, 2 * np.pi, angular, endpoint=False)
    else:
        k = int(np.sqrt(angular))
        th = np.arccos(np.polynomial.legendre.leggauss(max(k, 2))[0])
        ph = np.linspace(0, 2 * np.pi, max(angular // max(k, 2), 2), endpoint=False)
        params = np.stack(np.meshgrid(th, ph, indexing="ij"), -1).reshape(-1, 2)
    omega, _ = _directions(n, params)
    rb = ray_radius(level, omega)
    frac = np.linspace(inner_fraction, 1.2, radial)
    pts = (frac[None, :, None] * rb[:, None, None]) * omega[:, None, :]
    gn = np.linalg.norm(level.grad(pts), axis=-1)
    rel = gn / np.linalg.norm(pts, axis=-1)
    crit_ok = bool(rel.min() > 1e-8)
    items.append(ValidationItem("no-other-critical-points", crit_ok, float(rel.min()),
                                "interior critical point detected" if not crit_ok else "min |grad psi|/|x| on grid"))
    # psi must increase along every sampled ray, otherwise the boundary is not a graph over the sphere
    radial_slope = np.einsum("arn,an->ar", level.grad(pts), omega)
    star_ok = bool(radial_slope.min() > 0)
    items.append(ValidationItem("star-shaped-levels", star_ok, float(radial_slope.min()),
                                "radial derivative of psi on grid"))
    proper = level.value(pts) / np.einsum("...i,...i->...", pts, pts)
    items.append(ValidationItem("properness-proxy", bool(proper.min() > 0), float(proper.min()),
                                "min psi/|x|^2 on grid"))
    return ValidationReport(items, eig)


# ---------------------------------------------------------------------------
# flow integration


def _scaled_rhs(field: FlowField, n: int, npts: int, with_jac: bool):
    def rhs(tau, y):
        e = np.exp(tau)
        z = y[: npts * n].reshape(npts, n)
        x = e * z
        X, DX = field.evaluate(x, jacobian=with_jac)
        dz = X / e - z
        if not with_jac:
            return dz.ravel()
        K = y[npts * n:].reshape(npts, n, n)
        dK = np.einsum("mij,mjk->mik", DX - np.eye(n), K)
        return np.concatenate([dz.ravel(), dK.ravel()])

    return rhs


def integrate_scaled_flow(field: FlowField, x0, tau_span, with_jac=True, dense=False,
                          t_eval=None, rtol=RTOL, atol=ATOL):
    """Integrate ``(z, K)`` for a batch of points from ``tau_span[0]`` (where they equal
    ``(exp(tau0) * x0, I)``-scaled initial data) to ``tau_span[1]``."""
    x0 = np.atleast_2d(np.asarray(x0, float))
    npts, n = x0.shape
    tau0 = tau_span[0]
    y0 = [(x0 * np.exp(-tau0)).ravel()]
    if with_jac:
        y0.append(np.broadcast_to(np.eye(n), (npts, n, n)).ravel())
    y0 = np.concatenate(y0)
    if tau_span[0] == tau_span[1]:
        return None, y0
    sol = solve_ivp(_scaled_rhs(field, n, npts, with_jac), tau_span, y0, method="DOP853",
                    rtol=rtol, atol=atol, dense_output=dense, t_eval=t_eval)
    if sol.status != 0:
        raise FlowIntegrationError(f"flow integration failed: {sol.message}")
    return sol, sol.y[:, -1]


def flow_map(level_or_field, x, tau: float, tangential: bool = True) -> np.ndarray:
    """``phi_tau(x)`` in log-time; ``x`` may be a single point or a batch."""
    field = level_or_field if isinstance(level_or_field, FlowField) else FlowField(level_or_field, tangential)
    x = np.asarray(x, float)
    single = x.ndim == 1
    if field.level.radial:
        out = np.exp(tau) * x
        return out
    _, y = integrate_scaled_flow(field, x, (0.0, float(tau)), with_jac=False)
    z = y.reshape(-1, field.level.n)
    out = np.exp(tau) * z
    return out[0] if single else out


def flow_jacobian(level_or_field, x, tau: float, tangential: bool = True) -> np.ndarray:
    field = level_or_field if isinstance(level_or_field, FlowField) else FlowField(level_or_field, tangential)
    x = np.asarray(x, float)
    single = x.ndim == 1
    n = field.level.n
    if field.level.radial:
        J = np.exp(tau) * np.broadcast_to(np.eye(n), np.atleast_2d(x).shape[:-1] + (n, n))
        return J[0] if single else J
    _, y = integrate_scaled_flow(field, x, (0.0, float(tau)), with_jac=True)
    npts = y.size // (n + n * n)
    K = y[npts * n:].reshape(npts, n, n)
    J = np.exp(tau) * K
    return J[0] if single else J


def flow_points(level_or_field, x, taus, jacobian: bool = False, tangential: bool = True):
    """``phi_{tau_i}(x_i)`` with a separate log-time for every point.

    Each point is integrated over ``s in [0, 1]`` with its field scaled by
    ``tau_i``, so a batch of different flow times costs one solve.
    """
    field_ = level_or_field if isinstance(level_or_field, FlowField) else FlowField(level_or_field, tangential)
    x = np.atleast_2d(np.asarray(x, float))
    taus = np.broadcast_to(np.asarray(taus, float), x.shape[:1])
    npts, n = x.shape
    if field_.level.radial:
        e = np.exp(taus)
        out = e[:, None] * x
        return (out, e[:, None, None] * np.eye(n)) if jacobian else out

    def rhs(_, y):
        xs = y[: npts * n].reshape(npts, n)
        X, DX = field_.evaluate(xs, jacobian=jacobian)
        dx = taus[:, None] * X
        if not jacobian:
            return dx.ravel()
        K = y[npts * n:].reshape(npts, n, n)
        dK = taus[:, None, None] * np.einsum("mij,mjk->mik", DX, K)
        return np.concatenate([dx.ravel(), dK.ravel()])

    y0 = [x.ravel()]
    if jacobian:
        y0.append(np.broadcast_to(np.eye(n), (npts, n, n)).ravel())
    sol = solve_ivp(rhs, (0.0, 1.0), np.concatenate(y0), method="DOP853", rtol=RTOL, atol=ATOL)
    if sol.status != 0:
        raise FlowIntegrationError(f"flow integration failed: {sol.message}")
    y = sol.y[:, -1]
    out = y[: npts * n].reshape(npts, n)
    if jacobian:
        return out, y[npts * n:].reshape(npts, n, n)
    return out


# ---------------------------------------------------------------------------
# the family cache


@dataclass
class ShellSnapshot:
    """Geometry of ``d Omega_t`` pulled back to the reference nodes."""

    t: float
    points: np.ndarray  # phi_t(y_j), (M, n)
    jac: np.ndarray  # D phi_t(y_j), (M, n, n)
    sigma: np.ndarray
    H: np.ndarray
    area: np.ndarray  # a_t
    normal: np.ndarray  # unit normal of d Omega_t at phi_t(y_j)
    velocity: np.ndarray  # X(x, t) = Xt(x) / t
    gamma: np.ndarray  # tangential part of the velocity
    tangents: np.ndarray  # d/dparam phi_t(y(param)), (M, n, n-1)

    @property
    def det_jac(self):
        return np.linalg.det(self.jac)

    @property
    def metric(self):
        """Surface element of ``d Omega_t`` with respect to the parameter measure."""
        T = self.tangents
        if T.shape[-1] == 1:
            return np.linalg.norm(T[..., 0], axis=-1)
        return np.linalg.norm(np.cross(T[..., 0], T[..., 1]), axis=-1)


class DomainFamilyCache:
    """Flow samples for a fixed set of reference boundary nodes.

    The flow is integrated once from ``t=1`` down to ``t_min`` (and up to
    ``t_max`` when ``t_max > 1``) with dense output; snapshots at any ``t`` in
    range are evaluated from the interpolant.  The radial case uses closed forms.
    """

    def __init__(self, level: LevelFunction, params, t_min: float = 1e-3, t_max: float = 1.0,
                 tangential: bool = True, rtol: float = RTOL, atol: float = ATOL):
        self.level = level
        self.n = level.n
        self.params = np.asarray(params, float)
        self.t_min, self.t_max = float(t_min), float(t_max)
        self.field = FlowField(level, tangential)
        self.y, self.dy = boundary_points(level, self.params)
        self.ref_normal = unit_normal(level, self.y)
        if self.n == 2:
            self.ref_metric = np.linalg.norm(self.dy[..., 0], axis=-1)
        else:
            self.ref_metric = np.linalg.norm(np.cross(self.dy[..., 0], self.dy[..., 1]), axis=-1)
        self.radial = level.radial
        self._segments = []
        if not self.radial:
            for end in (np.log(self.t_min), np.log(self.t_max)):
                if end != 0.0:
                    sol, _ = integrate_scaled_flow(self.field, self.y, (0.0, end), dense=True,
                                                   rtol=rtol, atol=atol)
                    self._segments.append((min(0.0, end), max(0.0, end), sol.sol))

    @property
    def size(self):
        return len(self.y)

    def _state(self, tau):
        n, m = self.n, self.size
        for lo, hi, sol in self._segments:
            if lo - 1e-12 <= tau <= hi + 1e-12:
                y = sol(tau)
                return y[: m * n].reshape(m, n), y[m * n:].reshape(m, n, n)
        if abs(tau) < 1e-15:
            return self.y.copy(), np.broadcast_to(np.eye(n), (m, n, n)).copy()
        raise ValueError(f"t={np.exp(tau):.3e} outside cached range [{self.t_min}, {self.t_max}]")

    def flow(self, t: float):
        """``(phi_t(y_j), D phi_t(y_j))`` for all nodes."""
        n = self.n
        if self.radial:
            return t * self.y, t * np.broadcast_to(np.eye(n), (self.size, n, n)).copy()
        z, K = self._state(np.log(t))
        return t * z, t * K

    def snapshot(self, t: float) -> ShellSnapshot:
        level = self.level
        x, J = self.flow(t)
        tangents = np.einsum("mij,mjk->mik", J, self.dy)
        if self.radial:
            normal = self.y / np.linalg.norm(self.y, axis=-1, keepdims=True)
            sigma = np.ones(self.size)
            H = np.full(self.size, (self.n - 1) / t)
            area = np.full(self.size, t ** (self.n - 1))
            velocity = x / t
            gamma = np.zeros_like(x)
        else:
            normal = unit_normal(level, x)
            sigma = eval_sigma(level, x)
            H = eval_mean_curvature(level, x)
            Jinv_T = np.linalg.inv(J).transpose(0, 2, 1)
            area = np.linalg.det(J) * np.linalg.norm(np.einsum("mij,mj->mi", Jinv_T, self.ref_normal), axis=-1)
            velocity = self.field(x) / t
            gamma = velocity - np.einsum("mi,mi->m", velocity, normal)[:, None] * normal
        return ShellSnapshot(t, x, J, sigma, H, area, normal, velocity, gamma, tangents)

    def tangential_divergence_gamma(self, t: float, basis) -> np.ndarray:
        """``div^{d Omega_t} gamma`` at the nodes (curves only), via spectral
        differentiation in the reference angle."""
        if self.n != 2:
            raise NotImplementedError("tangential divergence implemented for curves only")
        snap = self.snapshot(t)
        s = snap.metric
        e_tan = snap.tangents[..., 0] / s[:, None]
        gs = np.einsum("mi,mi->m", snap.gamma, e_tan)
        return basis.differentiate_nodal(gs) / s

    def report_rows(self, times):
        """Rows ``(t, node, sigma, H, a, detJ)``."""
        rows = []
        for t in times:
            snap = self.snapshot(float(t))
            det = snap.det_jac
            for j in range(self.size):
                rows.append((float(t), j, snap.sigma[j], snap.H[j], snap.area[j], det[j]))
        return rows


def area_density(level: LevelFunction, y, t: float, tangential: bool = True) -> np.ndarray:
    """``a_t(y) = det(D phi_t) |D phi_t^{-T} nu_y|`` for reference points ``y``."""
    y = np.atleast_2d(np.asarray(y, float))
    if level.radial:
        return np.full(len(y), t ** (level.n - 1))
    J = flow_jacobian(level, y, np.log(t), tangential)
    J = J.reshape(-1, level.n, level.n)
    nu = unit_normal(level, y)
    Jinv_T = np.linalg.inv(J).transpose(0, 2, 1)
    return np.linalg.det(J) * np.linalg.norm(np.einsum("mij,mj->mi", Jinv_T, nu), axis=-1)


# ---------------------------------------------------------------------------
# asymptotics


@dataclass
class AsymptoticProfile:
    xhat: np.ndarray
    sigma0: float
    H0: float
    M: np.ndarray
    converged: bool
    increments: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ts: np.ndarray = field(default_factory=lambda: np.zeros(0))
    zs: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def errors(self, level: LevelFunction):
        """``|sigma_t - sigma_0|`` and ``|t H_t - H_0|`` along the sampled flow line."""
        x = self.ts[:, None] * self.zs
        es = np.abs(eval_sigma(level, x) - self.sigma0)
        eh = np.abs(self.ts * eval_mean_curvature(level, x) - self.H0)
        return es, eh

    def orders(self, level: LevelFunction, floor: float = 1e-9):
        es, eh = self.errors(level)
        return observed_order(self.ts, es, floor), observed_order(self.ts, eh, floor)


def sigma0_formula(A, xhat):
    Ax = A @ xhat
    return float(np.sqrt(2.0 * xhat @ Ax) / np.linalg.norm(Ax))


def H0_formula(A, xhat):
    Ax = A @ xhat
    nAx = np.linalg.norm(Ax)
    return float((np.trace(A) - (A @ Ax) @ Ax / nAx**2) / nAx)


def asymptotic_profile(level: LevelFunction, y, levels: int = 6, t_start: float = 1e-2,
                       tangential: bool = True) -> AsymptoticProfile:
    """Limits ``x_hat = lim phi_t(y)/t`` and ``M = lim D phi_t(y)/t`` by two-point
    Richardson extrapolation on ``t_k = t_start * 2^-k``, plus the closed-form
    ``sigma_0`` and ``H_0``."""
    y = np.asarray(y, float)
    n = level.n
    A = level.hessian_at_origin
    if level.radial:
        xhat = y.copy()
        M = np.eye(n)
        ts = t_start * 2.0 ** -np.arange(levels)
        return AsymptoticProfile(xhat, sigma0_formula(A, xhat), H0_formula(A, xhat), M, True,
                                 ts=ts, zs=np.repeat(xhat[None], levels, 0))
    ts = t_start * 2.0 ** -np.arange(levels)
    field_ = FlowField(level, tangential)
    sol, _ = integrate_scaled_flow(field_, y[None], (0.0, float(np.log(ts[-1]))), t_eval=np.log(ts))
    zs = sol.y[:n].T  # z(t_k) = phi_t(y)/t
    Ks = sol.y[n:].T.reshape(-1, n, n)
    rich_z = 2.0 * zs[1:] - zs[:-1]
    rich_K = 2.0 * Ks[1:] - Ks[:-1]
    inc = np.linalg.norm(np.diff(rich_z, axis=0), axis=-1)
    floor = 1e-12 * max(1.0, np.linalg.norm(rich_z[-1]))
    big = inc[inc > floor]
    converged = bool(len(big) < 2 or np.all(big[1:] <= big[:-1] * 1.05))
    xhat = rich_z[-1]
    return AsymptoticProfile(xhat, sigma0_formula(A, xhat), H0_formula(A, xhat), rich_K[-1],
                             converged, inc, ts, zs)


def observed_order(ts, errors, floor: float = 1e-9) -> float:
    """Least-squares slope of ``log error`` against ``log t``.

    Errors at or below ``floor`` are excluded; when all errors sit at the floor
    the limit is attained exactly on the sequence and ``inf`` is returned.
    """
    ts = np.asarray(ts, float)
    errors = np.abs(np.asarray(errors, float))
    keep = errors > floor
    if keep.sum() == 0:
        return float("inf")
    if keep.sum() == 1:
        return float("nan")
    return float(np.polyfit(np.log(ts[keep]), np.log(errors[keep]), 1)[0])


# ---------------------------------------------------------------------------
# coarea quadrature


@dataclass
class ShellQuadrature:
    """Tensor rule over ``Omega_{a,b}``: Gauss-Legendre in t times the boundary rule."""

    t: np.ndarray
    t_weights: np.ndarray
    snapshots: list
    node_weights: np.ndarray  # parameter-measure weights of the boundary rule

    def volume_weights(self, k):
        """Weights turning nodal values on ``d Omega_{t_k}`` into a volume integral."""
        s = self.snapshots[k]
        return self.t_weights[k] * s.sigma * s.metric * self.node_weights


def shell_quadrature(cache: DomainFamilyCache, node_weights, a: float, b: float, nt: int = 32) -> ShellQuadrature:
    x, w = np.polynomial.legendre.leggauss(nt)
    t = 0.5 * (b - a) * x + 0.5 * (a + b)
    w = 0.5 * (b - a) * w
    return ShellQuadrature(t, w, [cache.snapshot(float(tk)) for tk in t], np.asarray(node_weights, float))


def coarea_integrate(w: Callable[[np.ndarray], np.ndarray], cache: DomainFamilyCache, node_weights,
                     a: float, b: float, nt: int = 32) -> float:
    """``int_{Omega_{a,b}} w = int_a^b int_{dOmega} sigma_t (w o phi_t) a_t dmu dt``."""
    if not 0 < a < b:
        raise ValueError("need 0 < a < b")
    quad = shell_quadrature(cache, node_weights, a, b, nt)
    total = 0.0
    for k, snap in enumerate(quad.snapshots):
        total += float(np.sum(quad.volume_weights(k) * w(snap.points)))
    return total
