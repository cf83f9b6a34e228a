"""Command-line front end: ``ellipdyn {geometry,evolve,eig,reconstruct,harmonic-check}``."""
from __future__ import annotations

import argparse
import csv
import json
import platform
import sys
import time
import warnings
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config
from .dynamics import (BoundarySystem, LinearSystemSpec, NonlinearityModel, OverflowAbort, RankCollapse,
                       integrate_state, rescale_to_tau, CauchyPair, t_rhs, tau_rhs)
from .eigensolver import DIRICHLET, NEUMANN, eigenvalue_sweep
from .geometry import (DomainFamilyCache, FlowIntegrationError, HypothesisViolation, asymptotic_profile,
                       validate_level_function)
from .harmonic import HarmonicMode, asymptotic_block, exact_trace_vector, rate_pair
from .reconstruct import TraceHistory, reconstruct_field, removable_singularity_check, weak_residual
from .spectral import UnsupportedGeometry, make_basis

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_USAGE = 0, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if not isinstance(v, str) else v for v in row])


def write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


class Context:
    def __init__(self, cfg: ExperimentConfig, out: Path, quiet: bool):
        self.cfg, self.out, self.quiet = cfg, out, quiet

    def say(self, *args):
        if not self.quiet:
            print(*args)


def parse_nonlinearity(text: str) -> NonlinearityModel:
    text = text.replace(" ", "")
    if text in ("", "0"):
        return NonlinearityModel.zero()
    coef = 1.0
    if "*" in text:
        c, text = text.split("*", 1)
        coef = float(c)
    if text.startswith("u^"):
        return NonlinearityModel.power(int(text[2:]), coef)
    raise ConfigError(f"unknown nonlinearity {text!r}; use '0', 'u^p' or 'c*u^p'")


def build_system(cfg: ExperimentConfig, t_min: float | None = None):
    level = cfg.domain.level()
    validate_level_function(level).raise_if_failed()
    if cfg.domain.n == 3 and not level.radial:
        raise UnsupportedGeometry("nonradial psi is supported for n=2 only")
    basis = make_basis(cfg.domain.n, cfg.basis.N, cfg.basis.oversample)
    t_min = cfg.dynamics.t0 if t_min is None else t_min
    cache = DomainFamilyCache(level, basis.params, t_min=t_min)
    return BoundarySystem(cache, basis)


# ---------------------------------------------------------------------------
# commands


def cmd_geometry(ctx: Context):
    cfg = ctx.cfg
    g = cfg.geometry
    level = cfg.domain.level()
    report = validate_level_function(level)
    for line in report.lines():
        ctx.say(line)
    report.raise_if_failed()
    n = level.n
    if n == 2:
        params = 2 * np.pi * np.arange(g.nodes) / g.nodes
    else:
        nth = max(2, int(np.ceil(np.sqrt(g.nodes / 2))))
        th = np.arccos(np.polynomial.legendre.leggauss(nth)[0])
        ph = 2 * np.pi * np.arange(2 * nth) / (2 * nth)
        params = np.stack(np.meshgrid(th, ph, indexing="ij"), -1).reshape(-1, 2)
    cache = DomainFamilyCache(level, params, t_min=g.t_min, t_max=g.t_max)
    times = np.geomspace(g.t_min, g.t_max, g.times)
    write_csv(ctx.out / "geometry.csv", ["t", "node_index", "sigma", "H", "a", "detJ"], cache.report_rows(times))

    summary = []
    picks = np.unique(np.linspace(0, len(cache.y) - 1, min(16, len(cache.y))).astype(int))
    for j in picks:
        prof = asymptotic_profile(level, cache.y[j], levels=8)
        o_s, o_h = prof.orders(level)
        summary.append({"node": int(j), "xhat": prof.xhat.tolist(), "sigma0": prof.sigma0, "H0": prof.H0,
                        "converged": prof.converged, "order_sigma": o_s, "order_tH": o_h})
    write_json(ctx.out / "asymptotics.json", {"level": level.name, "nodes": summary})
    for s in summary:
        ctx.say(f"node {s['node']:4d}  sigma0={s['sigma0']:.10f}  H0={s['H0']:.10f}  "
                f"orders {s['order_sigma']:.3f} {s['order_tH']:.3f}")


def cmd_evolve(ctx: Context):
    cfg = ctx.cfg
    e = cfg.evolve
    alpha = cfg.alpha
    lo = min(e.t_start, e.t_end)
    system = build_system(cfg, t_min=min(lo, cfg.dynamics.t0))
    basis = system.basis
    d = basis.dim
    ts = np.linspace(e.t_start, e.t_end, e.samples)
    rtol = cfg.dynamics.rtol
    if e.mode == "oracle":
        if not system.radial:
            raise UsageError("oracle mode needs a radial domain")
        mode = HarmonicMode(basis.n, e.l, e.m, e.branch, alpha)
        spec = LinearSystemSpec(system, 0.0, 0.0)
        y0 = e.amplitude * exact_trace_vector(mode, basis, e.t_start)
        traj = integrate_state(t_rhs(spec, system), y0, (e.t_start, e.t_end), rtol=rtol, atol=1e-14, t_eval=ts)
        errs = []
        for t, y in zip(traj.times, traj.states):
            ex = e.amplitude * exact_trace_vector(mode, basis, t)
            errs.append((t, np.linalg.norm(y - ex) / np.linalg.norm(ex)))
        write_csv(ctx.out / "errors.csv", ["t", "rel_error"], errs)
        ctx.say(f"max relative error vs closed form: {max(r[1] for r in errs):.3e}")
    elif e.mode in ("zero", "random"):
        spec = LinearSystemSpec(system, cfg.dynamics.potential_value(), 0.0)
        if e.mode == "zero":
            y0 = np.zeros(2 * d)
        else:
            rng = np.random.default_rng(cfg.seed)
            y0 = np.concatenate([1e-3 * rng.standard_normal(d), rng.standard_normal(d)]) * e.amplitude
        taus = np.log(ts)
        try:
            traj = integrate_state(tau_rhs(spec, system, alpha), y0, (taus[0], taus[-1]), rtol=rtol, t_eval=taus)
        except OverflowAbort as exc:
            ctx.say(f"overflow-abort at tau={exc.time:.6g} (t={np.exp(exc.time):.6g})")
            raise
        write_csv(ctx.out / "trajectory.csv", ["tau", "mode_index", "f_coeff", "g_coeff"],
                  [(tau, k, y[k], y[d + k]) for tau, y in zip(traj.times, traj.states) for k in range(d)])
        ctx.say(f"integrated {len(traj.times)} samples, final norm {np.linalg.norm(traj.states[-1]):.6e}")
        return
    elif e.mode == "nonlinear":
        model = parse_nonlinearity(e.nonlinearity)
        pts = system.cache.y
        f = basis.analyze(e.amplitude * (1 + e.t_start * pts[:, 0]))
        g = basis.analyze(e.amplitude * pts[:, 0])
        traj = integrate_state(t_rhs(model, system), np.concatenate([f, g]), (e.t_start, e.t_end),
                               rtol=rtol, atol=1e-14, t_eval=ts)
        TraceHistory.from_trajectory(basis, traj).write_csv(ctx.out / "history.csv")
    else:
        raise UsageError(f"unknown evolve mode {e.mode!r}")
    rows = []
    for t, y in zip(traj.times, traj.states):
        r = rescale_to_tau(CauchyPair(y[:d], y[d:], t), alpha)
        rows.extend((r.tau, k, r.ft[k], r.gt[k]) for k in range(d))
    write_csv(ctx.out / "trajectory.csv", ["tau", "mode_index", "f_coeff", "g_coeff"], rows)


def cmd_eig(ctx: Context):
    cfg = ctx.cfg
    system = build_system(cfg)
    spec = LinearSystemSpec(system, cfg.dynamics.potential_value(), 0.0)
    ec = cfg.eig
    sub = DIRICHLET if ec.subspace == "dirichlet" else NEUMANN
    res = eigenvalue_sweep(spec, (ec.lambda_min, ec.lambda_max), ec.grid, cfg.alpha, cfg.dynamics.t0, sub,
                           tol=ec.tol, dtau=cfg.dynamics.dtau, rtol=cfg.dynamics.rtol,
                           workers=2 if ec.parallel else 1)
    write_csv(ctx.out / "scan.csv", ["lambda", "s_min"], zip(res.lams, res.s_min))
    write_json(ctx.out / "roots.json", {"subspace": sub.name, "roots": [r.to_dict() for r in res.roots]})
    for r in res.roots:
        ctx.say(f"lambda = {r.lam:.8f}  multiplicity {r.multiplicity}  s_min {r.s_min:.2e}")


def cmd_reconstruct(ctx: Context):
    cfg = ctx.cfg
    rc = cfg.reconstruct
    if not rc.history:
        raise UsageError("reconstruct needs [reconstruct] history = PATH")
    path = Path(rc.history)
    if not path.is_absolute() and cfg.source:
        cand = Path(cfg.source).parent / path
        path = cand if cand.exists() else path
    if not path.is_file():
        raise UsageError(f"history file {path} not found")
    basis_sys = build_system(cfg, t_min=cfg.dynamics.t0)
    try:
        history = TraceHistory.read_csv(path, basis_sys.basis)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    cache = basis_sys.cache
    if history.t_min < cache.t_min:
        cache = DomainFamilyCache(cache.level, basis_sys.basis.params, t_min=history.t_min)
    a = history.t_min if rc.a is None else rc.a
    b = history.t_max if rc.b is None else rc.b
    u = reconstruct_field(history, cache, a, b)
    model = parse_nonlinearity(rc.nonlinearity)
    level = cache.level
    n = level.n
    reach = 1.05 * b * float(np.max(np.linalg.norm(cache.y, axis=-1)))
    axis = np.linspace(-reach, reach, rc.grid)
    grid = np.stack(np.meshgrid(axis, axis, indexing="ij"), -1).reshape(-1, 2)
    if n == 3:
        grid = np.column_stack([grid, np.zeros(len(grid))])
    tt = np.sqrt(level.value(grid))
    grid = grid[(tt >= a) & (tt <= b)]
    vals = u.value(grid) if len(grid) else np.zeros(0)
    header = ["x", "y", "z"][:n] + ["u"]
    write_csv(ctx.out / "field.csv", header, [tuple(p) + (v,) for p, v in zip(grid, vals)])
    report = {}
    if b > a:
        wr = weak_residual(u, model, cache, basis_sys.basis.param_weights, a, b, rc.tests)
        report["weak_residual"] = wr.max_residual
        report["residuals"] = wr.residuals.tolist()
    p = rc.p if rc.p is not None else n / 2 - 0.5
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        sing = removable_singularity_check(history, p, n)
    report["removable"] = {"p": p, "bounded": sing.bounded, "order": sing.order, "sup": sing.sup,
                           "marginal": sing.marginal}
    write_json(ctx.out / "residual.json", report)
    ctx.say(f"weak residual {report.get('weak_residual', float('nan')):.3e}; "
            f"bound order {sing.order:.3f} -> {'bounded' if sing.bounded else 'unbounded'}")


def cmd_harmonic_check(ctx: Context):
    cfg = ctx.cfg
    n, alpha = cfg.domain.n, cfg.alpha
    kmax = min(cfg.basis.N, 5)
    cfg2 = ExperimentConfig(domain=cfg.domain, basis=type(cfg.basis)(kmax, cfg.basis.oversample),
                            dynamics=cfg.dynamics)
    cfg2.domain = type(cfg.domain)(psi="radial", n=n)
    system = build_system(cfg2, t_min=0.5)
    spec = LinearSystemSpec(system, 0.0, 0.0)
    rows, ok = [], True
    for k in range(kmax + 1):
        nu_p, nu_m = rate_pair(k, alpha, n)
        ev = np.sort(np.linalg.eigvals(asymptotic_block(k, alpha, n)).real)[::-1]
        block_err = float(np.max(np.abs(ev - [nu_p, nu_m])))
        terr = []
        for br in "+-":
            mode = HarmonicMode(n, k, 0, br, alpha) if n == 3 else HarmonicMode(n, 0, k, br, alpha)
            y0 = exact_trace_vector(mode, system.basis, 0.5)
            traj = integrate_state(t_rhs(spec, system), y0, (0.5, 1.0), rtol=1e-12, atol=1e-14)
            ex = exact_trace_vector(mode, system.basis, 1.0)
            terr.append(float(np.linalg.norm(traj.states[-1] - ex) / np.linalg.norm(ex)))
        ok &= block_err <= 1e-12 and max(terr) <= 1e-8
        rows.append((n, k, nu_p, nu_m, block_err, terr[0], terr[1]))
        ctx.say(f"degree {k}: nu+={nu_p:+.3f} nu-={nu_m:+.3f} block_err={block_err:.1e} "
                f"trace_err={max(terr):.1e}")
    write_csv(ctx.out / "harmonic_check.csv",
              ["n", "degree", "nu_plus", "nu_minus", "block_err", "trace_err_plus", "trace_err_minus"], rows)
    if not ok:
        raise HypothesisViolation("harmonic-check", "closed-form reproduction failed")


COMMANDS = {"geometry": cmd_geometry, "evolve": cmd_evolve, "eig": cmd_eig, "reconstruct": cmd_reconstruct,
            "harmonic-check": cmd_harmonic_check}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ellipdyn", description="Boundary-data dynamics for semilinear elliptic problems.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="INI configuration file")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--quiet", action="store_true", help="suppress console output")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    start = time.perf_counter()
    try:
        cfg = load_config(args.config)
    except (FileNotFoundError, ConfigError) as exc:
        print(f"ellipdyn: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ctx = Context(cfg, out, args.quiet)
    status, code = "ok", EXIT_OK
    with warnings.catch_warnings():
        if args.quiet:
            warnings.simplefilter("ignore")
        try:
            COMMANDS[args.command](ctx)
        except (HypothesisViolation, UnsupportedGeometry) as exc:
            status, code = f"validation failure: {exc}", EXIT_VALIDATION
        except (OverflowAbort, RankCollapse, FlowIntegrationError) as exc:
            status, code = f"numerical failure: {exc}", EXIT_NUMERICAL
        except (UsageError, ConfigError) as exc:
            status, code = f"usage error: {exc}", EXIT_USAGE
    manifest = {
        "command": args.command,
        "config_hash": cfg.digest(),
        "config": cfg.to_dict(),
        "status": status,
        "exit_code": code,
        "versions": {"ellipdyn": __version__, "python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__},
        "wall_time_s": time.perf_counter() - start,
    }
    write_json(out / "manifest.json", manifest)
    if code:
        print(f"ellipdyn {args.command}: {status}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
