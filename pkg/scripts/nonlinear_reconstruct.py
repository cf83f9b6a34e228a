"""Integrate the boundary system with F(u) = c u^p on the disk, rebuild u and report the weak residual."""
import argparse

import numpy as np

from ellipdyn import (BoundarySystem, CircleBasis, DomainFamilyCache, NonlinearityModel, TraceHistory,
                      radial_level, reconstruct_field, removable_singularity_check, weak_residual)
from ellipdyn.dynamics import integrate_state, t_rhs


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--N", type=int, default=16)
    ap.add_argument("--power", type=int, default=3)
    ap.add_argument("--coef", type=float, default=1.0)
    ap.add_argument("--amplitude", type=float, nargs="+", default=[0.05, 0.2, 0.5])
    ap.add_argument("--tests", type=int, default=20)
    args = ap.parse_args()

    basis = CircleBasis(args.N)
    cache = DomainFamilyCache(radial_level(2), basis.params, t_min=0.4)
    system = BoundarySystem(cache, basis)
    model = NonlinearityModel.power(args.power, args.coef)
    x = cache.y
    print(f"{'amplitude':>10} {'weak residual':>14} {'without F':>12} {'max |u|':>10}")
    for amp in args.amplitude:
        y0 = np.concatenate([basis.analyze(amp * (1 + 0.5 * x[:, 0])), basis.analyze(amp * x[:, 0])])
        traj = integrate_state(t_rhs(model, system), y0, (0.5, 1.0), rtol=1e-12, atol=1e-14,
                               t_eval=np.linspace(0.5, 1.0, 201))
        history = TraceHistory.from_trajectory(basis, traj)
        u = reconstruct_field(history, cache)
        res = weak_residual(u, model, cache, basis.param_weights, 0.5, 1.0, M=args.tests)
        bare = weak_residual(u, NonlinearityModel.zero(), cache, basis.param_weights, 0.5, 1.0, M=args.tests)
        umax = max(np.abs(basis.synthesize(f)).max() for f in history.F)
        print(f"{amp:10.3g} {res.max_residual:14.3e} {bare.max_residual:12.3e} {umax:10.4f}")


if __name__ == "__main__":
    main()
