"""Scan the Dirichlet (or Neumann) spectrum of the unit disk and compare with Bessel zeros."""
import argparse

import numpy as np
from scipy.special import jn_zeros, jnp_zeros

from ellipdyn import BoundarySystem, CircleBasis, DomainFamilyCache, LinearSystemSpec, radial_level
from ellipdyn.eigensolver import DIRICHLET, NEUMANN, eigenvalue_sweep


def bessel_reference(lmax, neumann=False, kmax=3):
    zeros = jnp_zeros if neumann else jn_zeros
    out = []
    for m in range(lmax + 1):
        for z in zeros(m, kmax):
            out.append((z * z, 1 if m == 0 else 2))
    return sorted(out)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--N", type=int, default=32)
    ap.add_argument("--lam", type=float, nargs=2, default=(1.0, 20.0))
    ap.add_argument("--grid", type=int, default=80)
    ap.add_argument("--t0", type=float, default=1e-3)
    ap.add_argument("--neumann", action="store_true")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    basis = CircleBasis(args.N)
    system = BoundarySystem(DomainFamilyCache(radial_level(2), basis.params, t_min=args.t0), basis)
    res = eigenvalue_sweep(LinearSystemSpec(system, 0.0, 0.0), tuple(args.lam), args.grid, t0=args.t0,
                           subspace=NEUMANN if args.neumann else DIRICHLET, workers=args.workers)
    ref = [r for r in bessel_reference(8, args.neumann) if args.lam[0] <= r[0] <= args.lam[1]]
    print(f"{'lambda':>14} {'mult':>5} {'s_min':>10} {'reference':>14} {'error':>10}")
    for root in res.roots:
        near = min(ref, key=lambda r: abs(r[0] - root.lam)) if ref else (np.nan, 0)
        print(f"{root.lam:14.8f} {root.multiplicity:5d} {root.s_min:10.2e} {near[0]:14.8f} "
              f"{abs(root.lam - near[0]):10.2e}")


if __name__ == "__main__":
    main()
