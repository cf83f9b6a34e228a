"""Validate a level function and tabulate sigma, H and the t -> 0 profile on a few nodes."""
import argparse

import numpy as np

from ellipdyn import DomainFamilyCache, builtin_level, validate_level_function
from ellipdyn.geometry import asymptotic_profile


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("psi", nargs="?", default="ellipse 2 1", help="builtin descriptor, e.g. 'ellipse 2 1'")
    ap.add_argument("--nodes", type=int, default=8)
    args = ap.parse_args()

    level = builtin_level(args.psi, 2)
    report = validate_level_function(level)
    print("\n".join(report.lines()))
    if not report.ok:
        raise SystemExit(2)
    params = 2 * np.pi * np.arange(args.nodes) / args.nodes
    cache = DomainFamilyCache(level, params)
    print(f"\n{'node':>4} {'t':>8} {'sigma':>12} {'t*H':>12}")
    for t in (1.0, 0.1, 0.01, 0.001):
        snap = cache.snapshot(t)
        for j in range(0, args.nodes, max(1, args.nodes // 4)):
            print(f"{j:4d} {t:8.3g} {snap.sigma[j]:12.8f} {t * snap.H[j]:12.8f}")
    print(f"\n{'node':>4} {'sigma0':>12} {'H0':>12} {'order sigma':>12} {'order tH':>10}")
    for j, y in enumerate(cache.y):
        prof = asymptotic_profile(level, y, levels=8)
        o_s, o_h = prof.orders(level)
        print(f"{j:4d} {prof.sigma0:12.8f} {prof.H0:12.8f} {o_s:12.3f} {o_h:10.3f}")


if __name__ == "__main__":
    main()
