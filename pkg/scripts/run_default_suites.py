#!/usr/bin/env python3
"""Run every axiom suite at a chosen lattice size and print worst residuals.

Covers the kernel identities, the S-matrix axioms on seeded sample plans,
the renormalization-map axioms for a handcrafted local map, and the
equations-of-motion identity.  Exit status 0 iff every row passes, so the
script doubles as a one-shot health check:

    python3 scripts/run_default_suites.py --nt 12 --nx 16 --mass 0.5
"""

import argparse
import sys
from collections import defaultdict

import numpy as np

from paqft.functionals import free_scalar_lagrangian
from paqft.lattice import Lattice, LatticePoint, kernel_residuals
from paqft.smatrix_renorm import (build_smatrix, check_S_axioms,
                                  check_schwinger_dyson, check_Z_axioms,
                                  default_s_plan, default_z_plan,
                                  make_handcrafted_Z)


def mid_window(lat):
    rows = range(max(2, lat.nt // 3), min(lat.nt - 2, 2 * lat.nt // 3 + 2))
    return [LatticePoint(t, x) for t in rows for x in range(lat.nx)]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nt", type=int, default=12)
    ap.add_argument("--nx", type=int, default=16)
    ap.add_argument("--mass", type=float, default=0.5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--count", type=int, default=6,
                    help="samples per axiom family")
    ap.add_argument("--cap", type=int, default=3, help="lambda-order cap")
    args = ap.parse_args(argv)

    lat = Lattice(args.nt, args.nx, args.mass)
    print(f"lattice {args.nt}x{args.nx}, m={args.mass}, cap={args.cap}, "
          f"count={args.count}, seed={args.seed}")

    print("\nkernel residuals")
    for name, val in sorted(kernel_residuals(lat).items()):
        print(f"  {name:38s} {val: .3e}")

    S = build_smatrix(lat)
    rows = check_S_axioms(S, default_s_plan(
        lat, seed=args.seed, count=args.count, cap=args.cap,
        locality_cap=args.cap + 1))
    Z = make_handcrafted_Z(lat, 0.3, mid_window(lat))
    rows += check_Z_axioms(Z, lat, default_z_plan(
        lat, seed=args.seed + 1, count=args.count, cap=args.cap))

    L = free_scalar_lagrangian(lat)
    rng = np.random.default_rng(args.seed + 2)
    mid = lat.nt // 2
    for i in range(max(2, args.count // 3)):
        from paqft.smatrix_renorm import random_local_functional
        F = random_local_functional(lat, rng, (mid - 1, mid))
        phi0 = np.zeros(lat.n_sites)
        for t in (mid - 1, mid):
            for dx in range(3):
                p = LatticePoint(t, (3 + 4 * i + dx) % lat.nx)
                phi0[lat.site_index(p)] = rng.normal() * 0.3
        rows += check_schwinger_dyson(S, L, F, phi0, cap=2)

    worst = defaultdict(float)
    fails = defaultdict(int)
    for r in rows:
        key = (r["suite"], r["axiom"])
        worst[key] = max(worst[key], r["residual"])
        fails[key] += 0 if r["pass"] else 1

    print(f"\naxiom suites ({len(rows)} rows)")
    print(f"  {'suite':6s} {'axiom':12s} {'worst residual':>15s}  fails")
    bad = 0
    for key in sorted(worst):
        flag = "" if fails[key] == 0 else "  <-- FAIL"
        print(f"  {key[0]:6s} {key[1]:12s} {worst[key]:15.3e}  "
              f"{fails[key]:5d}{flag}")
        bad += fails[key]
    print(f"\n{'PASS' if bad == 0 else 'FAIL'}: "
          f"{len(rows) - bad}/{len(rows)} rows within tolerance")
    return 0 if bad == 0 else 1


if __name__ == "__main__":
    sys.exit(main())
