"""Batch verification driver.

    paqft propagators|axioms|extract-z|correlate --config <path> [--set k=v]...

Single JSON config with dotted-key overrides; reports are written as JSON
with sorted keys (byte-identical for identical configs), a one-line
summary per block goes to standard output.  PAQFT_THREADS caps the worker
pool used to spread suite samples; report assembly stays ordered.

Exit status: 0 iff every checked residual is within tolerance, 2 for
usage and config errors.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .functionals import (HBAR_WINDOW, MAX_DEGREE, PolyFunctional,
                          free_scalar_lagrangian, is_local_at_scale,
                          poly_from_json_dict)
from .lattice import Lattice, LatticePoint, kernel_residuals
from .relations import BinaryRelation, CausalityStructure, check_hammerstein
from .smatrix_renorm import (build_smatrix, check_S_axioms, check_Z_axioms,
                             check_schwinger_dyson, compose, default_s_plan,
                             default_z_plan, extract_Z, make_handcrafted_Z,
                             random_local_functional, correlation,
                             verify_extracted_locality)


class UsageError(Exception):
    pass


DEFAULT_CONFIG = {
    "lattice": {"nt": 12, "nx": 16, "mass": 0.5},
    "caps": {"lambda_order": 3, "locality_order": 4, "sd_order": 2,
             "degree": 2, "hbar_window": 8},
    "hadamard": {"mode": "exact-bisolution", "perturbation-seed": 5,
                 "perturbation-scale": 0.05},
    "samples": {"count": 10, "seed": 0},
    "tolerances": {"kernel": 1e-10, "series": 1e-9, "extraction": 1e-8},
    "suites": ["S", "Z", "SD", "hammerstein"],
    "extract": {"mode": "roundtrip", "kappa": 0.3, "functionals": 3},
    "correlate": {
        "interaction": {"3": [{"points": [[5, 8], [5, 8], [5, 8]],
                               "coeff": [[0, 0.1, 0.0]]}]},
        "observables": [{"1": [{"points": [[5, 3]],
                                "coeff": [[0, 1.0, 0.0]]}]},
                        {"1": [{"points": [[6, 9]],
                                "coeff": [[0, 1.0, 0.0]]}]}],
        "lambda_cap": 2,
        "locality_radius": 2,
    },
    "output": "reports",
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _parse_set(items) -> dict:
    tree: dict = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, _, raw = item.partition("=")
        try:
            val = json.loads(raw)
        except json.JSONDecodeError:
            val = raw
        node = tree
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = val
    return tree


def load_config(path: str | None, sets) -> dict:
    cfg = DEFAULT_CONFIG
    if path is not None:
        try:
            with open(path) as fh:
                cfg = _merge(cfg, json.load(fh))
        except FileNotFoundError:
            raise UsageError(f"config file not found: {path}")
        except json.JSONDecodeError as e:
            raise UsageError(f"config is not valid JSON: {e}")
    cfg = _merge(cfg, _parse_set(sets))
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    lat = cfg["lattice"]
    if not isinstance(lat.get("nt"), int) or lat["nt"] < 4:
        raise UsageError(f"lattice.nt must be an integer >= 4, got {lat.get('nt')!r}")
    if not isinstance(lat.get("nx"), int) or lat["nx"] < 4:
        raise UsageError(f"lattice.nx must be an integer >= 4, got {lat.get('nx')!r}")
    m = lat.get("mass")
    if not isinstance(m, (int, float)) or m < 0:
        raise UsageError(f"lattice.mass must be a number >= 0, got {m!r}")
    for key in ("lambda_order", "locality_order", "sd_order", "degree"):
        v = cfg["caps"].get(key)
        if not isinstance(v, int) or v < 0:
            raise UsageError(f"caps.{key} must be a nonnegative integer, got {v!r}")
    deg = cfg["caps"]["degree"]
    if deg > MAX_DEGREE // 2:
        raise UsageError(
            f"caps.degree must be <= {MAX_DEGREE // 2} so products of "
            f"sampled functionals stay within the module degree cap, got {deg}")
    hw = cfg["caps"].get("hbar_window")
    if not isinstance(hw, int) or not (1 <= hw <= HBAR_WINDOW[1]):
        raise UsageError(
            f"caps.hbar_window must be an integer in [1, {HBAR_WINDOW[1]}] "
            f"(module limit), got {hw!r}")
    if cfg["hadamard"].get("mode") not in ("exact-bisolution", "perturbed"):
        raise UsageError(
            "hadamard.mode must be 'exact-bisolution' or 'perturbed', "
            f"got {cfg['hadamard'].get('mode')!r}")
    if cfg["extract"].get("mode") not in ("roundtrip", "two-hadamard"):
        raise UsageError(
            "extract.mode must be 'roundtrip' or 'two-hadamard', "
            f"got {cfg['extract'].get('mode')!r}")
    n = cfg["samples"].get("count")
    if not isinstance(n, int) or n < 1:
        raise UsageError(f"samples.count must be a positive integer, got {n!r}")
    for key in ("kernel", "series", "extraction"):
        v = cfg["tolerances"].get(key)
        if not isinstance(v, (int, float)) or v <= 0:
            raise UsageError(f"tolerances.{key} must be positive, got {v!r}")
    if not isinstance(cfg.get("suites"), list):
        raise UsageError("suites must be a list of suite names")


def _threads() -> int:
    raw = os.environ.get("PAQFT_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise UsageError(f"PAQFT_THREADS must be an integer, got {raw!r}")


def _map_ordered(fn, items):
    """Apply fn across items on the worker pool, preserving order."""
    n = _threads()
    if n == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _build(cfg: dict):
    lat = Lattice(cfg["lattice"]["nt"], cfg["lattice"]["nx"],
                  float(cfg["lattice"]["mass"]))
    had = cfg["hadamard"]
    if had["mode"] == "perturbed":
        H = _perturbed_hadamard(lat, int(had["perturbation-seed"]),
                                float(had["perturbation-scale"]))
        return lat, build_smatrix(lat, hadamard=H)
    return lat, build_smatrix(lat)


def _perturbed_hadamard(lat: Lattice, seed: int, scale: float) -> np.ndarray:
    """Site-diagonal symmetric perturbation: keeps the extracted
    renormalization map local so the Z suite can pass on the result."""
    rng = np.random.default_rng(seed)
    H = lat.hadamard_kernel().entries.real.copy()
    H[np.diag_indices_from(H)] += scale * rng.standard_normal(lat.n_sites)
    return H


def _mid_window(lat: Lattice):
    rows = range(max(2, lat.nt // 3), min(lat.nt - 2, 2 * lat.nt // 3 + 2))
    return [LatticePoint(t, x) for t in rows for x in range(lat.nx)]


def _write_report(cfg: dict, name: str, report: dict) -> Path:
    out = Path(cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{name}.json"
    path.write_text(json.dumps(report, sort_keys=True, indent=2,
                               default=_json_default) + "\n")
    return path


def _json_default(obj):
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _summary_line(tag: str, rows) -> str:
    fails = sum(1 for r in rows if not r["pass"])
    worst = max((float(r["residual"]) for r in rows
                 if r.get("residual") is not None), default=0.0)
    status = "PASS" if fails == 0 else "FAIL"
    return (f"{tag}: {len(rows)} rows, {fails} failures, "
            f"worst residual {worst:.3e} -> {status}")


# -- commands ------------------------------------------------------------


def cmd_propagators(cfg: dict) -> int:
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        lat = Lattice(cfg["lattice"]["nt"], cfg["lattice"]["nx"],
                      float(cfg["lattice"]["mass"]))
        residuals = kernel_residuals(lat)
        kernels = {name: getattr(lat, name)().to_json_dict()
                   for name in ("green_retarded", "green_advanced",
                                "pauli_jordan", "hadamard_kernel",
                                "wightman", "feynman")}
    tol = float(cfg["tolerances"]["kernel"])
    checks = {
        "green_retarded_identity": residuals["green_retarded_identity"] <= tol,
        "green_advanced_identity": residuals["green_advanced_identity"] <= tol,
        "reciprocity": residuals["reciprocity"] <= tol,
        "cone_support_violations": residuals["cone_support_violations"] == 0,
        "pauli_jordan_antisymmetry":
            residuals["pauli_jordan_antisymmetry"] <= tol,
        "H1_imaginary_part": residuals["H1_imaginary_part"] <= tol,
        "H2_interior_H": residuals["H2_interior_H"] <= tol,
        "H2_interior_W": residuals["H2_interior_W"] <= tol,
        "H3_gram_min_eigenvalue":
            residuals["H3_gram_min_eigenvalue"] >= -tol,
        "feynman_symmetry": residuals["feynman_symmetry"] <= tol,
        "feynman_equals_wightman_off_future":
            residuals["feynman_equals_wightman_off_future"] <= tol,
    }
    ok = all(checks.values())
    report = {"config": cfg, "kernels": kernels, "residuals": residuals,
              "checks": checks, "warnings": sorted(str(w.message)
                                                   for w in caught),
              "pass": ok}
    path = _write_report(cfg, "propagators", report)
    for key in sorted(residuals):
        print(f"propagators {key}: {residuals[key]:.3e} -> "
              f"{'PASS' if checks[key] else 'FAIL'}")
    for w in report["warnings"]:
        print(f"propagators warning: {w}")
    print(f"report written to {path}")
    return 0 if ok else 1


def _suite_S(cfg, lat, S):
    plan = default_s_plan(
        lat, seed=int(cfg["samples"]["seed"]),
        count=int(cfg["samples"]["count"]),
        cap=int(cfg["caps"]["lambda_order"]),
        locality_cap=int(cfg["caps"]["locality_order"]),
        degree=int(cfg["caps"]["degree"]),
        series_tol=float(cfg["tolerances"]["series"]),
        kernel_tol=float(cfg["tolerances"]["kernel"]))
    shared = {k: plan[k] for k in ("cap", "locality_cap", "series_tol",
                                   "kernel_tol")}
    units = []
    units.append(dict(shared, singles=plan["singles"]))
    for t in plan["causal_triples"]:
        units.append(dict(shared, causal_triples=[t]))
    for p in plan["spacelike_pairs"]:
        units.append(dict(shared, spacelike_pairs=[p]))
    for c in plan["t1_chains"]:
        units.append(dict(shared, t1_chains=[c]))
    chunks = _map_ordered(lambda u: check_S_axioms(S, u), units)
    return [row for chunk in chunks for row in chunk]


def _suite_Z(cfg, lat, S):
    Z = make_handcrafted_Z(lat, float(cfg["extract"]["kappa"]),
                           _mid_window(lat))
    plan = default_z_plan(
        lat, seed=int(cfg["samples"]["seed"]) + 1,
        count=int(cfg["samples"]["count"]),
        cap=int(cfg["caps"]["lambda_order"]),
        degree=int(cfg["caps"]["degree"]),
        tol=float(cfg["tolerances"]["series"]))
    shared = {k: plan[k] for k in ("cap", "tol", "locality_radius")}
    units = [dict(shared, singles=plan["singles"])]
    for t in plan["causal_triples"]:
        units.append(dict(shared, causal_triples=[t]))
    chunks = _map_ordered(lambda u: check_Z_axioms(Z, lat, u), units)
    return [row for chunk in chunks for row in chunk]


def _suite_SD(cfg, lat, S):
    rng = np.random.default_rng(int(cfg["samples"]["seed"]) + 2)
    L = free_scalar_lagrangian(lat)
    cap = int(cfg["caps"]["sd_order"])
    tol = float(cfg["tolerances"]["extraction"])
    mid = lat.nt // 2
    rows = []
    count = max(2, int(cfg["samples"]["count"]) // 3)

    def one(i):
        F = random_local_functional(lat, rng, (mid - 1, mid))
        phi0 = np.zeros(lat.n_sites)
        for t in (mid - 1, mid):
            for dx in range(3):
                x = (3 + 4 * i + dx) % lat.nx
                phi0[lat.site_index(LatticePoint(t, x))] = rng.normal() * 0.3
        out = check_schwinger_dyson(S, L, F, phi0, cap=cap, tol=tol)
        for r in out:
            r["sample-id"] = f"{i:02d}-{r['sample-id']}"
            r["flagged"] = bool(r["bound"] > tol)
        return out

    # sampling stays sequential for determinism; the checks parallelize
    samples = [one(i) for i in range(count)]
    return [row for chunk in samples for row in chunk]


def _suite_hammerstein(cfg, lat, S):
    cap = int(cfg["caps"]["lambda_order"])
    plan = default_z_plan(lat, seed=int(cfg["samples"]["seed"]) + 3,
                          count=int(cfg["samples"]["count"]), cap=cap)
    triples = plan["causal_triples"]
    universe = [PolyFunctional.zero(lat)]
    for t in triples:
        universe.extend(t)
    rel = BinaryRelation(universe, holds=lambda a, b: lat.not_later_than(
        a.support(), b.support()))
    structure = CausalityStructure(rel)
    tol = float(cfg["tolerances"]["series"])

    def dist(A, B):
        return max((A.coeff(n) - B.coeff(n)).max_norm()
                   for n in range(cap + 1))

    rows = check_hammerstein(
        phi=lambda f: S.series(f, cap),
        add=lambda a, b: a + b,
        zero=PolyFunctional.zero(lat),
        mult=S.multiply,
        unit=S.unit_series(cap),
        inverse=S.invert,
        structure=structure,
        samples=triples,
        distance=dist,
        tol=tol)
    out = []
    for r in rows:
        out.append({"suite": "hammerstein", "axiom": "S2",
                    "order": cap, "sample-id": f"{r['sample-id']:02d}",
                    "residual": r["hammerstein"], "pass": bool(r["pass"]),
                    "padd": r["padd"], "rejected": r["rejected"]})
    return out


SUITES = {"S": _suite_S, "Z": _suite_Z, "SD": _suite_SD,
          "hammerstein": _suite_hammerstein}


def cmd_axioms(cfg: dict) -> int:
    suites = cfg["suites"]
    if not suites:
        raise UsageError("suites: empty suite list (nothing to check)")
    unknown = [s for s in suites if s not in SUITES]
    if unknown:
        raise UsageError(
            f"unknown suite name(s) {unknown}; known: {sorted(SUITES)}")
    nt = cfg["lattice"]["nt"]
    needy = {"S", "Z", "hammerstein"} & set(suites)
    if nt < 11 and needy:
        raise UsageError(
            f"suite(s) {sorted(needy)} sample causal triples and need "
            f"lattice.nt >= 11, got {nt}")
    lat, S = _build(cfg)
    report = {"config": cfg, "rows": []}
    for name in suites:
        rows = SUITES[name](cfg, lat, S)
        report["rows"].extend(rows)
        print(_summary_line(f"axioms[{name}]", rows))
    ok = all(r["pass"] for r in report["rows"])
    report["pass"] = ok
    path = _write_report(cfg, "axioms", report)
    print(f"report written to {path}")
    return 0 if ok else 1


def cmd_extract_z(cfg: dict) -> int:
    nt = cfg["lattice"]["nt"]
    if nt < 11:
        raise UsageError(
            f"the extracted-locality suite samples causal triples and "
            f"needs lattice.nt >= 11, got {nt}")
    lat, S = _build(cfg)
    mode = cfg["extract"]["mode"]
    cap = int(cfg["caps"]["lambda_order"])
    tol = float(cfg["tolerances"]["extraction"])
    rng = np.random.default_rng(int(cfg["samples"]["seed"]) + 4)
    mid = lat.nt // 2
    n_f = max(int(cfg["extract"].get("functionals", 3)), cap)
    fs = [random_local_functional(lat, rng, (mid - 1, mid))
          for _ in range(n_f)]
    if mode == "roundtrip":
        Z = make_handcrafted_Z(lat, float(cfg["extract"]["kappa"]),
                               _mid_window(lat))
        St = compose(S, Z)
    else:
        H = _perturbed_hadamard(lat, int(cfg["hadamard"]["perturbation-seed"]),
                                float(cfg["hadamard"]["perturbation-scale"]))
        St = build_smatrix(lat, hadamard=H, label="S-tilde")
        Z = None
    rows = []
    z_values = {}

    def one(item):
        i, f = item
        vals = extract_Z(S, St, f, cap)
        out = []
        back = compose(S, _map_from_values(lat, vals)).series(f, cap)
        target = St.series(f, cap)
        for n in range(1, cap + 1):
            out.append({"suite": "extract", "axiom": "roundtrip", "order": n,
                        "sample-id": f"f-{i:02d}",
                        "residual": (back.coeff(n) - target.coeff(n)).max_norm(),
                        "pass": None})
        if Z is not None:
            for n in range(2, cap + 1):
                res = (vals[n] - Z.family.diagonal(n, f)).max_norm()
                out.append({"suite": "extract", "axiom": "planted-match",
                            "order": n, "sample-id": f"f-{i:02d}",
                            "residual": res, "pass": None})
        for n in range(2, cap + 1):
            ok, rep = is_local_at_scale(vals[n], radius=2)
            out.append({"suite": "extract", "axiom": "additivity", "order": n,
                        "sample-id": f"f-{i:02d}",
                        "residual": float(rep["worst_eq11"]),
                        "pass": bool(ok)})
        return vals, out

    results = _map_ordered(one, list(enumerate(fs)))
    grading = {}
    for i, (vals, out) in enumerate(results):
        for r in out:
            if r["pass"] is None:
                r["pass"] = bool(r["residual"] <= tol)
        rows.extend(out)
        z_values[f"f-{i:02d}"] = {str(n): vals[n].to_json_dict()
                                  for n in range(2, cap + 1)}
        grading[f"f-{i:02d}"] = {
            str(n): list(vals[n].hbar_exponent_range() or ())
            for n in range(2, cap + 1)}
    vrows = verify_extracted_locality(
        S, St, fs, cap,
        plan=default_z_plan(lat, seed=int(cfg["samples"]["seed"]) + 5,
                            count=4, cap=cap,
                            tol=float(cfg["tolerances"]["series"])))
    rows.extend(vrows)
    ok = all(r["pass"] for r in rows)
    report = {"config": cfg, "mode": mode, "z_values": z_values,
              "hbar_grading": grading, "rows": rows, "pass": ok}
    path = _write_report(cfg, "extract_z", report)
    print(_summary_line(f"extract-z[{mode}]", rows))
    print(f"report written to {path}")
    return 0 if ok else 1


def _map_from_values(lat, vals):
    from .formal_series import MultilinearFamily
    from .smatrix_renorm import RenormalizationMap

    def diag(n, g):
        if n == 1:
            return g
        return vals.get(n, PolyFunctional.zero(lat))

    return RenormalizationMap(MultilinearFamily(evaluate_diagonal=diag),
                              label="extracted")


def cmd_correlate(cfg: dict) -> int:
    lat, S = _build(cfg)
    cc = cfg["correlate"]
    try:
        V = poly_from_json_dict(lat, cc["interaction"])
        obs = [poly_from_json_dict(lat, o) for o in cc["observables"]]
    except (KeyError, ValueError, TypeError) as e:
        raise UsageError(f"correlate: bad functional spec: {e}")
    if not obs:
        raise UsageError("correlate.observables: need at least one observable")
    radius = int(cc.get("locality_radius", 2))
    ok_local, rep = is_local_at_scale(V, radius=radius)
    if not V.is_zero() and not ok_local:
        raise UsageError(
            "correlate.interaction rejected by the additivity pre-check: "
            f"not local at radius {radius} "
            f"(monomial extent {rep['monomial_extent']})")
    cap = int(cc.get("lambda_cap", 2))
    series = correlation(S, V, obs, cap=cap)
    orders = {str(n): series.coeff(n).to_json()
              for n in range(cap + 1)}
    report = {"config": cfg, "orders": orders, "pass": True}
    path = _write_report(cfg, "correlate", report)
    for n in range(cap + 1):
        print(f"correlate order {n}: {orders[str(n)]}")
    print(f"report written to {path}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="paqft",
        description="verification driver for the lattice QFT axioms")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("propagators", "axioms", "extract-z", "correlate"):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None,
                       help="JSON config path (defaults built in)")
        p.add_argument("--set", action="append", default=[],
                       metavar="KEY=VALUE", dest="sets",
                       help="dotted-key config override, value parsed as JSON")
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    dispatch = {"propagators": cmd_propagators, "axioms": cmd_axioms,
                "extract-z": cmd_extract_z, "correlate": cmd_correlate}
    try:
        cfg = load_config(args.config, args.sets)
        _threads()
        return dispatch[args.command](cfg)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
