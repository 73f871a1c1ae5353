"""Polynomial functionals of lattice fields.

Supports, Bastiani-style derivatives (exact for polynomials), additivity and
locality checks, generalized Lagrangians with cutoffs, the variation delta_L,
the Euler-Lagrange gradient, and the causal band decomposition (property L1).

Representation: a functional is a finite sum of monomials
``coeff * prod phi(p_i)`` stored as ``{degree: {sorted site-index tuple:
HbarScalar}}``.  Multiset keys encode symmetric tensors: the stored value is
the common value of the symmetric tensor at every permutation of the key.

Degree is capped (default 8) at ingestion boundaries only (from_monomials,
densities, JSON); internal arithmetic may exceed it transiently.
"""

from __future__ import annotations

import itertools
import math
from bisect import bisect_right
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .lattice import (FieldConfiguration, Lattice, LatticePoint, Region,
                      field_values)

MAX_DEGREE = 8
HBAR_WINDOW = (-8, 8)


class HbarScalar:
    """Finite Laurent polynomial in hbar with complex coefficients.

    The exponent window (default [-8, 8]) is a guard rail: breaching it
    signals runaway prefactor accounting, so construction raises.

    >>> (HbarScalar.monomial(1) * HbarScalar.monomial(-1)).coeffs
    {0: (1+0j)}
    """

    __slots__ = ("coeffs",)

    def __init__(self, coeffs: Mapping[int, complex] | None = None):
        c = {}
        for k, v in (coeffs or {}).items():
            v = complex(v)
            if v != 0:
                c[int(k)] = v
        for k in c:
            if not (HBAR_WINDOW[0] <= k <= HBAR_WINDOW[1]):
                raise ValueError(
                    f"hbar exponent {k} outside window {list(HBAR_WINDOW)}")
        self.coeffs = c

    @staticmethod
    def zero() -> "HbarScalar":
        return HbarScalar()

    @staticmethod
    def one() -> "HbarScalar":
        return HbarScalar({0: 1.0})

    @staticmethod
    def from_complex(z) -> "HbarScalar":
        return HbarScalar({0: complex(z)})

    @staticmethod
    def monomial(exponent: int, coeff=1.0) -> "HbarScalar":
        return HbarScalar({exponent: coeff})

    @staticmethod
    def coerce(z) -> "HbarScalar":
        if isinstance(z, HbarScalar):
            return z
        return HbarScalar({0: complex(z)})

    def at(self, exponent: int) -> complex:
        return self.coeffs.get(exponent, 0j)

    def shifted(self, k: int) -> "HbarScalar":
        return HbarScalar({e + k: v for e, v in self.coeffs.items()})

    def norm(self) -> float:
        return max((abs(v) for v in self.coeffs.values()), default=0.0)

    def is_zero(self, tol: float = 0.0) -> bool:
        return self.norm() <= tol

    def exponent_range(self) -> tuple[int, int] | None:
        if not self.coeffs:
            return None
        return min(self.coeffs), max(self.coeffs)

    def __add__(self, other):
        try:
            o = HbarScalar.coerce(other)
        except TypeError:
            return NotImplemented
        out = dict(self.coeffs)
        for k, v in o.coeffs.items():
            out[k] = out.get(k, 0j) + v
        return HbarScalar(out)

    __radd__ = __add__

    def __neg__(self):
        return HbarScalar({k: -v for k, v in self.coeffs.items()})

    def __sub__(self, other):
        try:
            return self + (-HbarScalar.coerce(other))
        except TypeError:
            return NotImplemented

    def __rsub__(self, other):
        return HbarScalar.coerce(other) - self

    def __mul__(self, other):
        try:
            o = HbarScalar.coerce(other)
        except TypeError:
            return NotImplemented
        out: dict[int, complex] = {}
        for k1, v1 in self.coeffs.items():
            for k2, v2 in o.coeffs.items():
                k = k1 + k2
                out[k] = out.get(k, 0j) + v1 * v2
        return HbarScalar(out)

    __rmul__ = __mul__

    def __eq__(self, other):
        if not isinstance(other, (HbarScalar, int, float, complex)):
            return NotImplemented
        return (self - other).norm() == 0.0

    __hash__ = None

    def __repr__(self):
        if not self.coeffs:
            return "HbarScalar(0)"
        inner = ", ".join(f"{k}: {v}" for k, v in sorted(self.coeffs.items()))
        return f"HbarScalar({{{inner}}})"

    def to_json(self) -> list:
        return [[k, v.real, v.imag] for k, v in sorted(self.coeffs.items())]

    @staticmethod
    def from_json(data) -> "HbarScalar":
        return HbarScalar({int(k): complex(re, im) for k, re, im in data})


def _bounded_compositions(total: int, bounds: Sequence[int]):
    """All (m_1..m_k) with 0 <= m_i <= bounds_i and sum = total."""
    if not bounds:
        if total == 0:
            yield ()
        return
    first = bounds[0]
    for m in range(min(first, total), -1, -1):
        for tail in _bounded_compositions(total - m, bounds[1:]):
            yield (m,) + tail


class PolyFunctional:
    """Polynomial functional F(phi) with HbarScalar coefficients.

    >>> lat = Lattice(4, 4, 0.5)
    >>> F = PolyFunctional.from_monomials(lat, [(2.0, [LatticePoint(1, 1)])])
    >>> phi = np.zeros(lat.n_sites); phi[lat.site_index(LatticePoint(1, 1))] = 3.0
    >>> F.evaluate(phi).at(0)
    (6+0j)
    """

    __slots__ = ("lattice", "terms")

    def __init__(self, lattice: Lattice,
                 terms: Mapping[int, Mapping[tuple, HbarScalar]] | None = None):
        self.lattice = lattice
        clean: dict[int, dict[tuple, HbarScalar]] = {}
        for deg, tensor in (terms or {}).items():
            for key, coeff in tensor.items():
                key = tuple(sorted(int(i) for i in key))
                if len(key) != deg:
                    raise ValueError(f"key {key} has length != degree {deg}")
                for i in key:
                    if not (0 <= i < lattice.n_sites):
                        raise ValueError(f"site index {i} out of range")
                coeff = HbarScalar.coerce(coeff)
                if coeff.is_zero():
                    continue
                bucket = clean.setdefault(deg, {})
                if key in bucket:
                    merged = bucket[key] + coeff
                    if merged.is_zero():
                        del bucket[key]
                    else:
                        bucket[key] = merged
                else:
                    bucket[key] = coeff
        self.terms = {d: t for d, t in clean.items() if t}

    # -- constructors --------------------------------------------------------

    @staticmethod
    def zero(lattice: Lattice) -> "PolyFunctional":
        return PolyFunctional(lattice)

    @staticmethod
    def constant(lattice: Lattice, c) -> "PolyFunctional":
        return PolyFunctional(lattice, {0: {(): HbarScalar.coerce(c)}})

    @staticmethod
    def unit(lattice: Lattice) -> "PolyFunctional":
        return PolyFunctional.constant(lattice, 1.0)

    @staticmethod
    def field_at(lattice: Lattice, p: LatticePoint) -> "PolyFunctional":
        return PolyFunctional(lattice, {1: {(lattice.site_index(p),): HbarScalar.one()}})

    @staticmethod
    def from_monomials(lattice: Lattice,
                       monomials: Iterable[tuple]) -> "PolyFunctional":
        """Ingestion constructor: [(coeff, [LatticePoint...]), ...].

        Enforces the configured degree cap.
        """
        terms: dict[int, dict[tuple, HbarScalar]] = {}
        for coeff, points in monomials:
            deg = len(points)
            if deg > MAX_DEGREE:
                raise ValueError(f"monomial degree {deg} exceeds cap {MAX_DEGREE}")
            key = tuple(sorted(lattice.site_index(p) for p in points))
            bucket = terms.setdefault(deg, {})
            bucket[key] = bucket.get(key, HbarScalar.zero()) + HbarScalar.coerce(coeff)
        return PolyFunctional(lattice, terms)

    # -- structure -----------------------------------------------------------

    def degree(self) -> int:
        return max(self.terms, default=0)

    def is_zero(self, tol: float = 0.0) -> bool:
        return self.max_norm() <= tol

    def max_norm(self) -> float:
        return max((c.norm() for t in self.terms.values() for c in t.values()),
                   default=0.0)

    def distance(self, other: "PolyFunctional") -> float:
        return (self - other).max_norm()

    def is_unit_preserving(self) -> bool:
        return 0 not in self.terms

    def support(self) -> Region:
        lat = self.lattice
        sites = {i for deg, t in self.terms.items() if deg >= 1
                 for key in t for i in key}
        return frozenset(lat.point(i) for i in sites)

    def hbar_exponent_range(self) -> tuple[int, int] | None:
        lo, hi = None, None
        for t in self.terms.values():
            for c in t.values():
                r = c.exponent_range()
                if r is None:
                    continue
                lo = r[0] if lo is None else min(lo, r[0])
                hi = r[1] if hi is None else max(hi, r[1])
        return None if lo is None else (lo, hi)

    def monomials(self):
        for deg in sorted(self.terms):
            for key, coeff in self.terms[deg].items():
                yield deg, key, coeff

    # -- evaluation and calculus ----------------------------------------------

    def evaluate(self, phi) -> HbarScalar:
        vals = field_values(self.lattice, phi)
        out = HbarScalar.zero()
        for _deg, key, coeff in self.monomials():
            prod = 1.0 + 0j
            for i in key:
                prod *= complex(vals[i])
            out = out + coeff * prod
        return out

    def derivative(self, n: int, phi) -> dict[tuple, HbarScalar]:
        """Sparse symmetric n-th derivative tensor at phi.

        Keys are sorted site-index n-tuples (multisets); the value at a key
        is the tensor value at every permutation of that key.
        """
        if n < 1:
            raise ValueError("derivative order must be >= 1")
        vals = field_values(self.lattice, phi)
        out: dict[tuple, HbarScalar] = {}
        for deg, key, coeff in self.monomials():
            if deg < n:
                continue
            counts = Counter(key)
            pts = sorted(counts)
            bounds = [counts[p] for p in pts]
            for m in _bounded_compositions(n, bounds):
                factor = 1.0 + 0j
                dkey = []
                for p, n_p, m_p in zip(pts, bounds, m):
                    factor *= math.perm(n_p, m_p)
                    if n_p - m_p:
                        factor *= complex(vals[p]) ** (n_p - m_p)
                    dkey.extend([p] * m_p)
                dkey = tuple(dkey)
                cur = out.get(dkey, HbarScalar.zero()) + coeff * factor
                if cur.is_zero():
                    out.pop(dkey, None)
                else:
                    out[dkey] = cur
        return out

    def shift_field(self, psi) -> "PolyFunctional":
        """F(. + psi) expanded exactly."""
        rows = self.shift_field_series(psi)
        acc = PolyFunctional.zero(self.lattice)
        for row in rows:
            acc = acc + row
        return acc

    def shift_field_series(self, psi) -> list["PolyFunctional"]:
        """Rows of F(. + s*psi) by power of s: row k collects the s^k part.

        shift_field is the row sum (s = 1); the split form feeds series
        arguments whose shift carries the expansion parameter.
        """
        vals = field_values(self.lattice, psi)
        rows: list[dict[int, dict[tuple, HbarScalar]]] = [
            {} for _ in range(self.degree() + 1)]
        for deg, key, coeff in self.monomials():
            counts = Counter(key)
            pts = sorted(counts)
            bounds = [counts[p] for p in pts]
            for m in itertools.product(*(range(b + 1) for b in bounds)):
                k = sum(m)
                factor = 1.0 + 0j
                newkey = []
                for p, n_p, m_p in zip(pts, bounds, m):
                    factor *= math.comb(n_p, m_p)
                    if m_p:
                        factor *= complex(vals[p]) ** m_p
                    newkey.extend([p] * (n_p - m_p))
                if factor == 0:
                    continue
                newkey = tuple(newkey)
                bucket = rows[k].setdefault(len(newkey), {})
                bucket[newkey] = bucket.get(newkey, HbarScalar.zero()) + coeff * factor
        return [PolyFunctional(self.lattice, r) for r in rows]

    # -- arithmetic ------------------------------------------------------------

    def _binop(self, other: "PolyFunctional", sign: int) -> "PolyFunctional":
        if self.lattice != other.lattice:
            raise ValueError("lattice mismatch")
        out = {d: dict(t) for d, t in self.terms.items()}
        for deg, key, coeff in other.monomials():
            bucket = out.setdefault(deg, {})
            bucket[key] = bucket.get(key, HbarScalar.zero()) + sign * coeff
        return PolyFunctional(self.lattice, out)

    def __add__(self, other):
        if not isinstance(other, PolyFunctional):
            return NotImplemented
        return self._binop(other, 1)

    def __sub__(self, other):
        if not isinstance(other, PolyFunctional):
            return NotImplemented
        return self._binop(other, -1)

    def __neg__(self):
        return self.scaled(-1.0)

    def scaled(self, c) -> "PolyFunctional":
        c = HbarScalar.coerce(c)
        return PolyFunctional(self.lattice, {
            d: {k: v * c for k, v in t.items()} for d, t in self.terms.items()})

    def __mul__(self, other):
        if isinstance(other, PolyFunctional):
            if self.lattice != other.lattice:
                raise ValueError("lattice mismatch")
            out: dict[int, dict[tuple, HbarScalar]] = {}
            for da, ka, ca in self.monomials():
                for db, kb, cb in other.monomials():
                    key = tuple(sorted(ka + kb))
                    bucket = out.setdefault(da + db, {})
                    bucket[key] = bucket.get(key, HbarScalar.zero()) + ca * cb
            return PolyFunctional(self.lattice, out)
        return self.scaled(other)

    __rmul__ = __mul__

    def __eq__(self, other):
        if not isinstance(other, PolyFunctional):
            return NotImplemented
        return self.lattice == other.lattice and self.distance(other) == 0.0

    __hash__ = None

    def __repr__(self):
        n_mono = sum(len(t) for t in self.terms.values())
        return (f"PolyFunctional(degree={self.degree()}, monomials={n_mono}, "
                f"lattice={self.lattice.nt}x{self.lattice.nx})")

    # -- serialization ---------------------------------------------------------

    def to_json_dict(self) -> dict:
        lat = self.lattice
        out: dict[str, list] = {}
        for deg in sorted(self.terms):
            rows = []
            for key in sorted(self.terms[deg]):
                coeff = self.terms[deg][key]
                rows.append({
                    "points": [[lat.point(i).t, lat.point(i).x] for i in key],
                    "coeff": coeff.to_json(),
                })
            out[str(deg)] = rows
        return out


def poly_from_json_dict(lattice: Lattice, data: Mapping) -> PolyFunctional:
    terms: dict[int, dict[tuple, HbarScalar]] = {}
    for deg_s, rows in data.items():
        deg = int(deg_s)
        if deg > MAX_DEGREE:
            raise ValueError(f"degree {deg} exceeds cap {MAX_DEGREE}")
        bucket = terms.setdefault(deg, {})
        for row in rows:
            key = tuple(sorted(
                lattice.site_index(LatticePoint(int(t), int(x)))
                for t, x in row["points"]))
            coeff = HbarScalar.from_json(row["coeff"])
            bucket[key] = bucket.get(key, HbarScalar.zero()) + coeff
    return PolyFunctional(lattice, terms)


# -- locality -------------------------------------------------------------------


def chebyshev_extent(lattice: Lattice, points: Iterable[LatticePoint]) -> int:
    """Max pairwise Chebyshev distance (torus in x) among the points."""
    pts = list(points)
    ext = 0
    for p, q in itertools.combinations(pts, 2):
        ext = max(ext, abs(p.t - q.t), lattice.torus_dist(p.x, q.x))
    return ext


def monomial_extent(F: PolyFunctional) -> int:
    """Largest Chebyshev extent of any monomial of F (0 if none)."""
    lat = F.lattice
    ext = 0
    for deg, key, _coeff in F.monomials():
        if deg >= 2:
            ext = max(ext, chebyshev_extent(lat, [lat.point(i) for i in set(key)]))
    return ext


def check_additivity(F: PolyFunctional, samples, tol: float = 1e-12) -> list[dict]:
    """Residuals of the additivity identity on (phi1, phi2, phi3) samples.

    Checks F(phi1+phi2+phi3) = F(phi1+phi2) + F(phi2+phi3) - F(phi2), and the
    disjoint-additivity reduction (phi2 = 0 on the unit-preserving part of F).
    Samples whose phi1/phi3 supports overlap are flagged ill-formed, not
    checked.
    """
    lat = F.lattice
    rows = []
    F0 = F.evaluate(np.zeros(lat.n_sites))
    for i, (phi1, phi2, phi3) in enumerate(samples):
        v1 = field_values(lat, phi1)
        v2 = field_values(lat, phi2)
        v3 = field_values(lat, phi3)
        well_formed = not (set(np.flatnonzero(v1)) & set(np.flatnonzero(v3)))
        row = {"sample-id": i, "well-formed": well_formed,
               "eq11": None, "eq12": None, "pass": False}
        if well_formed:
            lhs = F.evaluate(v1 + v2 + v3)
            rhs = F.evaluate(v1 + v2) + F.evaluate(v2 + v3) - F.evaluate(v2)
            row["eq11"] = (lhs - rhs).norm()
            padd = (F.evaluate(v1 + v3) - F0) - (F.evaluate(v1) - F0) - (F.evaluate(v3) - F0)
            row["eq12"] = padd.norm()
            row["pass"] = row["eq11"] <= tol and row["eq12"] <= tol
        rows.append(row)
    return rows


def additivity_samples(lattice: Lattice, rng: np.random.Generator, count: int,
                       separation: int, scale: float = 1.0) -> list[tuple]:
    """Seeded (phi1, phi2, phi3) triples with supp phi1, phi3 at Chebyshev
    distance >= separation (torus in x) and phi2 supported everywhere."""
    lat = lattice
    out = []
    while len(out) < count:
        h1, w1 = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        h3, w3 = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        t1 = int(rng.integers(0, lat.nt - h1 + 1))
        x1 = int(rng.integers(0, lat.nx))
        t3 = int(rng.integers(0, lat.nt - h3 + 1))
        x3 = int(rng.integers(0, lat.nx))
        A = [LatticePoint(t1 + dt, (x1 + dx) % lat.nx)
             for dt in range(h1) for dx in range(w1)]
        B = [LatticePoint(t3 + dt, (x3 + dx) % lat.nx)
             for dt in range(h3) for dx in range(w3)]
        dist = min(max(abs(p.t - q.t), lat.torus_dist(p.x, q.x))
                   for p in A for q in B)
        if dist < separation:
            continue
        phi1 = np.zeros(lat.n_sites)
        phi3 = np.zeros(lat.n_sites)
        for p in A:
            phi1[lat.site_index(p)] = scale * rng.standard_normal()
        for p in B:
            phi3[lat.site_index(p)] = scale * rng.standard_normal()
        phi2 = scale * rng.standard_normal(lat.n_sites)
        out.append((phi1, phi2, phi3))
    return out


def is_local_at_scale(F: PolyFunctional, radius: int = 1, seed: int = 7,
                      count: int = 20, tol: float = 1e-10) -> tuple[bool, dict]:
    """Membership test for the local class at a declared stencil radius.

    Local means: every monomial has Chebyshev extent <= radius, and the
    additivity identity holds on seeded samples whose phi1/phi3 supports are
    separated by > radius (so no radius-limited stencil straddles both).
    """
    ext = monomial_extent(F)
    rng = np.random.default_rng(seed)
    samples = additivity_samples(F.lattice, rng, count, separation=radius + 1)
    rows = check_additivity(F, samples, tol=tol)
    add_ok = all(r["pass"] for r in rows)
    worst = max((r["eq11"] for r in rows if r["eq11"] is not None), default=0.0)
    ok = ext <= radius and add_ok
    return ok, {"monomial_extent": ext, "radius": radius,
                "additivity_pass": add_ok, "worst_eq11": worst}


# -- Lagrangians -----------------------------------------------------------------


class DensityTerm(NamedTuple):
    """coeff * phi^pow_phi * (forward dt phi)^pow_dt * (forward dx phi)^pow_dx."""

    coeff: complex
    pow_phi: int
    pow_dt: int
    pow_dx: int


@dataclass(frozen=True)
class GeneralizedLagrangian:
    """Map f -> L(f) = sum_sites f(site) * density(site), support preserving.

    Densities use the field value and its forward differences (stencil
    radius 1).  When any term differentiates in time, the density is summed
    over rows t <= nt-2 only (where the forward difference exists), which
    makes the Euler-Lagrange gradient of L(1) equal to the interior wave
    operator for the free density.
    """

    lattice: Lattice
    density: tuple[DensityTerm, ...]

    def __post_init__(self):
        for term in self.density:
            if min(term.pow_phi, term.pow_dt, term.pow_dx) < 0:
                raise ValueError("negative powers in density term")
            if term.pow_phi + term.pow_dt + term.pow_dx > MAX_DEGREE:
                raise ValueError(f"density degree exceeds cap {MAX_DEGREE}")

    def stencil_radius(self) -> int:
        return 1 if any(t.pow_dt or t.pow_dx for t in self.density) else 0

    def _rows(self):
        if any(t.pow_dt for t in self.density):
            return range(self.lattice.nt - 1)
        return range(self.lattice.nt)

    def density_at(self, p: LatticePoint) -> PolyFunctional:
        lat = self.lattice
        up_t = LatticePoint(p.t + 1, p.x)
        up_x = LatticePoint(p.t, (p.x + 1) % lat.nx)
        phi = PolyFunctional.field_at(lat, p)
        dt = PolyFunctional.field_at(lat, up_t) - phi if p.t + 1 < lat.nt else None
        dx = PolyFunctional.field_at(lat, up_x) - phi
        out = PolyFunctional.zero(lat)
        for c, np_, ndt, ndx in self.density:
            if ndt and dt is None:
                continue
            acc = PolyFunctional.constant(lat, c)
            for _ in range(np_):
                acc = acc * phi
            for _ in range(ndt):
                acc = acc * dt
            for _ in range(ndx):
                acc = acc * dx
            out = out + acc
        return out

    def __call__(self, f) -> PolyFunctional:
        lat = self.lattice
        if isinstance(f, frozenset | set):
            w = np.zeros(lat.n_sites)
            for p in f:
                w[lat.site_index(p)] = 1.0
        else:
            w = field_values(lat, f)
        out = PolyFunctional.zero(lat)
        for t in self._rows():
            for x in range(lat.nx):
                p = LatticePoint(t, x)
                c = complex(w[lat.site_index(p)])
                if c != 0:
                    out = out + self.density_at(p).scaled(c)
        return out


def local_functional_from_density(lattice: Lattice,
                                  density: Sequence[DensityTerm],
                                  window: Region) -> PolyFunctional:
    """Sum of the density over the window (indicator cutoff)."""
    return GeneralizedLagrangian(lattice, tuple(DensityTerm(*d) for d in density))(
        frozenset(window))


def free_scalar_lagrangian(lattice: Lattice) -> GeneralizedLagrangian:
    """Density (1/2)[(dt phi)^2 - (dx phi)^2 - m^2 phi^2]."""
    m2 = lattice.mass ** 2
    return GeneralizedLagrangian(lattice, (
        DensityTerm(0.5, 0, 2, 0),
        DensityTerm(-0.5, 0, 0, 2),
        DensityTerm(-0.5 * m2, 2, 0, 0),
    ))


def _fattened_indicator(lattice: Lattice, sites: set[int], radius: int) -> np.ndarray:
    w = np.zeros(lattice.n_sites)
    for i in sites:
        p = lattice.point(i)
        for dt in range(-radius, radius + 1):
            t = p.t + dt
            if not (0 <= t < lattice.nt):
                continue
            for dx in range(-radius, radius + 1):
                w[lattice.site_index(LatticePoint(t, (p.x + dx) % lattice.nx))] = 1.0
    return w


def delta_L(L: GeneralizedLagrangian, psi, phi=None):
    """delta L(psi)[phi] = L(f)[phi+psi] - L(f)[phi] for any cutoff f
    that is 1 on a stencil neighborhood of supp psi.

    Returns (value at phi, the functional phi -> delta L(psi)[phi]).
    Cutoff independence is verified with two fattenings; a psi whose
    fattened support already covers the whole lattice admits no compactly
    supported cutoff and raises.
    """
    lat = L.lattice
    psi_vals = field_values(lat, psi)
    if phi is None:
        phi = np.zeros(lat.n_sites)
    sites = set(int(i) for i in np.flatnonzero(psi_vals))
    if not sites:
        zero = PolyFunctional.zero(lat)
        return HbarScalar.zero(), zero
    r = L.stencil_radius()
    f1 = _fattened_indicator(lat, sites, r)
    if np.all(f1 != 0):
        raise ValueError("psi support (stencil-fattened) covers the whole "
                         "lattice; no compactly supported cutoff exists")
    f2 = _fattened_indicator(lat, sites, r + 1)
    results = []
    for f in (f1, f2):
        Lf = L(f)
        results.append(Lf.shift_field(psi_vals) - Lf)
    if results[0].distance(results[1]) > 1e-12:
        raise ValueError("delta_L depends on the cutoff choice: "
                         f"residual {results[0].distance(results[1]):.3e}")
    functional = results[0]
    return functional.evaluate(phi), functional


def euler_lagrange(L: GeneralizedLagrangian, phi) -> FieldConfiguration:
    """Gradient field dL(phi): <dL(phi), psi> = d/dt L(1)[phi + t psi]|_0.

    For the free density this equals the wave operator applied to phi on
    interior rows.
    """
    lat = L.lattice
    full = L(np.ones(lat.n_sites))
    grad = full.derivative(1, phi)
    out = np.zeros(lat.n_sites, dtype=complex)
    for (i,), coeff in grad.items():
        rng = coeff.exponent_range()
        if rng is not None and rng != (0, 0):
            raise ValueError("Lagrangian carries hbar-weighted coefficients")
        out[i] = coeff.at(0)
    if np.max(np.abs(out.imag)) == 0.0:
        out = out.real
    return FieldConfiguration(lat, out)


# -- causal band decomposition (property L1) ---------------------------------------


def decompose_L1(g: PolyFunctional, F1: Region, F2: Region,
                 N: int) -> list[PolyFunctional]:
    """Split g into N parts by time bands between the supports of F1 and F2.

    Requires F1 not later than F2 (a separating time slab exists between
    them).  The parts satisfy, with R the largest monomial time extent of g:
    parts 1..N-1 are not later than F2; F1 is not later than parts 2..N;
    part i is not later than part j whenever j >= i+2.  Sum is exact at
    the coefficient level, and each part inherits g's locality.
    """
    lat = g.lattice
    if N <= 3:
        raise ValueError(f"band count N must exceed 3, got {N}")
    F1 = frozenset(F1)
    F2 = frozenset(F2)
    if not F1 or not F2:
        raise ValueError("empty support region; no separating slab exists")
    if not lat.not_later_than(F1, F2):
        if lat.not_later_than(F2, F1):
            raise ValueError("regions are in the reverse causal order: F1 "
                             "must be not later than F2")
        raise ValueError("F1 is not 'not later than' F2; no decomposition")

    R = 0
    for deg, key, _coeff in g.monomials():
        if deg >= 1:
            rows = [lat.point(i).t for i in key]
            R = max(R, max(rows) - min(rows))
    t1_max = max(p.t for p in F1)
    t2_min = min(p.t for p in F2)
    spacing = max(R, 1)
    width_required = R + 1 + (N - 2) * spacing
    if t1_max + width_required > t2_min:
        raise ValueError(
            f"separating time slab too narrow: need width {width_required} "
            f"between row {t1_max} and row {t2_min} (available "
            f"{t2_min - t1_max})")
    cuts = [t1_max + R + 1 + i * spacing for i in range(N - 1)]

    parts_terms: list[dict[int, dict[tuple, HbarScalar]]] = [{} for _ in range(N)]
    for deg, key, coeff in g.monomials():
        if deg == 0:
            band = 0
        else:
            max_row = max(lat.point(i).t for i in key)
            band = bisect_right(cuts, max_row)
        parts_terms[band].setdefault(deg, {})[key] = coeff
    return [PolyFunctional(lat, t) for t in parts_terms]
