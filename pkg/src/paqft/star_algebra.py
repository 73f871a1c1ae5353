"""Deformation quantization on the lattice: star product from the Wightman
two-point kernel, time-ordered product from the Feynman kernel, and the
classical-limit bridges.

Both products expand a polynomial functional pair as

    F . G = sum_r (hbar^r / r!) < F^(r), K^{tensor r} G^(r) >

which, per monomial pair, reduces to a sum over r-subsets of each side's
field slots weighted by a permanent of the kernel submatrix.  The 1/r!
cancels against ordered slot selection, so the implementation sums over
unordered selections and matrix permanents with no factorial division.
Polynomial degree means r <= 8 throughout.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .functionals import HbarScalar, PolyFunctional
from .lattice import Kernel, Lattice, Region


@functools.cache
def _selections(degree: int, r: int):
    """All (selected, remaining) index-tuple pairs choosing r of `degree` slots."""
    idx = tuple(range(degree))
    out = []
    for sel in itertools.combinations(idx, r):
        sel_set = set(sel)
        rem = tuple(i for i in idx if i not in sel_set)
        out.append((sel, rem))
    return tuple(out)


def _poly_from_flat(lattice: Lattice, flat: dict) -> PolyFunctional:
    nested: dict[int, dict] = {}
    for key, coeff in flat.items():
        nested.setdefault(len(key), {})[key] = coeff
    return PolyFunctional(lattice, nested)


def _permanent(mat: np.ndarray) -> complex:
    """Permanent of a small square matrix by direct permutation sum (r <= 8)."""
    r = mat.shape[0]
    if r == 1:
        return complex(mat[0, 0])
    total = 0.0 + 0.0j
    rows = range(r)
    for perm in itertools.permutations(rows):
        p = 1.0 + 0.0j
        for i, j in enumerate(perm):
            p *= mat[i, j]
            if p == 0:
                break
        total += p
    return total


@dataclass(frozen=True)
class StarAlgebraContext:
    """Kernels and conventions for one lattice's quantum algebra.

    wightman drives the star product, feynman the time-ordered one; both
    must share the lattice and satisfy K - (i/2) Delta real and symmetric
    for a Hadamard-type splitting (checked at construction).
    """

    lattice: Lattice
    wightman: Kernel
    feynman: Kernel
    pauli_jordan: Kernel
    max_contraction_order: int | None = None

    def __post_init__(self):
        for k in (self.wightman, self.feynman, self.pauli_jordan):
            if k.lattice != self.lattice:
                raise ValueError("kernels must live on the context lattice")
        h = self.wightman.entries - 0.5j * self.pauli_jordan.entries
        if np.max(np.abs(h.imag)) > 1e-12 or np.max(np.abs(h - h.T)) > 1e-12:
            raise ValueError(
                "wightman minus (i/2) pauli_jordan must be real symmetric")

    @classmethod
    def default(cls, lattice: Lattice) -> "StarAlgebraContext":
        return cls(lattice=lattice,
                   wightman=lattice.wightman(),
                   feynman=lattice.feynman(),
                   pauli_jordan=lattice.pauli_jordan())

    @classmethod
    def from_hadamard(cls, lattice: Lattice, hadamard: np.ndarray
                      ) -> "StarAlgebraContext":
        from .lattice import feynman_from_hadamard, wightman_from_hadamard
        return cls(lattice=lattice,
                   wightman=wightman_from_hadamard(lattice, hadamard),
                   feynman=feynman_from_hadamard(lattice, hadamard),
                   pauli_jordan=lattice.pauli_jordan())

    def _contract(self, F: PolyFunctional, G: PolyFunctional,
                  entries: np.ndarray) -> PolyFunctional:
        """Exponentiated-contraction product of F and G along `entries`."""
        if F.lattice != self.lattice or G.lattice != self.lattice:
            raise ValueError("functionals must live on the context lattice")
        acc: dict = {}
        cap = self.max_contraction_order
        for da, ka, ca in F.monomials():
            for db, kb, cb in G.monomials():
                rmax = min(da, db)
                if cap is not None:
                    rmax = min(rmax, cap)
                cc = ca * cb
                for r in range(rmax + 1):
                    if r == 0:
                        key = tuple(sorted(ka + kb))
                        prev = acc.get(key)
                        acc[key] = cc if prev is None else prev + cc
                        continue
                    weight = HbarScalar({r: 1.0})
                    for sa, ra in _selections(da, r):
                        rows = [ka[i] for i in sa]
                        for sb, rb in _selections(db, r):
                            cols = [kb[j] for j in sb]
                            mat = entries[np.ix_(rows, cols)]
                            per = _permanent(mat)
                            if per == 0:
                                continue
                            key = tuple(sorted(
                                [ka[i] for i in ra] + [kb[j] for j in rb]))
                            term = cc * (per * weight)
                            prev = acc.get(key)
                            acc[key] = term if prev is None else prev + term
        return _poly_from_flat(self.lattice, acc)

    def star(self, F: PolyFunctional, G: PolyFunctional) -> PolyFunctional:
        """Star product along the Wightman kernel (associative,
        noncommutative; hbar^1 commutator part is i times the Poisson
        bracket)."""
        return self._contract(F, G, self.wightman.entries)

    def time_ordered(self, F: PolyFunctional, G: PolyFunctional
                     ) -> PolyFunctional:
        """Binary time-ordered product along the Feynman kernel
        (commutative and associative since the kernel is symmetric)."""
        return self._contract(F, G, self.feynman.entries)

    def time_ordered_n(self, factors: Sequence[PolyFunctional]
                       ) -> PolyFunctional:
        """n-ary time-ordered product as a fold of the binary one; the
        empty product is the unit functional."""
        out = None
        for f in factors:
            out = f if out is None else self.time_ordered(out, f)
        if out is None:
            return PolyFunctional.unit(self.lattice)
        return out

    def commutator(self, F: PolyFunctional, G: PolyFunctional
                   ) -> PolyFunctional:
        return self.star(F, G) - self.star(G, F)

def beta(F: PolyFunctional, regions: Sequence[Iterable]) -> list:
    """Split a pointwise product of local factors with pairwise disjoint
    supports back into the factors, one per region, in the given order.

    Every monomial key of F is partitioned by region membership; the
    coefficient table must then be rank one across regions (the defining
    property of a product).  Functionals that are not such products, or
    regions that overlap or miss support sites, are rejected.  The overall
    normalization is attached to the first factor.
    """
    if not regions:
        raise ValueError("need at least one region")
    lat = F.lattice
    region_sets = []
    for reg in regions:
        rs = frozenset(lat.site_index(p) for p in reg)
        region_sets.append(rs)
    for i in range(len(region_sets)):
        for j in range(i + 1, len(region_sets)):
            if region_sets[i] & region_sets[j]:
                raise ValueError(f"regions {i} and {j} overlap")
    m = len(region_sets)
    table: dict[tuple, HbarScalar] = {}
    parts_seen: list[set] = [set() for _ in range(m)]
    for _deg, key, coeff in F.monomials():
        parts = [[] for _ in range(m)]
        for s in key:
            hits = [i for i, rs in enumerate(region_sets) if s in rs]
            if not hits:
                raise ValueError(f"site {lat.point(s)} lies in no region")
            parts[hits[0]].append(s)
        split = tuple(tuple(sorted(p)) for p in parts)
        for i in range(m):
            parts_seen[i].add(split[i])
        table[split] = coeff
    n_expected = math.prod(len(p) for p in parts_seen)
    if len(table) != n_expected:
        raise ValueError(
            "functional is not a pointwise product over the regions: "
            "monomial grid is not a full rectangle")
    refs = tuple(min(p) for p in parts_seen)
    c_ref = table[refs]
    inv_ref = _invert_hbar_monomial(c_ref)
    factors = []
    for i in range(m):
        terms = {}
        for part in sorted(parts_seen[i]):
            probe = refs[:i] + (part,) + refs[i + 1:]
            coeff = table[probe]
            if i > 0:
                coeff = coeff * inv_ref
            terms[part] = coeff
        factors.append(_poly_from_flat(lat, terms))
    prod = factors[0]
    for g in factors[1:]:
        prod = prod * g
    if (prod - F).max_norm() > 1e-10 * max(1.0, F.max_norm()):
        raise ValueError(
            "functional is not the pointwise product of per-region factors")
    return factors


def _invert_hbar_monomial(c: HbarScalar) -> HbarScalar:
    items = [(e, z) for e, z in c.coeffs.items()]
    if len(items) != 1:
        raise ValueError(
            "cannot normalize factors: reference coefficient is not a "
            "single hbar monomial")
    e, z = items[0]
    return HbarScalar({-e: 1.0 / z})
