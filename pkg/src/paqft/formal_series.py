"""Truncated formal power series in the coupling, and symmetric multilinear
families with memoized mixed/diagonal evaluation and polarization.

The series engine is target-agnostic: coefficients may be scalars
(complex, Fraction), HbarScalar, or PolyFunctional; they need addition,
scalar multiplication, and (for multiply/invert) a bilinear product passed
explicitly.  Factor divisions go through Fraction so exact scalar targets
stay exact.
"""

from __future__ import annotations

import itertools
import math
import threading
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence


@dataclass(frozen=True)
class LambdaSeries:
    """Coefficients c_0..c_cap of a series truncated at order_cap.

    Arithmetic never reads beyond the cap; higher orders are silently
    dropped by construction.
    """

    order_cap: int
    coefficients: tuple

    def __post_init__(self):
        if len(self.coefficients) != self.order_cap + 1:
            raise ValueError(
                f"need {self.order_cap + 1} coefficients, got {len(self.coefficients)}")

    def coeff(self, n: int):
        return self.coefficients[n]

    @staticmethod
    def from_list(coeffs: Sequence) -> "LambdaSeries":
        return LambdaSeries(len(coeffs) - 1, tuple(coeffs))

    def truncated(self, cap: int) -> "LambdaSeries":
        if cap > self.order_cap:
            raise ValueError(f"cannot extend cap {self.order_cap} to {cap}")
        return LambdaSeries(cap, self.coefficients[:cap + 1])


def _check_caps(a: LambdaSeries, b: LambdaSeries):
    if a.order_cap != b.order_cap:
        raise ValueError(f"order_cap mismatch: {a.order_cap} != {b.order_cap}")


def series_add(a: LambdaSeries, b: LambdaSeries) -> LambdaSeries:
    _check_caps(a, b)
    return LambdaSeries(a.order_cap, tuple(
        x + y for x, y in zip(a.coefficients, b.coefficients)))


def series_scale(a: LambdaSeries, c) -> LambdaSeries:
    return LambdaSeries(a.order_cap, tuple(x * c for x in a.coefficients))


def series_multiply(a: LambdaSeries, b: LambdaSeries,
                    product: Callable = None) -> LambdaSeries:
    """Cauchy product; factor order preserved (a-coefficient left)."""
    _check_caps(a, b)
    mul = product if product is not None else (lambda x, y: x * y)
    out = []
    for n in range(a.order_cap + 1):
        acc = None
        for k in range(n + 1):
            term = mul(a.coeff(k), b.coeff(n - k))
            acc = term if acc is None else acc + term
        out.append(acc)
    return LambdaSeries(a.order_cap, tuple(out))


def series_invert(a: LambdaSeries, product: Callable = None,
                  unit=None) -> LambdaSeries:
    """Two-sided inverse of a series with unit leading coefficient.

    b_0 = unit, b_n = -sum_{k=1..n} a_k b_{n-k}.
    """
    mul = product if product is not None else (lambda x, y: x * y)
    u = unit if unit is not None else 1
    if not _equals(a.coeff(0), u):
        raise ValueError("leading coefficient is not the unit; not invertible")
    b = [u]
    for n in range(1, a.order_cap + 1):
        acc = None
        for k in range(1, n + 1):
            term = mul(a.coeff(k), b[n - k])
            acc = term if acc is None else acc + term
        b.append(-acc)
    return LambdaSeries(a.order_cap, tuple(b))


def _equals(x, y) -> bool:
    eq = (x == y)
    return bool(eq)


def _is_zero(x) -> bool:
    if hasattr(x, "is_zero"):
        return x.is_zero()
    return bool(x == 0)


class MultilinearFamily:
    """Order-indexed family n -> T_n of symmetric multilinear maps.

    Backed by a mixed-argument evaluator, a diagonal-only evaluator, or
    both.  Mixed evaluation prefers the direct evaluator and falls back to
    polarization over the diagonal one.  Evaluations are memoized on object
    identity of the arguments (strong references are kept so ids stay
    valid); the memo is guarded by a lock with idempotent insertion, so
    concurrent duplicate computation is tolerated.
    """

    def __init__(self, evaluate_mixed: Callable = None,
                 evaluate_diagonal: Callable = None, symmetric: bool = True):
        if evaluate_mixed is None and evaluate_diagonal is None:
            raise ValueError("need at least one evaluator")
        self._mixed = evaluate_mixed
        self._diagonal = evaluate_diagonal
        self.symmetric = symmetric
        self._memo: dict = {}
        self._refs: list = []
        self._lock = threading.Lock()

    def _memo_get(self, key):
        with self._lock:
            return self._memo.get(key)

    def _memo_put(self, key, value, args):
        with self._lock:
            self._refs.append(args)
            return self._memo.setdefault(key, value)

    def diagonal(self, n: int, f):
        """T_n(f^{tensor n})."""
        if n < 1:
            raise ValueError("order must be >= 1")
        key = ("diag", n, id(f))
        hit = self._memo_get(key)
        if hit is not None:
            return hit
        if self._diagonal is not None:
            val = self._diagonal(n, f)
        else:
            val = self._mixed(n, [f] * n)
        return self._memo_put(key, val, (f,))

    def mixed(self, n: int, args: Sequence):
        """T_n(f_1,...,f_n), by direct evaluation or polarization."""
        if len(args) != n:
            raise ValueError(f"need {n} arguments, got {len(args)}")
        if n < 1:
            raise ValueError("order must be >= 1")
        ids = tuple(sorted(id(a) for a in args)) if self.symmetric \
            else tuple(id(a) for a in args)
        key = ("mixed", n, ids)
        hit = self._memo_get(key)
        if hit is not None:
            return hit
        if self._mixed is not None:
            val = self._mixed(n, list(args))
        else:
            val = polarize(self, n, args)
        return self._memo_put(key, val, tuple(args))


def polarize(family: MultilinearFamily, n: int, args: Sequence):
    """Mixed values from diagonal ones for a symmetric multilinear map:

    T_n(f_1..f_n) = (1/n!) sum_{nonempty S} (-1)^{n-|S|} T_n((sum_S f_i)^n).
    """
    if len(args) != n:
        raise ValueError(f"need {n} arguments, got {len(args)}")
    acc = None
    for size in range(1, n + 1):
        for subset in itertools.combinations(range(n), size):
            s = args[subset[0]]
            for i in subset[1:]:
                s = s + args[i]
            term = family.diagonal(n, s)
            if (n - size) % 2:
                term = -term
            acc = term if acc is None else acc + term
    return acc * Fraction(1, math.factorial(n))


def _compositions(total: int, parts: int):
    """Ordered tuples of `parts` positive integers summing to `total`."""
    if parts == 1:
        yield (total,)
        return
    for first in range(1, total - parts + 2):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def expand_on_series_argument(family: MultilinearFamily, g: LambdaSeries,
                              prefactor: Callable[[int], object],
                              unit) -> LambdaSeries:
    """Coefficients of 1 + sum_k prefactor(k)/k! T_k(g^{tensor k}) for a
    series-valued argument g with g_0 = 0.

    Coefficient at order N is
    sum_{k=1..N} prefactor(k)/k! sum_{m_1+..+m_k=N, m_i>=1} T_k(g_{m_1},..,g_{m_k}).
    """
    if not _is_zero(g.coeff(0)):
        raise ValueError("series argument must vanish at order 0")
    coeffs = [unit]
    for N in range(1, g.order_cap + 1):
        acc = None
        for k in range(1, N + 1):
            pre = prefactor(k)
            inv_fact = Fraction(1, math.factorial(k))
            for comp in _compositions(N, k):
                val = family.mixed(k, [g.coeff(m) for m in comp])
                term = (val * pre) * inv_fact
                acc = term if acc is None else acc + term
        coeffs.append(acc)
    return LambdaSeries(g.order_cap, tuple(coeffs))


def compose_SZ(family: MultilinearFamily, prefactor: Callable[[int], object],
               z_family: MultilinearFamily, f, cap: int, unit,
               zero) -> LambdaSeries:
    """Lambda-coefficients of (S compose Z)(lambda f).

    Z(lambda f) = lambda f + sum_{n>=2} lambda^n/n! Z_n(f^{tensor n});
    the order-1 coefficient of Z must be the identity (axiom Z4).
    """
    z1 = z_family.diagonal(1, f)
    if not _is_zero(z1 - f):
        raise ValueError("Z violates Z4: order-1 coefficient is not the identity")
    rows = [zero, f]
    for n in range(2, cap + 1):
        rows.append(z_family.diagonal(n, f) * Fraction(1, math.factorial(n)))
    g = LambdaSeries(cap, tuple(rows))
    return expand_on_series_argument(family, g, prefactor, unit)
