"""Finite 1+1D Minkowski lattice: causal structure and propagator kernels.

Conventions
-----------
Sites are (t, x) with 0 <= t < nt and 0 <= x < nx, spacing dt = dx = 1
(CFL = 1, so the numerical domain of dependence is the exact discrete light
cone).  The spatial direction is periodic; time is a finite slab.  Flat site
index is ``t * nx + x``.

The wave operator is P = -(box + m^2), discretized with centered second
differences.  Operator identities (P applied to a kernel in either argument)
hold on interior time rows 1 <= t <= nt-2 only; the two boundary rows carry
the stencil truncation and are excluded from residual norms.

Kernel direction convention: the retarded Green function satisfies
Delta_R(x, y) != 0 only if y is in the causal past J^-(x), i.e. the column
at source y spreads toward the future of y.  The advanced kernel is its
transpose.

Large masses: modes with 4 sin^2(k/2) + m^2 > 4 have no real frequency and
the kernels grow like sinh(gamma * nt); residuals of the eigensolve-based
Hadamard part are backward-stable relative to the kernel norm, so absolute
residuals grow with mass.  At the default m = 0.5 they sit near 1e-14.
"""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple, TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .functionals import HbarScalar, PolyFunctional


class LatticePoint(NamedTuple):
    t: int
    x: int


Region = frozenset  # of LatticePoint


@dataclass(frozen=True)
class Lattice:
    """Spacetime carrier: nt time rows, nx periodic spatial sites, mass m.

    >>> lat = Lattice(nt=8, nx=8, mass=0.5)
    >>> lat.n_sites
    64
    """

    nt: int
    nx: int
    mass: float

    def __post_init__(self):
        if self.nt < 4 or self.nx < 4:
            raise ValueError(f"lattice too small: nt={self.nt}, nx={self.nx} (need >= 4)")
        if not (math.isfinite(self.mass) and self.mass >= 0.0):
            raise ValueError(f"mass must be finite and >= 0, got {self.mass}")

    @property
    def n_sites(self) -> int:
        return self.nt * self.nx

    def site_index(self, p: LatticePoint) -> int:
        if not (0 <= p.t < self.nt and 0 <= p.x < self.nx):
            raise ValueError(f"point {p} outside lattice {self.nt}x{self.nx}")
        return p.t * self.nx + p.x

    def point(self, idx: int) -> LatticePoint:
        if not (0 <= idx < self.n_sites):
            raise ValueError(f"site index {idx} out of range")
        return LatticePoint(idx // self.nx, idx % self.nx)

    def points(self):
        for t in range(self.nt):
            for x in range(self.nx):
                yield LatticePoint(t, x)

    def torus_dist(self, x1: int, x2: int) -> int:
        d = abs(x1 - x2) % self.nx
        return min(d, self.nx - d)

    def interior_rows(self):
        """Time rows where the centered operator stencil is complete."""
        return range(1, self.nt - 1)

    def interior_mask(self) -> np.ndarray:
        m = np.zeros(self.n_sites, dtype=bool)
        for t in self.interior_rows():
            m[t * self.nx:(t + 1) * self.nx] = True
        return m

    # -- causal structure ---------------------------------------------------

    def in_causal_future(self, q: LatticePoint, p: LatticePoint) -> bool:
        """q in J^+(p): unit-speed cone on the spatial torus."""
        return q.t >= p.t and self.torus_dist(q.x, p.x) <= q.t - p.t

    def causal_future(self, p: LatticePoint) -> Region:
        self.site_index(p)  # range check
        return frozenset(q for q in self.points() if self.in_causal_future(q, p))

    def causal_past(self, p: LatticePoint) -> Region:
        self.site_index(p)
        return frozenset(q for q in self.points() if self.in_causal_future(p, q))

    def not_later_than(self, A, B) -> bool:
        """A does not meet the causal future of B (A "not later than" B).

        Never true when A and B intersect (p is in its own future).
        """
        A = frozenset(A)
        B = frozenset(B)
        for p in A | B:
            self.site_index(p)
        return not any(self.in_causal_future(a, b) for a in A for b in B)

    def spacelike(self, A, B) -> bool:
        return self.not_later_than(A, B) and self.not_later_than(B, A)

    # -- operator and kernels -----------------------------------------------

    def klein_gordon_apply(self, phi):
        """Apply P = -(box + m^2) row-wise, zero-padding outside the slab.

        Only interior rows of the result are meaningful.  Accepts a flat
        array or a FieldConfiguration and returns the same kind.
        """
        if isinstance(phi, FieldConfiguration):
            return FieldConfiguration(self, self.klein_gordon_apply(phi.values))
        phi = np.asarray(phi)
        u = phi.reshape(self.nt, self.nx)
        up = np.zeros_like(u)
        dn = np.zeros_like(u)
        up[:-1] = u[1:]
        dn[1:] = u[:-1]
        d2t = up - 2 * u + dn
        d2x = np.roll(u, -1, axis=1) - 2 * u + np.roll(u, 1, axis=1)
        return (-(d2t - d2x + self.mass ** 2 * u)).reshape(-1)

    def operator_matrix(self) -> np.ndarray:
        """Dense matrix of klein_gordon_apply (for oracle-style checks)."""
        n = self.n_sites
        P = np.zeros((n, n))
        eye = np.eye(n)
        for j in range(n):
            P[:, j] = self.klein_gordon_apply(eye[:, j])
        return P

    def green_retarded(self) -> "Kernel":
        return _green_retarded(self)

    def green_advanced(self) -> "Kernel":
        return _green_advanced(self)

    def pauli_jordan(self) -> "Kernel":
        return _pauli_jordan(self)

    def hadamard_kernel(self) -> "Kernel":
        return _hadamard(self)

    def wightman(self) -> "Kernel":
        return _wightman(self)

    def feynman(self) -> "Kernel":
        return _feynman(self)

    def hadamard_mode_classification(self) -> dict:
        """Per-mode dispersion bookkeeping: stable / unstable / excluded."""
        report = {"stable": [], "unstable": [], "excluded": []}
        for j in range(self.nx):
            k = 2 * np.pi * j / self.nx
            s = 4 * np.sin(k / 2) ** 2 + self.mass ** 2
            if abs(s) < _MODE_EPS:
                report["excluded"].append((j, "zero-mode"))
            elif abs(s - 4.0) < _MODE_EPS:
                report["excluded"].append((j, "edge-mode"))
            elif s < 4.0:
                report["stable"].append(j)
            else:
                report["unstable"].append(j)
        return report

    def poisson_bracket(self, F: "PolyFunctional", G: "PolyFunctional",
                        phi: np.ndarray) -> "HbarScalar":
        """{F, G} = <F^(1)(phi), Delta G^(1)(phi)>."""
        from .functionals import HbarScalar

        if F.lattice != self or G.lattice != self:
            raise ValueError("functionals live on a different lattice")
        D = self.pauli_jordan().entries
        dF = F.derivative(1, phi)
        dG = G.derivative(1, phi)
        out = HbarScalar.zero()
        for (i,), ci in dF.items():
            for (j,), cj in dG.items():
                out = out + ci * cj * complex(D[i, j])
        return out


@dataclass(frozen=True)
class FieldConfiguration:
    """Field values on lattice sites, flat-indexed; complex allowed for
    test directions."""

    lattice: Lattice
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.shape != (self.lattice.n_sites,):
            raise ValueError(f"field shape {v.shape} != ({self.lattice.n_sites},)")
        if not np.all(np.isfinite(v)):
            raise ValueError("field has non-finite values")
        object.__setattr__(self, "values", v)
        v.setflags(write=False)

    def __call__(self, p: LatticePoint) -> complex:
        return self.values[self.lattice.site_index(p)]

    def support(self) -> Region:
        lat = self.lattice
        return frozenset(lat.point(i) for i in np.flatnonzero(self.values))

    def __add__(self, other: "FieldConfiguration") -> "FieldConfiguration":
        if self.lattice != other.lattice:
            raise ValueError("lattice mismatch")
        return FieldConfiguration(self.lattice, self.values + other.values)

    def __sub__(self, other: "FieldConfiguration") -> "FieldConfiguration":
        if self.lattice != other.lattice:
            raise ValueError("lattice mismatch")
        return FieldConfiguration(self.lattice, self.values - other.values)

    def __mul__(self, c) -> "FieldConfiguration":
        return FieldConfiguration(self.lattice, self.values * c)

    __rmul__ = __mul__


def field_values(lattice: Lattice, phi) -> np.ndarray:
    """Coerce a FieldConfiguration or array-like to a flat value vector.

    Accepts flat (n_sites,) vectors or (nt, nx) grids in row-major site
    order.
    """
    if isinstance(phi, FieldConfiguration):
        if phi.lattice != lattice:
            raise ValueError("field lives on a different lattice")
        return phi.values
    v = np.asarray(phi)
    if v.shape == (lattice.nt, lattice.nx):
        v = v.reshape(lattice.n_sites)
    if v.shape != (lattice.n_sites,):
        raise ValueError(f"field shape {v.shape} != ({lattice.n_sites},)")
    return v


@dataclass(frozen=True)
class Kernel:
    """Complex two-point function on lattice sites (flat-index matrix)."""

    kind: str
    lattice: Lattice
    entries: np.ndarray

    def __post_init__(self):
        n = self.lattice.n_sites
        if self.entries.shape != (n, n):
            raise ValueError(f"kernel shape {self.entries.shape} != ({n}, {n})")
        if not np.all(np.isfinite(self.entries)):
            raise ValueError("kernel has non-finite entries")
        self.entries.setflags(write=False)

    def entry(self, p: LatticePoint, q: LatticePoint) -> complex:
        return complex(self.entries[self.lattice.site_index(p), self.lattice.site_index(q)])

    def to_json_dict(self) -> dict:
        flat = self.entries.reshape(-1)
        return {
            "kind": self.kind,
            "nt": self.lattice.nt,
            "nx": self.lattice.nx,
            "mass": self.lattice.mass,
            "entries": [[float(z.real), float(z.imag)] for z in flat],
        }


def kernel_from_json_dict(d: dict) -> Kernel:
    lat = Lattice(nt=int(d["nt"]), nx=int(d["nx"]), mass=float(d["mass"]))
    n = lat.n_sites
    ent = np.array([complex(re, im) for re, im in d["entries"]]).reshape(n, n)
    return Kernel(kind=str(d["kind"]), lattice=lat, entries=ent)


_MODE_EPS = 1e-12


@functools.cache
def _green_retarded(lat: Lattice) -> Kernel:
    """Columns built by forward leapfrog stepping from a unit source.

    For the source column y = (tp, xp): u = 0 for t <= tp, the P u = delta_y
    relation forces u(tp+1, xp) = -1, and for t > tp
    u(t+1, x) = u(t, x+1) + u(t, x-1) - u(t-1, x) - m^2 u(t, x).
    """
    nt, nx, m2 = lat.nt, lat.nx, lat.mass ** 2
    # G[t, x, tp, xp]; vectorize over the source position xp.
    G = np.zeros((nt, nx, nt, nx))
    for tp in range(nt):
        u = np.zeros((nt, nx, nx))  # u[t, x, xp] for sources on row tp
        if tp + 1 < nt:
            u[tp + 1] = -np.eye(nx)
            for t in range(tp + 1, nt - 1):
                u[t + 1] = (np.roll(u[t], -1, axis=0) + np.roll(u[t], 1, axis=0)
                            - u[t - 1] - m2 * u[t])
        G[:, :, tp, :] = u
    return Kernel("retarded", lat, G.reshape(lat.n_sites, lat.n_sites).astype(complex))


@functools.cache
def _green_advanced(lat: Lattice) -> Kernel:
    """Mirror of the retarded construction, stepping backward in time."""
    nt, nx, m2 = lat.nt, lat.nx, lat.mass ** 2
    G = np.zeros((nt, nx, nt, nx))
    for tp in range(nt - 1, -1, -1):
        u = np.zeros((nt, nx, nx))
        if tp - 1 >= 0:
            u[tp - 1] = -np.eye(nx)
            for t in range(tp - 1, 0, -1):
                u[t - 1] = (np.roll(u[t], -1, axis=0) + np.roll(u[t], 1, axis=0)
                            - u[t + 1] - m2 * u[t])
        G[:, :, tp, :] = u
    return Kernel("advanced", lat, G.reshape(lat.n_sites, lat.n_sites).astype(complex))


@functools.cache
def _pauli_jordan(lat: Lattice) -> Kernel:
    D = lat.green_retarded().entries - lat.green_advanced().entries
    return Kernel("pauli_jordan", lat, D)


@functools.cache
def _hadamard(lat: Lattice) -> Kernel:
    """Real symmetric H with W = (i/2) Delta + H a positive bisolution.

    Per spatial mode k the dispersion 4 sin^2(w/2) = 4 sin^2(k/2) + m^2 =: s
    splits three ways:

    * s < 4 (stable): real frequency w, vacuum block
      H_k(t, t') = cos(w (t - t')) / (2 sin w).
    * s > 4 (unstable): no real frequency; the block is the spectral
      positive part, H_k = |i Delta_k| / 2, computed from the Hermitian
      eigendecomposition of i Delta_k (never from its square, which would
      double the condition number).  This keeps H_k an exact interior
      bisolution and W_k = pos(i Delta_k) positive semidefinite.
    * s ~ 0 (zero mode, m = 0) or s ~ 4 (edge mode): excluded from the sum
      with a warning; the massless infrared divergence has no finite
      regularization on the torus.
    """
    nt, nx, m = lat.nt, lat.nx, lat.mass
    Delta = lat.pauli_jordan().entries.real.reshape(nt, nx, nt, nx)

    # Translation-averaged time blocks D[t, t', xi] at spatial offset xi.
    D = np.zeros((nt, nt, nx))
    for xi in range(nx):
        acc = np.zeros((nt, nt))
        for xp in range(nx):
            acc += Delta[:, (xp + xi) % nx, :, xp]
        D[:, :, xi] = acc / nx

    tgrid = np.arange(nt)
    tau = tgrid[:, None] - tgrid[None, :]
    phases = np.arange(nx)
    Hk = np.zeros((nx, nt, nt))
    for j in range(nx):
        k = 2 * np.pi * j / nx
        s = 4 * np.sin(k / 2) ** 2 + m * m
        if abs(s) < _MODE_EPS:
            warnings.warn(f"mode j={j}: zero mode excluded from the Hadamard sum "
                          "(infrared regularization)", RuntimeWarning, stacklevel=2)
            continue
        if abs(s - 4.0) < _MODE_EPS:
            warnings.warn(f"mode j={j}: edge mode (w = pi) excluded from the "
                          "Hadamard sum", RuntimeWarning, stacklevel=2)
            continue
        if s < 4.0:
            om = 2 * np.arcsin(np.sqrt(s) / 2)
            Hk[j] = np.cos(om * tau) / (2 * np.sin(om))
        else:
            Dk = np.einsum("abx,x->ab", D, np.exp(-1j * k * phases)).real
            Dk = (Dk - Dk.T) / 2
            mu, V = np.linalg.eigh(1j * Dk)
            Hk[j] = ((V * np.abs(mu)) @ V.conj().T).real / 2
            Hk[j] = (Hk[j] + Hk[j].T) / 2

    xs = np.arange(nx)
    xi_mat = (xs[:, None] - xs[None, :]) % nx
    H = np.zeros((lat.n_sites, lat.n_sites))
    for j in range(nx):
        k = 2 * np.pi * j / nx
        H += np.kron(Hk[j], np.cos(k * xi_mat)) / nx
    H = (H + H.T) / 2
    return Kernel("hadamard", lat, H.astype(complex))


@functools.cache
def _wightman(lat: Lattice) -> Kernel:
    W = 0.5j * lat.pauli_jordan().entries + lat.hadamard_kernel().entries
    return Kernel("wightman", lat, W)


@functools.cache
def _feynman(lat: Lattice) -> Kernel:
    DF = (0.5j * (lat.green_advanced().entries + lat.green_retarded().entries)
          + lat.hadamard_kernel().entries)
    return Kernel("feynman", lat, DF)


def feynman_from_hadamard(lat: Lattice, H: np.ndarray) -> Kernel:
    """Feynman kernel for a caller-supplied symmetric part H."""
    H = np.asarray(H)
    if not np.allclose(H, H.T, atol=0.0, rtol=0.0):
        raise ValueError("Hadamard part must be exactly symmetric")
    if np.max(np.abs(H.imag)) > 0:
        raise ValueError("Hadamard part must be real")
    DF = 0.5j * (lat.green_advanced().entries + lat.green_retarded().entries) + H
    return Kernel("feynman", lat, DF)


def wightman_from_hadamard(lat: Lattice, H: np.ndarray) -> Kernel:
    H = np.asarray(H)
    if not np.allclose(H, H.T, atol=0.0, rtol=0.0):
        raise ValueError("Hadamard part must be exactly symmetric")
    W = 0.5j * lat.pauli_jordan().entries + H
    return Kernel("wightman", lat, W)


def kernel_residuals(lat: Lattice) -> dict:
    """Identity/support/symmetry residual summary for all kernels."""
    n = lat.n_sites
    P = lat.operator_matrix()
    R = lat.green_retarded().entries
    A = lat.green_advanced().entries
    D = lat.pauli_jordan().entries
    H = lat.hadamard_kernel().entries
    W = lat.wightman().entries
    DF = lat.feynman().entries
    interior = lat.interior_mask()
    eye = np.eye(n)

    cone_leaks = 0
    off_future = np.zeros((n, n), dtype=bool)
    for i, p in enumerate(lat.points()):
        for j, q in enumerate(lat.points()):
            inside = lat.in_causal_future(p, q)  # q source, p field point
            if not inside and R[i, j] != 0:
                cone_leaks += 1
            off_future[i, j] = not lat.in_causal_future(q, p)

    def interior_residual(K):
        return max(float(np.max(np.abs((P @ K)[interior]))),
                   float(np.max(np.abs((K @ P.T)[:, interior]))))

    gram_min = float(np.min(np.linalg.eigvalsh((W + W.conj().T) / 2)))
    return {
        "green_retarded_identity": float(np.max(np.abs((P @ R - eye)[interior]))),
        "green_advanced_identity": float(np.max(np.abs((P @ A - eye)[interior]))),
        "reciprocity": float(np.max(np.abs(A - R.T))),
        "cone_support_violations": cone_leaks,
        "pauli_jordan_antisymmetry": float(np.max(np.abs(D + D.T))),
        "H1_imaginary_part": float(np.max(np.abs(2 * W.imag - D.real))),
        "H2_interior_H": interior_residual(H),
        "H2_interior_W": interior_residual(W),
        "H3_gram_min_eigenvalue": gram_min,
        "feynman_symmetry": float(np.max(np.abs(DF - DF.T))),
        "feynman_equals_wightman_off_future": float(np.max(np.abs((DF - W)[off_future]))),
    }
