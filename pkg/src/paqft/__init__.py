"""Perturbative algebraic QFT on a finite 1+1D lattice.

Causal relation algebra, Klein-Gordon propagator kernels, star and
time-ordered products, generalized local S-matrices, and order-by-order
extraction of renormalization maps, with the defining axioms realized as
executable residual checks.
"""

from .lattice import Lattice, LatticePoint, Region, Kernel
from .functionals import HbarScalar, PolyFunctional
from .star_algebra import StarAlgebraContext
from .smatrix_renorm import SMatrix, RenormalizationMap, build_smatrix

__all__ = ["Lattice", "LatticePoint", "Region", "Kernel", "HbarScalar",
           "PolyFunctional", "StarAlgebraContext", "SMatrix",
           "RenormalizationMap", "build_smatrix"]

__version__ = "0.1.0"
