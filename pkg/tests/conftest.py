import numpy as np
import pytest

from paqft.lattice import Lattice
from paqft.smatrix_renorm import build_smatrix
from paqft.star_algebra import StarAlgebraContext


@pytest.fixture(scope="session")
def lat():
    return Lattice(12, 16, 0.5)


@pytest.fixture(scope="session")
def ctx(lat):
    return StarAlgebraContext.default(lat)


@pytest.fixture(scope="session")
def S(ctx):
    from paqft.smatrix_renorm import SMatrix
    return SMatrix.standard(ctx)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240815)
