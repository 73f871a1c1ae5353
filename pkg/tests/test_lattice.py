import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from paqft.lattice import (FieldConfiguration, Kernel, Lattice, LatticePoint,
                           field_values, kernel_from_json_dict,
                           kernel_residuals)
from paqft.functionals import PolyFunctional


def test_constructor_validation():
    with pytest.raises(ValueError, match="lattice too small"):
        Lattice(3, 16, 0.5)
    with pytest.raises(ValueError, match="lattice too small"):
        Lattice(12, 2, 0.5)
    with pytest.raises(ValueError, match="mass"):
        Lattice(8, 8, -1.0)


def test_site_indexing_roundtrip(lat):
    for idx in range(lat.n_sites):
        assert lat.site_index(lat.point(idx)) == idx
    with pytest.raises(ValueError):
        lat.site_index(LatticePoint(lat.nt, 0))


def test_causal_cone_geometry(lat):
    p = LatticePoint(4, 5)
    fut = lat.causal_future(p)
    for q in fut:
        assert q.t >= p.t and lat.torus_dist(q.x, p.x) <= q.t - p.t
    assert p in fut  # reflexive
    assert LatticePoint(5, 5) in fut and LatticePoint(5, 6) in fut
    assert LatticePoint(5, 7) not in fut


def test_not_later_than_and_spacelike(lat):
    early = {LatticePoint(1, 0)}
    late = {LatticePoint(8, 0)}
    side = {LatticePoint(1, 8)}
    assert lat.not_later_than(early, late)
    assert not lat.not_later_than(late, early)
    assert lat.spacelike(early, side)
    # overlap is never "not later": points lie in their own future
    assert not lat.not_later_than(early, early)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 15), st.integers(0, 15), st.integers(0, 15))
def test_torus_dist_metric(a, b, c):
    lat = Lattice(4, 16, 0.5)
    assert lat.torus_dist(a, b) == lat.torus_dist(b, a)
    assert lat.torus_dist(a, a) == 0
    assert lat.torus_dist(a, c) <= lat.torus_dist(a, b) + lat.torus_dist(b, c)


def test_green_identities_and_cone_support():
    lat = Lattice(8, 8, 0.7)
    res = kernel_residuals(lat)
    assert res["green_retarded_identity"] < 1e-10
    assert res["green_advanced_identity"] < 1e-10
    assert res["reciprocity"] == 0.0
    assert res["cone_support_violations"] == 0


def test_pauli_jordan_antisymmetric_and_spacelike_zero(lat):
    D = lat.pauli_jordan().entries
    assert np.max(np.abs(D + D.T)) == 0.0
    a = lat.site_index(LatticePoint(3, 2))
    b = lat.site_index(LatticePoint(3, 10))  # spacelike separated
    assert D[a, b] == 0.0


def test_hadamard_conditions(lat):
    res = kernel_residuals(lat)
    assert res["H1_imaginary_part"] == 0.0
    assert res["H2_interior_H"] < 1e-10
    assert res["H2_interior_W"] < 1e-10
    assert res["H3_gram_min_eigenvalue"] > -1e-10


def test_feynman_equals_wightman_off_future(lat):
    res = kernel_residuals(lat)
    assert res["feynman_symmetry"] == 0.0
    assert res["feynman_equals_wightman_off_future"] == 0.0


def test_mode_classification(lat):
    rep = lat.hadamard_mode_classification()
    assert not rep["excluded"]
    assert sorted(rep["stable"] + rep["unstable"]) == list(range(lat.nx))
    rep0 = Lattice(6, 8, 0.0).hadamard_mode_classification()
    kinds = dict(rep0["excluded"])
    assert kinds[0] == "zero-mode"
    assert kinds[4] == "edge-mode"


def test_zero_mass_warns():
    with pytest.warns(RuntimeWarning) as rec:
        Lattice(6, 8, 0.0).hadamard_kernel()
    assert any("zero mode" in str(w.message) for w in rec)


def test_field_values_shapes(lat):
    grid = np.arange(lat.n_sites, dtype=float).reshape(lat.nt, lat.nx)
    flat = field_values(lat, grid)
    assert flat[lat.site_index(LatticePoint(1, 2))] == grid[1, 2]
    assert np.array_equal(field_values(lat, flat), flat)
    with pytest.raises(ValueError, match="field shape"):
        field_values(lat, np.zeros(7))


def test_kernel_json_roundtrip():
    lat = Lattice(4, 4, 1.0)
    K = lat.wightman()
    K2 = kernel_from_json_dict(K.to_json_dict())
    assert K2.kind == "wightman"
    assert np.allclose(K2.entries, K.entries, atol=0, rtol=0)


def test_kernel_validation(lat):
    with pytest.raises(ValueError, match="kernel shape"):
        Kernel("bad", lat, np.zeros((3, 3)))
    bad = np.full((lat.n_sites, lat.n_sites), np.nan)
    with pytest.raises(ValueError, match="non-finite"):
        Kernel("bad", lat, bad)


def test_poisson_bracket_is_pauli_jordan(lat):
    a, b = LatticePoint(4, 3), LatticePoint(6, 3)
    fa = PolyFunctional.field_at(lat, a)
    fb = PolyFunctional.field_at(lat, b)
    phi = np.zeros(lat.n_sites)
    val = lat.poisson_bracket(fa, fb, phi).at(0)
    assert val == pytest.approx(complex(lat.pauli_jordan().entry(a, b)),
                                abs=1e-14)


def test_retarded_propagation_matches_wave_solution():
    # source at one site: P u = delta  =>  u = Delta^R delta, supported in
    # the forward cone and solving the leapfrog recursion there
    lat = Lattice(8, 8, 0.5)
    R = lat.green_retarded().entries
    src = lat.site_index(LatticePoint(2, 4))
    u = R[:, src]
    Pu = lat.klein_gordon_apply(u)
    interior = lat.interior_mask()
    target = np.zeros(lat.n_sites)
    target[src] = 1.0
    assert np.max(np.abs((Pu - target)[interior])) < 1e-12
