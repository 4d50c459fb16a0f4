import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from gopeps.lattice import (
    Bond,
    LatticeSpec,
    build_bonds,
    classical_energy,
    index_to_spins,
    neel_config,
    spins_to_index,
)


@pytest.mark.parametrize("rows,cols,n_nn,n_nnn", [(2, 2, 4, 2), (4, 4, 24, 18), (4, 6, 38, 30)])
def test_bond_counts(rows, cols, n_nn, n_nnn):
    nn, nnn = build_bonds(LatticeSpec(rows, cols))
    assert (len(nn), len(nnn)) == (n_nn, n_nnn)


@pytest.mark.parametrize("rows,cols", [(2, 2), (3, 4), (4, 6)])
def test_bonds_match_exhaustive_pair_search(rows, cols):
    nn, nnn = build_bonds(LatticeSpec(rows, cols))
    sites = [(r, c) for r in range(rows) for c in range(cols)]
    want_nn, want_nnn = set(), set()
    for a, b in itertools.combinations(sites, 2):
        d = (b[0] - a[0]) ** 2 + (b[1] - a[1]) ** 2
        if d == 1:
            want_nn.add((a, b))
        elif d == 2:
            want_nnn.add((a, b))
    assert {(b.site_a, b.site_b) for b in nn} == want_nn
    assert {(b.site_a, b.site_b) for b in nnn} == want_nnn


def test_bonds_canonical_order():
    nn, nnn = build_bonds(LatticeSpec(3, 3))
    for bonds in (nn, nnn):
        keys = [(b.site_a, b.site_b) for b in bonds]
        assert [k[0] for k in keys] == sorted(k[0] for k in keys)
        assert all(b.site_a < b.site_b for b in bonds)


def test_bonds_reflection_symmetric():
    spec = LatticeSpec(3, 4)
    nn, nnn = build_bonds(spec)
    for flip in (lambda s: (spec.rows - 1 - s[0], s[1]), lambda s: (s[0], spec.cols - 1 - s[1])):
        for bonds in (nn, nnn):
            orig = {frozenset((b.site_a, b.site_b)) for b in bonds}
            assert {frozenset((flip(b.site_a), flip(b.site_b))) for b in bonds} == orig


def test_couplings_carried():
    nn, nnn = build_bonds(LatticeSpec(2, 2, 1.0, 0.5))
    assert all(b.coupling == 1.0 for b in nn)
    assert all(b.coupling == 0.5 for b in nnn)


def test_bond_rejects_equal_sites():
    with pytest.raises(ValueError):
        Bond((0, 0), (0, 0), 1.0)


def test_lattice_needs_two_sites():
    with pytest.raises(ValueError):
        LatticeSpec(1, 1)
    with pytest.raises(ValueError):
        LatticeSpec(0, 4)
    assert LatticeSpec(2, 1).n_sites == 2


def test_neel_examples():
    np.testing.assert_array_equal(neel_config(LatticeSpec(2, 2)), [[1, -1], [-1, 1]])
    cfg = neel_config(LatticeSpec(2, 3))
    np.testing.assert_array_equal(cfg, [[1, -1, 1], [-1, 1, -1]])
    assert cfg.sum() == 0
    with pytest.raises(ValueError):
        neel_config(LatticeSpec(3, 3))


def test_classical_energy_examples():
    spec = LatticeSpec(2, 2)
    neel = neel_config(spec)
    assert classical_energy(spec, neel) == pytest.approx(-1.0)
    assert classical_energy(LatticeSpec(2, 2, 1.0, 1.0), neel) == pytest.approx(-0.5)
    assert classical_energy(spec, np.ones((2, 2))) == pytest.approx(1.0)


def test_classical_energy_shape_mismatch():
    with pytest.raises(ValueError):
        classical_energy(LatticeSpec(2, 2), np.ones((2, 3)))


@settings(max_examples=40, deadline=None)
@given(rows=st.integers(2, 3), cols=st.integers(2, 3), j2=st.floats(-1, 1), data=st.data())
def test_classical_energy_is_diagonal_element(rows, cols, j2, data):
    bits = data.draw(st.lists(st.sampled_from([1, -1]), min_size=rows * cols, max_size=rows * cols))
    spins = np.array(bits).reshape(rows, cols)
    h = oracles.dense_hamiltonian(rows, cols, 1.0, j2)
    k = oracles.config_code(spins)
    assert classical_energy(LatticeSpec(rows, cols, 1.0, j2), spins) == pytest.approx(h[k, k], abs=1e-12)


def test_index_round_trip():
    spins = np.array([[1, -1], [-1, -1]])
    np.testing.assert_array_equal(spins_to_index(spins), [[0, 1], [1, 1]])
    np.testing.assert_array_equal(index_to_spins(spins_to_index(spins)), spins)
