import numpy as np
import pytest

from hgnet.core import (
    Dataset,
    GraphTopology,
    PhaseState,
    Sample,
    build_topology,
    chain_topology,
    lattice_topology,
    ring_topology,
    state_from_nodes,
    state_from_vector,
    validate_dataset,
)


def test_chain_two_nodes_single_spring():
    topo = chain_topology(2, dim=2)
    assert topo.edges == ((1, 0),)


def test_ring_three_nodes_closed_loop():
    topo = ring_topology(3, dim=2)
    assert topo.edges == ((1, 0), (2, 1), (2, 0))


def test_lattice_3x3_edge_count():
    # nx*(ny-1) + ny*(nx-1) = 3*2 + 3*2
    topo = lattice_topology(3, 3, dim=3)
    assert topo.n_edges == 12


@pytest.mark.parametrize("n,expected", [(2, 1), (5, 4), (9, 8)])
def test_chain_edge_count(n, expected):
    assert chain_topology(n).n_edges == expected


def test_ring_edge_count_equals_nodes():
    assert ring_topology(6).n_edges == 6


def test_edges_canonical_orientation():
    for topo in (chain_topology(5), ring_topology(5), lattice_topology(3, 4)):
        for i, j in topo.edges:
            assert 0 <= j < i < topo.n_nodes


def test_adjacency_symmetric():
    topo = lattice_topology(2, 3)
    a = topo.adjacency()
    assert np.array_equal(a, a.T)
    assert a.sum() == 2 * topo.n_edges


def test_topology_rejects_bad_inputs():
    with pytest.raises(ValueError):
        GraphTopology(0, 2, ())
    with pytest.raises(ValueError):
        GraphTopology(3, 4, ())
    with pytest.raises(ValueError):
        GraphTopology(3, 2, ((0, 1),))  # wrong orientation
    with pytest.raises(ValueError):
        GraphTopology(3, 2, ((1, 1),))  # self loop
    with pytest.raises(ValueError):
        GraphTopology(3, 2, ((2, 0), (2, 0)))  # duplicate
    with pytest.raises(ValueError):
        build_topology("moebius", n=3)


def test_topology_constructors_deterministic():
    a = lattice_topology(4, 5, dim=3)
    b = lattice_topology(4, 5, dim=3)
    assert a.edges == b.edges
    assert a == b


def test_phase_state_roundtrip():
    rng = np.random.default_rng(0)
    for dim in (1, 2, 3):
        q = rng.standard_normal(4 * dim)
        p = rng.standard_normal(4 * dim)
        state = PhaseState(q, p)
        rebuilt = state_from_nodes(state.q_nodes(dim), state.p_nodes(dim))
        assert np.array_equal(rebuilt.q, state.q)
        assert np.array_equal(rebuilt.p, state.p)
        via_vec = state_from_vector(state.vector())
        assert np.array_equal(via_vec.q, state.q)
        assert np.array_equal(via_vec.p, state.p)


def test_phase_state_node_major_layout():
    state = PhaseState([0.0, 1.0, 2.0, 3.0], [4.0, 5.0, 6.0, 7.0])
    nodes = state.q_nodes(2)
    assert np.array_equal(nodes[0], [0.0, 1.0])
    assert np.array_equal(nodes[1], [2.0, 3.0])


def test_phase_state_rejects_mismatched_lengths():
    with pytest.raises(ValueError):
        PhaseState([0.0, 1.0], [0.0])


def test_phase_state_immutable():
    state = PhaseState([1.0, 2.0], [3.0, 4.0])
    with pytest.raises(ValueError):
        state.q[0] = 9.0


def _chain_dataset():
    topo = chain_topology(2, dim=2)
    state = PhaseState([0.0, 0.0, 1.0, 0.0], [0.0] * 4)
    deriv = PhaseState([0.0] * 4, [0.0] * 4)
    sample = Sample(state=state, deriv=deriv)
    return Dataset(topology=topo, samples=(sample,), anchor=(state, 0.5))


def test_validate_wellformed_dataset_empty_report():
    assert validate_dataset(_chain_dataset()) == []


def test_validate_flags_nan_momentum():
    topo = chain_topology(2, dim=2)
    bad = Sample(state=PhaseState([0.0] * 4, [np.nan, 0.0, 0.0, 0.0]))
    good = _chain_dataset().samples[0]
    ds = Dataset(topology=topo, samples=(good, bad), anchor=(good.state, 0.5))
    report = validate_dataset(ds)
    assert len(report) == 1
    assert "sample 1" in report[0] and "momentum" in report[0]


def test_validate_flags_deriv_length_mismatch():
    topo = chain_topology(2, dim=2)
    state = PhaseState([0.0] * 4, [0.0] * 4)
    bad = Sample(state=state, deriv=PhaseState([0.0] * 2, [0.0] * 2))
    ds = Dataset(topology=topo, samples=(bad,), anchor=(state, 0.0))
    report = validate_dataset(ds)
    assert len(report) == 1
    assert "deriv length" in report[0]


def test_validate_flags_bad_anchor():
    topo = chain_topology(2, dim=2)
    state = PhaseState([0.0] * 4, [0.0] * 4)
    ds = Dataset(topology=topo, samples=(Sample(state=state),),
                 anchor=(state, np.inf))
    assert any("anchor" in line for line in validate_dataset(ds))
