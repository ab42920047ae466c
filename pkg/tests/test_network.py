import itertools

import numpy as np
import pytest

from hgnet.core import GraphTopology, PhaseState, chain_topology, state_from_nodes
from hgnet.invariance import encode_invariant, encode_states
from hgnet.network import (
    LayerParams,
    ModelDims,
    ModelParams,
    edge_features,
    forward,
    forward_batch,
    global_features,
    node_features,
    softplus,
)


def make_params(dims, rng=None, scale=1.0):
    rng = np.random.default_rng(0) if rng is None else rng
    return ModelParams(
        dims=dims,
        node_enc=LayerParams(scale * rng.standard_normal((dims.d_h, dims.d_v)),
                             scale * rng.standard_normal(dims.d_h)),
        edge_enc=LayerParams(scale * rng.standard_normal((dims.d_h, dims.d_e)),
                             scale * rng.standard_normal(dims.d_h)),
        msg_enc=LayerParams(scale * rng.standard_normal((dims.d_m, 2 * dims.d_h)),
                            scale * rng.standard_normal(dims.d_m)),
        readout_w=rng.standard_normal(dims.d_l),
        readout_b=rng.standard_normal(),
    )


def zero_params(dims, readout_b=0.0):
    return ModelParams(
        dims=dims,
        node_enc=LayerParams(np.zeros((dims.d_h, dims.d_v)), np.zeros(dims.d_h)),
        edge_enc=LayerParams(np.zeros((dims.d_h, dims.d_e)), np.zeros(dims.d_h)),
        msg_enc=LayerParams(np.zeros((dims.d_m, 2 * dims.d_h)), np.zeros(dims.d_m)),
        readout_w=np.zeros(dims.d_l),
        readout_b=readout_b,
    )


def random_state(rng, n, dim):
    return state_from_nodes(rng.uniform(-1, 1, (n, dim)),
                            rng.uniform(-1, 1, (n, dim)))


def test_softplus_stable_at_extremes():
    assert softplus(np.array([1000.0]))[0] == 1000.0
    assert softplus(np.array([-1000.0]))[0] == 0.0
    assert abs(softplus(np.array([0.0]))[0] - np.log(2.0)) < 1e-15


def test_model_dims_invariants():
    dims = ModelDims.from_widths(3, 48, 384)
    assert dims.d_m == 336 and dims.d_l == 384
    assert dims.d_v == 6 and dims.d_e == 4
    with pytest.raises(ValueError):
        ModelDims.from_widths(2, 64, 64)  # d_m would be 0
    with pytest.raises(ValueError):
        ModelDims(dim=2, d_h=4, d_m=0)


def test_node_features_concatenation():
    topo = chain_topology(2, dim=2)
    state = state_from_nodes([[1.0, 0.0], [-1.0, 0.0]], [[0.0, 2.0], [0.0, -2.0]])
    inv = encode_invariant(state, topo)
    v = node_features(inv)
    assert v.shape == (2, 4)
    assert np.allclose(v[:, :2], inv.q_nodes(2))
    assert np.allclose(v[:, 2:], inv.p_nodes(2))


def test_node_features_zero_state():
    topo = chain_topology(3, dim=2)
    inv = encode_invariant(PhaseState(np.zeros(6), np.zeros(6)), topo)
    assert np.allclose(node_features(inv), 0.0)


def test_node_features_d3_width():
    topo = chain_topology(2, dim=3)
    inv = encode_invariant(random_state(np.random.default_rng(1), 2, 3), topo)
    assert node_features(inv).shape == (2, 6)


def test_edge_features_three_four_five():
    # invariant coords fed directly: build a fake InvariantState via identity frame
    from hgnet.invariance import InvariantFrame, InvariantState
    frame = InvariantFrame(np.zeros(2), np.eye(2), (), False, True)
    inv = InvariantState(np.array([0.0, 0.0, 3.0, 4.0]), np.zeros(4), frame)
    topo = chain_topology(2, dim=2)
    e = edge_features(inv, topo)
    assert np.allclose(e, [[3.0, 4.0, 5.0]])


def test_edge_features_coincident_nodes():
    from hgnet.invariance import InvariantFrame, InvariantState
    frame = InvariantFrame(np.zeros(2), np.eye(2), (), False, True)
    inv = InvariantState(np.zeros(4), np.zeros(4), frame)
    e = edge_features(inv, chain_topology(2, dim=2))
    assert np.allclose(e, 0.0)


def test_forward_constant_network():
    dims = ModelDims(dim=2, d_h=3, d_m=2)
    params = zero_params(dims, readout_b=1.25)
    topo = chain_topology(3, dim=2)
    state = random_state(np.random.default_rng(2), 3, 2)
    h, cache = forward(params, topo, state)
    assert h == 1.25
    # softplus(0) everywhere: node block sums to N*ln2, messages deg*ln2
    assert np.allclose(cache.h_node, np.log(2.0))


def test_forward_single_node_empty_messages():
    dims = ModelDims(dim=2, d_h=3, d_m=2)
    params = make_params(dims)
    topo = chain_topology(1, dim=2)
    state = PhaseState([0.5, -0.5], [1.0, 2.0])
    h, cache = forward(params, topo, state)
    assert cache.m.shape == (1, 1, 2)
    assert np.allclose(cache.m, 0.0)
    assert np.allclose(cache.h_global[0, dims.d_h:], 0.0)
    assert np.isfinite(h)


def test_forward_permutation_invariance_bruteforce():
    dims = ModelDims(dim=2, d_h=5, d_m=3)
    params = make_params(dims, np.random.default_rng(3))
    rng = np.random.default_rng(4)
    # all relabelings of a 3-node path graph 0-1-2
    base_edges = [(0, 1), (1, 2)]
    state = random_state(rng, 3, 2)
    topo = GraphTopology(3, 2, ((1, 0), (2, 1)), kind="custom")
    h0, _ = forward(params, topo, state)
    for perm in itertools.permutations(range(3)):
        edges = []
        for a, b in base_edges:
            i, j = perm[a], perm[b]
            edges.append((max(i, j), min(i, j)))
        ptopo = GraphTopology(3, 2, tuple(sorted(edges, reverse=True)), kind="custom")
        q = np.empty_like(state.q_nodes(2))
        p = np.empty_like(state.p_nodes(2))
        for old, new in enumerate(perm):
            q[new] = state.q_nodes(2)[old]
            p[new] = state.p_nodes(2)[old]
        h, _ = forward(params, ptopo, state_from_nodes(q, p))
        assert abs(h - h0) <= 1e-12 * (1.0 + abs(h0))


def test_global_features_match_forward():
    dims = ModelDims(dim=3, d_h=4, d_m=3)
    params = make_params(dims, np.random.default_rng(5))
    topo = chain_topology(4, dim=3)
    rng = np.random.default_rng(6)
    for _ in range(20):
        state = random_state(rng, 4, 3)
        h, _ = forward(params, topo, state)
        phi = global_features(params, topo, state)
        assert abs(h - (params.readout_w @ phi + params.readout_b)) < 1e-12


def test_duplicated_component_doubles_pooled_features():
    # two disconnected copies of the same 3-node chain at identical coords
    dims = ModelDims(dim=2, d_h=4, d_m=3)
    params = make_params(dims, np.random.default_rng(7))
    single = GraphTopology(3, 2, ((1, 0), (2, 1)), kind="custom")
    double = GraphTopology(6, 2, ((1, 0), (2, 1), (4, 3), (5, 4)), kind="custom")
    rng = np.random.default_rng(8)
    q = rng.uniform(-1, 1, (3, 2))
    p = rng.uniform(-1, 1, (3, 2))
    state1 = state_from_nodes(q, p)
    state2 = state_from_nodes(np.vstack([q, q]), np.vstack([p, p]))
    phi1 = global_features(params, single, state1)
    phi2 = global_features(params, double, state2)
    assert np.allclose(phi2, 2.0 * phi1, rtol=1e-12, atol=1e-12)


def test_network_extensivity_at_fixed_encoding():
    # at the message-passing level (bypassing the frame), a disjoint union's
    # pooled features are exactly the sum of its components'
    dims = ModelDims(dim=2, d_h=4, d_m=3)
    params = make_params(dims, np.random.default_rng(9))
    rng = np.random.default_rng(10)
    comp_a = GraphTopology(3, 2, ((1, 0), (2, 1)), kind="custom")
    comp_b = GraphTopology(2, 2, ((1, 0),), kind="custom")
    union = GraphTopology(5, 2, ((1, 0), (2, 1), (4, 3)), kind="custom")

    def encoded(qs, ps):
        enc = encode_states(qs, ps)
        enc.qbar = qs.copy()  # pretend coordinates are already invariant
        enc.pbar = ps.copy()
        return enc

    qa, pa = rng.uniform(-1, 1, (2, 1, 3, 2))
    qb, pb = rng.uniform(-1, 1, (2, 1, 2, 2))
    ha = forward_batch(params, comp_a, encoded(qa, pa)).h_global
    hb = forward_batch(params, comp_b, encoded(qb, pb)).h_global
    hu = forward_batch(params, union, encoded(
        np.concatenate([qa, qb], axis=1), np.concatenate([pa, pb], axis=1))).h_global
    assert np.allclose(hu, ha + hb, rtol=1e-12, atol=1e-14)


def test_softplus_positivity_throughout():
    dims = ModelDims(dim=2, d_h=6, d_m=4)
    params = make_params(dims, np.random.default_rng(11), scale=2.0)
    topo = chain_topology(5, dim=2)
    rng = np.random.default_rng(12)
    for _ in range(20):
        _, cache = forward(params, topo, random_state(rng, 5, 2))
        assert np.all(cache.h_node > 0)
        assert np.all(cache.h_edge > 0)
        assert np.all(cache.h_msg > 0)


def test_forward_invariance_full_suite():
    # composed invariance: permutation + translation + branch-stable rotation
    dims = ModelDims(dim=2, d_h=5, d_m=4)
    params = make_params(dims, np.random.default_rng(13))
    topo = chain_topology(5, dim=2)
    rng = np.random.default_rng(14)
    checked = 0
    while checked < 100:
        state = random_state(rng, 5, 2)
        h0, cache0 = forward(params, topo, state)
        angle = rng.uniform(0, 2 * np.pi)
        c, s = np.cos(angle), np.sin(angle)
        rot = np.array([[c, -s], [s, c]])
        shift = rng.uniform(-3, 3, 2)
        q2 = state.q_nodes(2) @ rot.T + shift
        p2 = state.p_nodes(2) @ rot.T
        h1, cache1 = forward(params, topo, state_from_nodes(q2, p2))
        f0, f1 = cache0.enc, cache1.enc
        if (tuple(f0.ref_idx[0]) != tuple(f1.ref_idx[0])
                or f0.colinear[0] != f1.colinear[0] or f0.degenerate[0]):
            continue
        assert abs(h1 - h0) <= 1e-9 * (1.0 + abs(h0))
        checked += 1


def test_dimension_mismatch_raises_before_arithmetic():
    dims = ModelDims(dim=2, d_h=3, d_m=2)
    params = make_params(dims)
    topo = chain_topology(3, dim=3)
    with pytest.raises(ValueError, match="dim"):
        forward(params, topo, random_state(np.random.default_rng(15), 3, 3))


def test_model_params_shape_validation():
    dims = ModelDims(dim=2, d_h=3, d_m=2)
    good = make_params(dims)
    with pytest.raises(ValueError):
        ModelParams(dims=dims, node_enc=good.edge_enc, edge_enc=good.edge_enc,
                    msg_enc=good.msg_enc, readout_w=np.zeros(dims.d_l))
    with pytest.raises(ValueError):
        LayerParams(np.array([[np.nan]]), np.array([0.0]))
