"""Graph network forward pass: encoders, message passing, pooling, readout.

The scalar output approximates the total energy of the system. Node and
edge features are built from the invariant coordinates, passed through
three dense layers (node, edge, message), summed per node and globally,
and mapped to a scalar by a linear readout. One round of bidirectional
message passing is used; edge encodings are computed once per undirected
edge and shared by both directions.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.special import expit

from .core import GraphTopology, PhaseState
from .invariance import (
    DEFAULT_CONFIG,
    EncodedBatch,
    InvarianceConfig,
    InvariantState,
    encode_states,
)

ACTIVATIONS = ("softplus",)


def softplus(x: np.ndarray) -> np.ndarray:
    """ln(1 + e^x) in overflow-safe form."""
    return np.logaddexp(0.0, x)


def softplus_deriv(x: np.ndarray) -> np.ndarray:
    """Logistic sigmoid, the derivative of softplus."""
    return expit(x)


@dataclass(frozen=True)
class LayerParams:
    """Dense layer weights (out x in) and bias (out)."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.array(self.weight, dtype=np.float64, copy=True)
        b = np.array(self.bias, dtype=np.float64, copy=True)
        if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
            raise ValueError(
                f"inconsistent layer shapes: weight {w.shape}, bias {b.shape}"
            )
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("layer parameters must be finite")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]


@dataclass(frozen=True)
class ModelDims:
    """Width bookkeeping: d_v = 2d, d_e = d+1, d_l = d_h + d_m."""

    dim: int
    d_h: int
    d_m: int

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if self.d_h < 1 or self.d_m < 1:
            raise ValueError("encoder and message widths must be >= 1")

    @property
    def d_v(self) -> int:
        return 2 * self.dim

    @property
    def d_e(self) -> int:
        return self.dim + 1

    @property
    def d_l(self) -> int:
        return self.d_h + self.d_m

    @classmethod
    def from_widths(cls, dim: int, d_h: int, d_l: int) -> "ModelDims":
        """Build from encoder width and total network width."""
        d_m = d_l - d_h
        if d_m < 1:
            raise ValueError(
                f"network width d_l={d_l} must exceed encoder width d_h={d_h}"
            )
        return cls(dim=dim, d_h=d_h, d_m=d_m)


@dataclass(frozen=True)
class ModelParams:
    """All network parameters: three sampled dense layers plus the readout."""

    dims: ModelDims
    node_enc: LayerParams
    edge_enc: LayerParams
    msg_enc: LayerParams
    readout_w: np.ndarray
    readout_b: float = 0.0
    activation: str = "softplus"

    def __post_init__(self):
        d = self.dims
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unsupported activation {self.activation!r}")
        if self.node_enc.weight.shape != (d.d_h, d.d_v):
            raise ValueError(
                f"node encoder shape {self.node_enc.weight.shape} != ({d.d_h}, {d.d_v})"
            )
        if self.edge_enc.weight.shape != (d.d_h, d.d_e):
            raise ValueError(
                f"edge encoder shape {self.edge_enc.weight.shape} != ({d.d_h}, {d.d_e})"
            )
        if self.msg_enc.weight.shape != (d.d_m, 2 * d.d_h):
            raise ValueError(
                f"message encoder shape {self.msg_enc.weight.shape} != ({d.d_m}, {2 * d.d_h})"
            )
        w = np.array(self.readout_w, dtype=np.float64, copy=True).reshape(-1)
        if w.shape != (d.d_l,):
            raise ValueError(f"readout width {w.shape} != ({d.d_l},)")
        w.setflags(write=False)
        object.__setattr__(self, "readout_w", w)
        object.__setattr__(self, "readout_b", float(self.readout_b))

    def with_readout(self, weight: np.ndarray, bias: float) -> "ModelParams":
        return replace(self, readout_w=weight, readout_b=bias)


class _SegmentPlan:
    """Precomputed order/offsets for summing edge values per node."""

    def __init__(self, targets: np.ndarray, n_segments: int):
        targets = np.asarray(targets, dtype=np.intp)
        self.n_segments = n_segments
        self.size = targets.size
        self.order = np.argsort(targets, kind="stable")
        sorted_targets = targets[self.order]
        starts = np.searchsorted(sorted_targets, np.arange(n_segments))
        self.empty = np.bincount(targets, minlength=n_segments) == 0
        # reduceat needs indices < len; empty tail segments are zeroed below.
        self.starts = np.minimum(starts, max(self.size - 1, 0))

    def sum(self, values: np.ndarray) -> np.ndarray:
        """Sum (S, K, ...) values into (S, n_segments, ...) per target."""
        lead = values.shape[0]
        tail = values.shape[2:]
        if self.size == 0:
            return np.zeros((lead, self.n_segments) + tail)
        flat = values.reshape(lead, self.size, -1)
        out = np.add.reduceat(flat[:, self.order], self.starts, axis=1)
        out[:, self.empty] = 0.0
        return out.reshape(lead, self.n_segments, *tail)


class _GraphPlan:
    """Directed-edge index arrays shared by forward and gradient passes."""

    def __init__(self, topo: GraphTopology):
        ei, ej = topo.edge_index
        self.ei = ei
        self.ej = ej
        self.n_nodes = topo.n_nodes
        self.n_edges = ei.size
        # Both directions share the undirected edge encoding.
        self.src = np.concatenate([ei, ej])
        self.dst = np.concatenate([ej, ei])
        self.by_dst = _SegmentPlan(self.dst, topo.n_nodes)
        self.by_src = _SegmentPlan(self.src, topo.n_nodes)
        self.by_ei = _SegmentPlan(ei, topo.n_nodes)
        self.by_ej = _SegmentPlan(ej, topo.n_nodes)


@lru_cache(maxsize=128)
def _graph_plan(topo: GraphTopology) -> _GraphPlan:
    return _GraphPlan(topo)


@dataclass
class ForwardCache:
    """All intermediates of one forward pass (leading sample axis S).

    Field map: ``v`` node features, ``h_node`` h^V, ``e_feat`` e_ij,
    ``h_edge`` h^E, ``h_msg`` per-direction h^M, ``m`` aggregated messages,
    ``h_global`` h_G, ``energy`` the scalar output; ``z_*`` hold the dense
    pre-activations. ``edge_sign`` records the geometric orientation each
    undirected edge was evaluated with.
    """

    enc: EncodedBatch
    v: np.ndarray
    z_node: np.ndarray
    h_node: np.ndarray
    edge_vec: np.ndarray
    edge_norm: np.ndarray
    edge_sign: np.ndarray
    e_feat: np.ndarray
    z_edge: np.ndarray
    h_edge: np.ndarray
    z_msg: np.ndarray
    h_msg: np.ndarray
    m: np.ndarray
    h_global: np.ndarray
    energy: np.ndarray


def oriented_edge_features(qbar: np.ndarray, ei: np.ndarray, ej: np.ndarray):
    """Displacement-plus-norm features with a label-free orientation.

    Each undirected edge is evaluated once, pointing from its higher-norm
    endpoint to its lower-norm endpoint (exact norm ties keep the stored
    i-to-j order). Node norms are unchanged by relabelling, rotation and
    centring, so the feature set is permutation invariant, which an
    index-based orientation is not. Returns (e_feat, edge_vec, norm, sign)
    with shapes (S, E, d+1), (S, E, d), (S, E), (S, E).
    """
    diff = qbar[:, ei] - qbar[:, ej]
    norm_i = np.linalg.norm(qbar[:, ei], axis=2)
    norm_j = np.linalg.norm(qbar[:, ej], axis=2)
    sign = np.where(norm_j > norm_i, -1.0, 1.0)
    edge_vec = sign[..., None] * diff
    edge_norm = np.linalg.norm(edge_vec, axis=2)
    e_feat = np.concatenate([edge_vec, edge_norm[..., None]], axis=2)
    return e_feat, edge_vec, edge_norm, sign


def _check_compat(params: ModelParams, topo: GraphTopology) -> None:
    if params.dims.dim != topo.spatial_dim:
        raise ValueError(
            f"model dim {params.dims.dim} != topology dim {topo.spatial_dim}"
        )


def forward_batch(params: ModelParams, topo: GraphTopology,
                  enc: EncodedBatch) -> ForwardCache:
    """Evaluate the network on an encoded batch of states."""
    _check_compat(params, topo)
    plan = _graph_plan(topo)
    d = params.dims
    s_count = enc.n_samples

    v = np.concatenate([enc.qbar, enc.pbar], axis=2)
    z_node = v @ params.node_enc.weight.T + params.node_enc.bias
    h_node = softplus(z_node)

    n_edges = plan.n_edges
    if n_edges:
        e_feat, edge_vec, edge_norm, edge_sign = oriented_edge_features(
            enc.qbar, plan.ei, plan.ej)
        z_edge = e_feat @ params.edge_enc.weight.T + params.edge_enc.bias
        h_edge = softplus(z_edge)
        eid = np.concatenate([np.arange(n_edges), np.arange(n_edges)])
        msg_in = np.concatenate([h_node[:, plan.src], h_edge[:, eid]], axis=2)
        z_msg = msg_in @ params.msg_enc.weight.T + params.msg_enc.bias
        h_msg = softplus(z_msg)
        m = plan.by_dst.sum(h_msg)
    else:
        edge_vec = np.zeros((s_count, 0, d.dim))
        edge_norm = np.zeros((s_count, 0))
        edge_sign = np.zeros((s_count, 0))
        e_feat = np.zeros((s_count, 0, d.d_e))
        z_edge = np.zeros((s_count, 0, d.d_h))
        h_edge = z_edge
        z_msg = np.zeros((s_count, 0, d.d_m))
        h_msg = z_msg
        m = np.zeros((s_count, plan.n_nodes, d.d_m))

    h_global = np.concatenate([h_node.sum(axis=1), m.sum(axis=1)], axis=1)
    energy = h_global @ params.readout_w + params.readout_b

    return ForwardCache(
        enc=enc, v=v, z_node=z_node, h_node=h_node,
        edge_vec=edge_vec, edge_norm=edge_norm, edge_sign=edge_sign,
        e_feat=e_feat, z_edge=z_edge, h_edge=h_edge, z_msg=z_msg,
        h_msg=h_msg, m=m, h_global=h_global, energy=energy,
    )


def encode_and_forward(params: ModelParams, topo: GraphTopology,
                       qs: np.ndarray, ps: np.ndarray,
                       cfg: InvarianceConfig = DEFAULT_CONFIG) -> ForwardCache:
    """Encode (S, N, d) state arrays and run the forward pass."""
    enc = encode_states(qs, ps, cfg)
    return forward_batch(params, topo, enc)


def node_features(inv: InvariantState) -> np.ndarray:
    """Per-node features [q_bar_i; p_bar_i], shaped (N, 2d)."""
    dim = inv.frame.basis.shape[0]
    return np.concatenate([inv.q_nodes(dim), inv.p_nodes(dim)], axis=1)


def edge_features(inv: InvariantState, topo: GraphTopology) -> np.ndarray:
    """Per-edge features [displacement; norm], shaped (E, d+1).

    Computed once per undirected edge and reused for both directions, with
    the displacement oriented from the higher-norm to the lower-norm
    endpoint (see :func:`oriented_edge_features`).
    """
    dim = topo.spatial_dim
    ei, ej = topo.edge_index
    e_feat, _, _, _ = oriented_edge_features(inv.q_nodes(dim)[None], ei, ej)
    return e_feat[0]


def forward(params: ModelParams, topo: GraphTopology,
            state: PhaseState,
            cfg: InvarianceConfig = DEFAULT_CONFIG) -> tuple[float, ForwardCache]:
    """Scalar energy prediction for a single state, with all intermediates."""
    d = topo.spatial_dim
    cache = encode_and_forward(params, topo, state.q_nodes(d)[None],
                               state.p_nodes(d)[None], cfg)
    return float(cache.energy[0]), cache


def global_features(params: ModelParams, topo: GraphTopology,
                    state: PhaseState,
                    cfg: InvarianceConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Pooled graph feature vector h_G (length d_l), before the readout."""
    d = topo.spatial_dim
    cache = encode_and_forward(params, topo, state.q_nodes(d)[None],
                               state.p_nodes(d)[None], cfg)
    return cache.h_global[0]
