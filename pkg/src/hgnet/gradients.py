"""Exact derivatives of the network output with respect to raw inputs.

Differentiation goes through the full pipeline, including the mean
centering and the basis's dependence on the reference positions; the
discrete choices (reference indices, colinearity branch) are held fixed.

Two routes are provided and must agree to machine precision:

* ``vjp_batch`` propagates an arbitrary cotangent seed backwards through
  the network (one sweep per seed column); seeding with the readout
  weights yields the energy gradient at O(1) memory per sample.
* ``jacobian_batch`` produces the full feature Jacobian with the per-seed
  sweeps contracted analytically, which is far cheaper when all output
  channels are needed (training-system assembly).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import GraphTopology, PhaseState
from .invariance import DEFAULT_CONFIG, InvarianceConfig, pullback_to_raw
from .network import (
    ForwardCache,
    ModelParams,
    _graph_plan,
    encode_and_forward,
    forward,
    softplus_deriv,
)

# Soft cap on scratch memory for blocked batch evaluation.
_BLOCK_BUDGET_BYTES = 256 * 1024 * 1024


def _unit_edge_vectors(cache: ForwardCache) -> np.ndarray:
    """Edge directions u/|u|; zero where endpoints coincide (subgradient)."""
    unit = np.zeros_like(cache.edge_vec)
    nz = cache.edge_norm > 0.0
    unit[nz] = cache.edge_vec[nz] / cache.edge_norm[nz][:, None]
    return unit


def vjp_batch(params: ModelParams, topo: GraphTopology, cache: ForwardCache,
              seed: np.ndarray) -> np.ndarray:
    """Pull a (d_l, C) cotangent seed on h_G back to the raw (q, p) inputs.

    Returns (S, 2*d*N, C) with q-coordinate rows first (node-major).
    """
    plan = _graph_plan(topo)
    d = params.dims
    enc = cache.enc
    s_count, n_nodes = enc.qbar.shape[0], enc.qbar.shape[1]
    n_edges = plan.n_edges

    seed = np.asarray(seed, dtype=np.float64)
    if seed.ndim == 1:
        seed = seed[:, None]
    if seed.shape[0] != d.d_l:
        raise ValueError(f"seed rows {seed.shape[0]} != d_l {d.d_l}")
    n_chan = seed.shape[1]

    cot_h_node = np.broadcast_to(
        seed[:d.d_h], (s_count, n_nodes, d.d_h, n_chan)).copy()

    cot_h_edge = None
    if n_edges:
        gm = softplus_deriv(cache.z_msg)
        cot_z_msg = gm[..., None] * seed[None, None, d.d_h:]
        cot_msg_in = np.einsum("rk,serc->sekc", params.msg_enc.weight,
                               cot_z_msg, optimize=True)
        cot_h_node += plan.by_src.sum(cot_msg_in[:, :, :d.d_h])
        cot_h_edge = (cot_msg_in[:, :n_edges, d.d_h:]
                      + cot_msg_in[:, n_edges:, d.d_h:])

    gv = softplus_deriv(cache.z_node)
    cot_z_node = gv[..., None] * cot_h_node
    cot_v = np.einsum("rk,snrc->snkc", params.node_enc.weight,
                      cot_z_node, optimize=True)
    cot_qbar = np.ascontiguousarray(cot_v[:, :, :d.dim])
    cot_pbar = cot_v[:, :, d.dim:]

    if n_edges:
        ge = softplus_deriv(cache.z_edge)
        cot_z_edge = ge[..., None] * cot_h_edge
        cot_e = np.einsum("rk,serc->sekc", params.edge_enc.weight,
                          cot_z_edge, optimize=True)
        unit = _unit_edge_vectors(cache)
        cot_u = cot_e[:, :, :d.dim] + unit[..., None] * cot_e[:, :, d.dim:]
        # the geometric orientation is a frozen discrete choice
        cot_u = cot_u * cache.edge_sign[:, :, None, None]
        cot_qbar += plan.by_ei.sum(cot_u)
        cot_qbar -= plan.by_ej.sum(cot_u)

    cot_q, cot_p = pullback_to_raw(enc, cot_qbar, cot_pbar)
    dn = n_nodes * d.dim
    return np.concatenate(
        [cot_q.reshape(s_count, dn, n_chan), cot_p.reshape(s_count, dn, n_chan)],
        axis=1)


def jacobian_batch(params: ModelParams, topo: GraphTopology,
                   cache: ForwardCache) -> np.ndarray:
    """Full Jacobian of the pooled features: (S, 2*d*N, d_l).

    Row ordering matches ``vjp_batch``; column c is the gradient of
    h_G[c]. Equivalent to seeding vjp_batch with the identity, with the
    channel structure contracted in closed form.
    """
    plan = _graph_plan(topo)
    d = params.dims
    enc = cache.enc
    s_count, n_nodes = enc.qbar.shape[0], enc.qbar.shape[1]
    n_edges = plan.n_edges

    w_node = params.node_enc.weight          # (d_h, 2d)
    gv = softplus_deriv(cache.z_node)        # (S, N, d_h)

    cot_qbar = np.zeros((s_count, n_nodes, d.dim, d.d_l))
    cot_pbar = np.zeros((s_count, n_nodes, d.dim, d.d_l))

    # Pooling channels [0, d_h): each node's encoder feeds its own channel.
    jv = gv[:, :, None, :] * w_node.T[None, None]      # (S, N, 2d, d_h)
    cot_qbar[..., :d.d_h] = jv[:, :, :d.dim]
    cot_pbar[..., :d.d_h] = jv[:, :, d.dim:]

    if n_edges:
        # Message channels [d_h, d_l): every directed edge with source n
        # shares the same node-encoder Jacobian, so the logistic factors
        # can be summed per source before the contraction.
        gm = softplus_deriv(cache.z_msg)               # (S, 2E, d_m)
        sg_src = plan.by_src.sum(gm)                   # (S, N, d_m)
        t_node = gv[:, :, :, None] * w_node[None, None]          # (S,N,d_h,2d)
        r_node = np.einsum("rk,snka->snra", params.msg_enc.weight[:, :d.d_h],
                           t_node, optimize=True)      # (S, N, d_m, 2d)
        cot_qbar[..., d.d_h:] += np.einsum("snr,snra->snar", sg_src,
                                           r_node[..., :d.dim])
        cot_pbar[..., d.d_h:] += np.einsum("snr,snra->snar", sg_src,
                                           r_node[..., d.dim:])

        # Edge-feature path: both directions share the edge encoding.
        ge = softplus_deriv(cache.z_edge)              # (S, E, d_h)
        sg_edge = gm[:, :n_edges] + gm[:, n_edges:]    # (S, E, d_m)
        t_edge = ge[:, :, :, None] * params.edge_enc.weight[None, None]
        r_edge = np.einsum("rk,sekb->serb", params.msg_enc.weight[:, d.d_h:],
                           t_edge, optimize=True)      # (S, E, d_m, d+1)
        unit = _unit_edge_vectors(cache)
        term = sg_edge[..., None] * (r_edge[..., :d.dim]
                                     + unit[:, :, None, :] * r_edge[..., d.dim:])
        term = np.swapaxes(term, 2, 3)                 # (S, E, d, d_m)
        term = term * cache.edge_sign[:, :, None, None]
        cot_qbar[..., d.d_h:] += plan.by_ei.sum(term)
        cot_qbar[..., d.d_h:] -= plan.by_ej.sum(term)

    cot_q, cot_p = pullback_to_raw(enc, cot_qbar, cot_pbar)
    dn = n_nodes * d.dim
    return np.concatenate(
        [cot_q.reshape(s_count, dn, d.d_l), cot_p.reshape(s_count, dn, d.d_l)],
        axis=1)


def grad_batch(params: ModelParams, topo: GraphTopology,
               cache: ForwardCache) -> np.ndarray:
    """Gradient of the predicted energy for each sample: (S, 2*d*N)."""
    return vjp_batch(params, topo, cache, params.readout_w[:, None])[..., 0]


def _auto_block(topo: GraphTopology, params: ModelParams, n_chan: int) -> int:
    per_sample = max(2 * topo.n_edges, 1) * params.dims.d_m * 8 * max(n_chan, 1)
    per_sample *= 6  # a handful of same-sized intermediates
    if per_sample > 8 * _BLOCK_BUDGET_BYTES:
        raise MemoryError(
            "a single sample exceeds the gradient scratch budget; "
            "reduce the message width or the system size")
    return max(1, int(_BLOCK_BUDGET_BYTES // per_sample))


def predicted_dynamics_batch(params: ModelParams, topo: GraphTopology,
                             qs: np.ndarray, ps: np.ndarray,
                             cfg: InvarianceConfig = DEFAULT_CONFIG,
                             block_size: int | None = None):
    """Model dynamics q_dot = dH/dp, p_dot = -dH/dq for (S, N, d) states."""
    s_count, n_nodes, dim = qs.shape
    dn = n_nodes * dim
    if block_size is None:
        block_size = _auto_block(topo, params, 1)
    qdot = np.empty((s_count, n_nodes, dim))
    pdot = np.empty((s_count, n_nodes, dim))
    for lo in range(0, s_count, block_size):
        hi = min(lo + block_size, s_count)
        cache = encode_and_forward(params, topo, qs[lo:hi], ps[lo:hi], cfg)
        g = grad_batch(params, topo, cache)
        qdot[lo:hi] = g[:, dn:].reshape(hi - lo, n_nodes, dim)
        pdot[lo:hi] = -g[:, :dn].reshape(hi - lo, n_nodes, dim)
    return qdot, pdot


def jacobian_global(params: ModelParams, topo: GraphTopology,
                    state: PhaseState,
                    cfg: InvarianceConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Jacobian of the pooled features for one state: (2*d*N, d_l)."""
    d = topo.spatial_dim
    cache = encode_and_forward(params, topo, state.q_nodes(d)[None],
                               state.p_nodes(d)[None], cfg)
    return jacobian_batch(params, topo, cache)[0]


def grad_hamiltonian(params: ModelParams, topo: GraphTopology,
                     state: PhaseState,
                     cfg: InvarianceConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Gradient of the predicted energy w.r.t. (q, p): length 2*d*N."""
    d = topo.spatial_dim
    cache = encode_and_forward(params, topo, state.q_nodes(d)[None],
                               state.p_nodes(d)[None], cfg)
    return grad_batch(params, topo, cache)[0]


@dataclass(frozen=True)
class FDCheck:
    """Result of comparing the analytic gradient against central differences."""

    max_rel_error: float
    skipped: bool


def finite_difference_check(params: ModelParams, topo: GraphTopology,
                            state: PhaseState, step: float = 1e-6,
                            cfg: InvarianceConfig = DEFAULT_CONFIG) -> FDCheck:
    """Central-difference validation of grad_hamiltonian.

    Degenerate-frame states are skipped (the frozen discrete branch makes
    finite differences meaningless there). The error is the largest
    coordinate deviation relative to the gradient's overall scale.
    """
    if step <= 0.0:
        raise ValueError("step must be positive")
    d = topo.spatial_dim
    enc_frame = encode_and_forward(params, topo, state.q_nodes(d)[None],
                                   state.p_nodes(d)[None], cfg).enc
    if bool(enc_frame.degenerate[0]):
        return FDCheck(max_rel_error=np.nan, skipped=True)

    grad = grad_hamiltonian(params, topo, state, cfg)
    y0 = state.vector()
    fd = np.empty_like(y0)
    for k in range(y0.size):
        yp = y0.copy()
        ym = y0.copy()
        yp[k] += step
        ym[k] -= step
        half = y0.size // 2
        hp, _ = forward(params, topo, PhaseState(yp[:half], yp[half:]), cfg)
        hm, _ = forward(params, topo, PhaseState(ym[:half], ym[half:]), cfg)
        fd[k] = (hp - hm) / (2.0 * step)
    scale = np.max(np.abs(grad)) + 1e-300
    return FDCheck(max_rel_error=float(np.max(np.abs(fd - grad)) / scale),
                   skipped=False)


class LearnedDynamics:
    """Hamiltonian dynamics driven by a trained model.

    Exposes grad_q / grad_p / energy on flattened (q, p) vectors, the
    interface the symplectic integrator consumes. Consecutive calls at the
    same point reuse one cached sweep.
    """

    def __init__(self, params: ModelParams, topo: GraphTopology,
                 cfg: InvarianceConfig = DEFAULT_CONFIG):
        if params.dims.dim != topo.spatial_dim:
            raise ValueError("model and topology dimensions differ")
        self.params = params
        self.topo = topo
        self.cfg = cfg
        self._key = None
        self._grad = None
        self._energy = None

    def _eval(self, q: np.ndarray, p: np.ndarray):
        key = (q.tobytes(), p.tobytes())
        if key != self._key:
            d = self.topo.spatial_dim
            n = q.size // d
            cache = encode_and_forward(self.params, self.topo,
                                       q.reshape(1, n, d), p.reshape(1, n, d),
                                       self.cfg)
            self._grad = grad_batch(self.params, self.topo, cache)[0]
            self._energy = float(cache.energy[0])
            self._key = key
        return self._grad

    def grad_q(self, q: np.ndarray, p: np.ndarray) -> np.ndarray:
        g = self._eval(q, p)
        return g[:q.size]

    def grad_p(self, q: np.ndarray, p: np.ndarray) -> np.ndarray:
        g = self._eval(q, p)
        return g[q.size:]

    def energy(self, q: np.ndarray, p: np.ndarray) -> float:
        self._eval(q, p)
        return self._energy
