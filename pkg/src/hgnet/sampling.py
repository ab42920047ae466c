"""Gradient-descent-free construction of the dense-layer parameters.

Two samplers are provided. The data-agnostic one ("elm") draws weights
from the standard normal distribution and biases uniformly. The
data-driven one ("swim") builds each neuron from a pair of input points
drawn uniformly at random: the weight points from the first to the second
with magnitude s1/|x2-x1|, and the bias places the activation input at
-s2 on the first point, so every neuron's transition region sits between
two actual data points.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import Dataset
from .invariance import DEFAULT_CONFIG, InvarianceConfig, encode_states
from .network import (
    LayerParams,
    ModelDims,
    ModelParams,
    oriented_edge_features,
    softplus,
)

SAMPLER_METHODS = ("elm", "swim")

# Pairs closer than this are considered duplicates and redrawn.
DUPLICATE_TOL = 1e-12


class SwimSamplingError(RuntimeError):
    """Raised when no usable input pairs can be drawn."""


@dataclass(frozen=True)
class SamplerConfig:
    """Sampler settings.

    s1/s2 place each data-driven neuron's transition between its two
    anchor points; the defaults are tuned for softplus, whose curvature
    lives in a band of width ~1 around zero (scale-free activations like
    relu would use s1=1).
    """

    method: str = "swim"
    s1: float = 0.5
    s2: float = 0.0
    elm_bias_low: float = -1.0
    elm_bias_high: float = 1.0
    resample_duplicates: bool = True
    pool_cap: int = 100_000
    retry_cap: int = 100

    def __post_init__(self):
        if self.method not in SAMPLER_METHODS:
            raise ValueError(f"unknown sampler method {self.method!r}")
        if not (np.isfinite(self.s1) and np.isfinite(self.s2)):
            raise ValueError("s1 and s2 must be finite")
        if self.elm_bias_low > self.elm_bias_high:
            raise ValueError("bias bounds must be ordered")


DEFAULT_SAMPLER = SamplerConfig()


def sample_elm(in_dim: int, out_dim: int, cfg: SamplerConfig,
               rng: np.random.Generator) -> LayerParams:
    """Standard-normal weights, uniform biases."""
    if in_dim < 1 or out_dim < 1:
        raise ValueError("layer dimensions must be positive")
    weight = rng.standard_normal((out_dim, in_dim))
    bias = rng.uniform(cfg.elm_bias_low, cfg.elm_bias_high, out_dim)
    return LayerParams(weight=weight, bias=bias)


def sample_swim(inputs: np.ndarray, out_dim: int, cfg: SamplerConfig,
                rng: np.random.Generator) -> LayerParams:
    """Build each neuron from a uniformly drawn pair of input points.

    w_i = s1 * (x2 - x1) / |x2 - x1|^2 and b_i = -<w_i, x1> - s2, so the
    activation input equals -s2 at x1 and s1 - s2 at x2. Pairs are drawn
    with replacement across neurons; near-identical pairs are redrawn when
    ``resample_duplicates`` is set (up to ``retry_cap`` rounds).
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("inputs must be a 2-D array of points")
    n = x.shape[0]
    if n < 2:
        raise SwimSamplingError(
            f"need at least two input points to draw pairs, got {n}")
    if out_dim < 1:
        raise ValueError("out_dim must be positive")

    idx1 = rng.integers(0, n, out_dim)
    idx2 = rng.integers(0, n, out_dim)
    diff = x[idx2] - x[idx1]
    sq_norm = np.einsum("ok,ok->o", diff, diff)

    if cfg.resample_duplicates:
        bad = sq_norm < DUPLICATE_TOL ** 2
        rounds = 0
        total_bad = int(bad.sum())
        total_drawn = out_dim
        while np.any(bad):
            if rounds >= cfg.retry_cap:
                n_distinct = np.unique(x, axis=0).shape[0]
                if n_distinct < 2:
                    raise SwimSamplingError(
                        f"fewer than two distinct input points "
                        f"({n_distinct} of {n})")
                raise SwimSamplingError(
                    f"retry cap {cfg.retry_cap} exceeded; "
                    f"{total_bad / total_drawn:.1%} of drawn pairs were "
                    f"duplicates (pool has {n_distinct} distinct points)")
            k = int(bad.sum())
            idx1[bad] = rng.integers(0, n, k)
            idx2[bad] = rng.integers(0, n, k)
            diff[bad] = x[idx2[bad]] - x[idx1[bad]]
            sq_norm[bad] = np.einsum("ok,ok->o", diff[bad], diff[bad])
            bad = sq_norm < DUPLICATE_TOL ** 2
            total_bad += int(bad.sum())
            total_drawn += k
            rounds += 1
    elif np.any(sq_norm == 0.0):
        raise SwimSamplingError(
            "identical input pair drawn with resampling disabled")

    weight = cfg.s1 * diff / sq_norm[:, None]
    bias = -np.einsum("ok,ok->o", weight, x[idx1]) - cfg.s2
    return LayerParams(weight=weight, bias=bias)


def _subsample(pool: np.ndarray, cap: int, rng: np.random.Generator) -> np.ndarray:
    if pool.shape[0] <= cap:
        return pool
    keep = rng.choice(pool.shape[0], size=cap, replace=False)
    return pool[keep]


def build_random_layers(dims: ModelDims, dataset: Optional[Dataset],
                        cfg: SamplerConfig = DEFAULT_SAMPLER,
                        rng: Optional[np.random.Generator] = None,
                        inv_cfg: InvarianceConfig = DEFAULT_CONFIG) -> ModelParams:
    """Sample all three dense layers; the readout starts at zero.

    The data-driven sampler pools candidate inputs across every node and
    edge of every training sample; the message-encoder pool is computed
    with the already-sampled node and edge encoders (the layers are
    sequential). Pools larger than ``cfg.pool_cap`` are uniformly
    subsampled to bound memory.
    """
    rng = np.random.default_rng() if rng is None else rng

    if cfg.method == "elm":
        node_enc = sample_elm(dims.d_v, dims.d_h, cfg, rng)
        edge_enc = sample_elm(dims.d_e, dims.d_h, cfg, rng)
        msg_enc = sample_elm(2 * dims.d_h, dims.d_m, cfg, rng)
    else:
        if dataset is None or len(dataset) == 0:
            raise SwimSamplingError("the data-driven sampler needs a dataset")
        topo = dataset.topology
        if topo.spatial_dim != dims.dim:
            raise ValueError("dataset and model dimensions differ")
        qs, ps = dataset.state_arrays()
        enc = encode_states(qs, ps, inv_cfg)

        v_pool = np.concatenate([enc.qbar, enc.pbar], axis=2).reshape(-1, dims.d_v)
        node_enc = sample_swim(_subsample(v_pool, cfg.pool_cap, rng),
                               dims.d_h, cfg, rng)

        ei, ej = topo.edge_index
        if ei.size == 0:
            raise SwimSamplingError(
                "the data-driven sampler needs at least one edge")
        e_feat, _, _, _ = oriented_edge_features(enc.qbar, ei, ej)
        e_pool = e_feat.reshape(-1, dims.d_e)
        edge_enc = sample_swim(_subsample(e_pool, cfg.pool_cap, rng),
                               dims.d_h, cfg, rng)

        h_node = softplus(v_pool.reshape(qs.shape[0], -1, dims.d_v)
                          @ node_enc.weight.T + node_enc.bias)
        h_edge = softplus(e_pool.reshape(qs.shape[0], -1, dims.d_e)
                          @ edge_enc.weight.T + edge_enc.bias)
        src = np.concatenate([ei, ej])
        eid = np.concatenate([np.arange(ei.size), np.arange(ei.size)])
        m_pool = np.concatenate([h_node[:, src], h_edge[:, eid]],
                                axis=2).reshape(-1, 2 * dims.d_h)
        msg_enc = sample_swim(_subsample(m_pool, cfg.pool_cap, rng),
                              dims.d_m, cfg, rng)

    return ModelParams(
        dims=dims,
        node_enc=node_enc,
        edge_enc=edge_enc,
        msg_enc=msg_enc,
        readout_w=np.zeros(dims.d_l),
        readout_b=0.0,
    )
