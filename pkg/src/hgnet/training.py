"""Readout fitting: assemble the gradient-supervision system and solve it.

Each training sample contributes one block of rows: the feature Jacobian
rows paired with targets (-p_dot, q_dot), which are the energy gradients
implied by Hamilton's equations (the symplectic block swap is applied
analytically, never as a matrix inverse). One extra anchor row ties the
predicted energy at a reference state to its known true value, fixing the
integration constant. The readout is the minimum-norm least-squares
solution with singular values below rcond * sigma_max truncated.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import Dataset, Sample, state_from_vector
from .gradients import grad_batch, jacobian_batch
from .invariance import DEFAULT_CONFIG, InvarianceConfig
from .network import ModelDims, ModelParams, encode_and_forward
from .physics import Trajectory
from .sampling import DEFAULT_SAMPLER, SamplerConfig, build_random_layers

DEFAULT_RCOND = 1e-6
_ASSEMBLY_BLOCK = 128


@dataclass(frozen=True)
class LinearSystem:
    """Stacked system Z theta = u with the anchor in the final row."""

    z: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        if self.z.ndim != 2 or self.u.ndim != 1 or self.z.shape[0] != self.u.size:
            raise ValueError(
                f"inconsistent system shapes {self.z.shape} vs {self.u.shape}")

    @property
    def n_rows(self) -> int:
        return self.z.shape[0]


@dataclass(frozen=True)
class LstsqSolution:
    readout_w: np.ndarray
    readout_b: float
    rank: int
    warning: bool = False

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([self.readout_w, [self.readout_b]])

    def __iter__(self):
        # allow (w, b) unpacking
        yield self.readout_w
        yield self.readout_b


@dataclass
class TrainReport:
    wall_time_seconds: float
    wall_times: dict = field(default_factory=dict)
    residual_norm: float = 0.0
    train_mse: float = 0.0
    effective_rank: int = 0
    solver_warning: bool = False


def build_linear_system(jacobians: np.ndarray, targets: np.ndarray,
                        anchor_features: np.ndarray,
                        anchor_value: float) -> LinearSystem:
    """Assemble Z and u from precomputed per-sample blocks.

    ``jacobians`` is (S, K, d_l) and ``targets`` (S, K); the bias column is
    zero on all gradient rows and one on the final anchor row.
    """
    s_count, k, d_l = jacobians.shape
    rows = s_count * k + 1
    z = np.zeros((rows, d_l + 1))
    z[:-1, :-1] = jacobians.reshape(s_count * k, d_l)
    z[-1, :-1] = anchor_features
    z[-1, -1] = 1.0
    u = np.empty(rows)
    u[:-1] = targets.reshape(-1)
    u[-1] = anchor_value
    return LinearSystem(z=z, u=u)


def _gradient_targets(dataset: Dataset) -> np.ndarray:
    """Per-sample target rows (-p_dot, q_dot), shaped (S, 2*d*N)."""
    qdot, pdot = dataset.deriv_arrays()
    s_count = qdot.shape[0]
    return np.concatenate(
        [-pdot.reshape(s_count, -1), qdot.reshape(s_count, -1)], axis=1)


def assemble_system(params: ModelParams, dataset: Dataset,
                    inv_cfg: InvarianceConfig = DEFAULT_CONFIG,
                    block_size: int = _ASSEMBLY_BLOCK) -> LinearSystem:
    """Materialise the full system (direct path for the SVD solve)."""
    topo = dataset.topology
    missing = [k for k, s in enumerate(dataset.samples) if s.deriv is None]
    if missing:
        raise ValueError(
            f"samples without time derivatives cannot supervise gradients: "
            f"indices {missing[:10]}")
    d = topo.spatial_dim
    k = 2 * d * topo.n_nodes
    s_count = len(dataset)
    d_l = params.dims.d_l

    z = np.zeros((s_count * k + 1, d_l + 1))
    qs, ps = dataset.state_arrays()
    for lo in range(0, s_count, block_size):
        hi = min(lo + block_size, s_count)
        cache = encode_and_forward(params, topo, qs[lo:hi], ps[lo:hi], inv_cfg)
        jac = jacobian_batch(params, topo, cache)
        z[lo * k:hi * k, :-1] = jac.reshape((hi - lo) * k, d_l)

    anchor_state = dataset.anchor_state
    cache = encode_and_forward(params, topo, anchor_state.q_nodes(d)[None],
                               anchor_state.p_nodes(d)[None], inv_cfg)
    z[-1, :-1] = cache.h_global[0]
    z[-1, -1] = 1.0

    u = np.empty(s_count * k + 1)
    u[:-1] = _gradient_targets(dataset).reshape(-1)
    u[-1] = dataset.anchor_energy
    return LinearSystem(z=z, u=u)


def solve_least_squares(system: LinearSystem, rcond: float = DEFAULT_RCOND,
                        ridge: Optional[float] = None) -> LstsqSolution:
    """Minimum-norm solve of min |Z theta - u|^2.

    The default path truncates singular values below rcond * sigma_max
    (implicit l2 regularisation). Passing ``ridge`` switches to an explicit
    Tikhonov solve of the normal equations instead.
    """
    if rcond < 0:
        raise ValueError("rcond must be nonnegative")
    z, u = system.z, system.u
    warning = False
    if not np.any(z):
        warnings.warn("all-zero system matrix; returning zero readout")
        theta = np.zeros(z.shape[1])
        rank = 0
        warning = True
    elif ridge is not None:
        gram = z.T @ z + ridge * np.eye(z.shape[1])
        theta = np.linalg.solve(gram, z.T @ u)
        rank = z.shape[1]
    else:
        theta, _, rank, _ = np.linalg.lstsq(z, u, rcond=rcond)
        rank = int(rank)
    return LstsqSolution(readout_w=theta[:-1], readout_b=float(theta[-1]),
                         rank=rank, warning=warning)


def _solve_normal_accumulated(params: ModelParams, dataset: Dataset,
                              rcond: float, inv_cfg: InvarianceConfig,
                              block_size: int = _ASSEMBLY_BLOCK):
    """Streaming normal-equations path: never materialises Z.

    Accumulates Z^T Z and Z^T u over sample blocks so peak memory stays
    linear in the block size. The rcond semantics are mirrored by
    truncating eigenvalues below (rcond * sigma_max)^2.
    """
    topo = dataset.topology
    d = topo.spatial_dim
    k = 2 * d * topo.n_nodes
    d_l = params.dims.d_l
    gram = np.zeros((d_l + 1, d_l + 1))
    moment = np.zeros(d_l + 1)
    u_sq = 0.0

    targets = _gradient_targets(dataset)
    qs, ps = dataset.state_arrays()
    s_count = len(dataset)
    for lo in range(0, s_count, block_size):
        hi = min(lo + block_size, s_count)
        cache = encode_and_forward(params, topo, qs[lo:hi], ps[lo:hi], inv_cfg)
        jac = jacobian_batch(params, topo, cache).reshape((hi - lo) * k, d_l)
        blk = np.concatenate([jac, np.zeros((jac.shape[0], 1))], axis=1)
        tb = targets[lo:hi].reshape(-1)
        gram += blk.T @ blk
        moment += blk.T @ tb
        u_sq += tb @ tb

    anchor_state = dataset.anchor_state
    cache = encode_and_forward(params, topo, anchor_state.q_nodes(d)[None],
                               anchor_state.p_nodes(d)[None], inv_cfg)
    anchor_row = np.concatenate([cache.h_global[0], [1.0]])
    gram += np.outer(anchor_row, anchor_row)
    moment += anchor_row * dataset.anchor_energy
    u_sq += dataset.anchor_energy ** 2

    eigval, eigvec = np.linalg.eigh(gram)
    cutoff = (rcond ** 2) * eigval[-1] if eigval[-1] > 0 else 0.0
    keep = eigval > cutoff
    inv = np.zeros_like(eigval)
    inv[keep] = 1.0 / eigval[keep]
    theta = eigvec @ (inv * (eigvec.T @ moment))
    residual_sq = max(float(theta @ gram @ theta - 2.0 * theta @ moment + u_sq), 0.0)
    sol = LstsqSolution(readout_w=theta[:-1], readout_b=float(theta[-1]),
                        rank=int(keep.sum()))
    return sol, float(np.sqrt(residual_sq))


def train(dataset: Dataset, dims: ModelDims,
          sampler: SamplerConfig = DEFAULT_SAMPLER,
          rcond: float = DEFAULT_RCOND,
          rng: Optional[np.random.Generator] = None,
          solver: str = "svd",
          inv_cfg: InvarianceConfig = DEFAULT_CONFIG,
          precision: str = "double"):
    """End-to-end fit: sample dense layers, assemble, solve the readout.

    Returns (ModelParams, TrainReport). ``solver`` is "svd" (materialise Z,
    truncated-SVD solve; the default) or "normal" (streaming accumulation
    of the normal equations for very large sample counts). Everything runs
    in double precision; ``precision="single"`` downcasts only the linear
    solve (the dominant cost) for timing comparisons and is off by default.
    """
    if solver not in ("svd", "normal"):
        raise ValueError(f"unknown solver {solver!r}")
    if precision not in ("double", "single"):
        raise ValueError(f"unknown precision {precision!r}")
    t_start = time.perf_counter()
    params = build_random_layers(dims, dataset, sampler, rng, inv_cfg)
    t_sampled = time.perf_counter()

    if solver == "svd":
        system = assemble_system(params, dataset, inv_cfg)
        if precision == "single":
            system = LinearSystem(z=system.z.astype(np.float32),
                                  u=system.u.astype(np.float32))
        t_assembled = time.perf_counter()
        sol = solve_least_squares(system, rcond)
        t_solved = time.perf_counter()
        residual = float(np.linalg.norm(system.z @ sol.theta - system.u))
    else:
        t_assembled = time.perf_counter()
        sol, residual = _solve_normal_accumulated(params, dataset, rcond, inv_cfg)
        t_solved = time.perf_counter()

    params = params.with_readout(sol.readout_w, sol.readout_b)

    topo = dataset.topology
    qs, ps = dataset.state_arrays()
    targets = _gradient_targets(dataset)
    pred = np.empty_like(targets)
    k = targets.shape[1]
    for lo in range(0, len(dataset), _ASSEMBLY_BLOCK):
        hi = min(lo + _ASSEMBLY_BLOCK, len(dataset))
        cache = encode_and_forward(params, topo, qs[lo:hi], ps[lo:hi], inv_cfg)
        pred[lo:hi] = grad_batch(params, topo, cache)
    train_mse = float(np.mean((pred - targets) ** 2))
    t_end = time.perf_counter()

    report = TrainReport(
        wall_time_seconds=t_end - t_start,
        wall_times={
            "sampling": t_sampled - t_start,
            "assembly": t_assembled - t_sampled,
            "solve": t_solved - t_assembled,
            "train_mse_eval": t_end - t_solved,
        },
        residual_norm=residual,
        train_mse=train_mse,
        effective_rank=sol.rank,
        solver_warning=sol.warning,
    )
    return params, report


def derivatives_from_trajectory(traj: Trajectory,
                                dt: Optional[float] = None) -> list[Sample]:
    """Central-difference derivative estimates from a uniform trajectory.

    Interior points get y_dot_k = (y_{k+1} - y_{k-1}) / (2 dt); the two
    endpoints are dropped. Exact for trajectories up to quadratic in time.
    """
    dt = traj.dt if dt is None else dt
    if dt <= 0:
        raise ValueError("dt must be positive")
    n_states = traj.qs.shape[0]
    if n_states < 3:
        raise ValueError("need at least three states for central differences")
    samples = []
    for k in range(1, n_states - 1):
        qdot = (traj.qs[k + 1] - traj.qs[k - 1]) / (2.0 * dt)
        pdot = (traj.ps[k + 1] - traj.ps[k - 1]) / (2.0 * dt)
        samples.append(Sample(
            state=traj.state(k),
            deriv=state_from_vector(np.concatenate([qdot, pdot])),
        ))
    return samples
