"""Experiment drivers: reproducible training, zero-shot scaling, rollout
evaluation, width ablations, and solve-time scaling measurements.

Every run is a pure function of (config, seed): all randomness flows
through per-purpose generators derived from the config seed with fixed
spawn keys, so repeating a run reproduces its numbers exactly.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .core import Dataset
from .gradients import LearnedDynamics, predicted_dynamics_batch
from .metrics import mse, relative_error
from .network import ModelDims, ModelParams
from .physics import (
    AnalyticDynamics,
    SystemSpec,
    chain_system,
    generate_dataset,
    generate_samples,
    hamiltonian,
    lattice_system,
    ring_system,
    stormer_verlet_rollout,
)
from .sampling import SamplerConfig
from .training import DEFAULT_RCOND, TrainReport, train

SCHEMA_VERSION = 1

# Spawn-key tags for the per-purpose random generators.
_TAG_TRAIN_DATA = 0
_TAG_TEST_DATA = 1
_TAG_PARAMS = 2
_TAG_ROLLOUT = 3


def rng_for(seed: int, *key: int) -> np.random.Generator:
    """Deterministic generator for (seed, purpose) independent of call order."""
    seq = np.random.SeedSequence(entropy=int(seed),
                                 spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(seq)


@dataclass(frozen=True)
class SystemConfig:
    kind: str = "chain"          # chain | lattice | ring
    n: int = 8
    nx: int = 3
    ny: int = 3
    dim: int = 2
    rest_length: float = 1.0     # rings only


@dataclass(frozen=True)
class DataConfig:
    count: int = 2000
    train_fraction: float = 0.5
    disp_low: float = -0.5
    disp_high: float = 0.5
    mom_low: Optional[float] = None   # defaults to the displacement range
    mom_high: Optional[float] = None

    @property
    def disp_range(self) -> tuple[float, float]:
        return (self.disp_low, self.disp_high)

    @property
    def mom_range(self) -> tuple[float, float]:
        if self.mom_low is None or self.mom_high is None:
            return self.disp_range
        return (self.mom_low, self.mom_high)


@dataclass(frozen=True)
class ModelConfig:
    d_h: int = 64
    d_l: int = 512


@dataclass(frozen=True)
class IntegrationConfig:
    dt: float = 1e-3
    steps: int = 5000
    fp_tol: float = 1e-12
    fp_max_iter: int = 50


@dataclass(frozen=True)
class ZeroShotConfig:
    train_sizes: tuple[int, ...] = (8,)
    test_sizes: tuple[int, ...] = (8, 32, 128, 512)
    test_count: int = 400


@dataclass(frozen=True)
class AblationConfig:
    d_h_values: tuple[int, ...] = (128, 512)
    d_l_values: tuple[int, ...] = (136, 520, 528, 544, 576)


@dataclass(frozen=True)
class RunConfig:
    system: SystemConfig = SystemConfig()
    data: DataConfig = DataConfig()
    model: ModelConfig = ModelConfig()
    sampler: SamplerConfig = SamplerConfig()
    integration: IntegrationConfig = IntegrationConfig()
    zero_shot: ZeroShotConfig = ZeroShotConfig()
    ablation: AblationConfig = AblationConfig()
    rcond: float = DEFAULT_RCOND
    seed: int = 0
    precision: str = "double"    # "single" downcasts the linear solve only

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["schema_version"] = SCHEMA_VERSION
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        doc = dict(doc)
        version = doc.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported config schema version {version}")
        sections = {
            "system": SystemConfig, "data": DataConfig, "model": ModelConfig,
            "sampler": SamplerConfig, "integration": IntegrationConfig,
            "zero_shot": ZeroShotConfig, "ablation": AblationConfig,
        }
        kwargs = {}
        for name, typ in sections.items():
            if name in doc:
                section = dict(doc.pop(name))
                for key, value in section.items():
                    if isinstance(value, list):
                        section[key] = tuple(value)
                kwargs[name] = typ(**section)
        for key in ("rcond", "seed", "precision"):
            if key in doc:
                kwargs[key] = doc.pop(key)
        unknown = set(doc)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**kwargs)


def make_system(sys_cfg: SystemConfig, size: Optional[int] = None) -> SystemSpec:
    """Instantiate the configured system, optionally overriding its size."""
    if sys_cfg.kind == "chain":
        return chain_system(size if size is not None else sys_cfg.n, sys_cfg.dim)
    if sys_cfg.kind == "lattice":
        nx = size if size is not None else sys_cfg.nx
        ny = size if size is not None else sys_cfg.ny
        return lattice_system(nx, ny, sys_cfg.dim)
    if sys_cfg.kind == "ring":
        return ring_system(size if size is not None else sys_cfg.n,
                           sys_cfg.dim, rest_length=sys_cfg.rest_length)
    raise ValueError(f"unknown system kind {sys_cfg.kind!r}")


def model_dims(cfg: RunConfig) -> ModelDims:
    return ModelDims.from_widths(cfg.system.dim, cfg.model.d_h, cfg.model.d_l)


def make_datasets(cfg: RunConfig, spec: Optional[SystemSpec] = None):
    """Generate the (train, test) datasets for a config."""
    spec = make_system(cfg.system) if spec is None else spec
    rng = rng_for(cfg.seed, _TAG_TRAIN_DATA, spec.topology.n_nodes)
    return generate_dataset(spec, cfg.data.count, cfg.data.disp_range,
                            cfg.data.mom_range, cfg.data.train_fraction, rng)


def evaluate_dynamics(params: ModelParams, dataset: Dataset) -> dict:
    """Dynamics prediction quality on a dataset with known derivatives."""
    topo = dataset.topology
    qs, ps = dataset.state_arrays()
    qdot, pdot = dataset.deriv_arrays()
    t0 = time.perf_counter()
    qd_hat, pd_hat = predicted_dynamics_batch(params, topo, qs, ps)
    seconds = time.perf_counter() - t0
    truth = np.concatenate([qdot.reshape(len(dataset), -1),
                            pdot.reshape(len(dataset), -1)], axis=1)
    pred = np.concatenate([qd_hat.reshape(len(dataset), -1),
                           pd_hat.reshape(len(dataset), -1)], axis=1)
    return {
        "dyn_mse": mse(pred, truth),
        "rel_err": relative_error(pred, truth),
        "eval_seconds": seconds,
    }


def train_from_config(cfg: RunConfig,
                      train_ds: Optional[Dataset] = None,
                      test_ds: Optional[Dataset] = None):
    """Train per config; returns (params, report, metrics, train_ds, test_ds)."""
    spec = make_system(cfg.system)
    if train_ds is None or test_ds is None:
        generated = make_datasets(cfg, spec)
        train_ds = generated[0] if train_ds is None else train_ds
        test_ds = generated[1] if test_ds is None else test_ds
    dims = ModelDims.from_widths(train_ds.topology.spatial_dim,
                                 cfg.model.d_h, cfg.model.d_l)
    params, report = train(
        train_ds, dims, sampler=cfg.sampler, rcond=cfg.rcond,
        rng=rng_for(cfg.seed, _TAG_PARAMS), precision=cfg.precision)
    metrics = {
        "train_mse": report.train_mse,
        "residual_norm": report.residual_norm,
        "effective_rank": report.effective_rank,
    }
    metrics.update({f"test_{k}": v for k, v in
                    evaluate_dynamics(params, test_ds).items()})
    anchor_state, h0 = train_ds.anchor
    from .network import forward  # local import to avoid a cycle at module load
    h_hat, _ = forward(params, train_ds.topology, anchor_state)
    metrics["anchor_abs_error"] = abs(h_hat - h0)
    return params, report, metrics, train_ds, test_ds


def run_zero_shot(train_sizes, test_sizes, cfg: RunConfig) -> list[dict]:
    """Train once per training size; evaluate on fresh sets of every test size.

    No retraining happens across test sizes: the same parameters are applied
    to larger graphs directly. Evaluation is block-wise, so memory stays
    bounded; truly oversized systems raise MemoryError with a hint.
    """
    rows = []
    for train_n in train_sizes:
        spec = make_system(cfg.system, size=train_n)
        rng = rng_for(cfg.seed, _TAG_TRAIN_DATA, train_n)
        train_ds, _ = generate_dataset(
            spec, cfg.data.count, cfg.data.disp_range, cfg.data.mom_range,
            cfg.data.train_fraction, rng)
        dims = ModelDims.from_widths(cfg.system.dim, cfg.model.d_h, cfg.model.d_l)
        params, report = train(
            train_ds, dims, sampler=cfg.sampler, rcond=cfg.rcond,
            rng=rng_for(cfg.seed, _TAG_PARAMS, train_n), precision=cfg.precision)
        for test_n in test_sizes:
            test_spec = make_system(cfg.system, size=test_n)
            test_rng = rng_for(cfg.seed, _TAG_TEST_DATA, test_n)
            test_ds = generate_samples(
                test_spec, cfg.zero_shot.test_count, cfg.data.disp_range,
                cfg.data.mom_range, test_rng)
            result = evaluate_dynamics(params, test_ds)
            rows.append({
                "method": cfg.sampler.method,
                "train_n": train_n,
                "test_n": test_n,
                "rel_err": result["rel_err"],
                "dyn_mse": result["dyn_mse"],
                "eval_seconds": result["eval_seconds"],
                "train_seconds": report.wall_time_seconds,
            })
    return rows


def run_rollout_eval(cfg: RunConfig, params: Optional[ModelParams] = None,
                     oracle_plug: bool = False) -> dict:
    """Roll out true and predicted dynamics from one initial condition.

    Returns per-step series (state MSE, predicted and true energies) and a
    drift summary. With ``oracle_plug`` the analytic dynamics stand in for
    the model, so the series are exact-zero baselines.
    """
    spec = make_system(cfg.system)
    topo = spec.topology
    rng = rng_for(cfg.seed, _TAG_ROLLOUT)
    ic = generate_samples(spec, 1, cfg.data.disp_range, cfg.data.mom_range, rng)
    y0 = ic.samples[0].state
    h0 = hamiltonian(spec, y0)

    it = cfg.integration
    true_traj = stormer_verlet_rollout(
        AnalyticDynamics(spec), y0, it.dt, it.steps, it.fp_tol, it.fp_max_iter)

    if oracle_plug:
        model_dyn = AnalyticDynamics(spec)
    else:
        if params is None:
            params = train_from_config(cfg)[0]
        model_dyn = LearnedDynamics(params, topo)
    model_traj = stormer_verlet_rollout(
        model_dyn, y0, it.dt, it.steps, it.fp_tol, it.fp_max_iter)

    diff_q = model_traj.qs - true_traj.qs
    diff_p = model_traj.ps - true_traj.ps
    state_mse = (np.sum(diff_q * diff_q, axis=1) + np.sum(diff_p * diff_p, axis=1))
    state_mse /= (diff_q.shape[1] + diff_p.shape[1])

    h_scale = abs(h0) if h0 != 0 else 1.0
    model_drift = np.max(np.abs(model_traj.energies - h0)) / h_scale
    true_drift = np.max(np.abs(true_traj.energies - h0)) / h_scale
    return {
        "series": {
            "step": list(range(it.steps + 1)),
            "time": [k * it.dt for k in range(it.steps + 1)],
            "state_mse": state_mse.tolist(),
            "h_model": model_traj.energies.tolist(),
            "h_true": true_traj.energies.tolist(),
        },
        "summary": {
            "h0": h0,
            "model_max_rel_drift": float(model_drift),
            "true_max_rel_drift": float(true_drift),
            "final_state_mse": float(state_mse[-1]),
        },
    }


def run_ablation(d_h_values, d_l_values, cfg: RunConfig) -> list[dict]:
    """Test-MSE grid over encoder/network widths on one shared dataset.

    Combinations whose message width d_m = d_l - d_h would drop below one
    are skipped with a notice row rather than failing the grid.
    """
    spec = make_system(cfg.system)
    train_ds, test_ds = make_datasets(cfg, spec)
    rows = []
    for d_h in d_h_values:
        for d_l in d_l_values:
            d_m = d_l - d_h
            if d_m < 1:
                warnings.warn(
                    f"skipping (d_h={d_h}, d_l={d_l}): message width "
                    f"{d_m} < 1")
                rows.append({"d_h": d_h, "d_l": d_l, "d_m": d_m,
                             "status": "skipped_invalid_width"})
                continue
            dims = ModelDims(dim=cfg.system.dim, d_h=d_h, d_m=d_m)
            params, report = train(
                train_ds, dims, sampler=cfg.sampler, rcond=cfg.rcond,
                rng=rng_for(cfg.seed, _TAG_PARAMS, d_h, d_l),
                precision=cfg.precision)
            result = evaluate_dynamics(params, test_ds)
            rows.append({
                "d_h": d_h, "d_l": d_l, "d_m": d_m, "status": "ok",
                "test_mse": result["dyn_mse"],
                "rel_err": result["rel_err"],
                "train_seconds": report.wall_time_seconds,
            })
    return rows


def measure_solve_scaling(cfg: RunConfig, m_values, repeats: int = 3) -> list[dict]:
    """Least-squares-phase wall time versus training-set size.

    Parameters are sampled once per size; the solve is repeated and the
    minimum time kept, isolating the phase whose cost should grow linearly
    with the number of samples.
    """
    from .sampling import build_random_layers
    from .training import assemble_system, solve_least_squares

    spec = make_system(cfg.system)
    dims = model_dims(cfg)
    rows = []
    for m in m_values:
        rng = rng_for(cfg.seed, _TAG_TRAIN_DATA, m)
        train_ds, _ = generate_dataset(
            spec, 2 * m, cfg.data.disp_range, cfg.data.mom_range, 0.5, rng)
        params = build_random_layers(dims, train_ds, cfg.sampler,
                                     rng_for(cfg.seed, _TAG_PARAMS, m))
        system = assemble_system(params, train_ds)
        best = np.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            solve_least_squares(system, cfg.rcond)
            best = min(best, time.perf_counter() - t0)
        rows.append({"m": m, "rows": system.n_rows, "solve_seconds": best})
    return rows


def linear_fit_r2(xs, ys) -> tuple[float, float, float]:
    """Least-squares line fit; returns (slope, intercept, r_squared)."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    slope, intercept = np.polyfit(xs, ys, 1)
    fitted = slope * xs + intercept
    ss_res = float(np.sum((ys - fitted) ** 2))
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2
