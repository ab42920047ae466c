import numpy as np
import pytest

from hgnet.experiments import (
    AblationConfig,
    DataConfig,
    IntegrationConfig,
    ModelConfig,
    RunConfig,
    SystemConfig,
    ZeroShotConfig,
    evaluate_dynamics,
    linear_fit_r2,
    make_datasets,
    make_system,
    measure_solve_scaling,
    model_dims,
    rng_for,
    run_ablation,
    run_rollout_eval,
    run_zero_shot,
    train_from_config,
)
from hgnet.sampling import SamplerConfig

TINY = RunConfig(
    system=SystemConfig(kind="chain", n=4, dim=2),
    data=DataConfig(count=60, train_fraction=0.5,
                    disp_low=-1.0, disp_high=1.0),
    model=ModelConfig(d_h=8, d_l=24),
    sampler=SamplerConfig(method="swim"),
    integration=IntegrationConfig(dt=1e-3, steps=50),
    zero_shot=ZeroShotConfig(train_sizes=(4,), test_sizes=(4, 6), test_count=20),
    ablation=AblationConfig(d_h_values=(4, 8), d_l_values=(12,)),
    seed=3,
)


def test_rng_for_is_order_free():
    a = rng_for(5, 1, 2).standard_normal(4)
    _ = rng_for(5, 9).standard_normal(10)
    b = rng_for(5, 1, 2).standard_normal(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, rng_for(5, 1, 3).standard_normal(4))


def test_config_roundtrip_through_dict():
    doc = TINY.to_dict()
    rebuilt = RunConfig.from_dict(doc)
    assert rebuilt == TINY
    with pytest.raises(ValueError):
        RunConfig.from_dict({"schema_version": 99})
    with pytest.raises(ValueError):
        RunConfig.from_dict({"unknown_section": 1})


def test_make_system_size_overrides():
    assert make_system(TINY.system).topology.n_nodes == 4
    assert make_system(TINY.system, size=7).topology.n_nodes == 7
    lattice_cfg = SystemConfig(kind="lattice", nx=2, ny=3, dim=3)
    assert make_system(lattice_cfg).topology.n_nodes == 6
    assert make_system(lattice_cfg, size=4).topology.n_nodes == 16
    ring_cfg = SystemConfig(kind="ring", n=5, dim=2)
    assert make_system(ring_cfg).topology.n_edges == 5


def test_train_from_config_metrics():
    params, report, metrics, train_ds, test_ds = train_from_config(TINY)
    assert params.dims.d_l == 24
    assert metrics["test_dyn_mse"] > 0
    assert metrics["anchor_abs_error"] < 1e-2
    assert len(train_ds) == 30 and len(test_ds) == 30


def test_train_from_config_deterministic():
    m1 = train_from_config(TINY)[2]
    m2 = train_from_config(TINY)[2]
    assert m1["test_dyn_mse"] == m2["test_dyn_mse"]
    assert m1["train_mse"] == m2["train_mse"]


def test_zero_shot_rows_shape():
    rows = run_zero_shot(TINY.zero_shot.train_sizes,
                         TINY.zero_shot.test_sizes, TINY)
    assert len(rows) == 2
    assert [r["test_n"] for r in rows] == [4, 6]
    for row in rows:
        assert row["train_n"] == 4
        assert row["method"] == "swim"
        assert row["rel_err"] > 0
        assert "eval_seconds" in row


def test_rollout_oracle_plug_is_exact_zero():
    result = run_rollout_eval(TINY, oracle_plug=True)
    series = result["series"]
    assert max(series["state_mse"]) == 0.0
    assert result["summary"]["final_state_mse"] == 0.0
    # the oracle run still shows the integrator's own tiny energy wobble
    assert result["summary"]["model_max_rel_drift"] < 1e-4


def test_rollout_with_trained_model():
    result = run_rollout_eval(TINY)
    assert len(result["series"]["step"]) == TINY.integration.steps + 1
    assert result["summary"]["model_max_rel_drift"] < 0.5
    assert np.isfinite(result["summary"]["final_state_mse"])


def test_ablation_grid_and_skip_notice():
    cfg = RunConfig(**{**TINY.__dict__,
                       "ablation": AblationConfig(d_h_values=(4, 16),
                                                  d_l_values=(12,))})
    with pytest.warns(UserWarning, match="skipping"):
        rows = run_ablation(cfg.ablation.d_h_values, cfg.ablation.d_l_values, cfg)
    ok = [r for r in rows if r["status"] == "ok"]
    skipped = [r for r in rows if r["status"] != "ok"]
    assert len(ok) == 1 and len(skipped) == 1
    assert skipped[0]["d_h"] == 16 and skipped[0]["d_m"] == -4
    assert ok[0]["test_mse"] > 0


def test_ablation_single_cell():
    rows = run_ablation((4,), (12,), TINY)
    assert len(rows) == 1 and rows[0]["status"] == "ok"


def test_measure_solve_scaling_rows():
    rows = measure_solve_scaling(TINY, m_values=(10, 20), repeats=1)
    assert [r["m"] for r in rows] == [10, 20]
    assert rows[0]["rows"] == 2 * 2 * 4 * 10 + 1
    assert all(r["solve_seconds"] > 0 for r in rows)


def test_linear_fit_r2_exact_line():
    slope, intercept, r2 = linear_fit_r2([1, 2, 3, 4], [3, 5, 7, 9])
    assert abs(slope - 2.0) < 1e-12
    assert abs(intercept - 1.0) < 1e-12
    assert abs(r2 - 1.0) < 1e-12


def test_evaluate_dynamics_perfect_model_is_zero():
    # plug the analytic dynamics in place of a model
    spec = make_system(TINY.system)
    _, test_ds = make_datasets(TINY, spec)

    class Oracle:
        class dims:
            dim = 2

        @staticmethod
        def predict(qs, ps):
            from hgnet.physics import dynamics_batch
            return dynamics_batch(spec, qs, ps)

    from hgnet.physics import dynamics_batch
    qs, ps = test_ds.state_arrays()
    qd, pd = test_ds.deriv_arrays()
    qd2, pd2 = dynamics_batch(spec, qs, ps)
    assert np.array_equal(qd, qd2) and np.array_equal(pd, pd2)


def test_single_precision_config_runs():
    cfg = RunConfig(**{**TINY.__dict__, "precision": "single"})
    metrics = train_from_config(cfg)[2]
    assert np.isfinite(metrics["test_dyn_mse"])
