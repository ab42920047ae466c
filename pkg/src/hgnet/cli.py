"""Command-line interface.

Subcommands: gen-data, train, eval, rollout, zero-shot, ablate. Every run
is driven by a JSON config (mirroring RunConfig) plus a seed, and writes
into the output directory:

* ``metrics.json``     deterministic results (byte-identical on reruns)
* ``timings.json``     wall-time breakdown (excluded from determinism)
* flat CSV tables for plotting, plus ``model.json`` / dataset files

The output directory is ``--out``, else $HGNET_OUTPUT_DIR, else ./hgnet_out.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .datafiles import load_dataset, save_dataset
from .experiments import (
    RunConfig,
    evaluate_dynamics,
    run_ablation,
    run_rollout_eval,
    run_zero_shot,
    make_datasets,
    make_system,
    train_from_config,
)
from .modelio import load_model, save_model

ENV_OUTPUT_DIR = "HGNET_OUTPUT_DIR"

_TIMING_KEYS = ("eval_seconds", "train_seconds", "solve_seconds")


class CliError(Exception):
    pass


def _load_config(path: str | None, seed: int | None) -> RunConfig:
    if path is None:
        cfg = RunConfig()
    else:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config {path}: {exc}") from exc
        try:
            cfg = RunConfig.from_dict(doc)
        except (TypeError, ValueError) as exc:
            raise CliError(f"invalid config {path}: {exc}") from exc
    if seed is not None:
        cfg = RunConfig.from_dict({**cfg.to_dict(), "seed": seed})
    return cfg


def _out_dir(args) -> Path:
    out = args.out or os.environ.get(ENV_OUTPUT_DIR) or "hgnet_out"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def _strip_timings(rows: list[dict]) -> list[dict]:
    return [{k: v for k, v in row.items() if k not in _TIMING_KEYS}
            for row in rows]


def _write_table(path: Path, rows: list[dict]) -> None:
    if not rows:
        path.write_text("\n")
        return
    columns: list[str] = []
    for row in rows:
        for key in row:
            if key not in columns:
                columns.append(key)
    lines = [",".join(columns)]
    for row in rows:
        cells = []
        for key in columns:
            value = row.get(key, "")
            cells.append(repr(value) if isinstance(value, float) else str(value))
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")


def _metrics_doc(command: str, cfg: RunConfig, results: dict) -> dict:
    return {
        "schema_version": 1,
        "command": command,
        "config": cfg.to_dict(),
        "results": results,
    }


def _load_data_dir(data_dir: str):
    base = Path(data_dir)
    train_path = base / "train.csv"
    test_path = base / "test.csv"
    if not train_path.exists() or not test_path.exists():
        raise CliError(f"{data_dir} must contain train.csv and test.csv")
    return load_dataset(train_path), load_dataset(test_path)


def _cmd_gen_data(args) -> int:
    cfg = _load_config(args.config, args.seed)
    out = _out_dir(args)
    train_ds, test_ds = make_datasets(cfg)
    save_dataset(train_ds, out / "train.csv")
    save_dataset(test_ds, out / "test.csv")
    _write_json(out / "metrics.json", _metrics_doc("gen-data", cfg, {
        "train_count": len(train_ds),
        "test_count": len(test_ds),
        "n_nodes": train_ds.topology.n_nodes,
        "spatial_dim": train_ds.topology.spatial_dim,
        "anchor_energy": train_ds.anchor_energy,
    }))
    print(f"wrote {out / 'train.csv'} ({len(train_ds)} samples) and "
          f"{out / 'test.csv'} ({len(test_ds)} samples)")
    return 0


def _cmd_train(args) -> int:
    cfg = _load_config(args.config, args.seed)
    out = _out_dir(args)
    train_ds = test_ds = None
    if args.data:
        train_ds, test_ds = _load_data_dir(args.data)
    params, report, metrics, _, _ = train_from_config(cfg, train_ds, test_ds)
    save_model(params, out / "model.json")
    results = {k: v for k, v in metrics.items() if k not in
               ("test_eval_seconds",)}
    _write_json(out / "metrics.json", _metrics_doc("train", cfg, results))
    _write_json(out / "timings.json", {
        "wall_time_seconds": report.wall_time_seconds,
        "phases": report.wall_times,
        "test_eval_seconds": metrics.get("test_eval_seconds"),
    })
    print(f"trained model -> {out / 'model.json'} "
          f"(test dynamics MSE {metrics['test_dyn_mse']:.3e})")
    return 0


def _cmd_eval(args) -> int:
    cfg = _load_config(args.config, args.seed)
    out = _out_dir(args)
    params = load_model(args.model)
    if args.data:
        _, test_ds = _load_data_dir(args.data)
    else:
        _, test_ds = make_datasets(cfg)
    result = evaluate_dynamics(params, test_ds)
    results = {k: v for k, v in result.items() if k not in _TIMING_KEYS}
    _write_json(out / "metrics.json", _metrics_doc("eval", cfg, results))
    _write_json(out / "timings.json",
                {"eval_seconds": result["eval_seconds"]})
    print(f"dynamics MSE {result['dyn_mse']:.3e}, "
          f"relative error {result['rel_err']:.3e}")
    return 0


def _cmd_rollout(args) -> int:
    cfg = _load_config(args.config, args.seed)
    out = _out_dir(args)
    params = load_model(args.model) if args.model else None
    result = run_rollout_eval(cfg, params=params)
    series = result["series"]
    rows = [
        {key: series[key][k] for key in
         ("step", "time", "state_mse", "h_model", "h_true")}
        for k in range(len(series["step"]))
    ]
    _write_table(out / "rollout.csv", rows)
    _write_json(out / "metrics.json",
                _metrics_doc("rollout", cfg, result["summary"]))
    print(f"rolled out {len(rows) - 1} steps; model energy drift "
          f"{result['summary']['model_max_rel_drift']:.3e}")
    return 0


def _cmd_zero_shot(args) -> int:
    cfg = _load_config(args.config, args.seed)
    out = _out_dir(args)
    rows = run_zero_shot(cfg.zero_shot.train_sizes,
                         cfg.zero_shot.test_sizes, cfg)
    _write_table(out / "zero_shot.csv", rows)
    _write_json(out / "metrics.json",
                _metrics_doc("zero-shot", cfg, {"rows": _strip_timings(rows)}))
    _write_json(out / "timings.json", {
        "rows": [{k: row[k] for k in ("train_n", "test_n")} |
                 {k: row[k] for k in _TIMING_KEYS if k in row}
                 for row in rows],
    })
    for row in rows:
        print(f"train N={row['train_n']:>5d} test N={row['test_n']:>5d} "
              f"rel_err={row['rel_err']:.3e}")
    return 0


def _cmd_ablate(args) -> int:
    cfg = _load_config(args.config, args.seed)
    out = _out_dir(args)
    rows = run_ablation(cfg.ablation.d_h_values, cfg.ablation.d_l_values, cfg)
    _write_table(out / "ablation.csv", rows)
    _write_json(out / "metrics.json",
                _metrics_doc("ablate", cfg, {"rows": _strip_timings(rows)}))
    for row in rows:
        if row["status"] != "ok":
            print(f"d_h={row['d_h']:>4d} d_l={row['d_l']:>4d} skipped "
                  f"(message width {row['d_m']} < 1)")
        else:
            print(f"d_h={row['d_h']:>4d} d_l={row['d_l']:>4d} "
                  f"test MSE {row['test_mse']:.3e}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hgnet",
        description="Random-feature Hamiltonian graph networks: train, "
                    "evaluate, and reproduce the experiment suite.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output directory "
                                     f"(default ${ENV_OUTPUT_DIR} or ./hgnet_out)")

    p = sub.add_parser("gen-data", help="generate and write datasets")
    common(p)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train a model and report test metrics")
    common(p)
    p.add_argument("--data", help="directory with train.csv/test.csv "
                                  "(default: generate from config)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved model")
    common(p)
    p.add_argument("--model", required=True, help="model.json path")
    p.add_argument("--data", help="directory with test.csv")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("rollout", help="integrate true and learned dynamics")
    common(p)
    p.add_argument("--model", help="model.json path (default: train first)")
    p.set_defaults(func=_cmd_rollout)

    p = sub.add_parser("zero-shot", help="size-generalisation table")
    common(p)
    p.set_defaults(func=_cmd_zero_shot)

    p = sub.add_parser("ablate", help="width ablation grid")
    common(p)
    p.set_defaults(func=_cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # surface a diagnostic, not a traceback wall
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
