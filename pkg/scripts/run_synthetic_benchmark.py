#!/usr/bin/env python3
"""End-to-end desk-scale benchmark on the synthetic tasks, via the CLI.

Builds a d=20 classification task and a d=8 regression task, trains models,
writes a benchmark spec per task, runs the 33-repeat protocol for the
requested estimators, and prints the report.  Artifacts land under --out.
"""

import argparse
import json
from pathlib import Path

from corexplain.cli import main as cli
from corexplain.data import save_dataset
from corexplain.models import TrainConfig, save_weights, train
from corexplain.synthetic import gaussian_classification, nonlinear_regression


def build_task(out: Path, name, train_data, valid_data, train_cfg, hidden):
    task_dir = out / name
    task_dir.mkdir(parents=True, exist_ok=True)
    save_dataset(train_data, str(task_dir / "train.json"))
    save_dataset(valid_data, str(task_dir / "valid.json"))
    model = train(train_data, train_cfg, hidden=hidden)
    save_weights(model, str(task_dir / "model.json"))
    print(f"{name}: trained {model.layer_dims} {model.train_stats}")
    return task_dir


def run(args):
    out = Path(args.out)
    class_dir = build_task(
        out, "gaussian20",
        gaussian_classification(3750, d=20, seed=11),
        gaussian_classification(1250, d=20, seed=12),
        TrainConfig(epochs=12, batch_size=64, learning_rate=0.05, seed=0),
        (32, 16),
    )
    reg_dir = build_task(
        out, "regression8",
        nonlinear_regression(2000, d=8, seed=13),
        nonlinear_regression(1024, d=8, seed=14),
        TrainConfig(epochs=20, batch_size=64, learning_rate=0.01, seed=0, loss="mse"),
        (16, 8),
    )
    tasks = [
        (class_dir, ["permutation_shap", "permutation_sage"]),
        (reg_dir, ["feature_effects", "expected_gradients"]),
    ]
    for task_dir, estimators in tasks:
        spec = {
            "dataset": str(task_dir / "valid.json"),
            "dataset_id": task_dir.name,
            "model": str(task_dir / "model.json"),
            "estimators": estimators,
            "repeats": args.repeats,
            "methods": args.methods.split(","),
            "seed": 0,
        }
        spec_path = task_dir / "bench_spec.json"
        spec_path.write_text(json.dumps(spec, indent=2))
        bench_dir = task_dir / "bench"
        code = cli(["benchmark", "--spec", str(spec_path), "--out-dir", str(bench_dir),
                    "--workers", str(args.workers)])
        if code != 0:
            return code
        code = cli(["report", "--in-dir", str(bench_dir), "--out", str(task_dir / "summary.json")])
        if code != 0:
            return code
    return 0


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="benchmark_runs")
    parser.add_argument("--repeats", type=int, default=33)
    parser.add_argument("--methods", default="iid,kt,kmedoids")
    parser.add_argument("--workers", type=int, default=1)
    raise SystemExit(run(parser.parse_args()))
