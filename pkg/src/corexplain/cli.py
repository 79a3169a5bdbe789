"""Command-line surface: preprocess, train, compress, distance, explain,
benchmark, report.

Every command writes its artifacts plus a run manifest (config snapshot,
input hashes, seeds, artifact paths) sufficient to re-run it exactly.  All
randomness flows from --seed through named substreams.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .bench import (
    BenchResult,
    TrialSpec,
    aggregate_records,
    canonical_record,
    compute_ground_truth,
    ground_truth_from_dict,
    ground_truth_to_dict,
    read_records,
    run_trials,
    summarize,
)
from .compress import CompressorConfig, CoresetSelection, select_coreset
from .data import (
    Dataset,
    PreprocessSpec,
    dataset_to_dict,
    fit_apply_preprocess,
    load_csv,
    load_dataset,
    save_dataset,
    split_75_25,
    subset,
)
from .errors import ConfigError, CorexplainError
from .explain import (
    ExplainConfig,
    artifact_csv_rows,
    attribution_to_dict,
    expected_gradients_batch,
    feature_effects,
    feature_effects_to_dict,
    global_importance_to_dict,
    kernel_sage,
    permutation_sage,
    shap_attributions,
)
from .kernels import GaussianKernel, default_bandwidth
from .metrics import discrepancy_report
from .models import TrainConfig, load_weights, save_weights, scalar_function, train

WORKERS_ENV = "COREXPLAIN_WORKERS"


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path: str, payload: dict) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def write_manifest(out_path: str, command: str, config: dict, inputs: list[str], artifacts: list[str], seeds: dict) -> str:
    manifest = {
        "schema": "corexplain.manifest/1",
        "tool_version": __version__,
        "command": command,
        "config": config,
        "inputs": {p: _sha256(p) for p in inputs},
        "seeds": seeds,
        "artifacts": artifacts,
    }
    path = out_path + ".manifest.json"
    _write_json(path, manifest)
    return path


def _load_background(path: str, data: Dataset) -> tuple[Dataset, dict]:
    """A background file is either a coreset JSON (indices into --data) or a dataset."""
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("schema") == "corexplain.coreset/1":
        sel = CoresetSelection.from_dict(payload)
        return subset(data, sel.indices), payload
    return load_dataset(path), payload


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_preprocess(args) -> int:
    raw = load_csv(args.csv, label_column=args.label)
    split = split_75_25(raw, seed=args.seed)
    train_raw = subset(raw, split.train_indices)
    valid_raw = subset(raw, split.valid_indices)
    spec = PreprocessSpec(
        standardize=not args.no_standardize,
        categorical_encoding=args.encoding,
    )
    train_ds, (valid_ds,), spec = fit_apply_preprocess(train_raw, [valid_raw], spec)
    outdir = Path(args.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    train_path, valid_path, stats_path = (
        str(outdir / "train.json"),
        str(outdir / "valid.json"),
        str(outdir / "stats.json"),
    )
    save_dataset(train_ds, train_path)
    save_dataset(valid_ds, valid_path)
    _write_json(stats_path, spec.fitted_stats.to_dict())
    write_manifest(
        str(outdir / "preprocess"), "preprocess",
        {"csv": args.csv, "label": args.label, "encoding": args.encoding, "standardize": not args.no_standardize},
        [args.csv], [train_path, valid_path, stats_path], {"split_seed": args.seed},
    )
    print(f"train n={train_ds.n} valid n={valid_ds.n} d={train_ds.d} task={train_ds.task_kind}")
    return 0


def cmd_train(args) -> int:
    data = load_dataset(args.data)
    hidden = tuple(int(h) for h in args.hidden.split(",") if h)
    loss = args.loss or ("cross_entropy" if data.task_kind == "classification" else "mse")
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr, seed=args.seed, loss=loss)
    model = train(data, cfg, hidden=hidden)
    save_weights(model, args.out)
    write_manifest(
        args.out, "train",
        {"epochs": cfg.epochs, "batch_size": cfg.batch_size, "lr": cfg.learning_rate, "loss": loss, "hidden": list(hidden)},
        [args.data], [args.out], {"seed": args.seed},
    )
    print(f"trained {model.layer_dims} stats={model.train_stats}")
    return 0


def cmd_compress(args) -> int:
    data = load_dataset(args.data)
    kernel = GaussianKernel(args.sigma) if args.sigma else None
    cfg = CompressorConfig(method=args.method, seed=args.seed, oversample_g=args.g, target_size=args.size, kernel=kernel)
    selection = select_coreset(data, cfg)
    _write_json(args.out, selection.to_dict())
    write_manifest(
        args.out, "compress",
        {"method": args.method, "size": args.size, "sigma": args.sigma, "g": args.g},
        [args.data], [args.out], {"seed": args.seed},
    )
    print(f"size={selection.indices.shape[0]} elapsed={selection.elapsed_seconds:.3f}s")
    return 0


def cmd_distance(args) -> int:
    data = load_dataset(args.data)
    with open(args.coreset, encoding="utf-8") as fh:
        selection = CoresetSelection.from_dict(json.load(fh))
    coreset = subset(data, selection.indices)
    kernel = GaussianKernel(selection.sigma) if selection.sigma > 0 else GaussianKernel(default_bandwidth(data.d))
    report = discrepancy_report(data.features, coreset.features, kernel, bins=args.bins, seed=args.seed)
    _write_json(args.out, {"schema": "corexplain.discrepancy/1", **report.to_dict()})
    write_manifest(
        args.out, "distance", {"bins": args.bins},
        [args.data, args.coreset], [args.out], {"seed": args.seed},
    )
    print(json.dumps(report.to_dict(), sort_keys=True))
    return 0


def cmd_explain(args) -> int:
    data = load_dataset(args.data)
    model = load_weights(args.model)
    if model.input_dim != data.d:
        raise ConfigError(f"model expects d={model.input_dim}, dataset has d={data.d}")
    background, _ = _load_background(args.background, data)
    cfg = ExplainConfig(
        npermutations=args.npermutations,
        shap_nsamples=args.nsamples,
        n_steps=args.n_steps,
        loss="cross_entropy" if data.task_kind == "classification" else "mse",
        seed=args.seed,
        class_index=args.class_index if model.head == "softmax" else None,
    )
    estimator = args.estimator
    if estimator in ("kernel_shap", "permutation_shap"):
        fn = scalar_function(model, cfg.class_index)
        artifact = shap_attributions(estimator, fn, data.features, background.features, cfg)
        payload = attribution_to_dict(artifact)
    elif estimator in ("kernel_sage", "permutation_sage", "kernel_sage_fg", "permutation_sage_fg"):
        fg = background if estimator.endswith("_fg") else data
        if fg.labels is None:
            raise ConfigError(f"{estimator} needs labels on the foreground data")
        fn = kernel_sage if estimator.startswith("kernel") else permutation_sage
        artifact = fn(model.predict, fg, background.features, cfg)
        payload = global_importance_to_dict(artifact)
    elif estimator == "expected_gradients":
        artifact = expected_gradients_batch(model, data.features, background.features, cfg)
        payload = attribution_to_dict(artifact)
    elif estimator == "feature_effects":
        fn = scalar_function(model, cfg.class_index)
        artifact = feature_effects(fn, background.features)
        payload = feature_effects_to_dict(artifact)
    else:
        raise ConfigError(f"unknown estimator {args.estimator!r}")
    _write_json(args.out, payload)
    csv_path = os.path.splitext(args.out)[0] + ".csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh).writerows(artifact_csv_rows(artifact))
    write_manifest(
        args.out, "explain",
        {"estimator": estimator, "npermutations": cfg.npermutations, "nsamples": cfg.shap_nsamples,
         "n_steps": cfg.n_steps, "class_index": cfg.class_index},
        [args.model, args.data, args.background], [args.out, csv_path], {"seed": args.seed},
    )
    print(f"wrote {args.out} and {csv_path}")
    return 0


def _parse_bench_spec(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    for key in ("dataset", "model", "estimators"):
        if key not in raw:
            raise ConfigError(f"benchmark spec is missing {key!r}")
    return raw


def _trial_spec(raw: dict, estimator: str, d: int) -> TrialSpec:
    comp = raw.get("compressor", {})
    kernel = GaussianKernel(comp["sigma"]) if comp.get("sigma") else None
    compressor = CompressorConfig(
        method="kt",
        seed=0,
        oversample_g=comp.get("g", 4),
        target_size=comp.get("target_size"),
        kernel=kernel,
    )
    explain_cfg = ExplainConfig(**raw.get("explain", {}))
    return TrialSpec(
        dataset_id=raw.get("dataset_id", Path(raw["dataset"]).stem),
        explainer=estimator,
        compressor=compressor,
        repeats=raw.get("repeats", 33),
        topk=raw.get("topk"),
        ground_truth_repeats=raw.get("ground_truth_repeats", 3),
        seed=raw.get("seed", 0),
        methods=tuple(raw.get("methods", ["iid", "kt", "kmedoids"])),
        truncate_factor=raw.get("truncate_factor", 20),
        explain=explain_cfg,
        model_path=raw["model"],
    )


def _run_method_trials(payload):
    """Worker task: one method's repeats for one estimator."""
    spec, model_path, dataset_path, truth_payload, skip = payload
    model = load_weights(model_path)
    data = load_dataset(dataset_path)
    truth = ground_truth_from_dict(truth_payload)
    return run_trials(spec, model, data, truth, skip=skip).records


def cmd_benchmark(args) -> int:
    raw = _parse_bench_spec(args.spec)
    data = load_dataset(raw["dataset"])
    model = load_weights(raw["model"])
    if model.input_dim != data.d:
        raise ConfigError(f"model expects d={model.input_dim}, dataset has d={data.d}")
    outdir = Path(args.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    spec_hash = _sha256(args.spec)

    existing: dict[tuple, dict] = {}
    records_path = str(outdir / "records.jsonl")
    state_path = outdir / "state.json"
    state_ok = False
    if state_path.exists():
        state_ok = json.loads(state_path.read_text()).get("spec_hash") == spec_hash
    if state_ok and os.path.exists(records_path):
        for rec in read_records(records_path):
            existing[(rec["estimator"], rec["method"], rec["seed"])] = rec

    workers = args.workers or int(os.environ.get(WORKERS_ENV, "1"))
    all_records: list[dict] = []
    aggregates: dict = {}
    for estimator in raw["estimators"]:
        spec = _trial_spec(raw, estimator, data.d)
        gt_path = outdir / f"ground_truth_{estimator}.json"
        truth = None
        if state_ok and gt_path.exists():
            try:
                truth = ground_truth_from_dict(json.loads(gt_path.read_text()))
            except (KeyError, ValueError):
                truth = None
        if truth is None:
            truth = compute_ground_truth(spec, model, data)
            _write_json(str(gt_path), ground_truth_to_dict(truth))

        done = [rec for (est, _m, _s), rec in existing.items() if est == estimator]
        skip = frozenset(
            (m, s) for (est, m, s) in existing if est == estimator
        )
        todo_methods = [
            m for m in spec.methods
            if any((estimator, m, r) not in existing for r in range(spec.repeats))
        ]
        records = list(done)
        if todo_methods:
            if workers > 1 and len(todo_methods) > 1:
                payloads = [
                    (replace(spec, methods=(m,)), raw["model"], raw["dataset"], ground_truth_to_dict(truth), skip)
                    for m in todo_methods
                ]
                with ProcessPoolExecutor(max_workers=workers) as pool:
                    for recs in pool.map(_run_method_trials, payloads):
                        records.extend(recs)
            else:
                for m in todo_methods:
                    result = run_trials(replace(spec, methods=(m,)), model, data, truth, skip=skip)
                    records.extend(result.records)
        records.sort(key=lambda r: (r["method"], r["seed"]))
        aggregates[estimator] = aggregate_records(records)
        all_records.extend(records)

    all_records.sort(key=lambda r: (r["estimator"], r["method"], r["seed"]))
    with open(records_path, "w", encoding="utf-8") as fh:
        for rec in all_records:
            fh.write(canonical_record(rec) + "\n")
    _write_json(str(outdir / "aggregate.json"), {"schema": "corexplain.aggregate/1", "estimators": aggregates})
    _write_csv_results(all_records, aggregates, str(outdir / "results.csv"))
    _write_json(str(state_path), {"spec_hash": spec_hash})
    write_manifest(
        str(outdir / "benchmark"), "benchmark",
        {"spec": raw}, [args.spec, raw["dataset"], raw["model"]],
        [records_path, str(outdir / "aggregate.json"), str(outdir / "results.csv")],
        {"seed": raw.get("seed", 0)},
    )
    print(f"wrote {records_path}")
    return 0


def _write_csv_results(records: list[dict], aggregates: dict, path: str) -> None:
    """Plot-ready long format: one row per (dataset, estimator, method)."""
    rows = [("dataset", "estimator", "method", "size", "mae_mean", "mae_sd", "topk_mean", "seconds")]
    for estimator, agg in aggregates.items():
        for method, stats in agg["methods"].items():
            rec = next(
                (r for r in records if r["estimator"] == estimator and r["method"] == method and not r["failed"]),
                {},
            )
            seconds = stats.get("compress_seconds_mean", 0.0) + stats.get("explain_seconds_mean", 0.0)
            rows.append(
                (
                    rec.get("dataset", ""),
                    estimator,
                    method,
                    rec.get("coreset_size", ""),
                    stats.get("mae_mean", ""),
                    stats.get("mae_sd", ""),
                    stats.get("topk_precision_mean", ""),
                    seconds,
                )
            )
    with open(path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh).writerows(rows)


def cmd_report(args) -> int:
    records_path = Path(args.in_dir) / "records.jsonl"
    if not records_path.exists():
        raise ConfigError(f"no records.jsonl under {args.in_dir}")
    records = read_records(str(records_path))
    by_est: dict[str, list[dict]] = {}
    for rec in records:
        by_est.setdefault(rec["estimator"], []).append(rec)
    results = [
        BenchResult(explainer=est, records=recs, aggregates=aggregate_records(recs))
        for est, recs in sorted(by_est.items())
    ]
    summary = summarize(results)
    _write_json(args.out, {"schema": "corexplain.summary/1", **summary})
    for cell in summary["cells"]:
        line = f"{cell['dataset']}/{cell['estimator']}:"
        for method, stats in sorted(cell["methods"].items()):
            if "mae_mean" in stats:
                line += f"  {method} mae={stats['mae_mean']:.5g}±{stats['mae_sd']:.2g}"
        if "kt_vs_iid" in cell:
            line += f"  [kt vs iid: {cell['kt_vs_iid']['improvement_pct']:.1f}% better, p={cell['kt_vs_iid']['welch_p_one_sided']:.3g}]"
        print(line)
    print("average ranks:", json.dumps(summary["average_ranks"], sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="corexplain", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("preprocess", help="parse a CSV, split 75:25, fit and apply preprocessing")
    sp.add_argument("--csv", required=True)
    sp.add_argument("--label", default=None)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--no-standardize", action="store_true")
    sp.add_argument("--encoding", choices=["target_encode", "none"], default="target_encode")
    sp.set_defaults(func=cmd_preprocess)

    sp = sub.add_parser("train", help="train a feed-forward model on a dataset file")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--epochs", type=int, default=50)
    sp.add_argument("--batch-size", type=int, default=64)
    sp.add_argument("--lr", type=float, default=0.05)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--loss", choices=["cross_entropy", "mse"], default=None)
    sp.add_argument("--hidden", default="128,64")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("compress", help="select a coreset from a dataset file")
    sp.add_argument("--data", required=True)
    sp.add_argument("--method", choices=["iid", "kt", "kmedoids"], default="kt")
    sp.add_argument("--size", type=int, default=None)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--sigma", type=float, default=None)
    sp.add_argument("--g", type=int, default=4)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_compress)

    sp = sub.add_parser("distance", help="distribution discrepancies between a dataset and a coreset")
    sp.add_argument("--data", required=True)
    sp.add_argument("--coreset", required=True)
    sp.add_argument("--bins", type=int, default=32)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_distance)

    sp = sub.add_parser("explain", help="estimate an explanation with a background sample")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--background", required=True, help="coreset JSON (indices into --data) or dataset file")
    sp.add_argument(
        "--estimator",
        required=True,
        choices=[
            "kernel_shap", "permutation_shap", "kernel_sage", "permutation_sage",
            "kernel_sage_fg", "permutation_sage_fg", "expected_gradients", "feature_effects",
        ],
    )
    sp.add_argument("--npermutations", type=int, default=10)
    sp.add_argument("--nsamples", type=int, default=2048)
    sp.add_argument("--n-steps", type=int, default=50)
    sp.add_argument("--class-index", type=int, default=1)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_explain)

    sp = sub.add_parser("benchmark", help="run the ground-truth + repeated-trials protocol from a spec file")
    sp.add_argument("--spec", required=True)
    sp.add_argument("--workers", type=int, default=None)
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(func=cmd_benchmark)

    sp = sub.add_parser("report", help="summary table with improvements and average ranks")
    sp.add_argument("--in-dir", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_report)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CorexplainError, FileNotFoundError, IndexError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
