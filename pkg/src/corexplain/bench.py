"""Benchmark protocol: ground truth on full validation data, repeated coreset
trials per compression method, error/stability/timing aggregation, inequality
checks for the marginalization and global-explanation bounds, and rank summaries.

Per estimator: the ground-truth explanation uses the full validation sample
as background (and foreground where applicable, truncated to 20x the coreset
size for large n, averaged over 3 runs for stochastic estimators).  Each
repeat then compresses the validation sample with seed = repeat index and
scores the coreset-based explanation against the truth with MAE and top-k
precision.  i.i.d. selection time is recorded as 0 by convention.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .compress import CompressorConfig, natural_size, select_coreset
from .data import Dataset, subset
from .errors import ConfigError
from .explain import (
    ExplainConfig,
    expected_gradients_batch,
    feature_effects,
    flatten_feature_effects,
    kernel_sage,
    kernel_shap,
    marginalize,
    pd_grids,
    permutation_sage,
    permutation_shap,
    shap_attributions,
)
from .kernels import GaussianKernel, default_bandwidth
from .metrics import mae, mmd_biased_sq, topk_precision
from .models import MLPModel, predict_function, scalar_function
from .rng import substream

ESTIMATORS = (
    "kernel_shap",
    "permutation_shap",
    "kernel_sage",
    "permutation_sage",
    "kernel_sage_fg",
    "permutation_sage_fg",
    "expected_gradients",
    "feature_effects",
)
IMPORTANCE_ESTIMATORS = tuple(e for e in ESTIMATORS if e != "feature_effects")
DEFAULT_METHODS = ("iid", "kt", "kmedoids")
TRUNCATE_FACTOR = 20
BOUND_SLACK = 1e-12


@dataclass
class TrialSpec:
    dataset_id: str
    explainer: str
    compressor: CompressorConfig = field(default_factory=CompressorConfig)
    repeats: int = 33
    topk: int | None = None  # None -> 5, or 3 when d <= 8
    ground_truth_repeats: int = 3
    seed: int = 0
    methods: tuple[str, ...] = DEFAULT_METHODS
    truncate_factor: int = TRUNCATE_FACTOR
    explain: ExplainConfig = field(default_factory=ExplainConfig)
    model_path: str = ""

    def __post_init__(self):
        if self.explainer not in ESTIMATORS:
            raise ConfigError(f"unknown explainer {self.explainer!r}")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")


@dataclass
class GroundTruth:
    explainer: str
    tensor: np.ndarray
    runs: list[np.ndarray]
    importance: np.ndarray | None
    eval_indices: np.ndarray
    grids: dict | None
    elapsed_seconds: float


@dataclass
class BenchResult:
    explainer: str
    records: list[dict]
    aggregates: dict


def resolve_topk(spec: TrialSpec, d: int) -> int:
    if spec.topk is not None:
        return spec.topk
    return 3 if d <= 8 else 5


def coreset_nominal_size(spec: TrialSpec, n: int) -> int:
    if spec.compressor.target_size is not None:
        return spec.compressor.target_size
    return natural_size("kt", n)


def evaluation_indices(spec: TrialSpec, data: Dataset) -> np.ndarray:
    """Rows explained and used as the ground-truth background.

    The validation sample is truncated (seeded, without replacement) to
    ``truncate_factor`` x the coreset size when it is larger.
    """
    cap = spec.truncate_factor * coreset_nominal_size(spec, data.n)
    if data.n <= cap:
        return np.arange(data.n, dtype=np.int64)
    idx = substream(spec.seed, "truncate").choice(data.n, size=cap, replace=False)
    return np.sort(idx)


def is_stochastic(estimator: str, d: int, config: ExplainConfig) -> bool:
    if estimator.startswith("permutation"):
        return True
    if estimator.startswith("kernel"):
        return 2**d - 2 > config.shap_nsamples
    return False  # expected_gradients and feature_effects are deterministic


def _method_config(spec: TrialSpec, method: str, repeat: int, data: Dataset) -> CompressorConfig:
    target = spec.compressor.target_size
    if target is None and method == "iid":
        target = natural_size("iid", data.n)
    return replace(spec.compressor, method=method, seed=repeat, target_size=target)


def _explain_once(
    estimator: str,
    model: MLPModel,
    eval_data: Dataset,
    background: Dataset,
    config: ExplainConfig,
    grids: dict | None,
):
    """One explanation run; returns (comparison tensor, importance vector or None).

    Model evaluation runs in float32 here: the benchmark sweeps millions of
    marginalized rows and the ~1e-7 rounding is far below Monte Carlo noise.
    """
    if estimator in ("kernel_shap", "permutation_shap"):
        fn = scalar_function(model, config.class_index, single_precision=True)
        attr = shap_attributions(estimator, fn, eval_data.features, background.features, config)
        return attr.values, attr.importance()
    if estimator.startswith(("kernel_sage", "permutation_sage")):
        fg = background if estimator.endswith("_fg") else eval_data
        sage_fn = kernel_sage if estimator.startswith("kernel") else permutation_sage
        gi = sage_fn(predict_function(model, single_precision=True), fg, background.features, config)
        return gi.values, np.abs(gi.values)
    if estimator == "expected_gradients":
        attr = expected_gradients_batch(model, eval_data.features, background.features, config)
        return attr.values, attr.importance()
    if estimator == "feature_effects":
        fn = scalar_function(model, config.class_index, single_precision=True)
        fe = feature_effects(fn, background.features, grids=grids)
        return flatten_feature_effects(fe), None
    raise ConfigError(f"unknown explainer {estimator!r}")


def _resolve_losses(spec: TrialSpec, data: Dataset) -> ExplainConfig:
    cfg = spec.explain
    loss = "cross_entropy" if data.task_kind == "classification" else "mse"
    class_index = cfg.class_index if data.task_kind == "classification" else None
    return replace(cfg, loss=loss, class_index=class_index)


def _child(cfg: ExplainConfig, spec: TrialSpec, *path) -> ExplainConfig:
    return replace(cfg, seed=int(substream(spec.seed, *path).integers(0, 2**31 - 1)))


def compute_ground_truth(spec: TrialSpec, model: MLPModel, data: Dataset) -> GroundTruth:
    """Explanation on the (truncated) full validation sample, no compression.

    Stochastic estimators are averaged over ``ground_truth_repeats`` seeded
    runs; deterministic ones collapse to a single run.
    """
    start = time.perf_counter()
    eval_idx = evaluation_indices(spec, data)
    eval_data = subset(data, eval_idx)
    cfg = _resolve_losses(spec, data)
    grids = pd_grids(eval_data.features) if spec.explainer == "feature_effects" else None
    repeats = spec.ground_truth_repeats if is_stochastic(spec.explainer, data.d, cfg) else 1
    runs = []
    importance = None
    for r in range(repeats):
        tensor, importance = _explain_once(
            spec.explainer, model, eval_data, eval_data, _child(cfg, spec, "gt", spec.explainer, r), grids
        )
        runs.append(np.asarray(tensor, dtype=np.float64))
    mean_tensor = np.mean(runs, axis=0)
    if importance is not None and spec.explainer in ("kernel_shap", "permutation_shap", "expected_gradients"):
        importance = np.abs(mean_tensor).mean(axis=0)
    elif importance is not None:
        importance = np.abs(mean_tensor)
    return GroundTruth(
        explainer=spec.explainer,
        tensor=mean_tensor,
        runs=runs,
        importance=importance,
        eval_indices=eval_idx,
        grids=grids,
        elapsed_seconds=time.perf_counter() - start,
    )


def run_trials(
    spec: TrialSpec,
    model: MLPModel,
    data: Dataset,
    truth: GroundTruth,
    skip: frozenset[tuple[str, int]] = frozenset(),
) -> BenchResult:
    """33-repeat (by default) compression trials for each method.

    Each repeat compresses the validation sample with seed = repeat index,
    estimates the explanation on the coreset, and records MAE against the
    ground truth, top-k precision for importance-style explainers, and
    compression/explanation wall-clock seconds.  Failed repeats are recorded,
    not raised; aggregates exclude them.  (method, repeat) pairs in ``skip``
    are left out, which lets a resumed run fill in only the missing repeats.
    """
    eval_data = subset(data, truth.eval_indices)
    cfg = _resolve_losses(spec, data)
    k = resolve_topk(spec, data.d)
    records: list[dict] = []
    for method in spec.methods:
        for r in range(spec.repeats):
            if (method, r) in skip:
                continue
            record = {
                "dataset": spec.dataset_id,
                "estimator": spec.explainer,
                "method": method,
                "seed": r,
                "failed": False,
            }
            try:
                ccfg = _method_config(spec, method, r, data)
                selection = select_coreset(data, ccfg)
                background = subset(data, selection.indices)
                t0 = time.perf_counter()
                tensor, importance = _explain_once(
                    spec.explainer, model, eval_data, background,
                    _child(cfg, spec, "trial", spec.explainer, method, r), truth.grids,
                )
                explain_seconds = time.perf_counter() - t0
                record.update(
                    {
                        "coreset_size": int(selection.indices.shape[0]),
                        "mae": mae(tensor, truth.tensor),
                        "topk_precision": (
                            None
                            if truth.importance is None
                            else topk_precision(importance, truth.importance, k)
                        ),
                        "compress_seconds": 0.0 if method == "iid" else selection.elapsed_seconds,
                        "explain_seconds": explain_seconds,
                    }
                )
            except Exception as exc:  # failures are first-class records
                record.update({"failed": True, "error": f"{type(exc).__name__}: {exc}"})
            records.append(record)
    records.sort(key=lambda rec: (rec["method"], rec["seed"]))
    return BenchResult(explainer=spec.explainer, records=records, aggregates=aggregate_records(records))


def aggregate_records(records: list[dict]) -> dict:
    """Per-method mean / sd / standard error of MAE and top-k, plus comparisons."""
    methods = sorted({rec["method"] for rec in records})
    out: dict = {"methods": {}}
    for method in methods:
        rows = [rec for rec in records if rec["method"] == method and not rec["failed"]]
        failures = sum(1 for rec in records if rec["method"] == method and rec["failed"])
        stats = {"count": len(rows), "failures": failures}
        for key in ("mae", "topk_precision", "compress_seconds", "explain_seconds"):
            vals = np.array([rec[key] for rec in rows if rec.get(key) is not None], dtype=np.float64)
            if vals.size:
                stats[f"{key}_mean"] = float(vals.mean())
                stats[f"{key}_sd"] = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
                stats[f"{key}_se"] = stats[f"{key}_sd"] / math.sqrt(vals.size) if vals.size > 1 else 0.0
        out["methods"][method] = stats
    if "kt" in out["methods"] and "iid" in out["methods"]:
        kt_mae = [r["mae"] for r in records if r["method"] == "kt" and not r["failed"]]
        iid_mae = [r["mae"] for r in records if r["method"] == "iid" and not r["failed"]]
        if kt_mae and iid_mae:
            mean_iid = float(np.mean(iid_mae))
            mean_kt = float(np.mean(kt_mae))
            paired = min(len(kt_mae), len(iid_mae))
            out["kt_vs_iid"] = {
                "improvement_pct": 100.0 * (1.0 - mean_kt / mean_iid) if mean_iid > 0 else 0.0,
                "welch_p_one_sided": (
                    welch_one_sided(kt_mae, iid_mae) if len(kt_mae) > 1 and len(iid_mae) > 1 else None
                ),
                "wins": int(np.sum(np.asarray(kt_mae)[:paired] < np.asarray(iid_mae)[:paired])),
            }
    return out


# ---------------------------------------------------------------------------
# Inequality checks (marginalization and global-explanation bounds)
# ---------------------------------------------------------------------------


def bound_check(
    model: MLPModel,
    data: Dataset,
    coreset_indices: np.ndarray,
    n_draws: int = 100,
    seed: int = 0,
    class_index: int = 1,
) -> list[dict]:
    """Marginalization-gap bound on 1-D marginalized slices.

    For random (x, s) with a single marginalized feature j: the gap between
    marginalizing over the full sample and over the coreset must not exceed
    C_f x the KDE-L2 MMD between the two samples' j-th columns, with C_f = 1
    for classification posteriors.
    """
    if model.head != "softmax":
        raise ConfigError("the marginalization bound check requires a classification model (C_f = 1)")
    fn = scalar_function(model, class_index)
    coreset = subset(data, coreset_indices)
    kernel_1d = GaussianKernel(default_bandwidth(1))
    rng = substream(seed, "bound-check")
    records = []
    for t in range(n_draws):
        i = int(rng.integers(0, data.n))
        j = int(rng.integers(0, data.d))
        x = data.features[i]
        s = [q for q in range(data.d) if q != j]
        lhs = abs(marginalize(fn, x, s, data) - marginalize(fn, x, s, coreset))
        rhs = math.sqrt(
            mmd_biased_sq(data.features[:, [j]], coreset.features[:, [j]], kernel_1d)
        )
        records.append(
            {
                "draw": t,
                "row": i,
                "feature": j,
                "lhs": float(lhs),
                "rhs": float(rhs),
                "satisfied": bool(lhs <= rhs + BOUND_SLACK),
            }
        )
    return records


def bound_check_global(
    model: MLPModel,
    data: Dataset,
    coreset_indices: np.ndarray,
    n_draws: int = 100,
    seed: int = 0,
    class_index: int = 1,
    batch: int = 64,
) -> list[dict]:
    """Aggregated-explanation bound on 1-D marginalized slices.

    Each draw fixes a feature j and a batch of instances; the vector-valued
    local explanation g(t) = [f(x_i with feature j := t)]_i is aggregated
    over the j-th column of the full sample and of the coreset.  The L2 gap
    between the aggregates must not exceed C_g x the KDE-L2 MMD of the two
    columns, with C_g measured as the largest ||g(t)||_2 seen in the draw.
    """
    if model.head != "softmax":
        raise ConfigError("the global bound check requires a classification model")
    fn = scalar_function(model, class_index)
    coreset = subset(data, coreset_indices)
    kernel_1d = GaussianKernel(default_bandwidth(1))
    rng = substream(seed, "bound-global")
    records = []
    n_full = data.n
    for t in range(n_draws):
        rows = rng.integers(0, data.n, size=batch)
        j = int(rng.integers(0, data.d))
        slice_values = np.concatenate([data.features[:, j], coreset.features[:, j]])
        tiles = np.repeat(data.features[rows][:, None, :], slice_values.shape[0], axis=1)
        tiles[:, :, j] = slice_values[None, :]
        G = np.asarray(fn(tiles.reshape(-1, data.d))).reshape(batch, -1).T
        G_full = G[:n_full].mean(axis=0)
        G_coreset = G[n_full:].mean(axis=0)
        lhs = float(np.linalg.norm(G_full - G_coreset))
        c_g = float(np.sqrt((G**2).sum(axis=1)).max())
        rhs = c_g * math.sqrt(
            mmd_biased_sq(data.features[:, [j]], coreset.features[:, [j]], kernel_1d)
        )
        records.append(
            {"draw": t, "feature": j, "lhs": lhs, "rhs": rhs, "c_g": c_g, "satisfied": bool(lhs <= rhs + BOUND_SLACK)}
        )
    return records


# ---------------------------------------------------------------------------
# Summaries
# ---------------------------------------------------------------------------


def _average_ranks(values: dict[str, float]) -> dict[str, float]:
    """Rank methods by value ascending; ties share the average rank."""
    items = sorted(values.items(), key=lambda kv: kv[1])
    ranks: dict[str, float] = {}
    i = 0
    while i < len(items):
        j = i
        while j + 1 < len(items) and items[j + 1][1] == items[i][1]:
            j += 1
        avg = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[items[k][0]] = avg
        i = j + 1
    return ranks


def summarize(results: list[BenchResult], dataset_ids: list[str] | None = None) -> dict:
    """Per-cell method table with kt-vs-iid improvement and average ranks."""
    if not results:
        raise ConfigError("summarize needs at least one result")
    cells = []
    rank_sums: dict[str, float] = {}
    rank_counts: dict[str, int] = {}
    for res in results:
        methods = res.aggregates["methods"]
        maes = {m: s["mae_mean"] for m, s in methods.items() if "mae_mean" in s}
        cell = {
            "estimator": res.explainer,
            "dataset": res.records[0]["dataset"] if res.records else "",
            "methods": methods,
        }
        if "kt_vs_iid" in res.aggregates:
            cell["kt_vs_iid"] = res.aggregates["kt_vs_iid"]
        if maes:
            ranks = _average_ranks(maes)
            cell["ranks"] = ranks
            for m, rank in ranks.items():
                rank_sums[m] = rank_sums.get(m, 0.0) + rank
                rank_counts[m] = rank_counts.get(m, 0) + 1
        cells.append(cell)
    return {
        "cells": cells,
        "average_ranks": {m: rank_sums[m] / rank_counts[m] for m in rank_sums},
    }


# ---------------------------------------------------------------------------
# Welch's one-sided t-test (local implementation)
# ---------------------------------------------------------------------------


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 200):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-14:
            break
    return h


def _betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_bt = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    )
    bt = math.exp(ln_bt)
    if x < (a + 1.0) / (a + b + 2.0):
        return bt * _betacf(a, b, x) / a
    return 1.0 - bt * _betacf(b, a, 1.0 - x) / b


def t_cdf(t: float, df: float) -> float:
    """CDF of Student's t distribution with ``df`` degrees of freedom."""
    if df <= 0:
        raise ConfigError("degrees of freedom must be positive")
    x = df / (df + t * t)
    p = 0.5 * _betainc(0.5 * df, 0.5, x)
    return p if t <= 0 else 1.0 - p


def welch_one_sided(a, b) -> float:
    """p-value of Welch's t-test for the alternative mean(a) < mean(b)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ConfigError("Welch's test needs at least 2 observations per sample")
    va, vb = a.var(ddof=1), b.var(ddof=1)
    na, nb = a.size, b.size
    se_sq = va / na + vb / nb
    if se_sq == 0.0:
        return 0.0 if a.mean() < b.mean() else 1.0
    t = (a.mean() - b.mean()) / math.sqrt(se_sq)
    df = se_sq**2 / ((va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1))
    return t_cdf(t, df)


# ---------------------------------------------------------------------------
# Record serialization
# ---------------------------------------------------------------------------

TIMING_KEYS = ("compress_seconds", "explain_seconds")


def canonical_record(record: dict, include_timing: bool = True) -> str:
    """Canonical JSON line for a trial record; timing keys optional.

    Wall-clock fields are the one part of a record that cannot reproduce
    across runs, so determinism checks compare with ``include_timing=False``.
    """
    payload = {k: v for k, v in record.items() if include_timing or k not in TIMING_KEYS}
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def write_records(records: list[dict], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(canonical_record(rec) + "\n")


def read_records(path: str) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def ground_truth_to_dict(truth: GroundTruth) -> dict:
    from .data import array_to_b64

    payload = {
        "schema": "corexplain.ground-truth/1",
        "explainer": truth.explainer,
        "tensor_shape": list(truth.tensor.shape),
        "tensor_b64": array_to_b64(truth.tensor),
        "runs": [array_to_b64(run) for run in truth.runs],
        "eval_indices": [int(i) for i in truth.eval_indices],
        "elapsed_seconds": float(truth.elapsed_seconds),
        "importance": None if truth.importance is None else [float(v) for v in truth.importance],
    }
    if truth.grids is not None:
        payload["grid_1d_b64"] = array_to_b64(truth.grids["grid_1d"])
        payload["grid_1d_shape"] = list(truth.grids["grid_1d"].shape)
        payload["grid_2d_b64"] = array_to_b64(truth.grids["grid_2d"])
        payload["grid_2d_shape"] = list(truth.grids["grid_2d"].shape)
    return payload


def ground_truth_from_dict(payload: dict) -> GroundTruth:
    from .data import array_from_b64

    shape = tuple(payload["tensor_shape"])
    tensor = array_from_b64(payload["tensor_b64"], shape)
    grids = None
    if "grid_1d_b64" in payload:
        grids = {
            "grid_1d": array_from_b64(payload["grid_1d_b64"], tuple(payload["grid_1d_shape"])),
            "grid_2d": array_from_b64(payload["grid_2d_b64"], tuple(payload["grid_2d_shape"])),
        }
    return GroundTruth(
        explainer=payload["explainer"],
        tensor=tensor,
        runs=[array_from_b64(r, shape) for r in payload["runs"]],
        importance=None if payload["importance"] is None else np.asarray(payload["importance"]),
        eval_indices=np.asarray(payload["eval_indices"], dtype=np.int64),
        grids=grids,
        elapsed_seconds=float(payload["elapsed_seconds"]),
    )
