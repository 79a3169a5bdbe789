"""Explanation estimators built on feature marginalization.

Local attributions (exact Shapley, permutation and kernel SHAP, expected
gradients), global importances (permutation and kernel SAGE), and partial
dependence feature effects.  All removal-based estimators marginalize
unobserved features with a background sample: a coalition value is

    v(S) = mean over background rows b of f(x_S, b_{S complement}).
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset
from .errors import ConfigError, ShapeError
from .models import MLPModel, grad_input
from .rng import substream

EXACT_SHAP_MAX_DIM = 12
EXHAUSTIVE_PERMUTATION_MAX_DIM = 8
GRID_1D = 100
GRID_2D = 10


@dataclass
class ExplainConfig:
    npermutations: int = 10          # antithetic pairs for permutation estimators
    shap_nsamples: int = 2048        # coalition budget for kernel estimators
    n_steps: int = 50                # quadrature nodes for expected gradients
    quadrature: str = "gauss_legendre"
    loss: str = "cross_entropy"      # SAGE loss: "cross_entropy" or "mse"
    seed: int = 0
    class_index: int | None = 1      # explained class for classification models
    exhaustive_permutations: bool = False

    def __post_init__(self):
        if self.npermutations < 1 or self.shap_nsamples < 1 or self.n_steps < 1:
            raise ConfigError("budgets must be positive")
        if self.quadrature != "gauss_legendre":
            raise ConfigError(f"unknown quadrature {self.quadrature!r}")


@dataclass
class Attribution:
    """Per-instance, per-feature attribution values with per-instance base values."""

    values: np.ndarray       # (n, d)
    base_values: np.ndarray  # (n,)
    estimator: str = ""

    def importance(self) -> np.ndarray:
        """Global ranking proxy: mean |attribution| per feature."""
        return np.abs(self.values).mean(axis=0)


@dataclass
class GlobalImportance:
    values: np.ndarray   # (d,)
    stderr: np.ndarray   # (d,)
    estimator: str = ""


@dataclass
class FeatureEffects:
    """Partial-dependence grids: per-feature 1-D curves and per-pair 2-D surfaces.

    ``grids_1d``/``effects_1d`` are (d, 100); ``grids_2d`` is the (d, 10)
    coarse axis grid shared by the 2-D surfaces; ``effects_2d`` maps the
    unordered pair (i, j), i < j, to a (10, 10) surface with axis 0 sweeping
    feature i.  ``self_effects`` is the 1-D curve on the coarse grid, used by
    the ordered-pair flattening convention.
    """

    grids_1d: np.ndarray
    effects_1d: np.ndarray
    grids_2d: np.ndarray
    effects_2d: dict[tuple[int, int], np.ndarray]
    self_effects: np.ndarray
    estimator: str = "feature_effects"


def _bg_matrix(background) -> np.ndarray:
    B = background.features if isinstance(background, Dataset) else np.asarray(background, dtype=np.float64)
    B = np.atleast_2d(B)
    if B.shape[0] == 0:
        raise ConfigError("background sample must be nonempty")
    return B


def _masked_means(f, x: np.ndarray, masks: np.ndarray, background: np.ndarray, chunk_rows: int = 32_768):
    """Mean of f over background rows for each coalition mask.

    masks is (n_masks, d) boolean; entry True means the feature is observed
    (taken from x), False means marginalized (taken from the background row).
    Returns (n_masks,) for scalar f or (n_masks, C) for vector-valued f.
    """
    B, d = background.shape
    if x.shape != (d,):
        raise ShapeError(f"instance has shape {x.shape}, background rows have {d} features")
    parts = []
    per = max(1, chunk_rows // B)
    for s in range(0, masks.shape[0], per):
        M = masks[s : s + per]
        rows = np.where(M[:, None, :], x[None, None, :], background[None, :, :])
        vals = np.asarray(f(rows.reshape(-1, d)), dtype=np.float64)
        if vals.ndim == 1:
            parts.append(vals.reshape(M.shape[0], B).mean(axis=1))
        else:
            parts.append(vals.reshape(M.shape[0], B, vals.shape[-1]).mean(axis=1))
    return np.concatenate(parts, axis=0)


def marginalize(f, x: np.ndarray, s, background) -> float:
    """Model output with the features outside ``s`` marginalized over the background.

    (1/B) sum_b f(x_s, b_sbar): features in ``s`` come from x, the rest from
    each background row in turn.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    Bmat = _bg_matrix(background)
    mask = np.zeros((1, x.shape[0]), dtype=bool)
    s_idx = np.asarray(sorted(s), dtype=np.int64)
    if s_idx.size:
        if s_idx.min() < 0 or s_idx.max() >= x.shape[0]:
            raise ConfigError(f"feature subset {s_idx} out of range for d={x.shape[0]}")
        mask[0, s_idx] = True
    return float(_masked_means(f, x, mask, Bmat)[0])


def _all_masks(d: int) -> np.ndarray:
    """All 2^d coalition masks, indexed by the integer whose bits select features."""
    ints = np.arange(2**d, dtype=np.int64)
    return ((ints[:, None] >> np.arange(d)[None, :]) & 1).astype(bool)


def exact_shap(f, x: np.ndarray, background) -> np.ndarray:
    """Brute-force Shapley values of the marginalization game (d <= 12).

    phi_j = sum over S not containing j of |S|!(d-|S|-1)!/d! (v(S+j) - v(S)).
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    d = x.shape[0]
    if d > EXACT_SHAP_MAX_DIM:
        raise ConfigError(f"exact Shapley enumerates 2^d subsets; refusing d={d} > {EXACT_SHAP_MAX_DIM}")
    Bmat = _bg_matrix(background)
    masks = _all_masks(d)
    v = _masked_means(f, x, masks, Bmat)
    sizes = masks.sum(axis=1)
    fact = [math.factorial(i) for i in range(d + 1)]
    weight_by_size = np.array([fact[s] * fact[d - 1 - s] / fact[d] for s in range(d)])
    ints = np.arange(2**d, dtype=np.int64)
    phi = np.empty(d)
    for j in range(d):
        without = ints[(ints >> j) & 1 == 0]
        phi[j] = float(np.sum(weight_by_size[sizes[without]] * (v[without + (1 << j)] - v[without])))
    return phi


def _sweep_masks(perm: np.ndarray) -> np.ndarray:
    """d+1 nested masks growing one feature at a time along ``perm``."""
    d = perm.shape[0]
    position = np.empty(d, dtype=np.int64)
    position[perm] = np.arange(d)
    return position[None, :] < np.arange(d + 1)[:, None]


def permutation_shap(f, x: np.ndarray, background, config: ExplainConfig) -> np.ndarray:
    """Monte Carlo Shapley values from permutation sweeps.

    Processes ``config.npermutations`` seeded permutations, each as an
    antithetic forward/backward pair.  With ``exhaustive_permutations`` every
    one of the d! permutations is swept once, recovering exact Shapley values.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    d = x.shape[0]
    Bmat = _bg_matrix(background)
    if config.exhaustive_permutations:
        if d > EXHAUSTIVE_PERMUTATION_MAX_DIM:
            raise ConfigError(f"exhaustive sweep over d! permutations refused for d={d}")
        perms = [np.array(p, dtype=np.int64) for p in itertools.permutations(range(d))]
    else:
        rng = substream(config.seed, "permutation_shap")
        base = [rng.permutation(d) for _ in range(config.npermutations)]
        perms = []
        for p in base:
            perms.append(p)
            perms.append(p[::-1].copy())
    masks = np.concatenate([_sweep_masks(p) for p in perms], axis=0)
    v = _masked_means(f, x, masks, Bmat).reshape(len(perms), d + 1)
    phi = np.zeros(d)
    for k, p in enumerate(perms):
        np.add.at(phi, p, v[k, 1:] - v[k, :-1])
    return phi / len(perms)


def _shapley_kernel_weight(d: int, size: int) -> float:
    return (d - 1) / (math.comb(d, size) * size * (d - size))


def _kernel_coalitions(d: int, budget: int, rng: np.random.Generator):
    """Coalition masks and weights for the kernel estimator.

    Full enumeration of proper nonempty coalitions when it fits the budget;
    otherwise paired sampling (each coalition with its complement) stratified
    by coalition size, mirroring the standard practice: small sizes are
    enumerated outright, the remainder of the budget is sampled with
    multiplicity-based weights.
    """
    total = 2**d - 2
    if total <= budget:
        masks = _all_masks(d)[1:-1]
        sizes = masks.sum(axis=1)
        weights = np.array([_shapley_kernel_weight(d, int(s)) for s in sizes])
        return masks, weights

    half = (d - 1) // 2
    n_sizes = (d - 1 + 1) // 2  # distinct size pairs (s, d - s)
    size_weight = np.array([(d - 1) / (s * (d - s)) for s in range(1, n_sizes + 1)])
    size_weight[: half] *= 2  # account for the complement size unless s == d - s
    size_weight /= size_weight.sum()

    masks_parts: list[np.ndarray] = []
    weights_parts: list[np.ndarray] = []
    remaining = budget
    remaining_weight = 1.0
    fully_done = 0
    for s in range(1, n_sizes + 1):
        paired = s <= half
        count = math.comb(d, s) * (2 if paired else 1)
        share = size_weight[s - 1] / max(remaining_weight, 1e-12)
        if count <= remaining * share:
            combos = np.array(list(itertools.combinations(range(d), s)), dtype=np.int64)
            block = np.zeros((len(combos), d), dtype=bool)
            block[np.arange(len(combos))[:, None], combos] = True
            w = _shapley_kernel_weight(d, s)
            masks_parts.append(block)
            weights_parts.append(np.full(len(block), w))
            if paired:
                masks_parts.append(~block)
                weights_parts.append(np.full(len(block), _shapley_kernel_weight(d, d - s)))
            remaining -= count
            remaining_weight -= size_weight[s - 1]
            fully_done = s
        else:
            break

    if remaining > 0 and fully_done < n_sizes:
        tail_sizes = np.arange(fully_done + 1, n_sizes + 1)
        tail_w = size_weight[tail_sizes - 1]
        tail_w = tail_w / tail_w.sum()
        seen: dict[bytes, int] = {}
        order: list[np.ndarray] = []
        n_pairs = remaining // 2
        for _ in range(max(n_pairs, 1)):
            s = int(rng.choice(tail_sizes, p=tail_w))
            members = rng.choice(d, size=s, replace=False)
            m = np.zeros(d, dtype=bool)
            m[members] = True
            for mm in (m, ~m):
                key = mm.tobytes()
                if key in seen:
                    seen[key] += 1
                else:
                    seen[key] = 1
                    order.append(mm.copy())
        block = np.array(order)
        mult = np.array([seen[m.tobytes()] for m in order], dtype=np.float64)
        # The sampled sizes share the leftover kernel-weight mass.
        w = remaining_weight * mult / mult.sum()
        masks_parts.append(block)
        weights_parts.append(w)

    return np.concatenate(masks_parts, axis=0), np.concatenate(weights_parts, axis=0)


def _solve_constrained_wls(masks: np.ndarray, weights: np.ndarray, y: np.ndarray, delta: float) -> np.ndarray:
    """Weighted least squares for attributions summing exactly to ``delta``.

    Eliminates the last feature through the sum constraint and solves the
    reduced normal equations; singular systems fall back to a ridge of 1e-10
    with a warning.
    """
    Z = masks.astype(np.float64)
    d = Z.shape[1]
    if d == 1:
        return np.array([delta])
    A = Z[:, :-1] - Z[:, -1:]
    t = y - Z[:, -1] * delta
    Aw = A * weights[:, None]
    G = Aw.T @ A
    r = Aw.T @ t
    try:
        phi_free = np.linalg.solve(G, r)
        if not np.all(np.isfinite(phi_free)):
            raise np.linalg.LinAlgError("non-finite solution")
    except np.linalg.LinAlgError:
        warnings.warn("singular kernel regression system; applying ridge 1e-10")
        phi_free = np.linalg.solve(G + 1e-10 * np.eye(d - 1), r)
    return np.append(phi_free, delta - phi_free.sum())


def kernel_shap(f, x: np.ndarray, background, config: ExplainConfig) -> np.ndarray:
    """Shapley values via the weighted least-squares coalition regression.

    Coalitions carry weights proportional to
    (d-1) / (C(d,|S|) |S| (d-|S|)); attributions are constrained to sum to
    f(x) - v(empty).  Full enumeration (exact) whenever 2^d - 2 fits the
    coalition budget.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    d = x.shape[0]
    Bmat = _bg_matrix(background)
    if config.shap_nsamples < d + 2 and 2**d - 2 > config.shap_nsamples:
        raise ConfigError(f"coalition budget {config.shap_nsamples} too small for d={d}")
    rng = substream(config.seed, "kernel_shap")
    masks, weights = _kernel_coalitions(d, config.shap_nsamples, rng)
    endpoints = np.concatenate([np.zeros((1, d), dtype=bool), np.ones((1, d), dtype=bool)], axis=0)
    v_end = _masked_means(f, x, endpoints, Bmat)
    v = _masked_means(f, x, masks, Bmat)
    v_empty, v_full = float(v_end[0]), float(v_end[1])
    return _solve_constrained_wls(masks, weights, v - v_empty, v_full - v_empty)


# ---------------------------------------------------------------------------
# SAGE: Shapley importance over the expected-loss-reduction game
# ---------------------------------------------------------------------------


def _loss_values(pred, y, loss: str) -> np.ndarray:
    if loss == "cross_entropy":
        p = np.asarray(pred, dtype=np.float64)
        if p.ndim == 1:
            raise ConfigError("cross_entropy loss requires class-probability predictions")
        picked = np.clip(np.take_along_axis(p, y.astype(np.int64)[..., None], axis=-1)[..., 0], 1e-12, None)
        return -np.log(picked)
    if loss == "mse":
        return (np.asarray(pred, dtype=np.float64) - y) ** 2
    raise ConfigError(f"unknown loss {loss!r}")


def _check_sage_inputs(foreground: Dataset, config: ExplainConfig):
    if foreground.labels is None:
        raise ConfigError("SAGE needs a labeled foreground dataset")
    if config.loss == "cross_entropy" and foreground.task_kind != "classification":
        raise ConfigError("cross_entropy loss needs classification labels")


def permutation_sage(predict, foreground: Dataset, background, config: ExplainConfig) -> GlobalImportance:
    """SAGE values from permutation sweeps averaged over the foreground.

    For each foreground row the loss of the marginalized prediction is
    tracked along nested coalitions; the drop when a feature enters is its
    sample contribution.  ``config.npermutations`` antithetic pairs per row
    (or every permutation once when ``exhaustive_permutations``).
    """
    _check_sage_inputs(foreground, config)
    Bmat = _bg_matrix(background)
    d = foreground.d
    samples = []
    for i in range(foreground.n):
        x = foreground.features[i]
        y = foreground.labels[i]
        if config.exhaustive_permutations:
            if d > EXHAUSTIVE_PERMUTATION_MAX_DIM:
                raise ConfigError(f"exhaustive sweep over d! permutations refused for d={d}")
            perms = [np.array(p, dtype=np.int64) for p in itertools.permutations(range(d))]
        else:
            rng = substream(config.seed, "permutation_sage", i)
            perms = []
            for _ in range(config.npermutations):
                p = rng.permutation(d)
                perms.append(p)
                perms.append(p[::-1].copy())
        masks = np.concatenate([_sweep_masks(p) for p in perms], axis=0)
        preds = _masked_means(predict, x, masks, Bmat)
        losses = _loss_values(preds, np.full(len(masks), y), config.loss).reshape(len(perms), d + 1)
        contrib = np.zeros((len(perms), d))
        for k, p in enumerate(perms):
            contrib[k, p] = losses[k, :-1] - losses[k, 1:]
        samples.append(contrib.mean(axis=0))
    samples = np.array(samples)
    values = samples.mean(axis=0)
    if samples.shape[0] > 1:
        stderr = samples.std(axis=0, ddof=1) / np.sqrt(samples.shape[0])
    else:
        stderr = np.zeros(d)
    return GlobalImportance(values=values, stderr=stderr, estimator="permutation_sage")


def _sage_coalition_values(predict, foreground: Dataset, Bmat: np.ndarray, masks: np.ndarray, loss: str):
    """v(S) = mean over foreground rows of [loss(empty) - loss(S)] for each mask."""
    fg = foreground.features
    y = foreground.labels
    n, d = fg.shape
    B = Bmat.shape[0]
    per = max(1, 32_768 // (n * B))
    losses = np.empty((masks.shape[0], n))
    for s in range(0, masks.shape[0], per):
        M = masks[s : s + per]
        rows = np.where(
            M[:, None, None, :], fg[None, :, None, :], Bmat[None, None, :, :]
        ).reshape(-1, d)
        vals = np.asarray(predict(rows), dtype=np.float64)
        if vals.ndim == 1:
            pred = vals.reshape(M.shape[0], n, B).mean(axis=2)
        else:
            pred = vals.reshape(M.shape[0], n, B, vals.shape[-1]).mean(axis=2)
        losses[s : s + M.shape[0]] = _loss_values(pred, np.broadcast_to(y, (M.shape[0], n)), loss)
    return losses


def kernel_sage(predict, foreground: Dataset, background, config: ExplainConfig) -> GlobalImportance:
    """SAGE values via the kernel-weighted coalition regression.

    Coalition values are expected loss reductions relative to the empty
    coalition, estimated over all foreground rows; the Shapley-kernel WLS
    solve is shared with the kernel SHAP estimator.
    """
    _check_sage_inputs(foreground, config)
    Bmat = _bg_matrix(background)
    d = foreground.d
    rng = substream(config.seed, "kernel_sage")
    masks, weights = _kernel_coalitions(d, config.shap_nsamples, rng)
    endpoints = np.concatenate([np.zeros((1, d), dtype=bool), np.ones((1, d), dtype=bool)], axis=0)
    loss_end = _sage_coalition_values(predict, foreground, Bmat, endpoints, config.loss)
    losses = _sage_coalition_values(predict, foreground, Bmat, masks, config.loss)
    v = (loss_end[0][None, :] - losses).mean(axis=1)
    delta = float((loss_end[0] - loss_end[1]).mean())
    phi = _solve_constrained_wls(masks, weights, v, delta)

    # Rough per-feature errors from the weighted-regression sandwich.
    Z = masks.astype(np.float64)
    A = Z[:, :-1] - Z[:, -1:]
    res = v - Z[:, -1] * delta - A @ phi[:-1]
    Aw = A * weights[:, None]
    G = Aw.T @ A + 1e-12 * np.eye(d - 1)
    Ginv = np.linalg.inv(G)
    mid = (Aw * res[:, None] ** 2).T @ Aw
    cov_free = Ginv @ mid @ Ginv
    L = np.vstack([np.eye(d - 1), -np.ones((1, d - 1))])
    stderr = np.sqrt(np.clip(np.diag(L @ cov_free @ L.T), 0.0, None))
    return GlobalImportance(values=phi, stderr=stderr, estimator="kernel_sage")


# ---------------------------------------------------------------------------
# Expected gradients
# ---------------------------------------------------------------------------


def expected_gradients(model: MLPModel, x: np.ndarray, baselines, config: ExplainConfig) -> np.ndarray:
    """Baseline-averaged integrated gradients along straight paths.

    For each baseline b the path integral of the input gradient from b to x
    is approximated with ``config.n_steps`` Gauss-Legendre nodes mapped
    affinely from [-1, 1] to (0, 1); attributions are averaged over all
    baselines.  Exact for linear models.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    Bmat = _bg_matrix(baselines)
    if Bmat.shape[1] != x.shape[0]:
        raise ShapeError(f"baselines have {Bmat.shape[1]} features, instance has {x.shape[0]}")
    nodes, wts = np.polynomial.legendre.leggauss(config.n_steps)
    alpha = 0.5 * (nodes + 1.0)
    w = 0.5 * wts
    diff = x[None, :] - Bmat                      # (B, d)
    pts = Bmat[:, None, :] + alpha[None, :, None] * diff[:, None, :]
    grads = grad_input(model, pts.reshape(-1, x.shape[0]), class_index=config.class_index)
    grads = grads.reshape(Bmat.shape[0], config.n_steps, x.shape[0])
    integral = (w[None, :, None] * grads).sum(axis=1)  # (B, d)
    return (diff * integral).mean(axis=0)


# ---------------------------------------------------------------------------
# Partial dependence feature effects
# ---------------------------------------------------------------------------


def pd_grids(foreground, n_1d: int = GRID_1D, n_2d: int = GRID_2D) -> dict:
    """Uniform per-feature grids over the foreground [min, max] ranges."""
    fg = _bg_matrix(foreground)
    lo, hi = fg.min(axis=0), fg.max(axis=0)
    return {
        "grid_1d": np.linspace(lo, hi, n_1d).T.copy(),  # (d, n_1d)
        "grid_2d": np.linspace(lo, hi, n_2d).T.copy(),  # (d, n_2d)
    }


def feature_effects(f, foreground, grids: dict | None = None) -> FeatureEffects:
    """Partial dependence: 100-point 1-D curves and 10x10 surfaces per pair.

    effect(T, g) = (1/m) sum_i f(x_i with features T overwritten by g).
    Passing precomputed ``grids`` (from :func:`pd_grids`) pins the evaluation
    points, which keeps curves comparable across different foregrounds.
    """
    fg = _bg_matrix(foreground)
    m, d = fg.shape
    if grids is None:
        grids = pd_grids(fg)
    g1, g2 = grids["grid_1d"], grids["grid_2d"]
    n1, n2 = g1.shape[1], g2.shape[1]

    def pd_curve(j, grid):
        rows = np.repeat(fg[None, :, :], len(grid), axis=0)
        rows[:, :, j] = grid[:, None]
        return np.asarray(f(rows.reshape(-1, d)), dtype=np.float64).reshape(len(grid), m).mean(axis=1)

    effects_1d = np.array([pd_curve(j, g1[j]) for j in range(d)])
    self_effects = np.array([pd_curve(j, g2[j]) for j in range(d)])

    effects_2d: dict[tuple[int, int], np.ndarray] = {}
    for i in range(d):
        for j in range(i + 1, d):
            gi = np.repeat(g2[i], n2)
            gj = np.tile(g2[j], n2)
            rows = np.repeat(fg[None, :, :], n2 * n2, axis=0)
            rows[:, :, i] = gi[:, None]
            rows[:, :, j] = gj[:, None]
            vals = np.asarray(f(rows.reshape(-1, d)), dtype=np.float64)
            effects_2d[(i, j)] = vals.reshape(n2 * n2, m).mean(axis=1).reshape(n2, n2)

    return FeatureEffects(
        grids_1d=g1, effects_1d=effects_1d, grids_2d=g2,
        effects_2d=effects_2d, self_effects=self_effects,
    )


def flatten_feature_effects(fe: FeatureEffects) -> np.ndarray:
    """Flatten to the 100 (d + d^2) vector used for error measurement.

    1-D curves contribute 100 d entries; 2-D surfaces are counted once per
    ordered pair (stored surfaces emitted for (i, j) and transposed for
    (j, i)), and the diagonal pairs (j, j) contribute the coarse 1-D curve
    broadcast over the second axis.
    """
    d = fe.effects_1d.shape[0]
    parts = [fe.effects_1d.ravel()]
    for i in range(d):
        for j in range(d):
            if i == j:
                parts.append(np.repeat(fe.self_effects[j], fe.grids_2d.shape[1]))
            elif i < j:
                parts.append(fe.effects_2d[(i, j)].ravel())
            else:
                parts.append(fe.effects_2d[(j, i)].T.ravel())
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# Batch helpers
# ---------------------------------------------------------------------------

_LOCAL_SHAP = {
    "exact_shap": exact_shap,
    "permutation_shap": permutation_shap,
    "kernel_shap": kernel_shap,
}


def _child_config(config: ExplainConfig, *path) -> ExplainConfig:
    child_seed = int(substream(config.seed, *path).integers(0, 2**31 - 1))
    return replace(config, seed=child_seed)


def shap_attributions(estimator: str, f, instances, background, config: ExplainConfig) -> Attribution:
    """Per-row Shapley attributions for every instance, with independent substreams.

    Each instance i draws randomness from a stream derived from
    (config.seed, i), so results do not depend on evaluation order.
    """
    if estimator not in _LOCAL_SHAP:
        raise ConfigError(f"unknown local estimator {estimator!r}")
    X = _bg_matrix(instances)
    Bmat = _bg_matrix(background)
    base = float(np.asarray(f(Bmat), dtype=np.float64).mean())
    values = np.empty((X.shape[0], X.shape[1]))
    for i in range(X.shape[0]):
        if estimator == "exact_shap":
            values[i] = exact_shap(f, X[i], Bmat)
        else:
            values[i] = _LOCAL_SHAP[estimator](f, X[i], Bmat, _child_config(config, "instance", i))
    return Attribution(values=values, base_values=np.full(X.shape[0], base), estimator=estimator)


def expected_gradients_batch(model: MLPModel, instances, baselines, config: ExplainConfig) -> Attribution:
    """Expected-gradients attributions for every instance row."""
    from .models import scalar_function

    X = _bg_matrix(instances)
    Bmat = _bg_matrix(baselines)
    fn = scalar_function(model, config.class_index)
    base = float(np.asarray(fn(Bmat)).mean())
    values = np.empty_like(X)
    for i in range(X.shape[0]):
        values[i] = expected_gradients(model, X[i], Bmat, config)
    return Attribution(values=values, base_values=np.full(X.shape[0], base), estimator="expected_gradients")


# ---------------------------------------------------------------------------
# Serialization: JSON dictionaries and flat CSV rows for plotting
# ---------------------------------------------------------------------------


def attribution_to_dict(attr: Attribution) -> dict:
    from .data import array_to_b64

    n, d = attr.values.shape
    return {
        "schema": "corexplain.attribution/1",
        "estimator": attr.estimator,
        "n": n,
        "d": d,
        "values_b64": array_to_b64(attr.values),
        "base_values_b64": array_to_b64(attr.base_values),
    }


def global_importance_to_dict(gi: GlobalImportance) -> dict:
    return {
        "schema": "corexplain.global-importance/1",
        "estimator": gi.estimator,
        "values": [float(v) for v in gi.values],
        "stderr": [float(v) for v in gi.stderr],
    }


def feature_effects_to_dict(fe: FeatureEffects) -> dict:
    from .data import array_to_b64

    d = fe.effects_1d.shape[0]
    return {
        "schema": "corexplain.feature-effects/1",
        "d": d,
        "grid_1d_b64": array_to_b64(fe.grids_1d),
        "effects_1d_b64": array_to_b64(fe.effects_1d),
        "grid_2d_b64": array_to_b64(fe.grids_2d),
        "pairs": [
            {"i": i, "j": j, "effect_b64": array_to_b64(surface)}
            for (i, j), surface in sorted(fe.effects_2d.items())
        ],
        "self_effects_b64": array_to_b64(fe.self_effects),
    }


def artifact_csv_rows(artifact):
    """Long-format rows (header first) for plotting any explanation artifact."""
    if isinstance(artifact, Attribution):
        yield ("instance", "feature", "value", "base_value")
        for i in range(artifact.values.shape[0]):
            for j in range(artifact.values.shape[1]):
                yield (i, j, artifact.values[i, j], artifact.base_values[i])
    elif isinstance(artifact, GlobalImportance):
        yield ("feature", "value", "stderr")
        for j in range(artifact.values.shape[0]):
            yield (j, artifact.values[j], artifact.stderr[j])
    elif isinstance(artifact, FeatureEffects):
        yield ("features", "grid_value_1", "grid_value_2", "effect")
        d = artifact.effects_1d.shape[0]
        for j in range(d):
            for t in range(artifact.grids_1d.shape[1]):
                yield (f"{j}", artifact.grids_1d[j, t], "", artifact.effects_1d[j, t])
        for (i, j), surface in sorted(artifact.effects_2d.items()):
            for a in range(surface.shape[0]):
                for b in range(surface.shape[1]):
                    yield (f"{i}:{j}", artifact.grids_2d[i, a], artifact.grids_2d[j, b], surface[a, b])
    else:
        raise ConfigError(f"cannot serialize artifact of type {type(artifact).__name__}")
