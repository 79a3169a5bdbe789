"""Distribution-discrepancy and explanation-error measures.

Discrepancies between two samples X (m x d) and Y (l x d):

* ``mmd_unbiased``   -- U-statistic estimate of squared kernel MMD (may be negative).
* ``mmd_biased_sq``  -- L2 distance between Gaussian KDEs, i.e. the V-statistic
  with the self-convolved kernel (a normalized Gaussian of variance 2 sigma^2).
* ``tv_kl_top3``     -- per-feature histogram TV / KL, averaged over the 3 worst features.
* ``wasserstein``    -- debiased entropic (Sinkhorn) optimal-transport divergence.

Explanation errors: ``mae`` and ``topk_precision``.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .kernels import GaussianKernel, gram, squared_distances
from .rng import substream

HISTOGRAM_BINS = 32
KL_EPS = 1e-10
SINKHORN_TOL = 1e-6
SINKHORN_MAX_ITER = 1000
# Pairwise-distance matrices get quadratic; cap the sample fed to Sinkhorn.
_SINKHORN_MAX_POINTS = 4096


@dataclass
class DiscrepancyReport:
    mmd_unbiased: float
    mmd_biased_sq: float
    tv_top3: float
    kl_top3: float
    wasserstein: float

    def to_dict(self) -> dict:
        return {k: float(v) for k, v in asdict(self).items()}


@dataclass
class ErrorReport:
    mae: float
    topk_precision: float
    k: int

    def to_dict(self) -> dict:
        return {"mae": float(self.mae), "topk_precision": float(self.topk_precision), "k": int(self.k)}


def _as_sample(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    return X


def mmd_unbiased(X: np.ndarray, Y: np.ndarray, kernel: GaussianKernel) -> float:
    """U-statistic estimate of squared MMD between the samples X and Y.

    mean_{i != j} k(x_i, x_j) + mean_{i != j} k(y_i, y_j) - 2 mean_{i,j} k(x_i, y_j)
    """
    X, Y = _as_sample(X), _as_sample(Y)
    m, l = X.shape[0], Y.shape[0]
    if m < 2 or l < 2:
        raise ConfigError(f"unbiased MMD needs at least 2 points per sample, got {m} and {l}")
    Kxx = gram(kernel, X)
    Kyy = gram(kernel, Y)
    Kxy = gram(kernel, X, Y)
    xx = (Kxx.sum() - np.trace(Kxx)) / (m * (m - 1))
    yy = (Kyy.sum() - np.trace(Kyy)) / (l * (l - 1))
    xy = Kxy.mean()
    return float(xx + yy - 2.0 * xy)


def mmd_biased_sq(X: np.ndarray, Y: np.ndarray, kernel: GaussianKernel) -> float:
    """Closed-form integral of (p - q)^2 for Gaussian KDEs p, q of X and Y.

    Convolving two Gaussians of variance sigma^2 gives a Gaussian of variance
    2 sigma^2, so the integral reduces to a V-statistic with kernel
    (4 pi sigma^2)^(-d/2) exp(-||x - y||^2 / (4 sigma^2)).
    """
    X, Y = _as_sample(X), _as_sample(Y)
    if X.shape[1] != Y.shape[1]:
        raise ShapeError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    d = X.shape[1]
    s2 = kernel.sigma**2
    norm = (4.0 * np.pi * s2) ** (-d / 2.0)

    def conv_mean(A, B):
        return norm * np.exp(squared_distances(A, B) / (-4.0 * s2)).mean()

    value = conv_mean(X, X) - 2.0 * conv_mean(X, Y) + conv_mean(Y, Y)
    return float(max(value, 0.0))


def tv_kl_top3(
    X: np.ndarray, Y: np.ndarray, bins: int = HISTOGRAM_BINS, eps: float = KL_EPS
) -> tuple[float, float]:
    """Average of the 3 largest per-feature histogram TV distances and KL divergences.

    Histograms use ``bins`` equal-width bins over the range of X's column
    (the reference sample); values of Y outside that range clamp to the edge
    bins.  Features with zero range contribute 0.  When d < 3 all features
    are averaged.
    """
    X, Y = _as_sample(X), _as_sample(Y)
    if X.shape[1] != Y.shape[1]:
        raise ShapeError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    if bins < 2:
        raise ConfigError(f"bins must be >= 2, got {bins}")
    d = X.shape[1]
    tvs = np.zeros(d)
    kls = np.zeros(d)
    for j in range(d):
        lo, hi = X[:, j].min(), X[:, j].max()
        if hi <= lo:
            continue
        edges = np.linspace(lo, hi, bins + 1)
        p, _ = np.histogram(X[:, j], bins=edges)
        q, _ = np.histogram(np.clip(Y[:, j], lo, hi), bins=edges)
        p = p / p.sum()
        q = q / q.sum()
        tvs[j] = 0.5 * np.abs(p - q).sum()
        pos = p > 0
        # eps-smoothing can push the sum a hair below 0 when p == q; clamp.
        kls[j] = max(0.0, float((p[pos] * np.log(p[pos] / (q[pos] + eps))).sum()))
    top = min(3, d)
    tv3 = float(np.sort(tvs)[-top:].sum() / 3.0) if d >= 3 else float(tvs.mean())
    kl3 = float(np.sort(kls)[-top:].sum() / 3.0) if d >= 3 else float(kls.mean())
    return tv3, kl3


def _logsumexp(M, axis):
    mx = M.max(axis=axis, keepdims=True)
    out = mx.squeeze(axis) + np.log(np.exp(M - mx).sum(axis=axis))
    return out


def _plan_cost(C, f, g, eps):
    """Transport cost <P, C> of the entropic plan induced by potentials (f, g)."""
    m, l = C.shape
    logP = (f[:, None] + g[None, :] - C) / eps - np.log(m) - np.log(l)
    return float((np.exp(logP) * C).sum())


def _sinkhorn_cross(C: np.ndarray, eps: float):
    """Alternating log-domain Sinkhorn updates for uniform marginals."""
    m, l = C.shape
    log_a, log_b = -np.log(m), -np.log(l)
    f = np.zeros(m)
    g = np.zeros(l)
    for _ in range(SINKHORN_MAX_ITER):
        f_new = -eps * _logsumexp((g[None, :] - C) / eps + log_b, axis=1)
        g_new = -eps * _logsumexp((f_new[:, None] - C) / eps + log_a, axis=0)
        # The plan is invariant to the (f + c, g - c) gauge; measure progress
        # modulo that shift or symmetric problems never settle.
        c = 0.5 * (np.mean(f_new - f) - np.mean(g_new - g))
        delta = max(np.abs(f_new - f - c).max(), np.abs(g_new - g + c).max())
        f, g = f_new, g_new
        if delta < SINKHORN_TOL:
            return _plan_cost(C, f, g, eps), True
    return _plan_cost(C, f, g, eps), False


def _sinkhorn_self(C: np.ndarray, eps: float):
    """Damped symmetric fixed-point updates for a measure against itself.

    Alternating updates stall on symmetric problems; the averaged update
    converges geometrically.
    """
    m = C.shape[0]
    log_a = -np.log(m)
    f = np.zeros(m)
    for _ in range(SINKHORN_MAX_ITER):
        f_new = 0.5 * (f - eps * _logsumexp((f[None, :] - C) / eps + log_a, axis=1))
        delta = np.abs(f_new - f).max()
        f = f_new
        if delta < SINKHORN_TOL:
            return _plan_cost(C, f, f, eps), True
    return _plan_cost(C, f, f, eps), False


def wasserstein(X: np.ndarray, Y: np.ndarray, seed: int = 0) -> float:
    """Debiased Sinkhorn divergence between the empirical measures of X and Y.

    Euclidean cost; regularization eps = 0.05 x median pairwise distance of
    the pooled sample.  Samples larger than 4096 points are subsampled
    (seeded) before computing.  Non-convergence within the iteration cap
    emits a warning and returns the last iterate.
    """
    X, Y = _as_sample(X), _as_sample(Y)
    if X.shape[1] != Y.shape[1]:
        raise ShapeError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    rng = substream(seed, "wasserstein")
    if X.shape[0] > _SINKHORN_MAX_POINTS:
        X = X[rng.choice(X.shape[0], _SINKHORN_MAX_POINTS, replace=False)]
    if Y.shape[0] > _SINKHORN_MAX_POINTS:
        Y = Y[rng.choice(Y.shape[0], _SINKHORN_MAX_POINTS, replace=False)]
    pooled = np.vstack([X, Y])
    sub = pooled if pooled.shape[0] <= 1024 else pooled[rng.choice(pooled.shape[0], 1024, replace=False)]
    dists = np.sqrt(squared_distances(sub, sub))
    med = float(np.median(dists[np.triu_indices_from(dists, k=1)]))
    eps = 0.05 * med if med > 0 else 1e-6

    xy, c1 = _sinkhorn_cross(np.sqrt(squared_distances(X, Y)), eps)
    xx, c2 = _sinkhorn_self(np.sqrt(squared_distances(X, X)), eps)
    yy, c3 = _sinkhorn_self(np.sqrt(squared_distances(Y, Y)), eps)
    if not (c1 and c2 and c3):
        warnings.warn("Sinkhorn did not converge within the iteration cap; returning last iterate")
    return float(max(xy - 0.5 * (xx + yy), 0.0))


def mae(a: np.ndarray, b: np.ndarray) -> float:
    """Mean absolute elementwise difference between two equal-shape tensors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)))


def topk_order(values: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest |values|, ties broken by ascending feature index."""
    v = np.abs(np.asarray(values, dtype=np.float64))
    order = np.argsort(-v, kind="stable")
    return order[:k]


def topk_precision(estimate: np.ndarray, truth: np.ndarray, k: int) -> float:
    """|top-k(|estimate|) intersect top-k(|truth|)| / k."""
    estimate = np.asarray(estimate, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if estimate.shape != truth.shape:
        raise ShapeError(f"shape mismatch: {estimate.shape} vs {truth.shape}")
    d = estimate.shape[0]
    if not 1 <= k <= d:
        raise ConfigError(f"k must be in [1, {d}], got {k}")
    a = set(topk_order(estimate, k).tolist())
    b = set(topk_order(truth, k).tolist())
    return len(a & b) / k


def discrepancy_report(
    X: np.ndarray, Y: np.ndarray, kernel: GaussianKernel, bins: int = HISTOGRAM_BINS, seed: int = 0
) -> DiscrepancyReport:
    """All four distance families between reference sample X and sample Y."""
    tv3, kl3 = tv_kl_top3(X, Y, bins=bins)
    return DiscrepancyReport(
        mmd_unbiased=mmd_unbiased(X, Y, kernel),
        mmd_biased_sq=mmd_biased_sq(X, Y, kernel),
        tv_top3=tv3,
        kl_top3=kl3,
        wasserstein=wasserstein(X, Y, seed=seed),
    )
