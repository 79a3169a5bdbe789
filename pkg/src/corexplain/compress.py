"""Coreset selection: i.i.d. sampling, k-medoids, and kernel-thinning compression.

The kernel-thinning route follows the divide-and-conquer recursion of the
Compress++ scheme: inputs are split into four blocks, compressed
recursively, and the merged candidates are halved.  A halving round is one
kernel-thinning round: a non-uniform randomized split into two candidate
halves followed by a greedy swap/refinement stage, so the returned half
tracks the input in kernel maximum mean discrepancy far better than an
i.i.d. half.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import ConfigError
from .kernels import GaussianKernel, default_bandwidth, squared_distances
from .rng import substream

DEFAULT_OVERSAMPLE_G = 4
DEFAULT_DELTA = 0.5
KMEDOIDS_MAX_POINTS = 8192  # n x n distance matrix guard
KMEDOIDS_MAX_SWEEPS = 100

METHODS = ("iid", "kt", "kmedoids")


@dataclass
class CompressorConfig:
    method: str = "kt"
    seed: int = 0
    oversample_g: int = DEFAULT_OVERSAMPLE_G
    target_size: int | None = None  # None -> the method's natural output size
    kernel: GaussianKernel | None = None  # None -> sigma = sqrt(2 d)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown compression method {self.method!r}")
        if self.oversample_g < 0:
            raise ConfigError("oversample_g must be nonnegative")
        if self.target_size is not None and self.target_size < 1:
            raise ConfigError("target_size must be positive")


@dataclass
class CoresetSelection:
    """Row indices into the parent dataset plus provenance."""

    indices: np.ndarray
    method: str
    seed: int
    sigma: float
    g: int
    elapsed_seconds: float

    def to_dict(self) -> dict:
        return {
            "schema": "corexplain.coreset/1",
            "method": self.method,
            "seed": int(self.seed),
            "sigma": float(self.sigma),
            "g": int(self.g),
            "indices": [int(i) for i in self.indices],
            "elapsed_seconds": float(self.elapsed_seconds),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "CoresetSelection":
        return cls(
            indices=np.asarray(payload["indices"], dtype=np.int64),
            method=payload["method"],
            seed=int(payload["seed"]),
            sigma=float(payload["sigma"]),
            g=int(payload["g"]),
            elapsed_seconds=float(payload["elapsed_seconds"]),
        )


def largest_power_of_4(n: int) -> int:
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    return 4 ** int(math.floor(math.log(n, 4) + 1e-12))


def compress_output_size(n: int) -> int:
    """Size of the kernel-thinning coreset: sqrt of the power-of-4 working size."""
    return int(round(math.sqrt(largest_power_of_4(n))))


def natural_size(method: str, n: int) -> int:
    if method == "iid":
        return int(math.floor(math.sqrt(n)))
    return compress_output_size(n)  # kt; kmedoids matches it for like-for-like runs


# ---------------------------------------------------------------------------
# i.i.d. sampling
# ---------------------------------------------------------------------------


def iid_sample(data: Dataset, m: int, seed: int) -> CoresetSelection:
    """m indices drawn uniformly with replacement."""
    if m < 1:
        raise ConfigError(f"sample size must be >= 1, got {m}")
    start = time.perf_counter()
    idx = substream(seed, "iid").integers(0, data.n, size=m)
    return CoresetSelection(
        indices=idx.astype(np.int64), method="iid", seed=seed,
        sigma=0.0, g=0, elapsed_seconds=time.perf_counter() - start,
    )


# ---------------------------------------------------------------------------
# k-medoids (PAM build + swap)
# ---------------------------------------------------------------------------


def kmedoids(data: Dataset, k: int, seed: int = 0, max_sweeps: int = KMEDOIDS_MAX_SWEEPS) -> CoresetSelection:
    """k medoid rows minimizing total Euclidean distance to assigned points.

    Greedy build followed by best-improvement swaps until no swap improves
    the objective or the sweep cap is hit.  Deterministic: ties break toward
    the lowest index (the seed is provenance only).
    """
    if k < 1 or k > data.n:
        raise ConfigError(f"k must be in [1, {data.n}], got {k}")
    if data.n > KMEDOIDS_MAX_POINTS:
        raise ConfigError(
            f"k-medoids needs an n x n distance matrix; n={data.n} exceeds the {KMEDOIDS_MAX_POINTS} cap"
        )
    start = time.perf_counter()
    X = data.features
    D = np.sqrt(squared_distances(X, X))
    n = data.n

    # Build: first medoid minimizes total distance, then greedy additions.
    medoids = [int(np.argmin(D.sum(axis=1)))]
    dmin = D[:, medoids[0]].copy()
    while len(medoids) < k:
        gain = np.maximum(dmin[:, None] - D, 0.0).sum(axis=0)
        gain[medoids] = -np.inf
        best = int(np.argmax(gain))
        medoids.append(best)
        np.minimum(dmin, D[:, best], out=dmin)

    medoids = np.array(sorted(medoids), dtype=np.int64)
    if k < n:
        for _ in range(max_sweeps):
            Dm = D[:, medoids]  # (n, k)
            order = np.argsort(Dm, axis=1)
            nearest = order[:, 0]
            dmin = Dm[np.arange(n), nearest]
            dsec = Dm[np.arange(n), order[:, 1]] if k > 1 else np.full(n, np.inf)

            best_delta, best_swap = -1e-12, None
            is_medoid = np.zeros(n, dtype=bool)
            is_medoid[medoids] = True
            for pos in range(k):
                mine = nearest == pos
                # Cost change of replacing medoid `pos` with candidate c:
                # reassigned points pay min(D[., c], second-nearest), others
                # may switch to c if it comes closer than their current medoid.
                part_a = (np.minimum(D[mine], dsec[mine, None]) - dmin[mine, None]).sum(axis=0)
                part_b = np.minimum(D[~mine] - dmin[~mine, None], 0.0).sum(axis=0)
                delta = part_a + part_b
                delta[is_medoid] = np.inf
                c = int(np.argmin(delta))
                if delta[c] < best_delta:
                    best_delta, best_swap = float(delta[c]), (pos, c)
            if best_swap is None:
                break
            pos, c = best_swap
            medoids[pos] = c
            medoids = np.sort(medoids)

    return CoresetSelection(
        indices=medoids, method="kmedoids", seed=seed,
        sigma=0.0, g=0, elapsed_seconds=time.perf_counter() - start,
    )


# ---------------------------------------------------------------------------
# Kernel thinning
# ---------------------------------------------------------------------------


def _thin_gram(points: np.ndarray, kernel: GaussianKernel) -> np.ndarray:
    """Single-precision Gram matrix for thinning decisions.

    Halving probabilities and swap scores tolerate float32 rounding; the
    halved memory traffic and exp cost dominate the compression runtime.
    """
    X = np.ascontiguousarray(points, dtype=np.float32)
    sq = (X * X).sum(axis=1)
    K = X @ X.T
    K *= -2.0
    K += sq[:, None]
    K += sq[None, :]
    np.maximum(K, 0.0, out=K)
    K /= np.float32(-2.0 * kernel.sigma**2)
    np.exp(K, out=K)
    np.fill_diagonal(K, 1.0)
    return K


def _halve_split(K: np.ndarray, rng: np.random.Generator, delta: float):
    """One randomized halving round over the input sequence.

    Consecutive pairs are assigned to two child coresets; the assignment
    probability is tilted by the running kernel discrepancy between the
    children and the processed prefix, with a self-normalizing sub-Gaussian
    threshold.  Returns two index arrays of size floor(m/2).
    """
    m = K.shape[0]
    n_pairs = m // 2
    log_mult = 2.0 * math.log(2.0 * m / delta)
    diag = np.diag(K)
    left = np.empty(n_pairs, dtype=np.int64)
    right = np.empty(n_pairs, dtype=np.int64)
    sig_sqd = 0.0
    for p in range(n_pairs):
        i1, i2 = 2 * p, 2 * p + 1
        K12 = K[i1, i2]
        b_sqd = diag[i1] + diag[i2] - 2.0 * K12
        thresh = max(math.sqrt(sig_sqd * b_sqd * log_mult), b_sqd)
        if sig_sqd == 0.0:
            sig_sqd = b_sqd
        elif thresh != 0.0:
            update = 0.5 + (b_sqd / (2.0 * thresh) - 1.0) * sig_sqd / thresh
            if update > 0.0:
                sig_sqd += 2.0 * b_sqd * update
        if thresh == 0.0:
            thresh = 1.0
        if p > 0:
            row1, row2 = K[i1], K[i2]
            alpha = row1[:i1].sum() - row2[:i1].sum()
            lidx = left[:p]
            alpha -= 2.0 * (row1[lidx].sum() - row2[lidx].sum())
        else:
            alpha = 0.0
        prob_second = 0.5 * (1.0 - alpha / thresh)
        if rng.random() <= prob_second:
            left[p], right[p] = i2, i1
        else:
            left[p], right[p] = i1, i2
    return left, right


def _coreset_stats(K: np.ndarray, coreset: np.ndarray, mean_rows: np.ndarray) -> tuple[float, float]:
    """(V-statistic, U-statistic) MMD between coreset and input, up to the
    coreset-independent term, from one submatrix extraction."""
    s = coreset.shape[0]
    sub = K[np.ix_(coreset, coreset)]
    total = float(sub.sum(dtype=np.float64))
    tr = float(np.trace(sub))
    cross = 2.0 * float(mean_rows[coreset].mean(dtype=np.float64))
    v_stat = total / (s * s) - cross
    u_stat = (total - tr) / (s * (s - 1)) - cross if s > 1 else -cross
    return v_stat, u_stat


def _refine(K: np.ndarray, coreset: np.ndarray, mean_rows: np.ndarray) -> np.ndarray:
    """Greedy swap stage: each coreset slot takes the input point minimizing MMD.

    Candidate exchanges are scored with a running sufficient statistic
    (O(m) per slot); current members are excluded so the output stays
    duplicate-free.  Never increases the squared MMD to the input.
    """
    m = K.shape[0]
    coreset = coreset.copy()
    c = coreset.shape[0]
    two_over_c = 2.0 / c
    diag = np.diag(K)
    stat = diag / c - 2.0 * mean_rows + 2.0 * K[:, coreset].mean(axis=1)
    stat[coreset] = np.inf
    for pos in range(c):
        cur = coreset[pos]
        stat[cur] = diag[cur] / c - 2.0 * mean_rows[cur] + 2.0 * K[cur, coreset].mean()
        stat -= K[cur] * two_over_c
        best = int(np.argmin(stat))
        coreset[pos] = best
        stat += K[best] * two_over_c
        stat[best] = np.inf
    return coreset


def kt_halve(points: np.ndarray, kernel: GaussianKernel, seed: int, delta: float = DEFAULT_DELTA) -> np.ndarray:
    """One kernel-thinning round: indices of a floor(m/2)-point half of ``points``.

    Builds two candidate halves with the randomized split, compares them (and
    a uniform-stride baseline) by MMD to the input, then greedily refines the
    winner.  The returned half is guaranteed no worse, in unbiased MMD to the
    input, than the best candidate considered.
    """
    points = np.atleast_2d(np.asarray(points))
    m = points.shape[0]
    if m < 2:
        raise ConfigError(f"halving needs at least 2 points, got {m}")
    K = _thin_gram(points, kernel)
    mean_rows = K.mean(axis=1, dtype=np.float64)
    rng = substream(seed, "halve")
    left, right = _halve_split(K, rng, delta)

    size = m // 2
    stride = np.floor((np.arange(size) + 1) * (m / size)).astype(np.int64) - 1
    candidates = [stride, left, right]
    stats = [_coreset_stats(K, s, mean_rows) for s in candidates]
    best = candidates[int(np.argmin([v for v, _ in stats]))]
    refined = _refine(K, best, mean_rows)
    u_stats = [u for _, u in stats] + [_coreset_stats(K, refined, mean_rows)[1]]
    final = (candidates + [refined])[int(np.argmin(u_stats))]
    return final


def compresspp(data: Dataset, config: CompressorConfig) -> CoresetSelection:
    """Kernel-thinning coreset of size sqrt(working size) via recursive halving.

    The working size is the largest power of 4 <= n (larger inputs are
    uniformly subsampled to it, seeded).  Blocks of size 4^g are kept whole;
    larger blocks are quartered, compressed recursively, merged, and halved.
    Final halving rounds bring the root output down to sqrt(working size).
    """
    if data.n < 4:
        raise ConfigError(f"compression requires n >= 4, got {data.n}")
    start = time.perf_counter()
    kernel = config.kernel or GaussianKernel(default_bandwidth(data.d))
    g = config.oversample_g
    working = largest_power_of_4(data.n)
    out_size = int(round(math.sqrt(working)))
    target = config.target_size if config.target_size is not None else out_size
    if target > data.n:
        raise ConfigError(f"target size {target} exceeds n={data.n}")
    if target > out_size or (target & (target - 1)) != 0:
        raise ConfigError(
            f"kernel thinning reaches power-of-two sizes up to {out_size} for n={data.n}; got {target}"
        )

    X = data.features
    if working < data.n:
        base = substream(config.seed, "subsample").choice(data.n, size=working, replace=False)
    else:
        base = np.arange(data.n, dtype=np.int64)

    base_block = 4**g

    def compress_block(idx: np.ndarray, path: tuple) -> np.ndarray:
        if idx.shape[0] <= base_block:
            return idx
        quarter = idx.shape[0] // 4
        merged = np.concatenate(
            [compress_block(idx[i * quarter : (i + 1) * quarter], path + (i,)) for i in range(4)]
        )
        seed = int(substream(config.seed, "node", *path, len(path)).integers(0, 2**31 - 1))
        half = kt_halve(X[merged], kernel, seed=seed)
        return merged[half]

    coreset = compress_block(base, ())
    round_no = 0
    while coreset.shape[0] > target:
        seed = int(substream(config.seed, "final", round_no).integers(0, 2**31 - 1))
        half = kt_halve(X[coreset], kernel, seed=seed)
        coreset = coreset[half]
        round_no += 1

    return CoresetSelection(
        indices=coreset.astype(np.int64), method="kt", seed=config.seed,
        sigma=kernel.sigma, g=g, elapsed_seconds=time.perf_counter() - start,
    )


def select_coreset(data: Dataset, config: CompressorConfig) -> CoresetSelection:
    """Dispatch on the configured method, resolving the natural output size."""
    if config.target_size is not None and config.target_size > data.n:
        raise ConfigError(f"target size {config.target_size} exceeds n={data.n}")
    if config.method == "iid":
        m = config.target_size or natural_size("iid", data.n)
        return iid_sample(data, m, config.seed)
    if config.method == "kmedoids":
        k = config.target_size or natural_size("kmedoids", data.n)
        return kmedoids(data, k, config.seed)
    return compresspp(data, config)
