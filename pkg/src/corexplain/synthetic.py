"""Seeded synthetic tasks for tests and desk-scale benchmark runs."""

from __future__ import annotations

import numpy as np

from .data import CLASSIFICATION, REGRESSION, Dataset
from .rng import substream


def gaussian_classification(n: int, d: int = 20, seed: int = 0, informative: int = 5) -> Dataset:
    """Binary task with standard-normal features and a sparse logistic signal.

    The first ``informative`` features carry decaying weights plus one mild
    pairwise interaction, so top-k feature identification is meaningful.
    """
    rng = substream(seed, "gaussian-classification")
    X = rng.standard_normal((n, d))
    informative = min(informative, d)
    w = np.zeros(d)
    w[:informative] = 1.2 * (0.75 ** np.arange(informative)) * np.where(np.arange(informative) % 2, -1, 1)
    logits = X @ w
    if d >= 2:
        logits = logits + 0.4 * X[:, 0] * X[:, 1]
    p = 1.0 / (1.0 + np.exp(-logits))
    y = (rng.random(n) < p).astype(np.float64)
    names = tuple(f"x{j}" for j in range(d))
    return Dataset(features=X, labels=y, feature_names=names, task_kind=CLASSIFICATION, preprocessed=True)


def nonlinear_regression(n: int, d: int = 8, seed: int = 0, noise: float = 0.1) -> Dataset:
    """Smooth additive-plus-interaction regression surface on standard normals."""
    rng = substream(seed, "nonlinear-regression")
    X = rng.standard_normal((n, d))
    y = 2.0 * X[:, 0] + noise * rng.standard_normal(n)
    if d >= 2:
        y = y + X[:, 1] ** 2
    if d >= 4:
        y = y - 1.5 * X[:, 2] * X[:, 3]
    if d >= 5:
        y = y + 0.5 * np.sin(2.0 * X[:, 4])
    names = tuple(f"x{j}" for j in range(d))
    return Dataset(features=X, labels=y, feature_names=names, task_kind=REGRESSION, preprocessed=True)


def gaussian_mixture(n: int, d: int = 8, seed: int = 0, components: int = 4, spread: float = 4.0) -> np.ndarray:
    """Sample matrix from an equal-weight Gaussian mixture with separated means."""
    rng = substream(seed, "gaussian-mixture")
    means = rng.uniform(-spread, spread, size=(components, d))
    which = rng.integers(0, components, size=n)
    return means[which] + rng.standard_normal((n, d))
