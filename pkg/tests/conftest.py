import os

# Pin BLAS to one thread before numpy loads: timing criteria are single-thread
# budgets and results must not depend on worker count.
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")

import numpy as np
import pytest

from corexplain.data import CLASSIFICATION, REGRESSION, Dataset
from corexplain.models import MLPModel, TrainConfig, init_model, train
from corexplain.rng import substream
from corexplain.synthetic import gaussian_classification, nonlinear_regression


def make_dataset(X, y=None, task=None):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    names = tuple(f"x{j}" for j in range(X.shape[1]))
    if y is None:
        return Dataset(features=X, labels=None, feature_names=names, task_kind="unlabeled")
    return Dataset(features=X, labels=np.asarray(y, dtype=np.float64), feature_names=names, task_kind=task)


def random_model(d, seed, hidden=(8,), head="softmax", n_out=2, activation="relu"):
    return init_model((d, *hidden, n_out if head == "softmax" else 1), head=head, seed=seed, activation=activation)


@pytest.fixture(scope="session")
def small_classifier():
    data = gaussian_classification(600, d=6, seed=3)
    return train(data, TrainConfig(epochs=20, batch_size=64, learning_rate=0.05, seed=0), hidden=(16, 8)), data


@pytest.fixture(scope="session")
def small_regressor():
    data = nonlinear_regression(600, d=5, seed=4)
    return train(data, TrainConfig(epochs=25, batch_size=64, learning_rate=0.02, seed=0, loss="mse"), hidden=(16, 8)), data


@pytest.fixture()
def rng():
    return substream(123, "tests")


class MMDAgainstReference:
    """Unbiased MMD of many subsets against one fixed reference sample.

    Caches the reference-reference U-statistic term so repeated comparisons
    do not recompute the large Gram matrix.  Matches
    ``metrics.mmd_unbiased(subset, reference)`` exactly.
    """

    def __init__(self, reference, kernel):
        from corexplain.kernels import gram

        self.reference = np.asarray(reference, dtype=np.float64)
        self.kernel = kernel
        K = gram(kernel, self.reference)
        l = self.reference.shape[0]
        self.ref_term = (K.sum() - np.trace(K)) / (l * (l - 1))

    def __call__(self, indices):
        from corexplain.kernels import gram

        sub = self.reference[np.asarray(indices, dtype=np.int64)]
        m = sub.shape[0]
        Kxx = gram(self.kernel, sub)
        xx = (Kxx.sum() - np.trace(Kxx)) / (m * (m - 1))
        xy = gram(self.kernel, sub, self.reference).mean()
        return float(xx + self.ref_term - 2.0 * xy)
