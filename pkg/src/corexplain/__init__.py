"""Coreset-backed estimation of model explanations.

Select compact coresets of tabular data with kernel-thinning compression,
estimate removal-based and gradient-based explanations against them, and
benchmark accuracy/stability/runtime against i.i.d. sampling and clustering
baselines.
"""

__version__ = "0.1.0"

from .compress import CompressorConfig, CoresetSelection, compresspp, iid_sample, kmedoids, kt_halve, select_coreset
from .data import Dataset, DataSplit, PreprocessSpec, fit_apply_preprocess, load_csv, split_75_25, subset
from .explain import (
    Attribution,
    ExplainConfig,
    FeatureEffects,
    GlobalImportance,
    exact_shap,
    expected_gradients,
    feature_effects,
    kernel_sage,
    kernel_shap,
    marginalize,
    permutation_sage,
    permutation_shap,
)
from .kernels import GaussianKernel, default_bandwidth, gram, kernel_eval
from .metrics import (
    DiscrepancyReport,
    ErrorReport,
    discrepancy_report,
    mae,
    mmd_biased_sq,
    mmd_unbiased,
    topk_precision,
    tv_kl_top3,
    wasserstein,
)
from .models import MLPModel, TrainConfig, forward, grad_input, load_weights, save_weights, train
