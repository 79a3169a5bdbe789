#!/usr/bin/env python3
"""Wall-clock scaling of coreset selection across input sizes.

Prints a small table of compression time and the MMD to the full sample for
kernel thinning vs i.i.d. sampling at matched sizes.
"""

import argparse
import time

import numpy as np

from corexplain.compress import CompressorConfig, compresspp, iid_sample, natural_size
from corexplain.data import Dataset
from corexplain.kernels import GaussianKernel, default_bandwidth, gram
from corexplain.synthetic import gaussian_mixture


def mmd_to_full(X, idx, kernel, ref_term):
    sub = X[idx]
    K = gram(kernel, sub)
    m = len(idx)
    xx = (K.sum() - np.trace(K)) / (m * (m - 1))
    xy = gram(kernel, sub, X).mean()
    return xx + ref_term - 2 * xy


def run(args):
    print(f"{'n':>8} {'size':>5} {'kt_sec':>8} {'kt_mmd':>12} {'iid_mmd':>12}")
    for n in args.sizes:
        X = gaussian_mixture(n, d=args.d, seed=0)
        data = Dataset(features=X, labels=None,
                       feature_names=tuple(f"x{j}" for j in range(args.d)), task_kind="unlabeled")
        kernel = GaussianKernel(default_bandwidth(args.d))
        Kff = gram(kernel, X)
        ref = (Kff.sum() - np.trace(Kff)) / (n * (n - 1))
        del Kff
        times = []
        for seed in range(args.trials):
            t0 = time.perf_counter()
            sel = compresspp(data, CompressorConfig(seed=seed))
            times.append(time.perf_counter() - t0)
        kt_mmd = mmd_to_full(X, sel.indices, kernel, ref)
        iid = iid_sample(data, natural_size("kt", n), seed=0)
        iid_mmd = mmd_to_full(X, iid.indices, kernel, ref)
        print(f"{n:>8} {len(sel.indices):>5} {np.median(times):>8.3f} {kt_mmd:>12.3e} {iid_mmd:>12.3e}")
    return 0


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", type=int, nargs="+", default=[1024, 4096, 16384])
    parser.add_argument("--d", type=int, default=10)
    parser.add_argument("--trials", type=int, default=3)
    raise SystemExit(run(parser.parse_args()))
