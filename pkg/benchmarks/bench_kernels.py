"""Time the hot kernels under the numba and numpy backends.

    python benchmarks/bench_kernels.py [--repeat 20]

Both backends are switched in-process through ``stmfa._accel.BACKEND``; the
first numba call of each kernel is a warm-up that triggers compilation.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from stmfa import _accel
from stmfa import tensor as T
from stmfa import wavelet as W
from stmfa.config import ModelConfig
from stmfa.model import build_models


def cases(rng):
    x = rng.normal(size=(9, 32, 32, 16))
    k = rng.normal(size=(3, 3, 16, 16))
    y = T.conv2d(x, k, 2, 1).value
    clip = rng.normal(size=(16, 32, 32, 1))
    gen, _ = build_models(ModelConfig(base_channels=8, lstm_hidden=32))
    inputs = [T.constant(rng.uniform(size=(4, 32, 32, 1))) for _ in range(8)]

    def splat():
        canvas = np.zeros((32, 32))
        for i in range(16):
            _accel.splat_rect(canvas, 3.3 + i, 7.5 + 2 * i, 6.0, 6.0, 0.7)

    return {
        "conv2d 9x32x32x16 s1": lambda: T.conv2d(x, k, 1, 1),
        "conv2d_transpose s2": lambda: T.conv2d_transpose(y, k, 2, 1, output_hw=(32, 32)),
        "dwt2d db4 9x32x32x16": lambda: W.dwt2d_spatial(x, W.DB4),
        "temporal pyramid 16x32x32": lambda: W.multilevel_temporal(clip),
        "splat 16 squares": splat,
        "generator forward (batch 4)": lambda: gen.predict_sequence(inputs, 4),
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    results: dict[str, dict[str, float]] = {}
    for backend in ("numba", "numpy"):
        _accel.BACKEND = backend
        for name, fn in cases(np.random.default_rng(0)).items():
            fn()
            best = min(timeit.repeat(fn, number=1, repeat=args.repeat))
            results.setdefault(name, {})[backend] = best
    print(f"{'kernel':<30} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8}")
    for name, t in results.items():
        print(f"{name:<30} {1e3 * t['numba']:>10.3f} {1e3 * t['numpy']:>10.3f} {t['numpy'] / t['numba']:>8.2f}")


if __name__ == "__main__":
    main()
