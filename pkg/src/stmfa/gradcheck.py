"""Finite-difference verification of every registered autodiff op and a micro-model.

Each case builds small random inputs, reduces the op output to a scalar with a
fixed random weighting, and compares the backward pass with central
differences. Error is the normwise relative error
``max|analytic - numeric| / max(max|numeric|, 1e-12)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from . import wavelet  # noqa: F401  (registers the wavelet ops)
from .wavelet import DB4

EPS = 1e-5
OP_TOL = 1e-4
MODEL_TOL = 1e-3


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    tol: float

    @property
    def ok(self) -> bool:
        return bool(self.max_rel_error <= self.tol)


def _away_from_zero(rng, shape, low=0.1, high=1.0):
    mag = rng.uniform(low, high, size=shape)
    return mag * rng.choice([-1.0, 1.0], size=shape)


def _rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(numeric))), 1e-12)
    return float(np.max(np.abs(analytic - numeric))) / scale


def check_function(fn: Callable[..., T.Node], arrays: list[np.ndarray], rng: np.random.Generator, eps: float = EPS) -> float:
    """Max relative error of ``d/d inputs sum(fn(inputs) * R)`` over all inputs."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    probe = fn(*[T.constant(a) for a in arrays])
    weights = rng.normal(size=probe.value.shape)

    def scalar(vals):
        return float(np.sum(fn(*[T.constant(v) for v in vals]).value * weights))

    leaves = [T.Node(a.copy(), requires_grad=True) for a in arrays]
    out = fn(*leaves)
    T.backward(T.sum_(T.mul(out, T.constant(weights))))
    worst = 0.0
    for idx, leaf in enumerate(leaves):
        numeric = np.zeros_like(arrays[idx])
        flat = numeric.reshape(-1)
        base = arrays[idx].reshape(-1)
        for i in range(base.size):
            vals = [a.copy() for a in arrays]
            v = vals[idx].reshape(-1)
            v[i] = base[i] + eps
            plus = scalar(vals)
            v[i] = base[i] - eps
            minus = scalar(vals)
            flat[i] = (plus - minus) / (2 * eps)
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(numeric)
        worst = max(worst, _rel_error(np.asarray(analytic), numeric))
    return worst


def _op(name):
    # looked up at call time so a patched registry entry is what gets checked
    return lambda *args, **kw: T.OPS[name](*args, **kw)


def op_cases(rng: np.random.Generator) -> dict[str, list[tuple[Callable, list[np.ndarray]]]]:
    """One or more (function, inputs) cases for every name in ``T.OPS``."""
    r = rng.normal
    lstm = _op("conv_lstm_step")

    def two_lstm_steps(x1, x2, h, c, k, b):
        h1, c1 = lstm(x1, h, c, k, b)
        h2, c2 = lstm(x2, h1, c1, k, b)
        return T.concat([h2, c2], -1)

    return {
        "add": [(_op("add"), [r(size=(3, 4)), r(size=(3, 4))]), (_op("add"), [r(size=(3, 4)), r(size=())])],
        "sub": [(_op("sub"), [r(size=(3, 4)), r(size=(3, 4))]), (_op("sub"), [r(size=()), r(size=(2, 3))])],
        "mul": [(_op("mul"), [r(size=(3, 4)), r(size=(3, 4))]), (_op("mul"), [r(size=(3, 4)), r(size=())])],
        "neg": [(_op("neg"), [r(size=(3, 4))])],
        "abs": [(_op("abs"), [_away_from_zero(rng, (3, 4))])],
        "square": [(_op("square"), [r(size=(3, 4))])],
        "sigmoid": [(_op("sigmoid"), [2 * r(size=(3, 4))])],
        "tanh": [(_op("tanh"), [r(size=(3, 4))])],
        "leaky_relu": [(_op("leaky_relu"), [_away_from_zero(rng, (3, 4))])],
        "log": [(_op("log"), [rng.uniform(0.2, 2.0, size=(3, 4))])],
        "clip": [(lambda a: T.OPS["clip"](a, -0.5, 0.5), [np.concatenate([_away_from_zero(rng, 6, 0.1, 0.4), _away_from_zero(rng, 6, 0.6, 1.0)])])],
        "sum": [(_op("sum"), [r(size=(2, 3, 2))])],
        "mean": [(_op("mean"), [r(size=(2, 3, 2))])],
        "reshape": [(lambda a: T.OPS["reshape"](a, (3, 4)), [r(size=(2, 6))])],
        "slice": [(lambda a: T.OPS["slice"](a, 1, 1, 4), [r(size=(4, 5, 3))])],
        "concat": [(lambda a, b: T.OPS["concat"]([a, b], 1), [r(size=(2, 3)), r(size=(2, 2))])],
        "conv2d": [
            (lambda x, k, b: T.OPS["conv2d"](x, k, 1, 1, bias=b), [r(size=(5, 5, 2)), r(size=(3, 3, 2, 3)), r(size=3)]),
            (lambda x, k: T.OPS["conv2d"](x, k, 2, 1), [r(size=(2, 6, 6, 2)), r(size=(3, 3, 2, 2))]),
        ],
        "conv2d_transpose": [
            (lambda x, k, b: T.OPS["conv2d_transpose"](x, k, 2, 1, bias=b), [r(size=(3, 3, 3)), r(size=(3, 3, 2, 3)), r(size=2)]),
            (lambda x, k: T.OPS["conv2d_transpose"](x, k, 1), [r(size=(2, 4, 4, 2)), r(size=(3, 3, 1, 2))]),
        ],
        "avg_pool2": [(_op("avg_pool2"), [r(size=(2, 4, 4, 2))])],
        "upsample_nearest2": [(_op("upsample_nearest2"), [r(size=(2, 2, 3))])],
        "add_bias": [(_op("add_bias"), [r(size=(2, 3, 4)), r(size=4)])],
        "global_avg_pool": [(_op("global_avg_pool"), [r(size=(2, 3, 3, 2))])],
        "matmul": [(_op("matmul"), [r(size=(3, 4)), r(size=(4, 2))])],
        "conv_lstm_step": [
            (
                two_lstm_steps,
                [r(size=(4, 4, 2)), r(size=(4, 4, 2)), r(size=(4, 4, 3)), r(size=(4, 4, 3)), 0.3 * r(size=(3, 3, 5, 12)), 0.3 * r(size=12)],
            )
        ],
        "wavelet_spatial": [
            (_op("wavelet_spatial"), [r(size=(4, 4, 2))]),
            (lambda x: T.OPS["wavelet_spatial"](x, DB4), [r(size=(4, 6, 1))]),
        ],
        "wavelet_spatial_inverse": [
            (_op("wavelet_spatial_inverse"), [r(size=(2, 2, 8))]),
            (lambda x: T.OPS["wavelet_spatial_inverse"](x, DB4), [r(size=(2, 3, 4))]),
        ],
        "wavelet_temporal": [
            (_op("wavelet_temporal"), [r(size=(4, 3, 3, 1))]),
            (lambda x: T.OPS["wavelet_temporal"](x, DB4, axis=1), [r(size=(2, 4, 3, 1))]),
        ],
        "wavelet_temporal_inverse": [
            (_op("wavelet_temporal_inverse"), [r(size=(4, 3, 3, 1))]),
            (lambda x: T.OPS["wavelet_temporal_inverse"](x, DB4, axis=1), [r(size=(2, 4, 3, 1))]),
        ],
    }


def check_ops(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    cases = op_cases(rng)
    missing = sorted(set(T.OPS) - set(cases))
    if missing:
        raise RuntimeError(f"no gradient check case for ops: {missing}")
    results = []
    for name in T.OPS:
        worst = max(check_function(fn, arrays, rng) for fn, arrays in cases[name])
        results.append(CheckResult(name, worst, OP_TOL))
    return results


def micro_model_config(seed: int = 0):
    from .config import ModelConfig
    from .losses import LossWeights

    return ModelConfig(
        input_frames=4,
        predict_frames=2,
        base_channels=1,
        rrdb_units=2,
        swam_levels=2,
        lstm_hidden=1,
        weights=LossWeights(1.0, 0.01, 1),
        seed=seed,
    )


def check_micro_model(seed: int = 0) -> tuple[CheckResult, int]:
    """FD check of the full generator loss w.r.t. every generator parameter (8x8 frames)."""
    from .losses import generator_total_loss
    from .model import build_models

    rng = np.random.default_rng(seed + 1)
    cfg = micro_model_config(seed)
    gen, disc = build_models(cfg)
    clip = rng.uniform(0.0, 1.0, size=(1, 6, 8, 8, 1))
    inputs = [clip[:, t] for t in range(4)]
    target = clip[:, 4:6]

    def loss() -> T.Node:
        preds = gen.predict_sequence(inputs, 2)
        return generator_total_loss(target, T.stack(preds, 1), disc(inputs, preds), cfg.weights)

    params = list(gen.params.values())
    T.zero_grad(params)
    T.backward(loss())
    analytic = np.concatenate([p.grad.reshape(-1) for p in params])
    numeric = np.zeros_like(analytic)
    pos = 0
    for p in params:
        flat = p.value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + EPS
            plus = loss().item()
            flat[i] = orig - EPS
            minus = loss().item()
            flat[i] = orig
            numeric[pos] = (plus - minus) / (2 * EPS)
            pos += 1
    return CheckResult("micro_model", _rel_error(analytic, numeric), MODEL_TOL), analytic.size
