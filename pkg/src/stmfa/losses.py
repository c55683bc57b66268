"""Training losses (image domain + adversarial) and PSNR/SSIM metrics.

Losses take and return autodiff nodes; plain arrays are accepted and treated
as constants. Frames are channel-last, so every loss works on ``(..., H, W, C)``
and sums over all leading axes (frames, batch).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .tensor import (
    Node,
    abs_,
    add,
    as_node,
    clip,
    log,
    mean,
    mul,
    neg,
    slice_axis,
    square,
    sub,
    sum_,
)

PROB_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 0.001
    alpha: int = 1

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ContractError("loss weights must be non-negative")
        if int(self.alpha) != self.alpha or self.alpha < 1:
            raise ContractError(f"alpha must be an integer >= 1, got {self.alpha}")


def _pair(y, yhat, op):
    y, yhat = as_node(y), as_node(yhat)
    if y.value.shape != yhat.value.shape:
        raise ContractError(f"{op}: shape mismatch {y.value.shape} vs {yhat.value.shape}")
    return y, yhat


def _reduce(x: Node, normalize: bool) -> Node:
    return mean(x) if normalize else sum_(x)


def l2_loss(y, yhat, normalize: bool = False) -> Node:
    """Sum of squared differences over every frame and pixel."""
    y, yhat = _pair(y, yhat, "l2_loss")
    return _reduce(square(sub(y, yhat)), normalize)


def _int_power(x: Node, alpha: int) -> Node:
    out = x
    for _ in range(int(alpha) - 1):
        out = mul(out, x)
    return out


def gdl_loss(y, yhat, alpha: int = 1, normalize: bool = False) -> Node:
    """Gradient difference loss over in-bounds vertical and horizontal neighbour pairs."""
    y, yhat = _pair(y, yhat, "gdl_loss")
    if y.value.ndim < 3 or y.value.shape[-3] < 2 or y.value.shape[-2] < 2:
        raise ContractError(f"gdl_loss: frames must be at least 2x2, got shape {y.value.shape}")
    if int(alpha) != alpha or alpha < 1:
        raise ContractError(f"alpha must be an integer >= 1, got {alpha}")
    h, w = y.value.shape[-3], y.value.shape[-2]

    def grad_mag(z: Node, axis: int, extent: int) -> Node:
        return abs_(sub(slice_axis(z, axis, 1, extent), slice_axis(z, axis, 0, extent - 1)))

    vertical = abs_(sub(grad_mag(y, -3, h), grad_mag(yhat, -3, h)))
    horizontal = abs_(sub(grad_mag(y, -2, w), grad_mag(yhat, -2, w)))
    terms = [_int_power(vertical, alpha), _int_power(horizontal, alpha)]
    if normalize:
        return add(mean(terms[0]), mean(terms[1]))
    return add(sum_(terms[0]), sum_(terms[1]))


def image_domain_loss(y, yhat, alpha: int = 1, normalize: bool = False) -> Node:
    return add(l2_loss(y, yhat, normalize), gdl_loss(y, yhat, alpha, normalize))


def adversarial_d_loss(d_real, d_fake, eps: float = PROB_EPS) -> Node:
    """``-log D(real) - log(1 - D(fake))``, averaged when given a batch of probabilities."""
    real = clip(as_node(d_real), eps, 1.0 - eps)
    fake = clip(as_node(d_fake), eps, 1.0 - eps)
    return sub(neg(mean(log(real))), mean(log(sub(1.0, fake))))


def adversarial_g_loss(d_fake, eps: float = PROB_EPS) -> Node:
    return neg(mean(log(clip(as_node(d_fake), eps, 1.0 - eps))))


def generator_loss_terms(y, yhat, d_fake, weights: LossWeights = LossWeights(), normalize: bool = False) -> dict[str, Node]:
    """All generator loss components plus the weighted total under key ``total``."""
    l2 = l2_loss(y, yhat, normalize)
    gdl = gdl_loss(y, yhat, weights.alpha, normalize)
    adv = adversarial_g_loss(d_fake)
    total = add(mul(add(l2, gdl), weights.lambda1), mul(adv, weights.lambda2))
    return {"l2": l2, "gdl": gdl, "img": add(l2, gdl), "adv_g": adv, "total": total}


def generator_total_loss(y, yhat, d_fake, weights: LossWeights = LossWeights(), normalize: bool = False) -> Node:
    return generator_loss_terms(y, yhat, d_fake, weights, normalize)["total"]


# ---------------------------------------------------------------------------
# metrics (plain numpy, no gradients)


def _frames(y, yhat):
    a = np.asarray(y, dtype=np.float64)
    b = np.asarray(yhat, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"metric: shape mismatch {a.shape} vs {b.shape}")
    return a, b


def psnr(y, yhat, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical frames."""
    a, b = _frames(y, yhat)
    if peak <= 0:
        raise ContractError("peak must be positive")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2.0 * sigma**2))
    return g / g.sum()


def _ssim_map(mx, my, sxx, syy, sxy, peak):
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    vx = sxx - mx * mx
    vy = syy - my * my
    cov = sxy - mx * my
    return ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))


def _gaussian_filter_valid(img, g):
    k = len(g)
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=0) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=1) @ g


def ssim(y, yhat, peak: float = 1.0, window: str = "gaussian", size: int = 11, sigma: float = 1.5) -> float:
    """Mean structural similarity over local windows, averaged over channels.

    ``window="gaussian"`` slides an ``size x size`` Gaussian (valid positions only);
    ``window="block8"`` uses non-overlapping uniform 8x8 blocks.
    """
    a, b = _frames(y, yhat)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if a.ndim != 3:
        raise ContractError(f"ssim expects a frame (H, W) or (H, W, C), got shape {a.shape}")
    h, w, c = a.shape
    need = size if window == "gaussian" else 8
    if window not in ("gaussian", "block8"):
        raise ContractError(f"unknown ssim window {window!r}")
    if h < need or w < need:
        raise ContractError(f"ssim: frame {h}x{w} smaller than the {need}x{need} window")
    scores = []
    for ch in range(c):
        x, z = a[..., ch], b[..., ch]
        if window == "gaussian":
            g = gaussian_window(size, sigma)
            stats = [_gaussian_filter_valid(v, g) for v in (x, z, x * x, z * z, x * z)]
        else:
            hb, wb = h // 8, w // 8

            def block_mean(v):
                return v[: hb * 8, : wb * 8].reshape(hb, 8, wb, 8).mean(axis=(1, 3))

            stats = [block_mean(v) for v in (x, z, x * x, z * z, x * z)]
        scores.append(float(np.mean(_ssim_map(*stats, peak))))
    return float(np.mean(scores))
