"""Periodic Mallat filter banks: 1-D, separable 2-D over space, and along time.

Conventions
-----------
* analysis:  ``approx[k] = sum_j dec_lo[j] * x[(2k + 1 - j) mod N]`` (same for detail)
* 2-D band names put the height-axis filter first: ``LH`` is low-pass along
  height and high-pass along width, so it responds to vertical edges.
* Odd extents are padded by repeating the last sample; the original extent is
  recorded and the inverse truncates.

The ``wavelet_*`` functions at the bottom wrap the transforms as autodiff ops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _accel
from .errors import ContractError
from .tensor import DTYPE, Node, _make, as_node, register


@dataclass(frozen=True)
class WaveletFilter:
    name: str
    dec_lo: np.ndarray
    dec_hi: np.ndarray
    rec_lo: np.ndarray
    rec_hi: np.ndarray
    orthonormal: bool = True

    @classmethod
    def orthonormal_from_scaling(cls, name: str, taps) -> "WaveletFilter":
        h = np.asarray(taps, dtype=np.float64)
        n = len(h)
        g = np.array([(-1) ** (j + 1) * h[n - 1 - j] for j in range(n)])
        return cls(name, h, g, h[::-1].copy(), g[::-1].copy())

    @property
    def taps(self) -> int:
        return len(self.dec_lo)


_S2 = math.sqrt(2.0)
_S3 = math.sqrt(3.0)

HAAR = WaveletFilter.orthonormal_from_scaling("haar", [1 / _S2, 1 / _S2])
DB4 = WaveletFilter.orthonormal_from_scaling(
    "db4", np.array([1 + _S3, 3 + _S3, 3 - _S3, 1 - _S3]) / (4 * _S2)
)
FILTERS = {"haar": HAAR, "db4": DB4}


def get_filter(name: str | WaveletFilter) -> WaveletFilter:
    if isinstance(name, WaveletFilter):
        return name
    try:
        return FILTERS[name.lower()]
    except KeyError:
        raise ContractError(f"unknown wavelet {name!r}; choose from {sorted(FILTERS)}") from None


# ---------------------------------------------------------------------------
# single-axis building blocks


def _forward_axis(x, lo, hi, axis):
    moved = np.moveaxis(x, axis, -1)
    a, d = _accel.analysis(moved, lo, hi)
    return np.moveaxis(a, -1, axis), np.moveaxis(d, -1, axis)


def _inverse_axis(a, d, lo, hi, axis):
    out = _accel.synthesis(np.moveaxis(a, axis, -1), np.moveaxis(d, axis, -1), lo, hi)
    return np.moveaxis(out, -1, axis)


def _require_even(n, what):
    if n < 2 or n % 2:
        raise ContractError(f"{what} must be even and >= 2, got {n}")


def dwt1d(signal, filt=HAAR) -> tuple[np.ndarray, np.ndarray]:
    """One analysis level of an even-length signal -> ``(approx, detail)``."""
    f = get_filter(filt)
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1:
        raise ContractError(f"dwt1d expects a 1-D signal, got shape {x.shape}")
    _require_even(len(x), "signal length")
    return _accel.analysis(x, f.dec_lo, f.dec_hi)


def idwt1d(approx, detail, filt=HAAR) -> np.ndarray:
    f = get_filter(filt)
    a = np.asarray(approx, dtype=np.float64)
    d = np.asarray(detail, dtype=np.float64)
    if a.shape != d.shape or a.ndim != 1:
        raise ContractError(f"idwt1d: approx {a.shape} and detail {d.shape} must be equal 1-D shapes")
    return _accel.synthesis(a, d, f.rec_lo, f.rec_hi)


# ---------------------------------------------------------------------------
# spatial


BAND_NAMES = ("LL", "LH", "HL", "HH")


def dwt2d_spatial(image, filt=HAAR) -> dict[str, np.ndarray]:
    """Separable 2-D analysis of ``(..., H, W, C)``; every channel independently."""
    f = get_filter(filt)
    x = np.asarray(image, dtype=np.float64)
    if x.ndim < 3:
        raise ContractError(f"dwt2d_spatial expects (..., H, W, C), got shape {x.shape}")
    _require_even(x.shape[-3], "image height")
    _require_even(x.shape[-2], "image width")
    low_w, high_w = _forward_axis(x, f.dec_lo, f.dec_hi, -2)
    ll, hl = _forward_axis(low_w, f.dec_lo, f.dec_hi, -3)
    lh, hh = _forward_axis(high_w, f.dec_lo, f.dec_hi, -3)
    return {"LL": ll, "LH": lh, "HL": hl, "HH": hh}


def idwt2d_spatial(bands: dict[str, np.ndarray], filt=HAAR) -> np.ndarray:
    f = get_filter(filt)
    missing = [b for b in BAND_NAMES if b not in bands]
    if missing:
        raise ContractError(f"idwt2d_spatial: missing bands {missing}")
    shapes = {np.shape(bands[b]) for b in BAND_NAMES}
    if len(shapes) != 1:
        raise ContractError(f"idwt2d_spatial: sub-band shapes differ: {sorted(shapes)}")
    ll, lh, hl, hh = (np.asarray(bands[b], dtype=np.float64) for b in BAND_NAMES)
    low_w = _inverse_axis(ll, hl, f.rec_lo, f.rec_hi, -3)
    high_w = _inverse_axis(lh, hh, f.rec_lo, f.rec_hi, -3)
    return _inverse_axis(low_w, high_w, f.rec_lo, f.rec_hi, -2)


def _pad_last_to_even(x, axis):
    if x.shape[axis] % 2 == 0:
        return x
    last = np.take(x, [-1], axis=axis)
    return np.concatenate([x, last], axis=axis)


@dataclass
class SpatialPyramid:
    """Mallat pyramid: detail bands per level, ``LL`` only in the deepest entry.

    ``input_extents[l]`` is the (H, W) fed to level ``l`` before padding.
    """

    levels: list[dict[str, np.ndarray]]
    original_extents: tuple[int, int]
    input_extents: list[tuple[int, int]] = field(default_factory=list)

    @property
    def ll(self) -> np.ndarray:
        return self.levels[-1]["LL"]


def multilevel_spatial(image, filt=HAAR, levels: int = 1) -> SpatialPyramid:
    f = get_filter(filt)
    x = np.asarray(image, dtype=np.float64)
    if levels < 1:
        raise ContractError(f"levels must be >= 1, got {levels}")
    if x.ndim < 3:
        raise ContractError(f"multilevel_spatial expects (..., H, W, C), got shape {x.shape}")
    out, extents = [], []
    cur = x
    for lvl in range(levels):
        h, w = cur.shape[-3], cur.shape[-2]
        if h < 2 or w < 2:
            raise ContractError(f"level {lvl + 1} would transform extents {(h, w)} < 2")
        extents.append((h, w))
        cur = _pad_last_to_even(_pad_last_to_even(cur, -3), -2)
        bands = dwt2d_spatial(cur, f)
        cur = bands.pop("LL")
        out.append(bands)
    out[-1]["LL"] = cur
    return SpatialPyramid(out, (x.shape[-3], x.shape[-2]), extents)


def inverse_multilevel_spatial(pyramid: SpatialPyramid, filt=HAAR) -> np.ndarray:
    f = get_filter(filt)
    cur = pyramid.levels[-1]["LL"]
    for lvl in range(len(pyramid.levels) - 1, -1, -1):
        bands = dict(pyramid.levels[lvl])
        bands["LL"] = cur
        full = idwt2d_spatial(bands, f)
        h, w = pyramid.input_extents[lvl]
        cur = full[..., :h, :w, :]
    return cur


# ---------------------------------------------------------------------------
# temporal


def _as_video(video) -> np.ndarray:
    v = np.asarray(video, dtype=np.float64)
    if v.ndim != 4:
        raise ContractError(f"expected a video (T, H, W, C), got shape {v.shape}")
    return v


def dwt_temporal(video, filt=HAAR) -> tuple[np.ndarray, np.ndarray]:
    """Transform every pixel's time series: ``(T,H,W,C)`` -> two ``(T/2,H,W,C)`` clips."""
    f = get_filter(filt)
    v = _as_video(video)
    _require_even(v.shape[0], "clip length")
    return _forward_axis(v, f.dec_lo, f.dec_hi, 0)


def idwt_temporal(low, high, filt=HAAR) -> np.ndarray:
    f = get_filter(filt)
    lo, hi = _as_video(low), _as_video(high)
    if lo.shape != hi.shape:
        raise ContractError(f"idwt_temporal: low {lo.shape} and high {hi.shape} differ")
    return _inverse_axis(lo, hi, f.rec_lo, f.rec_hi, 0)


@dataclass
class TemporalBands:
    """Per-level temporal detail clips; ``low`` is kept only in the deepest entry."""

    levels: list[dict[str, np.ndarray]]
    original_length: int
    padded_length: int

    @property
    def low(self) -> np.ndarray:
        return self.levels[-1]["low"]

    def retained(self) -> list[np.ndarray]:
        """Bands deepest first: low, then highs from coarse to fine."""
        return [self.low] + [lvl["high"] for lvl in reversed(self.levels)]


def _next_pow2(n: int) -> int:
    return 1 << max(0, (n - 1).bit_length())


def pad_time_pow2(video: np.ndarray) -> np.ndarray:
    """Repeat the final frame until the length is a power of two."""
    t = video.shape[0]
    target = _next_pow2(t)
    if target == t:
        return video
    return np.concatenate([video, np.repeat(video[-1:], target - t, axis=0)], axis=0)


def multilevel_temporal(video, filt=HAAR, max_levels: int | None = None) -> TemporalBands:
    """Recurse on the low band until it holds two frames (or ``max_levels`` is hit)."""
    f = get_filter(filt)
    v = _as_video(video)
    t = v.shape[0]
    if t < 2:
        raise ContractError(f"clip length must be >= 2, got {t}")
    padded = pad_time_pow2(v)
    if padded.shape[0] < 4:
        raise ContractError(f"clip length after padding must be >= 4, got {padded.shape[0]}")
    levels = []
    cur = padded
    while cur.shape[0] > 2 and (max_levels is None or len(levels) < max_levels):
        cur, high = dwt_temporal(cur, f)
        levels.append({"high": high})
    levels[-1]["low"] = cur
    return TemporalBands(levels, t, padded.shape[0])


def inverse_multilevel_temporal(bands: TemporalBands, filt=HAAR) -> np.ndarray:
    f = get_filter(filt)
    cur = bands.low
    for lvl in reversed(bands.levels):
        cur = idwt_temporal(cur, lvl["high"], f)
    return cur[: bands.original_length]


# ---------------------------------------------------------------------------
# autodiff layers
#
# Every transform here is linear, so the backward pass is its adjoint. For the
# analysis bank the adjoint is the synthesis bank run with the time-reversed
# analysis taps; for synthesis it is analysis with the reversed synthesis taps.


@register("wavelet_spatial")
def wavelet_spatial(x, filt=HAAR) -> Node:
    """``(..., H, W, C)`` -> ``(..., H/2, W/2, 4C)`` with channel blocks LL|LH|HL|HH."""
    f = get_filter(filt)
    x = as_node(x)
    bands = dwt2d_spatial(x.value, f)
    c = x.value.shape[-1]
    out = np.concatenate([bands[b] for b in BAND_NAMES], axis=-1).astype(DTYPE, copy=False)
    lo_r, hi_r = f.dec_lo[::-1].copy(), f.dec_hi[::-1].copy()

    def bw(g):
        ll, lh, hl, hh = (g[..., i * c : (i + 1) * c] for i in range(4))
        low_w = _inverse_axis(ll, hl, lo_r, hi_r, -3)
        high_w = _inverse_axis(lh, hh, lo_r, hi_r, -3)
        return (_inverse_axis(low_w, high_w, lo_r, hi_r, -2).astype(g.dtype, copy=False),)

    return _make(out, (x,), bw, "wavelet_spatial")


@register("wavelet_spatial_inverse")
def wavelet_spatial_inverse(x, filt=HAAR) -> Node:
    """Inverse of :func:`wavelet_spatial`."""
    f = get_filter(filt)
    x = as_node(x)
    c4 = x.value.shape[-1]
    if c4 % 4:
        raise ContractError(f"wavelet_spatial_inverse: channel count {c4} not divisible by 4")
    c = c4 // 4
    bands = {b: x.value[..., i * c : (i + 1) * c] for i, b in enumerate(BAND_NAMES)}
    out = idwt2d_spatial(bands, f).astype(DTYPE, copy=False)
    lo_r, hi_r = f.rec_lo[::-1].copy(), f.rec_hi[::-1].copy()

    def bw(g):
        low_w, high_w = _forward_axis(g, lo_r, hi_r, -2)
        ll, hl = _forward_axis(low_w, lo_r, hi_r, -3)
        lh, hh = _forward_axis(high_w, lo_r, hi_r, -3)
        return (np.concatenate([ll, lh, hl, hh], axis=-1).astype(g.dtype, copy=False),)

    return _make(out, (x,), bw, "wavelet_spatial_inverse")


@register("wavelet_temporal")
def wavelet_temporal(x, filt=HAAR, axis: int = 0) -> Node:
    """One analysis level along ``axis``; output keeps the shape, low half first."""
    f = get_filter(filt)
    x = as_node(x)
    axis = axis % x.value.ndim
    _require_even(x.value.shape[axis], "temporal extent")
    a, d = _forward_axis(x.value, f.dec_lo, f.dec_hi, axis)
    half = a.shape[axis]
    lo_r, hi_r = f.dec_lo[::-1].copy(), f.dec_hi[::-1].copy()

    def bw(g):
        ga = np.take(g, range(half), axis=axis)
        gd = np.take(g, range(half, 2 * half), axis=axis)
        return (_inverse_axis(ga, gd, lo_r, hi_r, axis).astype(g.dtype, copy=False),)

    out = np.concatenate([a, d], axis=axis).astype(DTYPE, copy=False)
    return _make(out, (x,), bw, "wavelet_temporal")


@register("wavelet_temporal_inverse")
def wavelet_temporal_inverse(x, filt=HAAR, axis: int = 0) -> Node:
    f = get_filter(filt)
    x = as_node(x)
    axis = axis % x.value.ndim
    _require_even(x.value.shape[axis], "temporal extent")
    half = x.value.shape[axis] // 2
    a = np.take(x.value, range(half), axis=axis)
    d = np.take(x.value, range(half, 2 * half), axis=axis)
    out = _inverse_axis(a, d, f.rec_lo, f.rec_hi, axis).astype(DTYPE, copy=False)
    lo_r, hi_r = f.rec_lo[::-1].copy(), f.rec_hi[::-1].copy()

    def bw(g):
        ga, gd = _forward_axis(g, lo_r, hi_r, axis)
        return (np.concatenate([ga, gd], axis=axis).astype(g.dtype, copy=False),)

    return _make(out, (x,), bw, "wavelet_temporal_inverse")


def dwt_as_linear_layer(direction: str, filt=HAAR, inverse: bool = False, axis: int = 0):
    """Return a differentiable ``Node -> Node`` transform for ``spatial`` or ``temporal``."""
    f = get_filter(filt)
    if direction == "spatial":
        op = wavelet_spatial_inverse if inverse else wavelet_spatial
        return lambda x: op(x, f)
    if direction == "temporal":
        op = wavelet_temporal_inverse if inverse else wavelet_temporal
        return lambda x: op(x, f, axis)
    raise ContractError(f"direction must be 'spatial' or 'temporal', got {direction!r}")
