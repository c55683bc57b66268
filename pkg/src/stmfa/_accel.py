"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The backend is chosen once at import time from ``STMFA_BACKEND``:

* ``numba`` (default when numba imports) compiles the loop kernels with ``@njit``.
* ``numpy`` uses the vectorised reference implementations below.

The two paths may accumulate in different orders, so they agree to rounding
rather than bitwise; each is deterministic on its own. Tests compare them.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional accelerator
    HAVE_NUMBA = False

_requested = os.environ.get("STMFA_BACKEND", "numba" if HAVE_NUMBA else "numpy").lower()
if _requested not in ("numba", "numpy"):
    raise ValueError(f"STMFA_BACKEND must be 'numba' or 'numpy', got {_requested!r}")
BACKEND = "numba" if (_requested == "numba" and HAVE_NUMBA) else "numpy"


# ---------------------------------------------------------------------------
# periodic two-channel filter bank, transform along the last axis of a 2-D array
#
#   analysis:  lo[k] = sum_j f_lo[j] * x[(2k + 1 - j) mod N]
#   synthesis: x[(2k + j + 2 - L) mod N] += g_lo[j] * lo[k] + g_hi[j] * hi[k]
# ---------------------------------------------------------------------------


def _analysis_numpy(x, f_lo, f_hi):
    n = x.shape[-1]
    lo = np.zeros(x.shape[:-1] + (n // 2,), dtype=x.dtype)
    hi = np.zeros_like(lo)
    for j in range(len(f_lo)):
        # sample index 2k+1-j for k = 0..n/2-1
        idx = (np.arange(1, n, 2) - j) % n
        seg = x[..., idx]
        lo += f_lo[j] * seg
        hi += f_hi[j] * seg
    return lo, hi


def _synthesis_numpy(lo, hi, g_lo, g_hi):
    half = lo.shape[-1]
    n = 2 * half
    taps = len(g_lo)
    out = np.zeros(lo.shape[:-1] + (n,), dtype=lo.dtype)
    for j in range(taps):
        idx = (np.arange(0, n, 2) + j + 2 - taps) % n
        out[..., idx] += g_lo[j] * lo + g_hi[j] * hi
    return out


def _im2col_numpy(x, kh, kw, stride, pad, ho, wo):
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x
    n, _, _, c = xp.shape
    cols = np.empty((n, ho, wo, kh, kw, c), dtype=xp.dtype)
    for a in range(kh):
        for b in range(kw):
            cols[:, :, :, a, b, :] = xp[:, a : a + stride * ho : stride, b : b + stride * wo : stride, :]
    return cols


def _col2im_numpy(cols, h, w, stride, pad):
    n, ho, wo, kh, kw, c = cols.shape
    out = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=cols.dtype)
    for a in range(kh):
        for b in range(kw):
            out[:, a : a + stride * ho : stride, b : b + stride * wo : stride, :] += cols[:, :, :, a, b, :]
    return out[:, pad : pad + h, pad : pad + w, :]


def _splat_rect_numpy(canvas, y0, x0, height, width, intensity):
    """Paint an axis-aligned rectangle with exact area coverage and periodic wrap."""
    h, w = canvas.shape
    cov_y = _axis_coverage(y0, height, h)
    cov_x = _axis_coverage(x0, width, w)
    cov = np.outer(cov_y, cov_x)
    canvas *= 1.0 - cov
    canvas += cov * intensity
    return canvas


def _axis_coverage(start, size, extent):
    # overlap of [start, start+size) with each unit cell, wrapped onto the torus
    cov = np.zeros(extent)
    first = int(np.floor(start))
    stop = start + size
    i = first
    while i < stop:
        overlap = min(i + 1.0, stop) - max(float(i), start)
        if overlap > 0.0:
            cov[i % extent] += overlap
        i += 1
    return cov


if BACKEND == "numba":

    @njit(cache=True)
    def _analysis_nb(x, f_lo, f_hi):
        rows, n = x.shape
        half = n // 2
        taps = f_lo.shape[0]
        lo = np.zeros((rows, half), dtype=x.dtype)
        hi = np.zeros((rows, half), dtype=x.dtype)
        for r in range(rows):
            for k in range(half):
                a = 0.0
                d = 0.0
                for j in range(taps):
                    v = x[r, (2 * k + 1 - j) % n]
                    a += f_lo[j] * v
                    d += f_hi[j] * v
                lo[r, k] = a
                hi[r, k] = d
        return lo, hi

    @njit(cache=True)
    def _synthesis_nb(lo, hi, g_lo, g_hi):
        rows, half = lo.shape
        n = 2 * half
        taps = g_lo.shape[0]
        out = np.zeros((rows, n), dtype=lo.dtype)
        for r in range(rows):
            for j in range(taps):
                for k in range(half):
                    out[r, (2 * k + j + 2 - taps) % n] += g_lo[j] * lo[r, k] + g_hi[j] * hi[r, k]
        return out

    @njit(cache=True)
    def _im2col_nb(x, kh, kw, stride, pad, ho, wo):
        n, h, w, c = x.shape
        cols = np.zeros((n, ho, wo, kh, kw, c), dtype=x.dtype)
        for s in range(n):
            for i in range(ho):
                for j in range(wo):
                    for a in range(kh):
                        r = i * stride + a - pad
                        if r < 0 or r >= h:
                            continue
                        for b in range(kw):
                            q = j * stride + b - pad
                            if q < 0 or q >= w:
                                continue
                            for ch in range(c):
                                cols[s, i, j, a, b, ch] = x[s, r, q, ch]
        return cols

    @njit(cache=True)
    def _col2im_nb(cols, h, w, stride, pad):
        n, ho, wo, kh, kw, c = cols.shape
        out = np.zeros((n, h, w, c), dtype=cols.dtype)
        for s in range(n):
            for i in range(ho):
                for j in range(wo):
                    for a in range(kh):
                        r = i * stride + a - pad
                        if r < 0 or r >= h:
                            continue
                        for b in range(kw):
                            q = j * stride + b - pad
                            if q < 0 or q >= w:
                                continue
                            for ch in range(c):
                                out[s, r, q, ch] += cols[s, i, j, a, b, ch]
        return out

    @njit(cache=True)
    def _coverage_nb(start, size, extent):
        cov = np.zeros(extent)
        stop = start + size
        i = int(np.floor(start))
        while i < stop:
            overlap = min(i + 1.0, stop) - max(float(i), start)
            if overlap > 0.0:
                cov[i % extent] += overlap
            i += 1
        return cov

    @njit(cache=True)
    def _splat_rect_nb(canvas, y0, x0, height, width, intensity):
        h, w = canvas.shape
        cov_y = _coverage_nb(y0, height, h)
        cov_x = _coverage_nb(x0, width, w)
        for r in range(h):
            for q in range(w):
                cv = cov_y[r] * cov_x[q]
                canvas[r, q] = canvas[r, q] * (1.0 - cv) + cv * intensity
        return canvas


def analysis(x: np.ndarray, f_lo: np.ndarray, f_hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Two-channel periodic analysis along the last axis of ``x`` (any rank)."""
    if BACKEND == "numba":
        flat = np.ascontiguousarray(x.reshape(-1, x.shape[-1]))
        lo, hi = _analysis_nb(flat, f_lo, f_hi)
        tail = x.shape[:-1] + (x.shape[-1] // 2,)
        return lo.reshape(tail), hi.reshape(tail)
    return _analysis_numpy(x, f_lo, f_hi)


def synthesis(lo: np.ndarray, hi: np.ndarray, g_lo: np.ndarray, g_hi: np.ndarray) -> np.ndarray:
    """Two-channel periodic synthesis along the last axis; the transpose-type partner of :func:`analysis`."""
    if BACKEND == "numba":
        shape = lo.shape[:-1] + (2 * lo.shape[-1],)
        a = np.ascontiguousarray(lo.reshape(-1, lo.shape[-1]))
        d = np.ascontiguousarray(hi.reshape(-1, hi.shape[-1]))
        return _synthesis_nb(a, d, g_lo, g_hi).reshape(shape)
    return _synthesis_numpy(lo, hi, g_lo, g_hi)


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int, ho: int, wo: int) -> np.ndarray:
    """Patch matrix ``(N, ho, wo, kh, kw, C)`` of a zero-padded NHWC batch."""
    if BACKEND == "numba":
        return _im2col_nb(np.ascontiguousarray(x), kh, kw, stride, pad, ho, wo)
    return _im2col_numpy(x, kh, kw, stride, pad, ho, wo)


def col2im(cols: np.ndarray, h: int, w: int, stride: int, pad: int) -> np.ndarray:
    """Scatter-add patches back onto an ``(N, h, w, C)`` grid; the adjoint of :func:`im2col`."""
    if BACKEND == "numba":
        return _col2im_nb(np.ascontiguousarray(cols), h, w, stride, pad)
    return _col2im_numpy(cols, h, w, stride, pad)


def splat_rect(canvas: np.ndarray, y0: float, x0: float, height: float, width: float, intensity: float) -> np.ndarray:
    if BACKEND == "numba":
        return _splat_rect_nb(canvas, float(y0), float(x0), float(height), float(width), float(intensity))
    return _splat_rect_numpy(canvas, float(y0), float(x0), float(height), float(width), float(intensity))
