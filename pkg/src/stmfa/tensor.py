"""Dense tensors and a small reverse-mode autodiff engine.

Tensors are plain ``numpy.ndarray`` values. A :class:`Node` wraps one value
together with the closure that maps the output gradient to its parents'
gradients. The op vocabulary is fixed and every op is listed in ``OPS`` so the
gradient checker can prove coverage.

Spatial ops use channel-last layout and accept either a single image
``(H, W, C)`` or a batch ``(N, H, W, C)``.
"""

from __future__ import annotations

import contextlib
import os
import struct
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import _accel
from .errors import ContractError, DomainError, FormatError, NumericalError

DTYPE = np.float32 if os.environ.get("STMFA_DTYPE", "float64") == "float32" else np.float64
CHECK_FINITE = True
LEAKY_SLOPE = 0.2

OPS: dict[str, Callable] = {}


def register(name: str):
    def deco(fn):
        OPS[name] = fn
        return fn

    return deco


class Node:
    """A value in the computation graph.

    ``grad`` stays ``None`` until a backward pass reaches the node. Leaf grads
    accumulate across backward passes until :meth:`zero_grad`.
    """

    __slots__ = ("value", "grad", "requires_grad", "parents", "backward_fn", "op")

    def __init__(self, value, requires_grad=False, parents=(), backward_fn=None, op="const"):
        self.value = value
        self.grad = None
        self.requires_grad = requires_grad
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def item(self) -> float:
        return float(self.value.reshape(-1)[0]) if self.value.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Node(op={self.op}, shape={self.value.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)


class Parameter(Node):
    """Trainable leaf with a stable name used for checkpoints."""

    __slots__ = ("name",)

    def __init__(self, name: str, value):
        super().__init__(np.array(value, dtype=DTYPE), requires_grad=True, op="param")
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.value.shape})"


def as_node(x) -> Node:
    if isinstance(x, Node):
        return x
    return Node(np.asarray(x, dtype=DTYPE))


def constant(x) -> Node:
    return Node(np.asarray(x, dtype=DTYPE))


def detach(a: Node) -> Node:
    return Node(a.value)


def _make(value, parents, backward_fn, op) -> Node:
    if CHECK_FINITE and not np.isfinite(value).all():
        raise NumericalError(f"{op}: non-finite output")
    if any(p.requires_grad for p in parents):
        return Node(value, True, tuple(parents), backward_fn, op)
    return Node(value, op=op)


# ---------------------------------------------------------------------------
# FLOP accounting (multiply-adds of the dense kernels, counted as 2 flops)


class _FlopCounter:
    def __init__(self):
        self.active = False
        self.total = 0

    def add(self, n: int) -> None:
        if self.active:
            self.total += int(n)


FLOPS = _FlopCounter()


class FlopCount:
    total = 0


@contextlib.contextmanager
def count_flops():
    """Count dense-kernel flops inside the block; read ``.total`` afterwards."""
    result = FlopCount()
    prev_active, prev_total = FLOPS.active, FLOPS.total
    FLOPS.active, FLOPS.total = True, 0
    try:
        yield result
    finally:
        result.total = FLOPS.total
        FLOPS.active, FLOPS.total = prev_active, prev_total


# ---------------------------------------------------------------------------
# elementwise


def _binary_operands(a, b, op):
    a, b = as_node(a), as_node(b)
    if a.value.shape != b.value.shape and a.value.size != 1 and b.value.size != 1:
        raise ContractError(f"{op}: shape mismatch {a.value.shape} vs {b.value.shape}")
    return a, b


def _reduce_to(g, shape):
    if g.shape == shape:
        return g
    return np.asarray(g.sum(), dtype=g.dtype).reshape(shape)


@register("add")
def add(a, b) -> Node:
    a, b = _binary_operands(a, b, "add")
    sa, sb = a.value.shape, b.value.shape

    def bw(g):
        return _reduce_to(g, sa), _reduce_to(g, sb)

    return _make(a.value + b.value, (a, b), bw, "add")


@register("sub")
def sub(a, b) -> Node:
    a, b = _binary_operands(a, b, "sub")
    sa, sb = a.value.shape, b.value.shape

    def bw(g):
        return _reduce_to(g, sa), _reduce_to(-g, sb)

    return _make(a.value - b.value, (a, b), bw, "sub")


@register("mul")
def mul(a, b) -> Node:
    a, b = _binary_operands(a, b, "mul")
    av, bv = a.value, b.value

    def bw(g):
        return _reduce_to(g * bv, av.shape), _reduce_to(g * av, bv.shape)

    return _make(av * bv, (a, b), bw, "mul")


@register("neg")
def neg(a) -> Node:
    a = as_node(a)
    return _make(-a.value, (a,), lambda g: (-g,), "neg")


@register("abs")
def abs_(a) -> Node:
    """Absolute value; the subgradient at zero is 0."""
    a = as_node(a)
    sign = np.sign(a.value)
    return _make(np.abs(a.value), (a,), lambda g: (g * sign,), "abs")


@register("square")
def square(a) -> Node:
    a = as_node(a)
    v = a.value
    return _make(v * v, (a,), lambda g: (2.0 * v * g,), "square")


@register("sigmoid")
def sigmoid(a) -> Node:
    a = as_node(a)
    s = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


@register("tanh")
def tanh(a) -> Node:
    a = as_node(a)
    t = np.tanh(a.value)
    return _make(t, (a,), lambda g: (g * (1.0 - t * t),), "tanh")


@register("leaky_relu")
def leaky_relu(a, slope: float = LEAKY_SLOPE) -> Node:
    a = as_node(a)
    pos = a.value > 0
    out = np.where(pos, a.value, slope * a.value)
    return _make(out, (a,), lambda g: (np.where(pos, g, slope * g),), "leaky_relu")


@register("log")
def log(a) -> Node:
    a = as_node(a)
    if np.any(a.value <= 0):
        raise DomainError("log of non-positive value")
    v = a.value
    return _make(np.log(v), (a,), lambda g: (g / v,), "log")


@register("clip")
def clip(a, lo: float, hi: float) -> Node:
    """Clamp to ``[lo, hi]``; gradient is zero where the clamp is active."""
    a = as_node(a)
    inside = ((a.value >= lo) & (a.value <= hi)).astype(a.value.dtype)
    return _make(np.clip(a.value, lo, hi), (a,), lambda g: (g * inside,), "clip")


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "neg": neg,
    "abs": abs_,
    "square": square,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "leaky_relu": leaky_relu,
    "log": log,
}


def elementwise(kind: str, a, b=None, slope: float = LEAKY_SLOPE) -> Node:
    """Dispatch by name: binary kinds take ``b``, ``leaky_relu`` takes ``slope``."""
    if kind not in _ELEMENTWISE:
        raise ContractError(f"unknown elementwise op {kind!r}")
    if kind in ("add", "sub", "mul"):
        if b is None:
            raise ContractError(f"{kind} needs two operands")
        return _ELEMENTWISE[kind](a, b)
    if kind == "leaky_relu":
        return leaky_relu(a, slope)
    return _ELEMENTWISE[kind](a)


# ---------------------------------------------------------------------------
# reductions and shape ops


@register("sum")
def sum_(a) -> Node:
    a = as_node(a)
    shape = a.value.shape
    return _make(np.asarray(a.value.sum()), (a,), lambda g: (np.broadcast_to(g, shape),), "sum")


@register("mean")
def mean(a) -> Node:
    a = as_node(a)
    shape, n = a.value.shape, a.value.size
    return _make(np.asarray(a.value.mean()), (a,), lambda g: (np.broadcast_to(g / n, shape),), "mean")


@register("reshape")
def reshape(a, shape) -> Node:
    a = as_node(a)
    old = a.value.shape
    try:
        out = a.value.reshape(shape)
    except ValueError as exc:
        raise ContractError(f"reshape: {exc}") from None
    return _make(out, (a,), lambda g: (g.reshape(old),), "reshape")


@register("slice")
def slice_axis(a, axis: int, start: int, stop: int) -> Node:
    a = as_node(a)
    axis = axis % a.value.ndim
    index = [slice(None)] * a.value.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    shape, dtype = a.value.shape, a.value.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        full[index] = g
        return (full,)

    return _make(a.value[index], (a,), bw, "slice")


@register("concat")
def concat(nodes: Sequence, axis: int) -> Node:
    nodes = [as_node(n) for n in nodes]
    if not nodes:
        raise ContractError("concat of an empty list")
    ndim = nodes[0].value.ndim
    axis = axis % ndim
    for n in nodes[1:]:
        s0, s1 = list(nodes[0].value.shape), list(n.value.shape)
        if len(s1) != ndim or s0[:axis] + s0[axis + 1 :] != s1[:axis] + s1[axis + 1 :]:
            raise ContractError(f"concat: mismatched extents {tuple(s0)} vs {tuple(s1)} on axis {axis}")
    bounds = np.cumsum([0] + [n.value.shape[axis] for n in nodes])

    def bw(g):
        out = []
        for i in range(len(nodes)):
            index = [slice(None)] * ndim
            index[axis] = slice(bounds[i], bounds[i + 1])
            out.append(g[tuple(index)])
        return tuple(out)

    return _make(np.concatenate([n.value for n in nodes], axis=axis), nodes, bw, "concat")


def stack(nodes: Sequence, axis: int) -> Node:
    """Stack equal-shaped nodes along a new axis (reshape + concat)."""
    nodes = [as_node(n) for n in nodes]
    ndim = nodes[0].value.ndim + 1
    axis = axis % ndim
    expanded = [reshape(n, n.value.shape[:axis] + (1,) + n.value.shape[axis:]) for n in nodes]
    return concat(expanded, axis)


# ---------------------------------------------------------------------------
# spatial ops (channel last)


def _as_batch(v):
    if v.ndim == 3:
        return v[None], True
    if v.ndim == 4:
        return v, False
    raise ContractError(f"expected (H,W,C) or (N,H,W,C), got shape {v.shape}")


def _conv_out(extent, k, stride, pad):
    return (extent + 2 * pad - k) // stride + 1


def _conv_forward(xb, k, stride, pad):
    n, h, w, c = xb.shape
    kh, kw, cin, cout = k.shape
    ho, wo = _conv_out(h, kh, stride, pad), _conv_out(w, kw, stride, pad)
    if kh == 1 and kw == 1 and stride == 1 and pad == 0:
        cols = xb.reshape(-1, c)
    else:
        cols = _accel.im2col(xb, kh, kw, stride, pad, ho, wo).reshape(n * ho * wo, kh * kw * cin)
    FLOPS.add(2 * cols.shape[0] * cols.shape[1] * cout)
    out = cols @ k.reshape(kh * kw * cin, cout)
    return out.reshape(n, ho, wo, cout), cols


def _conv_input_grad(gb, k, stride, pad, h, w):
    """Adjoint of the conv map w.r.t. its input: (N,ho,wo,Cout) -> (N,h,w,Cin)."""
    n, ho, wo, cout = gb.shape
    kh, kw, cin, _ = k.shape
    dcols = gb.reshape(-1, cout) @ k.reshape(kh * kw * cin, cout).T
    FLOPS.add(2 * dcols.shape[0] * dcols.shape[1] * cout)
    if kh == 1 and kw == 1 and stride == 1 and pad == 0:
        return dcols.reshape(n, h, w, cin)
    return _accel.col2im(dcols.reshape(n, ho, wo, kh, kw, cin), h, w, stride, pad)


def _check_conv(xshape, kshape, stride, pad, op):
    if len(kshape) != 4:
        raise ContractError(f"{op}: kernel must be (kh, kw, Cin, Cout), got {kshape}")
    if stride < 1 or pad < 0:
        raise ContractError(f"{op}: stride must be >= 1 and padding >= 0")


@register("conv2d")
def conv2d(x, kernel, stride: int = 1, padding: int = 0, bias=None) -> Node:
    """Zero-padded cross-correlation; ``kernel`` is ``(kh, kw, Cin, Cout)``, ``bias`` is ``(Cout,)``."""
    x, kernel = as_node(x), as_node(kernel)
    xb, squeeze = _as_batch(x.value)
    k = kernel.value
    _check_conv(xb.shape, k.shape, stride, padding, "conv2d")
    if xb.shape[3] != k.shape[2]:
        raise ContractError(f"conv2d: input has {xb.shape[3]} channels, kernel expects {k.shape[2]}")
    h, w = xb.shape[1:3]
    if _conv_out(h, k.shape[0], stride, padding) < 1 or _conv_out(w, k.shape[1], stride, padding) < 1:
        raise ContractError(f"conv2d: output extent < 1 for input {xb.shape[1:3]} and kernel {k.shape[:2]}")
    out, cols = _conv_forward(xb, k, stride, padding)
    parents = [x, kernel]
    if bias is not None:
        bias = as_node(bias)
        if bias.value.shape != (k.shape[3],):
            raise ContractError(f"conv2d: bias shape {bias.value.shape} != ({k.shape[3]},)")
        out = out + bias.value
        parents.append(bias)

    def bw(g):
        gb = g[None] if squeeze else g
        gx = _conv_input_grad(gb, k, stride, padding, h, w) if x.requires_grad else None
        gk = None
        if kernel.requires_grad:
            gk = (cols.T @ gb.reshape(-1, k.shape[3])).reshape(k.shape)
            FLOPS.add(2 * cols.size * k.shape[3])
        if gx is not None and squeeze:
            gx = gx[0]
        grads = [gx, gk]
        if bias is not None:
            grads.append(gb.reshape(-1, k.shape[3]).sum(axis=0))
        return tuple(grads)

    return _make(out[0] if squeeze else out, parents, bw, "conv2d")


@register("conv2d_transpose")
def conv2d_transpose(x, kernel, stride: int = 1, padding: int | None = None, output_hw=None, bias=None) -> Node:
    """Exact adjoint of :func:`conv2d` with the same kernel, stride and padding.

    ``kernel`` keeps the conv orientation ``(kh, kw, Cin, Cout)``: the input here
    has ``Cout`` channels and the output has ``Cin``. Padding defaults to
    ``(kh - 1) // 2`` and the output extent to ``stride * input extent``.
    """
    x, kernel = as_node(x), as_node(kernel)
    xb, squeeze = _as_batch(x.value)
    k = kernel.value
    if stride not in (1, 2):
        raise ContractError(f"conv2d_transpose: stride must be 1 or 2, got {stride}")
    pad = (k.shape[0] - 1) // 2 if padding is None else padding
    _check_conv(xb.shape, k.shape, stride, pad, "conv2d_transpose")
    if xb.shape[3] != k.shape[3]:
        raise ContractError(f"conv2d_transpose: input has {xb.shape[3]} channels, kernel expects {k.shape[3]}")
    ho, wo = xb.shape[1:3]
    h, w = output_hw if output_hw is not None else (stride * ho, stride * wo)
    if h < 1 or w < 1 or _conv_out(h, k.shape[0], stride, pad) != ho or _conv_out(w, k.shape[1], stride, pad) != wo:
        raise ContractError(f"conv2d_transpose: output extents {(h, w)} incompatible with input {(ho, wo)}")
    out = _conv_input_grad(xb, k, stride, pad, h, w)
    parents = [x, kernel]
    if bias is not None:
        bias = as_node(bias)
        if bias.value.shape != (k.shape[2],):
            raise ContractError(f"conv2d_transpose: bias shape {bias.value.shape} != ({k.shape[2]},)")
        out = out + bias.value
        parents.append(bias)

    def bw(g):
        gb = g[None] if squeeze else g
        gx = gk = None
        if x.requires_grad or kernel.requires_grad:
            gx_full, gcols = _conv_forward(gb, k, stride, pad)
            gx = gx_full[0] if squeeze else gx_full
            if kernel.requires_grad:
                gk = (gcols.T @ xb.reshape(-1, k.shape[3])).reshape(k.shape)
                FLOPS.add(2 * gcols.size * k.shape[3])
        grads = [gx, gk]
        if bias is not None:
            grads.append(gb.reshape(-1, k.shape[2]).sum(axis=0))
        return tuple(grads)

    return _make(out[0] if squeeze else out, parents, bw, "conv2d_transpose")


@register("avg_pool2")
def avg_pool2(x) -> Node:
    x = as_node(x)
    xb, squeeze = _as_batch(x.value)
    n, h, w, c = xb.shape
    if h % 2 or w % 2:
        raise ContractError(f"avg_pool2: extents must be even, got {(h, w)}")
    out = xb.reshape(n, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))

    def bw(g):
        gb = g[None] if squeeze else g
        up = np.repeat(np.repeat(gb * 0.25, 2, axis=1), 2, axis=2)
        return (up[0] if squeeze else up,)

    return _make(out[0] if squeeze else out, (x,), bw, "avg_pool2")


@register("upsample_nearest2")
def upsample_nearest2(x) -> Node:
    x = as_node(x)
    xb, squeeze = _as_batch(x.value)
    n, h, w, c = xb.shape
    out = np.repeat(np.repeat(xb, 2, axis=1), 2, axis=2)

    def bw(g):
        gb = g[None] if squeeze else g
        down = gb.reshape(n, h, 2, w, 2, c).sum(axis=(2, 4))
        return (down[0] if squeeze else down,)

    return _make(out[0] if squeeze else out, (x,), bw, "upsample_nearest2")


@register("add_bias")
def add_bias(x, bias) -> Node:
    """Add a per-channel bias ``(C,)`` along the last axis."""
    x, bias = as_node(x), as_node(bias)
    c = x.value.shape[-1]
    if bias.value.shape != (c,):
        raise ContractError(f"add_bias: bias shape {bias.value.shape} != ({c},)")
    return _make(x.value + bias.value, (x, bias), lambda g: (g, g.reshape(-1, c).sum(axis=0)), "add_bias")


@register("global_avg_pool")
def global_avg_pool(x) -> Node:
    x = as_node(x)
    xb, squeeze = _as_batch(x.value)
    n, h, w, c = xb.shape

    def bw(g):
        gb = np.broadcast_to((g.reshape(n, 1, 1, c) / (h * w)), xb.shape)
        return (gb[0] if squeeze else gb,)

    out = xb.mean(axis=(1, 2))
    return _make(out[0] if squeeze else out, (x,), bw, "global_avg_pool")


@register("matmul")
def matmul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise ContractError(f"matmul: incompatible shapes {a.value.shape} @ {b.value.shape}")
    av, bv = a.value, b.value
    FLOPS.add(2 * av.shape[0] * av.shape[1] * bv.shape[1])
    return _make(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g), "matmul")


# ---------------------------------------------------------------------------
# recurrent cell


def conv_lstm_step(x, h, c, kernel, bias) -> tuple[Node, Node]:
    """One ConvLSTM update.

    The gates come from a single 'same'-padded conv over ``concat(x, h)`` with
    ``4 * hidden`` output channels ordered (input, forget, output, candidate).
    """
    x, h, c = as_node(x), as_node(h), as_node(c)
    hidden = h.value.shape[-1]
    if x.value.shape[:-1] != h.value.shape[:-1] or h.value.shape != c.value.shape:
        raise ContractError(f"conv_lstm_step: misaligned x {x.value.shape}, h {h.value.shape}, c {c.value.shape}")
    k = as_node(kernel)
    if k.value.shape[3] != 4 * hidden:
        raise ContractError(f"conv_lstm_step: kernel must produce {4 * hidden} channels")
    gates = conv2d(concat([x, h], axis=-1), k, 1, k.value.shape[0] // 2, bias=bias)
    i = sigmoid(slice_axis(gates, -1, 0, hidden))
    f = sigmoid(slice_axis(gates, -1, hidden, 2 * hidden))
    o = sigmoid(slice_axis(gates, -1, 2 * hidden, 3 * hidden))
    g = tanh(slice_axis(gates, -1, 3 * hidden, 4 * hidden))
    c_next = add(mul(f, c), mul(i, g))
    h_next = mul(o, tanh(c_next))
    return h_next, c_next


OPS["conv_lstm_step"] = conv_lstm_step


# ---------------------------------------------------------------------------
# backward pass


def _topo_order(root: Node) -> list[Node]:
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(root: Node) -> None:
    """Populate ``.grad`` for every node reachable from a scalar ``root``."""
    if root.value.size != 1:
        raise ContractError(f"backward: root must be scalar, got shape {root.value.shape}")
    if not root.requires_grad:
        return
    order = _topo_order(root)
    for node in order:
        if node.parents:
            node.grad = None
    seed = np.ones_like(root.value)
    root.grad = seed if root.grad is None or root.parents else root.grad + seed
    for node in reversed(order):
        if node.backward_fn is None or node.grad is None:
            continue
        grads = node.backward_fn(node.grad)
        for parent, g in zip(node.parents, grads):
            if g is None or not parent.requires_grad:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g


def zero_grad(params: Iterable[Node]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# optimiser


class Adam:
    """Bias-corrected Adam over a list of parameters, updated in place."""

    def __init__(self, params: Sequence[Parameter], lr=2e-4, beta1=0.5, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.t = 0

    def step(self) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.value) for p in self.params]
        adam_step(self.params, grads, self, self.lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self) -> None:
        zero_grad(self.params)


def adam_step(params, grads, state: Adam, lr, beta1, beta2, eps) -> None:
    for p, g in zip(params, grads):
        if not np.isfinite(g).all():
            raise NumericalError(f"non-finite gradient for parameter {getattr(p, 'name', '?')}")
    state.t += 1
    t = state.t
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for idx, (p, g) in enumerate(zip(params, grads)):
        m = state.m[idx]
        v = state.v[idx]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.value -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


# ---------------------------------------------------------------------------
# checkpoints: "STMC" | u16 version | records (u16 name len, name, u8 rank, u32 extents, f64 samples)

CHECKPOINT_MAGIC = b"STMC"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: dict[str, np.ndarray]) -> None:
    chunks = [CHECKPOINT_MAGIC, struct.pack("<H", CHECKPOINT_VERSION)]
    for name, value in params.items():
        raw = name.encode("utf-8")
        arr = np.asarray(value, dtype="<f8")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr).tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {buf[:4]!r} at offset 0, expected {CHECKPOINT_MAGIC!r}")
    if len(buf) < 6:
        raise FormatError(f"{path}: truncated header ({len(buf)} bytes)")
    (version,) = struct.unpack_from("<H", buf, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unknown checkpoint version {version} at offset 4")
    out: dict[str, np.ndarray] = {}
    pos = 6
    while pos < len(buf):
        try:
            (nlen,) = struct.unpack_from("<H", buf, pos)
            name = buf[pos + 2 : pos + 2 + nlen].decode("utf-8")
            pos += 2 + nlen
            (rank,) = struct.unpack_from("<B", buf, pos)
            shape = struct.unpack_from(f"<{rank}I", buf, pos + 1)
            pos += 1 + 4 * rank
        except struct.error:
            raise FormatError(f"{path}: truncated record header at offset {pos}") from None
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(buf):
            raise FormatError(f"{path}: record {name!r} needs {nbytes} bytes at offset {pos}, {len(buf) - pos} left")
        out[name] = np.frombuffer(buf, dtype="<f8", count=nbytes // 8, offset=pos).reshape(shape).astype(np.float64)
        pos += nbytes
    return out
