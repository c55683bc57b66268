"""Toy-scale wavelet video predictor: generator, discriminator and training loop.

Generator data flow for one step, channel-last, batch first::

    frame ──rrdb_0──(+ swam_0)──rrdb_1──(+ swam_1)── ... ──ConvLSTM── h
      └─DWT-S─┘ LL ──DWT-S── ...                                    │
    last-m buffer ──multi-level DWT-T──CNN── twam ──concat──1x1── decoder ── frame'

Ablations drop the S-WAM and/or T-WAM branches. A dropped S-WAM contributes
nothing to the residual sum; a dropped T-WAM is replaced by zeros so the
fusion layer keeps its shape.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .config import ModelConfig, RunConfig, TrainConfig, dump_config
from .errors import ContractError, NumericalError
from .losses import adversarial_d_loss, generator_loss_terms, psnr, ssim
from .tensor import Node, Parameter
from .wavelet import get_filter, wavelet_spatial, wavelet_temporal

LOG_COLUMNS = ("iter", "loss_d", "loss_l2", "loss_gdl", "loss_adv_g", "loss_g")
RESIDUAL_SCALE = 0.2


class ParamStore:
    """Ordered, uniquely named parameters with deterministic initialisation."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.params: dict[str, Parameter] = {}

    def add(self, name: str, value) -> Parameter:
        if name in self.params:
            raise ContractError(f"duplicate parameter name {name!r}")
        p = Parameter(name, value)
        self.params[name] = p
        return p

    def conv(self, name: str, kh: int, cin: int, cout: int, gain: float = 1.0) -> tuple[Parameter, Parameter]:
        fan_in = kh * kh * cin
        std = gain * math.sqrt(2.0 / ((1.0 + T.LEAKY_SLOPE**2) * fan_in))
        w = self.add(f"{name}.w", self.rng.normal(0.0, std, size=(kh, kh, cin, cout)))
        b = self.add(f"{name}.b", np.zeros(cout))
        return w, b

    def __getitem__(self, name: str) -> Parameter:
        return self.params[name]

    def values(self) -> list[Parameter]:
        return list(self.params.values())


@dataclass
class GeneratorState:
    h: Node
    c: Node
    step: int = 0


def _conv_act(x, w, b, stride=1):
    return T.leaky_relu(T.conv2d(x, w, stride, w.value.shape[0] // 2, bias=b))


class Generator:
    def __init__(self, config: ModelConfig, channels: int = 1, rng: np.random.Generator | None = None):
        self.config = config
        self.channels = channels
        self.filter = get_filter(config.wavelet)
        self.store = ParamStore(rng if rng is not None else np.random.default_rng(config.seed))
        cfg, s, c = config, self.store, channels
        width = cfg.base_channels
        self.twam_width = width
        self.decoder_width = 2 * width
        cin = c
        for u in range(cfg.rrdb_units):
            if cin != width:
                s.conv(f"gen.rrdb{u}.proj", 1, cin, width)
            s.conv(f"gen.rrdb{u}.conv1", 3, cin, width)
            s.conv(f"gen.rrdb{u}.conv2", 3, cin + width, width)
            cin = width
        if cfg.use_swam:
            for u in range(cfg.swam_levels):
                s.conv(f"gen.swam{u}.conv", 3, 4 * c, width)
        hid = cfg.lstm_hidden
        s.conv("gen.lstm", 3, width + hid, 4 * hid, gain=0.5)
        s["gen.lstm.b"].value[hid : 2 * hid] = 1.0
        if cfg.use_twam:
            tp = 1 << max(0, (cfg.input_frames - 1).bit_length())
            s.conv("gen.twam.conv1", 3, tp * c, self.twam_width)
            s.conv("gen.twam.conv2", 3, self.twam_width, self.twam_width)
        s.conv("gen.fuse", 1, hid + self.twam_width, self.decoder_width)
        cin = self.decoder_width
        for u in range(cfg.rrdb_units):
            # conv orientation (kh, kw, Cout_of_stage, Cin_of_stage) for the transpose
            s.add(f"gen.dec{u}.w", s.rng.normal(0.0, math.sqrt(2.0 / (9 * cin)), size=(3, 3, width, cin)))
            s.add(f"gen.dec{u}.b", np.zeros(width))
            cin = width
        s.conv("gen.out", 3, width, c)

    @property
    def params(self) -> dict[str, Parameter]:
        return self.store.params

    # -- building blocks ---------------------------------------------------

    def rrdb_unit(self, x: Node, u: int) -> Node:
        p = self.store
        h1 = _conv_act(x, p[f"gen.rrdb{u}.conv1.w"], p[f"gen.rrdb{u}.conv1.b"])
        h2 = _conv_act(T.concat([x, h1], -1), p[f"gen.rrdb{u}.conv2.w"], p[f"gen.rrdb{u}.conv2.b"])
        base = x
        if f"gen.rrdb{u}.proj.w" in p.params:
            base = T.conv2d(x, p[f"gen.rrdb{u}.proj.w"], 1, 0, bias=p[f"gen.rrdb{u}.proj.b"])
        return T.avg_pool2(T.add(base, T.mul(h2, RESIDUAL_SCALE)))

    def swam(self, ll: Node, u: int) -> tuple[Node, Node]:
        """DWT-S of the incoming band -> features for RRDB unit ``u`` and the next LL."""
        bands = wavelet_spatial(ll, self.filter)
        feats = _conv_act(bands, self.store[f"gen.swam{u}.conv.w"], self.store[f"gen.swam{u}.conv.b"])
        return feats, T.slice_axis(bands, -1, 0, self.channels)

    def twam(self, frames: Sequence[Node]) -> Node:
        """Multi-level temporal analysis of the frame buffer -> feature map at LSTM scale."""
        c = self.channels
        stacked = T.concat([T.reshape(f, f.shape[:-1] + (1, c)) for f in frames], axis=-2)
        t = len(frames)
        tp = 1 << max(0, (t - 1).bit_length())
        if tp != t:
            last = T.slice_axis(stacked, -2, t - 1, t)
            stacked = T.concat([stacked] + [last] * (tp - t), axis=-2)
        highs = []
        cur, length = stacked, tp
        while length > 2:
            out = wavelet_temporal(cur, self.filter, axis=-2)
            half = length // 2
            highs.append(T.slice_axis(out, -2, half, length))
            cur, length = T.slice_axis(out, -2, 0, half), half
        bands = T.concat([cur] + highs[::-1], axis=-2)
        x = T.reshape(bands, bands.shape[:-2] + (tp * c,))
        p = self.store
        x = T.avg_pool2(_conv_act(x, p["gen.twam.conv1.w"], p["gen.twam.conv1.b"]))
        x = _conv_act(x, p["gen.twam.conv2.w"], p["gen.twam.conv2.b"])
        target = frames[0].shape[-3] >> self.config.rrdb_units
        while x.shape[-3] > target:
            x = T.avg_pool2(x)
        return x

    def fuse(self, h: Node, twam_features: Node | None) -> Node:
        if twam_features is None:
            twam_features = T.constant(np.zeros(h.shape[:-1] + (self.twam_width,)))
        if twam_features.shape[:-1] != h.shape[:-1]:
            raise ContractError(f"fuse: T-WAM features {twam_features.shape} not aligned with LSTM state {h.shape}")
        return T.conv2d(T.concat([h, twam_features], -1), self.store["gen.fuse.w"], 1, 0, bias=self.store["gen.fuse.b"])

    def init_state(self, frame_shape: tuple[int, ...]) -> GeneratorState:
        *lead, h, w, _ = frame_shape
        self.config.check_frame(h, w)
        k = self.config.rrdb_units
        shape = tuple(lead) + (h >> k, w >> k, self.config.lstm_hidden)
        return GeneratorState(T.constant(np.zeros(shape)), T.constant(np.zeros(shape)))

    def encode_step(self, frame: Node, state: GeneratorState) -> GeneratorState:
        frame = T.as_node(frame)
        self.config.check_frame(frame.shape[-3], frame.shape[-2])
        x, ll = frame, frame
        for u in range(self.config.rrdb_units):
            x = self.rrdb_unit(x, u)
            if self.config.use_swam:
                feats, ll = self.swam(ll, u)
                x = T.add(x, feats)
        h, c = T.conv_lstm_step(x, state.h, state.c, self.store["gen.lstm.w"], self.store["gen.lstm.b"])
        return GeneratorState(h, c, state.step + 1)

    def decode(self, fused: Node) -> Node:
        p = self.store
        x = fused
        for u in range(self.config.rrdb_units):
            x = T.leaky_relu(T.conv2d_transpose(x, p[f"gen.dec{u}.w"], 2, 1, bias=p[f"gen.dec{u}.b"]))
        return T.sigmoid(T.conv2d(x, p["gen.out.w"], 1, 1, bias=p["gen.out.b"]))

    # -- sequences ---------------------------------------------------------

    def predict_sequence(self, inputs: Sequence, n: int) -> list[Node]:
        """Warm up on the input frames, then roll out ``n`` frames autoregressively."""
        frames = [T.as_node(f) for f in inputs]
        m = self.config.input_frames
        if len(frames) != m:
            raise ContractError(f"expected {m} input frames, got {len(frames)}")
        state = self.init_state(frames[0].shape)
        for f in frames:
            state = self.encode_step(f, state)
        buffer = list(frames)
        preds: list[Node] = []
        for j in range(n):
            tw = self.twam(buffer[-m:]) if self.config.use_twam else None
            pred = self.decode(self.fuse(state.h, tw))
            preds.append(pred)
            if j < n - 1:
                buffer.append(pred)
                state = self.encode_step(pred, state)
        return preds

    def predict(self, clip: np.ndarray, n: int | None = None) -> np.ndarray:
        """Predict from a ``(m, H, W, C)`` or batched ``(N, m, H, W, C)`` array."""
        n = self.config.predict_frames if n is None else n
        arr = np.asarray(clip, dtype=T.DTYPE)
        batched = arr.ndim == 5
        if not batched:
            arr = arr[None]
        m = self.config.input_frames
        preds = self.predict_sequence([arr[:, t] for t in range(m)], n)
        out = np.stack([p.value for p in preds], axis=1)
        return out if batched else out[0]


class Discriminator:
    """Four stride-2 conv stages over the channel-stacked sequence, then a sigmoid score."""

    stages = 4

    def __init__(self, config: ModelConfig, channels: int = 1, rng: np.random.Generator | None = None):
        self.config = config
        self.store = ParamStore(rng if rng is not None else np.random.default_rng(config.seed + 1))
        frames = config.input_frames + config.predict_frames
        width = config.base_channels
        cin = frames * channels
        for k in range(self.stages):
            self.store.conv(f"disc.conv{k}", 3, cin, width)
            cin = width
        self.store.add("disc.dense.w", self.store.rng.normal(0.0, 1.0 / math.sqrt(width), size=(width, 1)))
        self.store.add("disc.dense.b", np.zeros(1))

    @property
    def params(self) -> dict[str, Parameter]:
        return self.store.params

    def __call__(self, inputs: Sequence, sequence: Sequence | Node) -> Node:
        """Probability that ``sequence`` is the real continuation of ``inputs``; shape ``(N, 1)``."""
        frames = [T.as_node(f) for f in inputs]
        if isinstance(sequence, Node) and sequence.value.ndim == 5:
            seq = [T.reshape(T.slice_axis(sequence, 1, j, j + 1), sequence.shape[:1] + sequence.shape[2:]) for j in range(sequence.shape[1])]
        else:
            seq = [T.as_node(f) for f in sequence]
        x = T.concat(frames + seq, axis=-1)
        if x.value.ndim == 3:
            x = T.reshape(x, (1,) + x.shape)
        p = self.store
        for k in range(self.stages):
            x = _conv_act(x, p[f"disc.conv{k}.w"], p[f"disc.conv{k}.b"], stride=2)
        pooled = T.global_avg_pool(x)
        return T.sigmoid(T.add_bias(T.matmul(pooled, p["disc.dense.w"]), p["disc.dense.b"]))


# ---------------------------------------------------------------------------
# checkpoints


def model_state(gen: Generator, disc: Discriminator | None = None) -> dict[str, np.ndarray]:
    state = {name: p.value for name, p in gen.params.items()}
    if disc is not None:
        state.update({name: p.value for name, p in disc.params.items()})
    return state


def load_state(gen: Generator, disc: Discriminator | None, state: dict[str, np.ndarray], strict: bool = True) -> None:
    targets = dict(gen.params)
    if disc is not None:
        targets.update(disc.params)
    missing = [k for k in targets if k not in state]
    if missing:
        raise ContractError(f"checkpoint lacks parameters: {', '.join(missing)}")
    for name, value in state.items():
        if name not in targets:
            if strict and (disc is not None or not name.startswith("disc.")):
                raise ContractError(f"checkpoint parameter {name!r} is not part of this model")
            continue
        if targets[name].value.shape != value.shape:
            raise ContractError(f"parameter {name!r}: checkpoint shape {value.shape} != model shape {targets[name].value.shape}")
        targets[name].value[...] = value


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    generator: Generator
    discriminator: Discriminator
    log: list[dict[str, float]] = field(default_factory=list)
    checkpoint: Path | None = None

    def log_csv(self) -> str:
        return format_log(self.log)


def format_log(rows: list[dict[str, float]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LOG_COLUMNS)
    for row in rows:
        writer.writerow([row["iter"]] + [repr(float(row[c])) for c in LOG_COLUMNS[1:]])
    return buf.getvalue()


class EpochSampler:
    """Shuffled passes over the training clips; every pass sees each clip once."""

    def __init__(self, clips: np.ndarray, batch_size: int, rng: np.random.Generator):
        self.clips = clips
        self.batch_size = min(batch_size, len(clips))
        self.rng = rng
        self._order: list[int] = []

    def next(self) -> np.ndarray:
        if len(self._order) < self.batch_size:
            self._order = [int(i) for i in self.rng.permutation(len(self.clips))]
        idx, self._order = self._order[: self.batch_size], self._order[self.batch_size :]
        return self.clips[idx]


def _lr(base: float, it: int, total: int, schedule: str) -> float:
    if schedule == "cosine":
        return base * 0.5 * (1.0 + math.cos(math.pi * (it - 1) / total))
    return base


def _frames(batch: np.ndarray, start: int, count: int) -> list[Node]:
    return [T.constant(batch[:, start + t]) for t in range(count)]


def train(
    clips: Sequence[np.ndarray] | np.ndarray,
    config: RunConfig,
    out_dir=None,
    callbacks: Sequence[Callable[[dict], None]] = (),
) -> TrainResult:
    """Alternate one discriminator and one generator Adam step per iteration.

    ``clips`` is a sequence of ``(T, H, W, C)`` arrays. When ``out_dir`` is
    given the log, checkpoint and effective config are written there.
    """
    mc, tc = config.model, config.train
    m, n = mc.input_frames, mc.predict_frames
    data = np.stack([np.asarray(c, dtype=T.DTYPE) for c in clips])
    if data.ndim != 5 or data.shape[1] < tc.window_offset + m + n:
        raise ContractError(f"clips must be (T, H, W, C) with T >= {tc.window_offset + m + n}")
    mc.check_frame(data.shape[2], data.shape[3])
    channels = data.shape[4]
    gen, disc = build_models(mc, channels)
    sampler = EpochSampler(data, tc.batch_size, np.random.default_rng(np.random.SeedSequence(mc.seed).spawn(3)[2]))
    opt_g = T.Adam(gen.store.values(), tc.lr_g, tc.beta1, tc.beta2)
    opt_d = T.Adam(disc.store.values(), tc.lr_d, tc.beta1, tc.beta2)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(dump_config(config))
    result = TrainResult(gen, disc)
    off = tc.window_offset

    for it in range(1, tc.iterations + 1):
        batch = sampler.next()
        try:
            row = _train_step(gen, disc, opt_g, opt_d, batch, off, m, n, config, it)
        except NumericalError as exc:
            _dump_failure(out, batch, it, str(exc))
            raise
        bad = [k for k in LOG_COLUMNS[1:] if not math.isfinite(row[k])]
        if bad:
            msg = f"non-finite loss {bad} at iteration {it}"
            _dump_failure(out, batch, it, msg)
            raise NumericalError(msg)
        result.log.append(row)
        for cb in callbacks:
            cb(row)
        if out is not None and tc.checkpoint_every and it % tc.checkpoint_every == 0:
            T.save_checkpoint(out / "checkpoint.stmc", model_state(gen, disc))

    if out is not None:
        result.checkpoint = out / "checkpoint.stmc"
        T.save_checkpoint(result.checkpoint, model_state(gen, disc))
        (out / "train_log.csv").write_text(result.log_csv())
    return result


def _train_step(gen, disc, opt_g, opt_d, batch, off, m, n, config: RunConfig, it: int) -> dict[str, float]:
    tc, weights = config.train, config.model.weights
    inputs = _frames(batch, off, m)
    target = batch[:, off + m : off + m + n]
    truth_frames = _frames(batch, off + m, n)
    preds = gen.predict_sequence(inputs, n)
    yhat = T.stack(preds, axis=1)

    opt_d.lr = _lr(tc.lr_d, it, tc.iterations, tc.lr_decay)
    opt_d.zero_grad()
    loss_d = adversarial_d_loss(disc(inputs, truth_frames), disc(inputs, [T.detach(p) for p in preds]))
    T.backward(loss_d)
    opt_d.step()

    opt_g.lr = _lr(tc.lr_g, it, tc.iterations, tc.lr_decay)
    opt_g.zero_grad()
    terms = generator_loss_terms(target, yhat, disc(inputs, preds), weights, tc.loss_normalize)
    T.backward(terms["total"])
    opt_g.step()
    opt_d.zero_grad()
    return {
        "iter": it,
        "loss_d": loss_d.item(),
        "loss_l2": terms["l2"].item(),
        "loss_gdl": terms["gdl"].item(),
        "loss_adv_g": terms["adv_g"].item(),
        "loss_g": terms["total"].item(),
    }


def _dump_failure(out, batch, it, message) -> None:
    if out is None:
        return
    from .data import write_stmf

    flat = batch.reshape((-1,) + batch.shape[2:])
    write_stmf(out / "diagnostic_batch.stmf", flat)
    (out / "diagnostic.txt").write_text(f"iteration={it}\nerror={message}\nbatch_shape={batch.shape}\n")


# ---------------------------------------------------------------------------
# evaluation helpers


def frame_metrics(pred: np.ndarray, truth: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame PSNR and SSIM for ``(n, H, W, C)`` sequences."""
    p = np.array([psnr(truth[j], pred[j]) for j in range(len(pred))])
    s = np.array([ssim(truth[j], pred[j]) for j in range(len(pred))])
    return p, s


def evaluate(gen: Generator, clips: Sequence[np.ndarray], offset: int = 0) -> dict[str, float]:
    """Mean PSNR/SSIM of the model and of the copy-last-frame baseline."""
    m, n = gen.config.input_frames, gen.config.predict_frames
    data = np.stack([np.asarray(c, dtype=T.DTYPE) for c in clips])
    preds = gen.predict(data[:, offset : offset + m], n)
    truth = data[:, offset + m : offset + m + n]
    copy = np.repeat(data[:, offset + m - 1 : offset + m], n, axis=1)
    model_p, model_s, base_p, base_s = [], [], [], []
    for i in range(len(data)):
        p, s = frame_metrics(preds[i], truth[i])
        bp, bs = frame_metrics(copy[i], truth[i])
        model_p.append(p)
        model_s.append(s)
        base_p.append(bp)
        base_s.append(bs)
    return {
        "psnr": float(np.mean(model_p)),
        "ssim": float(np.mean(model_s)),
        "baseline_psnr": float(np.mean(base_p)),
        "baseline_ssim": float(np.mean(base_s)),
    }


def build_models(config: ModelConfig, channels: int = 1) -> tuple[Generator, Discriminator]:
    """Construct both networks with the same seeding ``train`` uses."""
    seeds = np.random.SeedSequence(config.seed).spawn(3)
    return (
        Generator(config, channels, np.random.default_rng(seeds[0])),
        Discriminator(config, channels, np.random.default_rng(seeds[1])),
    )


__all__ = [
    "Discriminator",
    "EpochSampler",
    "Generator",
    "GeneratorState",
    "LOG_COLUMNS",
    "ModelConfig",
    "TrainConfig",
    "TrainResult",
    "build_models",
    "evaluate",
    "format_log",
    "frame_metrics",
    "load_state",
    "model_state",
    "train",
]
