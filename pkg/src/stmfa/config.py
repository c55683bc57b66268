"""Run configuration: model shape, loss weights and training schedule.

The on-disk form is one ``key=value`` per line; ``#`` starts a comment.
Keys are exactly the dataclass field names below (loss weights are spelled
``lambda1``, ``lambda2`` and ``alpha``).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ContractError
from .losses import LossWeights

ABLATIONS = ("full", "no_swam", "no_twam", "no_wam")


@dataclass(frozen=True)
class ModelConfig:
    input_frames: int = 8
    predict_frames: int = 4
    base_channels: int = 16
    rrdb_units: int = 3
    swam_levels: int = 3
    lstm_hidden: int = 32
    ablation: str = "full"
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    wavelet: str = "haar"

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ContractError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        if self.swam_levels != self.rrdb_units:
            raise ContractError("swam_levels must equal rrdb_units (one S-WAM per RRDB unit)")
        if self.input_frames < 4:
            raise ContractError(f"input_frames must be >= 4, got {self.input_frames}")
        if self.predict_frames < 1 or self.rrdb_units < 1 or self.base_channels < 1 or self.lstm_hidden < 1:
            raise ContractError("predict_frames, rrdb_units, base_channels and lstm_hidden must be positive")

    @property
    def use_swam(self) -> bool:
        return self.ablation in ("full", "no_twam")

    @property
    def use_twam(self) -> bool:
        return self.ablation in ("full", "no_swam")

    def check_frame(self, h: int, w: int) -> None:
        step = 2**self.rrdb_units
        if h % step or w % step:
            raise ContractError(f"frame extents {(h, w)} must be divisible by {step}")


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 9
    lr_g: float = 1e-3
    lr_d: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    lr_decay: str = "cosine"
    loss_normalize: bool = False
    checkpoint_every: int = 0
    window_offset: int = 0

    def __post_init__(self):
        if self.iterations < 1 or self.batch_size < 1:
            raise ContractError("iterations and batch_size must be >= 1")
        if self.lr_decay not in ("none", "cosine"):
            raise ContractError(f"lr_decay must be 'none' or 'cosine', got {self.lr_decay!r}")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def replace(self, **changes) -> "RunConfig":
        return parse_config(dict(to_items(self), **{k: str(v) for k, v in changes.items()}))


_WEIGHT_KEYS = ("lambda1", "lambda2", "alpha")


def _field_types(cls) -> dict[str, type]:
    hints = {"int": int, "float": float, "str": str, "bool": bool}
    return {f.name: hints.get(str(f.type), str) for f in dataclasses.fields(cls) if f.name != "weights"}


def _convert(key, raw: str, typ):
    raw = raw.strip()
    try:
        if typ is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return typ(raw)
    except ValueError:
        raise ContractError(f"config key {key!r}: cannot parse {raw!r} as {typ.__name__}") from None


def parse_config(items: dict[str, str]) -> RunConfig:
    model_types, train_types = _field_types(ModelConfig), _field_types(TrainConfig)
    model_kw, train_kw, weight_kw = {}, {}, {}
    for key, raw in items.items():
        if key in _WEIGHT_KEYS:
            weight_kw[key] = _convert(key, raw, int if key == "alpha" else float)
        elif key in model_types:
            model_kw[key] = _convert(key, raw, model_types[key])
        elif key in train_types:
            train_kw[key] = _convert(key, raw, train_types[key])
        else:
            raise ContractError(f"unknown config key {key!r}")
    model_kw["weights"] = LossWeights(**weight_kw)
    return RunConfig(ModelConfig(**model_kw), TrainConfig(**train_kw))


def parse_config_text(text: str) -> RunConfig:
    items: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractError(f"config line {lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in items:
            raise ContractError(f"config line {lineno}: duplicate key {key!r}")
        items[key] = value
    return parse_config(items)


def load_config(path) -> RunConfig:
    return parse_config_text(Path(path).read_text())


def to_items(cfg: RunConfig) -> dict[str, str]:
    out: dict[str, str] = {}
    for f in dataclasses.fields(ModelConfig):
        if f.name == "weights":
            w = cfg.model.weights
            out.update(lambda1=repr(w.lambda1), lambda2=repr(w.lambda2), alpha=str(w.alpha))
        else:
            out[f.name] = _fmt(getattr(cfg.model, f.name))
    for f in dataclasses.fields(TrainConfig):
        out[f.name] = _fmt(getattr(cfg.train, f.name))
    return out


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(cfg: RunConfig) -> str:
    return "".join(f"{k}={v}\n" for k, v in to_items(cfg).items())
