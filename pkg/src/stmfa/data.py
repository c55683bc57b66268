"""Synthetic multi-speed scenes, dataset manifests and the on-disk formats.

STMF layout (little endian)::

    "STMF" | u16 version=1 | u32 T, H, W, C | u8 dtype tag (1 = f32, 2 = f64) | samples

PGM exports are binary P5, 8-bit. Quantisation rounds half away from zero.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _accel
from .errors import ContractError, FormatError
from .wavelet import dwt_temporal

STMF_MAGIC = b"STMF"
STMF_VERSION = 1
_DTYPE_TAGS = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_HEADER = struct.Struct("<4sHIIIIB")

PRESETS = ("two-speed", "static", "random")
DIRECTIONS = ((0, 1), (0, -1), (1, 0), (-1, 0))


@dataclass(frozen=True)
class SceneObject:
    size: tuple[float, float]
    intensity: float
    speed: float
    direction: tuple[float, float]
    start: tuple[float, float]
    shape: str = "square"

    @property
    def velocity(self) -> tuple[float, float]:
        return (self.speed * self.direction[0], self.speed * self.direction[1])

    def position(self, t: int) -> tuple[float, float]:
        vy, vx = self.velocity
        return (self.start[0] + vy * t, self.start[1] + vx * t)


@dataclass(frozen=True)
class SceneSpec:
    canvas: tuple[int, int]
    objects: tuple[SceneObject, ...]
    frames: int
    background: float = 0.0
    seed: int = 0


def _wrap(p: float, extent: int) -> float:
    return p - math.floor(p / extent) * extent


def render_object(obj: SceneObject, canvas: tuple[int, int], t: int, frame: np.ndarray) -> np.ndarray:
    h, w = canvas
    y, x = obj.position(t)
    return _accel.splat_rect(frame, _wrap(y, h), _wrap(x, w), obj.size[0], obj.size[1], obj.intensity)


def render_clip(spec: SceneSpec) -> np.ndarray:
    """Rasterise a scene to a ``(T, H, W, 1)`` clip with exact area coverage and periodic wrap."""
    h, w = spec.canvas
    if spec.frames < 1 or h < 2 or w < 2:
        raise ContractError(f"invalid scene extents T={spec.frames}, canvas={spec.canvas}")
    for obj in spec.objects:
        if obj.size[0] > h or obj.size[1] > w:
            raise ContractError(f"object of size {obj.size} does not fit canvas {spec.canvas}")
    clip = np.empty((spec.frames, h, w, 1))
    for t in range(spec.frames):
        frame = np.full((h, w), float(spec.background))
        for obj in spec.objects:
            render_object(obj, spec.canvas, t, frame)
        clip[t, :, :, 0] = frame
    return np.clip(clip, 0.0, 1.0)


def object_occupancy(spec: SceneSpec, index: int) -> np.ndarray:
    """Boolean ``(T, H, W)`` mask of pixels touched by one object when rendered alone."""
    obj = spec.objects[index]
    h, w = spec.canvas
    occ = np.zeros((spec.frames, h, w), dtype=bool)
    probe = SceneObject(obj.size, 1.0, obj.speed, obj.direction, obj.start, obj.shape)
    for t in range(spec.frames):
        occ[t] = render_object(probe, spec.canvas, t, np.zeros((h, w))) > 0
    return occ


def level1_band_energy(spec: SceneSpec, clip: np.ndarray) -> np.ndarray:
    """Mean squared level-1 temporal detail over each object's exclusive mask.

    Returns shape ``(T/2, n_objects)``: one row per high-band frame. A pixel
    counts toward an object if that object covers it in either frame of the
    pair and no other object does.
    """
    _, high = dwt_temporal(clip)
    occ = [object_occupancy(spec, i) for i in range(len(spec.objects))]
    pairs = [o[0::2] | o[1::2] for o in occ]
    energy = np.zeros((high.shape[0], len(occ)))
    for i, mask in enumerate(pairs):
        others = np.zeros_like(mask)
        for j, m in enumerate(pairs):
            if j != i:
                others |= m
        excl = mask & ~others
        for k in range(high.shape[0]):
            sel = excl[k]
            energy[k, i] = float(np.mean(high[k, :, :, 0][sel] ** 2)) if sel.any() else 0.0
    return energy


# ---------------------------------------------------------------------------
# presets


def _square(rng, size, intensity, speed, canvas):
    d = DIRECTIONS[rng.integers(len(DIRECTIONS))]
    start = (float(rng.integers(canvas[0])), float(rng.integers(canvas[1])))
    return SceneObject((float(size), float(size)), float(intensity), float(speed), d, start)


def sample_scene(preset: str, seed: int, canvas=(32, 32), frames: int = 16) -> SceneSpec:
    """Draw one scene from a named preset.

    * ``two-speed``: two equal-intensity squares moving at 1 and 3 px/frame along
      axis-aligned directions, 0.25-0.35 brighter than the background.
    * ``static``: the same layout with every object at rest.
    * ``random``: one to three squares, fractional speeds in [0, 3].
    """
    rng = np.random.default_rng(seed)
    background = float(rng.uniform(0.1, 0.3))
    if preset in ("two-speed", "static"):
        intensity = background + float(rng.uniform(0.25, 0.35))
        speeds = (1.0, 3.0) if preset == "two-speed" else (0.0, 0.0)
        sizes = rng.integers(5, 8, size=2)
        objects = tuple(_square(rng, s, intensity, v, canvas) for s, v in zip(sizes, speeds))
    elif preset == "random":
        count = int(rng.integers(1, 4))
        objects = tuple(
            _square(rng, rng.integers(4, 9), rng.uniform(0.4, 0.9), rng.uniform(0.0, 3.0), canvas)
            for _ in range(count)
        )
    else:
        raise ContractError(f"unknown preset {preset!r}; choose from {PRESETS}")
    return SceneSpec(tuple(canvas), objects, frames, background, seed)


@dataclass
class ClipRecord:
    name: str
    split: str
    spec: SceneSpec
    clip: np.ndarray


@dataclass
class Dataset:
    train: list[ClipRecord] = field(default_factory=list)
    val: list[ClipRecord] = field(default_factory=list)

    @property
    def records(self) -> list[ClipRecord]:
        return self.train + self.val


def make_dataset(n_clips: int, preset: str = "two-speed", seed: int = 0, canvas=(32, 32), frames: int = 16) -> Dataset:
    """Render ``n_clips`` seeded scenes; the first ceil(0.9 n) form the training split."""
    if n_clips < 2:
        raise ContractError(f"need at least 2 clips, got {n_clips}")
    seeds = np.random.SeedSequence(seed).generate_state(n_clips, dtype=np.uint32)
    n_train = math.ceil(0.9 * n_clips)
    ds = Dataset()
    for i, s in enumerate(seeds):
        spec = sample_scene(preset, int(s), canvas, frames)
        rec = ClipRecord(f"clip_{i:05d}", "train" if i < n_train else "val", spec, render_clip(spec))
        (ds.train if rec.split == "train" else ds.val).append(rec)
    return ds


MANIFEST_NAME = "manifest.csv"


def write_dataset(ds: Dataset, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    max_obj = max(len(r.spec.objects) for r in ds.records)
    header = ["path", "split", "seed"]
    for i in range(max_obj):
        header += [f"obj{i}_vy", f"obj{i}_vx"]
    rows = []
    for rec in ds.records:
        path = f"{rec.name}.stmf"
        write_stmf(out / path, rec.clip)
        row = [path, rec.split, str(rec.spec.seed)]
        for i in range(max_obj):
            if i < len(rec.spec.objects):
                vy, vx = rec.spec.objects[i].velocity
                row += [repr(float(vy)), repr(float(vx))]
            else:
                row += ["", ""]
        rows.append(row)
    manifest = out / MANIFEST_NAME
    with manifest.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return manifest


def load_dataset(data_dir) -> dict[str, list[np.ndarray]]:
    """Read a manifest directory into ``{"train": [...], "val": [...]}`` clips."""
    root = Path(data_dir)
    manifest = root / MANIFEST_NAME
    if not manifest.exists():
        raise FormatError(f"{manifest}: manifest not found")
    out: dict[str, list[np.ndarray]] = {"train": [], "val": []}
    with manifest.open(newline="") as fh:
        for row in csv.DictReader(fh):
            split = row.get("split", "train")
            if split not in out:
                raise FormatError(f"{manifest}: unknown split {split!r}")
            out[split].append(read_stmf(root / row["path"]))
    return out


# ---------------------------------------------------------------------------
# STMF


def write_stmf(path, clip, dtype=np.float64) -> None:
    arr = np.asarray(clip)
    if arr.ndim != 4:
        raise ContractError(f"STMF stores (T, H, W, C) clips, got shape {arr.shape}")
    dt = np.dtype(dtype).newbyteorder("<")
    tag = {4: 1, 8: 2}.get(dt.itemsize)
    if tag is None or dt.kind != "f":
        raise ContractError(f"STMF supports f32/f64 samples, got {dtype}")
    header = _HEADER.pack(STMF_MAGIC, STMF_VERSION, *arr.shape, tag)
    Path(path).write_bytes(header + np.ascontiguousarray(arr, dtype=dt).tobytes())


def read_stmf(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if len(buf) < 4 or buf[:4] != STMF_MAGIC:
        raise FormatError(f"{path}: bad magic {buf[:4]!r} at offset 0, expected {STMF_MAGIC!r}")
    if len(buf) < _HEADER.size:
        raise FormatError(f"{path}: truncated header, expected {_HEADER.size} bytes, got {len(buf)}")
    _, version, t, h, w, c, tag = _HEADER.unpack_from(buf, 0)
    if version != STMF_VERSION:
        raise FormatError(f"{path}: unknown STMF version {version} at offset 4")
    if tag not in _DTYPE_TAGS:
        raise FormatError(f"{path}: unknown dtype tag {tag} at offset {_HEADER.size - 1}")
    dt = _DTYPE_TAGS[tag]
    expected = _HEADER.size + t * h * w * c * dt.itemsize
    if len(buf) != expected:
        raise FormatError(f"{path}: expected {expected} bytes for shape {(t, h, w, c)}, got {len(buf)}")
    data = np.frombuffer(buf, dtype=dt, offset=_HEADER.size).reshape(t, h, w, c)
    return data.astype(dt.newbyteorder("="))


# ---------------------------------------------------------------------------
# PGM


def quantize(values: np.ndarray) -> np.ndarray:
    """Map [0, 1] to 0..255 rounding half away from zero, clamped."""
    scaled = np.asarray(values, dtype=np.float64) * 255.0
    q = np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)
    return np.clip(q, 0, 255).astype(np.uint8)


def export_pgm(frame, path, normalize: bool = False, sidecar=None) -> tuple[float, float]:
    """Write a single-channel frame as binary PGM; return the (min, max) used.

    With ``normalize`` the band is min-max stretched to 0..255 and, when
    ``sidecar`` is given, a ``file,min,max`` row is appended to that CSV.
    """
    arr = np.asarray(frame, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[-1] == 1:
        arr = arr[..., 0]
    if arr.ndim != 2:
        raise ContractError(f"export_pgm needs a single-channel 2-D frame, got shape {np.shape(frame)}")
    lo, hi = (float(arr.min()), float(arr.max())) if normalize else (0.0, 1.0)
    scaled = (arr - lo) / (hi - lo) if hi > lo else np.zeros_like(arr)
    q = quantize(scaled)
    h, w = q.shape
    path = Path(path)
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + q.tobytes())
    if normalize and sidecar is not None:
        sidecar = Path(sidecar)
        new = not sidecar.exists()
        with sidecar.open("a", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            if new:
                writer.writerow(["file", "min", "max"])
            writer.writerow([path.name, repr(lo), repr(hi)])
    return lo, hi


def read_pgm(path) -> np.ndarray:
    """Read a binary 8-bit PGM into a ``uint8`` array."""
    buf = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PGM header")
        tokens.append(buf[start:pos])
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: bad magic {tokens[0]!r}, expected b'P5'")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit PGM supported, maxval {maxval}")
    pos += 1
    if len(buf) - pos != w * h:
        raise FormatError(f"{path}: expected {w * h} pixel bytes, got {len(buf) - pos}")
    return np.frombuffer(buf, dtype=np.uint8, offset=pos).reshape(h, w)


def dequantize(q: np.ndarray, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    return lo + (np.asarray(q, dtype=np.float64) / 255.0) * (hi - lo)
