"""``stmfa`` command line: data generation, decomposition, training, prediction,
evaluation and gradient checking.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical failure.
Every command writes a small ``key=value`` snapshot of its effective settings
next to its outputs.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path

import numpy as np

from . import data as D
from . import tensor as T
from .config import ABLATIONS, RunConfig, dump_config, load_config, parse_config_text
from .errors import ContractError, FormatError, NumericalError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _write_snapshot(path: Path, command: str, settings: dict) -> None:
    lines = [f"# stmfa {command}"] + [f"{k}={v}" for k, v in settings.items()]
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# generate-data


def cmd_generate_data(args) -> int:
    out = Path(args.out)
    ds = D.make_dataset(args.clips, args.preset, args.seed)
    manifest = D.write_dataset(ds, out)
    _write_snapshot(out / "generate.txt", "generate-data", {"clips": args.clips, "preset": args.preset, "seed": args.seed})
    print(f"wrote {len(ds.records)} clips to {out} ({manifest.name})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# decompose


def _band_outputs(name: str, band: np.ndarray, out: Path, sidecar: Path) -> None:
    """``band`` is (H, W, C) for one frame; one PGM per channel."""
    c = band.shape[-1]
    for ch in range(c):
        stem = name if c == 1 else f"{name}_c{ch}"
        D.export_pgm(band[..., ch], out / f"{stem}.pgm", normalize=True, sidecar=sidecar)


def cmd_decompose(args) -> int:
    from . import wavelet as W

    clip = D.read_stmf(args.inp)
    filt = W.get_filter(args.wavelet)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sidecar = out / "normalization.csv"
    if sidecar.exists():
        sidecar.unlink()
    bands_dir = out / "bands"
    bands_dir.mkdir(exist_ok=True)

    if args.mode == "spatial":
        if not 0 <= args.frame < clip.shape[0]:
            raise UsageError(f"--frame {args.frame} outside clip of {clip.shape[0]} frames")
        frame = clip[args.frame]
        pyr = W.multilevel_spatial(frame, filt, args.levels)
        padded = [e for e in pyr.input_extents if e[0] % 2 or e[1] % 2]
        if padded:
            print(f"padding: odd extents {padded} extended by repeating the last row/column")
        for lvl, bands in enumerate(pyr.levels, 1):
            suffix = "" if lvl == 1 else f"_{lvl}"
            for key in W.BAND_NAMES:
                if key in bands:
                    _band_outputs(key + suffix, bands[key], out, sidecar)
                    D.write_stmf(bands_dir / f"{key}{suffix}.stmf", bands[key][None])
        err = float(np.max(np.abs(W.inverse_multilevel_spatial(pyr, filt) - frame)))
    else:
        tb = W.multilevel_temporal(clip, filt, args.levels)
        if tb.padded_length != tb.original_length:
            print(f"padding: clip length {tb.original_length} extended to {tb.padded_length} by repeating the last frame")
        if len(tb.levels) < args.levels:
            print(f"levels: stopped after {len(tb.levels)} (low band reached 2 frames)")
        for lvl, bands in enumerate(tb.levels, 1):
            suffix = "" if lvl == 1 else f"_{lvl}"
            for key in ("low", "high"):
                if key in bands:
                    for t, frame in enumerate(bands[key]):
                        _band_outputs(f"{key}{suffix}_t{t:03d}", frame, out, sidecar)
                    D.write_stmf(bands_dir / f"{key}{suffix}.stmf", bands[key])
        err = float(np.max(np.abs(W.inverse_multilevel_temporal(tb, filt) - clip)))

    _write_snapshot(
        out / "decompose.txt",
        "decompose",
        {"in": args.inp, "mode": args.mode, "levels": args.levels, "wavelet": args.wavelet, "frame": args.frame},
    )
    print(f"reconstruction max abs error: {err:.3e}")
    if not err <= 1e-8:
        raise NumericalError(f"reconstruction error {err:.3e} exceeds 1e-8")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    from . import model as M

    cfg = load_config(args.config) if args.config else RunConfig()
    if args.ablation:
        cfg = cfg.replace(ablation=args.ablation)
    clips = D.load_dataset(args.data)
    if not clips["train"]:
        raise FormatError(f"{args.data}: dataset has no training clips")
    out = Path(args.out)
    print(f"training {cfg.model.ablation} for {cfg.train.iterations} iterations on {len(clips['train'])} clips")
    result = M.train(clips["train"], cfg, out)
    last = result.log[-1]
    print(f"final loss_g={last['loss_g']:.6g} loss_d={last['loss_d']:.6g}")
    if clips["val"]:
        metrics = M.evaluate(result.generator, clips["val"], cfg.train.window_offset)
        with (out / "val_metrics.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", "model", "copy_last"])
            w.writerow(["psnr_db", repr(metrics["psnr"]), repr(metrics["baseline_psnr"])])
            w.writerow(["ssim", repr(metrics["ssim"]), repr(metrics["baseline_ssim"])])
        print(f"val psnr {metrics['psnr']:.3f} dB (copy-last {metrics['baseline_psnr']:.3f} dB)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# predict / evaluate


def _load_generator(checkpoint: Path):
    from . import model as M

    cfg_path = checkpoint.parent / "config.txt"
    if not cfg_path.exists():
        raise FormatError(f"{cfg_path}: config snapshot not found beside checkpoint")
    cfg = parse_config_text(cfg_path.read_text())
    state = T.load_checkpoint(checkpoint)
    gen, _ = M.build_models(cfg.model, _channels_of(state))
    try:
        M.load_state(gen, None, state)
    except ContractError as exc:
        raise FormatError(f"{checkpoint}: {exc}") from None
    return cfg, gen


def _channels_of(state) -> int:
    w = state.get("gen.out.w")
    if w is None:
        raise FormatError("checkpoint lacks parameter 'gen.out.w'")
    return int(w.shape[-1])


def cmd_predict(args) -> int:
    ckpt = Path(args.checkpoint)
    cfg, gen = _load_generator(ckpt)
    clip = D.read_stmf(args.inp)
    m = cfg.model.input_frames
    if clip.shape[0] < m:
        raise FormatError(f"{args.inp}: clip has {clip.shape[0]} frames, model needs {m} inputs")
    if clip.shape[-1] != gen.channels:
        raise FormatError(f"{args.inp}: clip has {clip.shape[-1]} channels, checkpoint expects {gen.channels}")
    try:
        cfg.model.check_frame(clip.shape[1], clip.shape[2])
    except ContractError as exc:
        raise FormatError(f"{args.inp}: {exc}") from None
    pred = gen.predict(clip[:m], args.n)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    D.write_stmf(out / "pred.stmf", pred)
    for j, frame in enumerate(pred):
        for ch in range(frame.shape[-1]):
            name = f"frame_{j:03d}" if frame.shape[-1] == 1 else f"frame_{j:03d}_c{ch}"
            D.export_pgm(np.clip(frame[..., ch], 0.0, 1.0), out / f"{name}.pgm")
    available = min(args.n, clip.shape[0] - m)
    if available > 0:
        (out / "truth").mkdir(exist_ok=True)
        D.write_stmf(out / "truth" / "truth.stmf", clip[m : m + available])
    (out / "config.txt").write_text(
        dump_config(cfg) + f"# predict: checkpoint={ckpt} in={args.inp} n={args.n} truth_frames={available}\n"
    )
    print(f"wrote {args.n} predicted frames to {out}" + (f" (+{available} truth frames in truth/)" if available else ""))
    return EXIT_OK


def _read_frames(directory) -> np.ndarray:
    root = Path(directory)
    files = sorted(root.glob("*.stmf"))
    if not files:
        raise FormatError(f"{root}: no .stmf files found")
    return np.concatenate([D.read_stmf(f) for f in files], axis=0)


def cmd_evaluate(args) -> int:
    from .losses import psnr, ssim

    pred, truth = _read_frames(args.pred), _read_frames(args.truth)
    if pred.shape[1:] != truth.shape[1:]:
        raise FormatError(f"frame shape mismatch: pred {pred.shape[1:]} vs truth {truth.shape[1:]}")
    n = min(len(pred), len(truth))
    if len(pred) != len(truth):
        print(f"note: comparing the first {n} frames (pred {len(pred)}, truth {len(truth)})")
    rows = [(j, psnr(truth[j], pred[j]), ssim(truth[j], pred[j])) for j in range(n)]
    finite = [p for _, p, _ in rows if math.isfinite(p)]
    mean_psnr = float(np.mean(finite)) if finite else float("inf")
    mean_ssim = float(np.mean([s for _, _, s in rows]))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        fh.write("# mean row: psnr_db averages the finite frame values (identical frames give inf and are excluded; inf if all are); ssim averages all frames\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame_index", "psnr_db", "ssim"])
        for j, p, s in rows:
            w.writerow([j, _fmt_metric(p), repr(float(s))])
        w.writerow(["mean", _fmt_metric(mean_psnr), repr(mean_ssim)])
    _write_snapshot(out.with_suffix(".config.txt"), "evaluate", {"pred": args.pred, "truth": args.truth, "out": args.out})
    print(f"mean psnr {_fmt_metric(mean_psnr)} dB, mean ssim {mean_ssim:.4f} over {n} frames")
    return EXIT_OK


def _fmt_metric(v: float) -> str:
    return "inf" if math.isinf(v) else repr(float(v))


# ---------------------------------------------------------------------------
# gradcheck


def cmd_gradcheck(args) -> int:
    from . import gradcheck as G

    results = G.check_ops(args.seed)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{r.name:<{width}}  max_rel_err={r.max_rel_error:.3e}  {'ok' if r.ok else 'FAIL'}")
    print(f"ops checked: {len(results)} of {len(T.OPS)} registered (tol {G.OP_TOL:g})")
    model, count = G.check_micro_model(args.seed)
    print(f"micro_model ({count} parameters)  max_rel_err={model.max_rel_error:.3e}  {'ok' if model.ok else 'FAIL'} (tol {G.MODEL_TOL:g})")
    failed = [r.name for r in results + [model] if not r.ok]
    if failed:
        print(f"gradcheck FAILED: {', '.join(failed)}", file=sys.stderr)
        return EXIT_NUMERIC
    print("gradcheck passed")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="stmfa", description="Wavelet video prediction toolkit")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate-data", help="render a synthetic moving-shapes dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--clips", type=_positive, required=True)
    g.add_argument("--preset", choices=D.PRESETS, default="two-speed")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_generate_data)

    d = sub.add_parser("decompose", help="write wavelet sub-bands of a clip as PGM and STMF")
    d.add_argument("--in", dest="inp", required=True)
    d.add_argument("--mode", choices=("spatial", "temporal"), required=True)
    d.add_argument("--levels", type=_positive, default=1)
    d.add_argument("--wavelet", choices=("haar", "db4"), default="haar")
    d.add_argument("--frame", type=int, default=0, help="frame index for spatial mode")
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_decompose)

    t = sub.add_parser("train", help="train generator and discriminator")
    t.add_argument("--data", required=True)
    t.add_argument("--config")
    t.add_argument("--ablation", choices=ABLATIONS)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="roll out frames from a checkpoint")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--in", dest="inp", required=True)
    pr.add_argument("--n", type=_positive, required=True)
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_predict)

    e = sub.add_parser("evaluate", help="per-frame PSNR/SSIM of predictions against truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)

    gc = sub.add_parser("gradcheck", help="finite-difference check of every autodiff op")
    gc.add_argument("--seed", type=int, default=0)
    gc.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ContractError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
