"""Command-line entry points.

Exit codes: 0 success, 1 runtime failure, 2 usage or missing-input errors.
Relative dataset paths in configs are resolved against
``$LONGVIDEO_DATA_ROOT`` when it is set.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

log = logging.getLogger("longvideo")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def parse_size(text: str) -> tuple[int, int]:
    """``"256x144"`` (width x height) -> ``(144, 256)`` as (H, W)."""
    try:
        w, h = text.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WIDTHxHEIGHT, got {text!r}") from None


def _require(path: Path, what: str) -> Path:
    if not Path(path).exists():
        raise UsageError(f"{what} not found: {path}")
    return Path(path)


def _open_store(path, what="dataset"):
    from .data import MANIFEST, ClipStore

    path = _require(Path(path), what)
    if not (path / MANIFEST).exists():
        raise UsageError(f"{what} at {path} has no {MANIFEST}")
    return ClipStore.open(path)


def _config(args):
    from .config import load_config

    if args.config:
        _require(Path(args.config), "config file")
    return load_config(args.config, args.set)


# --- commands ---------------------------------------------------------------


def cmd_init_config(args) -> int:
    from .config import PRESETS, dump_config

    dump_config(PRESETS[args.preset](), args.out)
    print(args.out)
    return EXIT_OK


def cmd_synth_data(args) -> int:
    from dataclasses import replace

    from .data import generate_synthetic

    cfg = _config(args)
    syn = cfg.synthetic
    scene = replace(syn.scene, seed=args.seed if args.seed is not None else syn.scene.seed)
    high = parse_size(args.high_res) if args.high_res else tuple(syn.high)
    low = parse_size(args.low_res) if args.low_res else tuple(syn.low)
    out = Path(args.out) if args.out else cfg.data_root()
    store = generate_synthetic(scene, args.clips or syn.n_clips, args.frames or syn.frames, out, high, low)
    print(f"wrote {len(store.clips)} clips to {out}")
    return EXIT_OK


def cmd_ingest(args) -> int:
    from .data import ingest

    src = _require(Path(args.source_dir), "source directory")
    store = ingest(src, args.out, args.aspect, parse_size(args.low_res), parse_size(args.high_res), args.min_frames)
    print(f"ingested {len(store.clips)} clips into {args.out}")
    return EXIT_OK


def _train_common(args, cfg):
    from .config import dump_config

    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.yaml")
    return out


def cmd_train_lowres(args) -> int:
    from dataclasses import replace

    from .filterbank import FilterBank
    from .training import LowResTrainer

    cfg = _config(args)
    cfg.train = replace(cfg.train, seed=cfg.seed)
    if args.steps is not None:
        cfg.train = replace(cfg.train, steps=args.steps)
    store = _open_store(cfg.data_root())
    out = _train_common(args, cfg)
    if args.resume:
        trainer = LowResTrainer.from_checkpoint(_require(Path(args.resume), "checkpoint"), store, out,
                                                steps=cfg.train.steps)
    else:
        bank = FilterBank.from_spec(vars(cfg.filterbank))
        trainer = LowResTrainer(cfg.train, store, bank, cfg.synthesis, cfg.discriminator, cfg.augment, out,
                                cfg.data.level)
    trainer.run()
    print(json.dumps({"step": trainer.step, "best": trainer.best, "checkpoint": str(out / "best.ckpt")}))
    return EXIT_OK


def cmd_train_superres(args) -> int:
    from dataclasses import replace

    from .training import SuperResTrainer

    cfg = _config(args)
    cfg.train_superres = replace(cfg.train_superres, seed=cfg.seed)
    if args.steps is not None:
        cfg.train_superres = replace(cfg.train_superres, steps=args.steps)
    store = _open_store(cfg.sr_data_root())
    out = _train_common(args, cfg)
    if args.resume:
        trainer = SuperResTrainer.from_checkpoint(_require(Path(args.resume), "checkpoint"), store, out,
                                                  steps=cfg.train_superres.steps)
    else:
        trainer = SuperResTrainer(cfg.train_superres, store, cfg.superres, cfg.augment, out)
    trainer.run()
    print(json.dumps({"step": trainer.step, "best": trainer.best, "checkpoint": str(out / "best.ckpt")}))
    return EXIT_OK


def load_lowres(path):
    """EMA low-res generator from a checkpoint."""
    from .checkpoint import load_checkpoint
    from .filterbank import FilterBank
    from .generator import LowResGenerator, SynthesisConfig

    manifest, weights = load_checkpoint(_require(Path(path), "checkpoint"), "lowres")
    c = manifest["configs"]
    model = LowResGenerator(FilterBank.from_spec(c["bank"]), SynthesisConfig(**c["synthesis"]))
    model.load_state_dict(weights["G_ema"])
    return model.eval()


def load_superres(path):
    from .checkpoint import load_checkpoint
    from .superres import SRConfig, SRGenerator

    manifest, weights = load_checkpoint(_require(Path(path), "checkpoint"), "superres")
    model = SRGenerator(SRConfig(**manifest["configs"]["sr"]))
    model.load_state_dict(weights["G_ema"])
    return model.eval()


def write_frames(video: torch.Tensor, directory: Path):
    from PIL import Image

    from .data import to_uint8

    directory.mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(to_uint8(video)):
        Image.fromarray(f).save(directory / f"{i:06d}.png")


def read_frames(directory: Path) -> torch.Tensor:
    from PIL import Image

    from .data import to_unit

    files = sorted(Path(directory).glob("*.png"))
    if not files:
        raise UsageError(f"no PNG frames in {directory}")
    return to_unit(np.stack([np.asarray(Image.open(p).convert("RGB")) for p in files]))


def cmd_generate(args) -> int:
    from .generator import generate_window
    from .superres import sr_video

    G = load_lowres(args.lowres_ckpt)
    td = G.config.temporal_divisor
    if args.frames <= 0 or args.frames % td:
        raise UsageError(f"--frames must be a positive multiple of {td}")
    size = parse_size(args.size) if args.size else None
    out = Path(args.out)
    video = generate_window(G, args.seed, args.offset, args.frames, size)
    write_frames(video, out / "low")
    info = {"seed": args.seed, "offset": args.offset, "frames": args.frames,
            "low_size": list(video.shape[-2:]), "lowres_ckpt": str(args.lowres_ckpt)}
    if args.sr_ckpt:
        S = load_superres(args.sr_ckpt)
        if tuple(video.shape[-2:]) != tuple(S.config.low_size):
            raise UsageError(f"low-res output {tuple(video.shape[-2:])} does not match the super-res input "
                             f"{tuple(S.config.low_size)}")
        z = torch.randn(S.config.z_dim, generator=torch.Generator().manual_seed(args.seed))
        high = sr_video(S, video, z)
        write_frames(high, out / "high")
        info.update(high_size=list(high.shape[-2:]), sr_ckpt=str(args.sr_ckpt))
    if args.encode:
        import imageio.v3 as iio

        from .data import to_uint8

        final = high if args.sr_ckpt else video
        iio.imwrite(out / "video.mp4", to_uint8(final), fps=args.fps)
    with open(out / "generate.json", "w") as f:
        json.dump(info, f, indent=2, sort_keys=True)
    print(f"wrote {args.frames} frames to {out}")
    return EXIT_OK


def _gen_source(args, cfg, real_store, level):
    """Build the generated-side segment source for ``evaluate``."""
    from .metrics import ConditionedSegments, GeneratorSegments, StoreSegments, TensorSegments
    from .training import bilinear_fn, sr_fn

    if args.ckpt:
        G = load_lowres(args.ckpt)
        return GeneratorSegments(G, frames=args.gen_frames), f"lowres:{args.ckpt}"
    if args.gen == "real-conditioned-sr":
        if not args.sr_ckpt:
            raise UsageError("--gen real-conditioned-sr needs --sr-ckpt")
        return ConditionedSegments(real_store, sr_fn(load_superres(args.sr_ckpt))), f"sr:{args.sr_ckpt}"
    if args.gen == "bilinear":
        factor = real_store.factor
        return ConditionedSegments(real_store, bilinear_fn(factor)), f"bilinear-x{factor}"
    if args.gen:
        path = _require(Path(args.gen), "generated data")
        if (path / "manifest.json").exists():
            return StoreSegments(_open_store(path, "generated store"), level), str(path)
        return TensorSegments([read_frames(path)]), str(path)
    return None, None


def cmd_evaluate(args) -> int:
    from .metrics import (GeneratorSegments, RandomFrameExtractor, RandomVideoExtractor, StoreSegments, feature_distance_curve, fid_v,
                          fvd, similarity_curve, write_curve_csv, write_report)

    cfg = _config(args)
    m = cfg.metrics
    real_store = _open_store(args.real, "real dataset") if args.real else None
    sr_mode = args.gen in ("real-conditioned-sr", "bilinear")
    level = args.level or ("high" if sr_mode else "low")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    gen, gen_id = _gen_source(args, cfg, real_store, level)
    n = args.segments or m.segments
    report_path = out / f"{args.mode}.json"

    if args.mode in ("fvd16", "fvd128"):
        if real_store is None or gen is None:
            raise UsageError(f"{args.mode} needs --real and one of --gen / --ckpt")
        length = 16 if args.mode == "fvd16" else 128
        ex = RandomVideoExtractor(seed=m.extractor_seed, dim=m.extractor_dim)
        value = fvd(StoreSegments(real_store, level), gen, length, n, ex, seed=args.seed)
        write_report(report_path, args.mode, value, args.seed, ex.name, segments=n, segment_len=length,
                     real=str(args.real), gen=gen_id, level=level)
    elif args.mode == "fidv":
        if real_store is None or gen is None:
            raise UsageError("fidv needs --real and one of --gen / --ckpt")
        ex = RandomFrameExtractor(seed=m.extractor_seed, dim=m.extractor_dim)
        if isinstance(gen, GeneratorSegments):
            # every frame of each sampled video counts as one generated frame
            gen.per_video = gen.frames or gen.model.config.temporal_divisor
        frames = _gen_frames(gen, args.frames or m.fidv_frames, args.seed)
        value = fid_v(real_store, frames, ex, level)
        write_report(report_path, "fidv", value, args.seed, ex.name, frames=len(frames), real=str(args.real),
                     gen=gen_id, level=level)
    else:
        clips = _curve_clips(args, m, gen, real_store, level)
        if args.mode == "colorsim":
            mean, std = similarity_curve(clips, m.hist_bins)
            extractor = None
        else:
            ex = RandomFrameExtractor(seed=m.extractor_seed, dim=m.extractor_dim)
            mean, std = feature_distance_curve(clips, ex)
            extractor = ex.name
        write_curve_csv(out / f"{args.mode}.csv", mean, std)
        if args.plot:
            from .metrics import plot_curve

            plot_curve(out / f"{args.mode}.png", mean, std,
                       "color similarity" if args.mode == "colorsim" else "feature distance")
        write_report(report_path, args.mode, {"mean": mean.tolist(), "std": std.tolist()}, args.seed, extractor,
                     clips=len(clips), frames=len(mean), source=gen_id or str(args.real), level=level)
    print(report_path)
    return EXIT_OK


def _gen_frames(source, n_frames: int, seed: int) -> torch.Tensor:
    """Single generated frames (first frame of length-1 segments where possible)."""
    frames = []
    for seg in source.segments(n_frames, 1, seed):
        frames.append(seg[0])
    return torch.stack(frames)


def _curve_clips(args, m, gen, real_store, level):
    length = args.frames or m.curve_frames
    n = args.clips or m.curve_clips
    source = gen
    if source is None:
        if real_store is None:
            raise UsageError(f"{args.mode} needs --real or a generated source")
        from .metrics import StoreSegments

        source = StoreSegments(real_store, level)
    return list(source.segments(n, length, args.seed))


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="longvideo", description="Long video generation: training, sampling, metrics.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="YAML experiment config")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key, e.g. train.steps=100 (repeatable)")

    sp = sub.add_parser("init-config", help="write a preset config file")
    sp.add_argument("--preset", choices=["paper", "desk"], default="desk")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_init_config)

    sp = sub.add_parser("synth-data", help="render the procedural scrolling dataset")
    with_config(sp)
    sp.add_argument("--out")
    sp.add_argument("--clips", type=int)
    sp.add_argument("--frames", type=int)
    sp.add_argument("--high-res", help="WIDTHxHEIGHT")
    sp.add_argument("--low-res", help="WIDTHxHEIGHT")
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_synth_data)

    sp = sub.add_parser("ingest", help="build a clip store from videos")
    sp.add_argument("--source-dir", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--aspect", default="16:9")
    sp.add_argument("--low-res", default="64x36", help="WIDTHxHEIGHT")
    sp.add_argument("--high-res", default="256x144", help="WIDTHxHEIGHT")
    sp.add_argument("--min-frames", type=int, default=128)
    sp.set_defaults(func=cmd_ingest)

    for name, func, help_ in (("train-lowres", cmd_train_lowres, "train the low-res video GAN"),
                              ("train-superres", cmd_train_superres, "train the super-res GAN")):
        sp = sub.add_parser(name, help=help_)
        with_config(sp)
        sp.add_argument("--out", help="output directory (default: config output_dir)")
        sp.add_argument("--steps", type=int)
        sp.add_argument("--resume", help="checkpoint to continue from")
        sp.set_defaults(func=func)

    sp = sub.add_parser("generate", help="sample a video from trained checkpoints")
    sp.add_argument("--lowres-ckpt", required=True)
    sp.add_argument("--sr-ckpt")
    sp.add_argument("--frames", type=int, default=128)
    sp.add_argument("--offset", type=int, default=0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--size", help="output WIDTHxHEIGHT (centre crop of the rendered square)")
    sp.add_argument("--out", required=True)
    sp.add_argument("--encode", action="store_true", help="also write video.mp4 (needs imageio)")
    sp.add_argument("--fps", type=float, default=30.0)
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("evaluate", help="compute a metric and write a JSON report")
    with_config(sp)
    sp.add_argument("--mode", required=True, choices=["fvd128", "fvd16", "fidv", "colorsim", "featcurve"])
    sp.add_argument("--real", help="real clip store")
    sp.add_argument("--gen", help="clip store, PNG frame directory, 'real-conditioned-sr' or 'bilinear'")
    sp.add_argument("--ckpt", help="low-res checkpoint to sample from")
    sp.add_argument("--sr-ckpt", help="super-res checkpoint for --gen real-conditioned-sr")
    sp.add_argument("--level", choices=["low", "high"])
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--segments", type=int, help="segments per side for FVD")
    sp.add_argument("--frames", type=int, help="clip length for curves / frame count for fidv")
    sp.add_argument("--clips", type=int, help="clips for curves")
    sp.add_argument("--gen-frames", type=int, help="video length sampled from --ckpt")
    sp.add_argument("--plot", action="store_true")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    from .checkpoint import CheckpointError
    from .config import ConfigError

    try:
        return args.func(args)
    except (UsageError, ConfigError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (CheckpointError, ValueError, FloatingPointError, RuntimeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
