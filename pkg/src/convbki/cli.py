"""Command line entry point.

Data layout used by the subcommands::

    DIR/config.txt       key=value map config
    DIR/poses.txt        one 3x4 row-major pose per line
    DIR/frames/*.bin     input points with segmentation labels (csv also accepted)
    DIR/gt/*.bin         the same points with true class ids

``synth`` writes exactly this layout; the other commands take the pieces as
separate paths so real data can be arranged however it is stored.

Exit status: 0 on success, 1 for usage errors (bad flags, unknown config
keys), 2 for missing or malformed data.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path

from . import bench as bench_mod
from .evaluation import evaluate
from .global_map import GlobalMap, MapFormatError, load_map, save_map
from .io import (
    ConfigKeyError,
    DataError,
    FrameRecord,
    MapConfig,
    read_config,
    read_frames,
    read_poses,
    write_config,
    write_frame_bin,
    write_poses,
)
from .kernels import KernelParams, build_filter, load_params, save_params
from .ply import export_ply
from .synth import SynthConfig, synth_scene
from .trainer import TrainConfig, loss_curve_to_csv, make_sample, train
from .update import FrameError, sequential_fuse, timings_to_csv, transform_points

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _existing(path, what):
    p = Path(path)
    if not p.exists():
        raise DataError(f"{what} not found: {p}")
    return p


def _config(args):
    if args.config is None:
        return MapConfig()
    return read_config(_existing(args.config, "config file"))


def _params(args, cfg):
    if getattr(args, "params", None) is None:
        return KernelParams.uniform(cfg.kernel_variant, cfg.num_classes)
    params, f, res = load_params(_existing(args.params, "params file"))
    if params.num_classes != cfg.num_classes:
        raise DataError(f"{args.params}: params for {params.num_classes} classes, config has {cfg.num_classes}")
    return params


def _frames(directory, cfg, poses_path=None):
    poses = None
    if poses_path is not None:
        poses = read_poses(_existing(poses_path, "poses file"))
    _existing(directory, "frame directory")
    return read_frames(directory, cfg.num_classes, poses)


def cmd_synth(args):
    out = Path(args.out)
    cfg = _config(args)
    sc = SynthConfig(num_frames=args.frames, points_per_frame=args.points,
                     flip_prob=args.flip, label_mode=cfg.label_mode)
    frames = synth_scene(args.seed, sc)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    (out / "gt").mkdir(exist_ok=True)
    for i, fr in enumerate(frames):
        write_frame_bin(FrameRecord(i, fr.positions, fr.noisy), out / "frames" / f"{i:06d}.bin")
        write_frame_bin(FrameRecord(i, fr.positions, fr.gt), out / "gt" / f"{i:06d}.bin")
    write_poses([fr.pose for fr in frames], out / "poses.txt")
    write_config(cfg, out / "config.txt")
    print(f"wrote {len(frames)} frames to {out}")
    return EXIT_OK


def cmd_build_map(args):
    cfg = _config(args)
    params = _params(args, cfg)
    frames = _frames(args.frames, cfg, args.poses)
    spec = cfg.grid_spec()
    kf = build_filter(params, cfg.filter_size, cfg.resolution, cfg.num_classes)
    gmap = GlobalMap(cfg.num_classes, cfg.prior, cfg.gc_window)
    seq = [(fr.positions, fr.labels, fr.pose) for fr in frames]
    try:
        gmap, timings = sequential_fuse(seq, gmap, kf, spec)
    except FrameError as exc:
        raise DataError(f"{args.frames}: {exc}") from exc
    save_map(gmap, args.out)
    if args.timing:
        timings_to_csv(timings, args.timing)
    print(f"map with {len(gmap)} voxels written to {args.out}")
    return EXIT_OK


def cmd_train(args):
    cfg = _config(args)
    frames = _frames(args.frames, cfg, args.poses)
    gt = _frames(args.gt, cfg)
    if len(gt) != len(frames):
        raise DataError(f"{args.gt}: {len(gt)} gt frames for {len(frames)} input frames")
    T = args.frames_per_sample
    spec = cfg.grid_spec()
    samples = []
    for t in range(T, len(frames)):
        if len(gt[t].positions) != len(frames[t].positions):
            raise DataError(f"{args.gt}: frame {t} point count differs from input")
        window = [(fr.positions, fr.labels, fr.pose) for fr in frames[t - T:t]]
        samples.append(make_sample(window, frames[t].pose, gt[t].positions, gt[t].classes(), spec, cfg.prior))
    if not samples:
        raise DataError(f"{args.frames}: need more than {T} frames to train")
    tc = TrainConfig(learning_rate=args.lr, epochs=args.epochs, frames_per_sample=T, l_init=args.l_init)
    variant = args.variant or cfg.kernel_variant
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        result = train(samples, tc, variant, cfg.num_classes, cfg.filter_size, cfg.resolution)
    save_params(result.params, args.out, cfg.filter_size, cfg.resolution)
    if args.loss_csv:
        loss_curve_to_csv(result, args.loss_csv)
    print("learned lengths: " + " ".join(f"{v:.4f}" for v in result.params.flat()))
    return EXIT_OK


def _load_map(path):
    try:
        return load_map(_existing(path, "map file"))
    except MapFormatError as exc:
        raise DataError(f"{path}: {exc}") from exc


def cmd_eval(args):
    cfg = _config(args)
    gmap = _load_map(args.map)
    frames = _frames(args.frames, cfg, args.poses)
    gt = _frames(args.gt, cfg)
    if len(gt) != len(frames):
        raise DataError(f"{args.gt}: {len(gt)} gt frames for {len(frames)} input frames")
    gt_frames = [(transform_points(fr.pose, g.positions), g.classes(), fr.pose[:3, 3])
                 for fr, g in zip(frames, gt)]
    try:
        report = evaluate(gmap, gt_frames, [fr.labels for fr in frames], cfg.resolution, args.max_range)
    except ValueError as exc:
        raise DataError(f"{args.gt}: {exc}") from exc
    text = report.to_json(args.out)
    if args.out is None:
        print(text)
    else:
        print(f"mIoU {report.miou:.2f}")
    return EXIT_OK


def cmd_export_ply(args):
    cfg = _config(args)
    gmap = _load_map(args.map)
    thr = None if args.no_filter else (args.variance_threshold if args.variance_threshold is not None
                                       else cfg.variance_threshold)
    n = export_ply(gmap, args.out, cfg.resolution, thr)
    print(f"{n} vertices written to {args.out}")
    return EXIT_OK


def cmd_bench(args):
    cfg = _config(args)
    params = _params(args, cfg)
    rows = bench_mod.bench(cfg, params, seed=args.seed, num_frames=args.frames,
                           resolutions=args.resolutions, filter_sizes=args.filter_sizes)
    text = bench_mod.rows_to_csv(rows, args.out)
    if args.out is None:
        print(text, end="")
    return EXIT_OK


def build_parser():
    p = _Parser(prog="convbki", description="Semantic voxel mapping with learnable kernels.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(sp):
        sp.add_argument("--config", help="key=value map config (defaults used when omitted)")
        return sp

    s = with_config(sub.add_parser("synth", help="write a synthetic drive"))
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--frames", type=int, default=20)
    s.add_argument("--points", type=int, default=4000)
    s.add_argument("--flip", type=float, default=0.3)
    s.set_defaults(func=cmd_synth)

    s = with_config(sub.add_parser("build-map", help="fuse frames into a map file"))
    s.add_argument("--frames", required=True)
    s.add_argument("--poses", required=True)
    s.add_argument("--params")
    s.add_argument("--out", required=True)
    s.add_argument("--timing", help="per-frame timing CSV")
    s.set_defaults(func=cmd_build_map)

    s = with_config(sub.add_parser("train", help="learn kernel lengths"))
    s.add_argument("--frames", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--poses", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--loss-csv")
    s.add_argument("--variant", choices=("single", "perclass", "compound"))
    s.add_argument("--lr", type=float, default=0.007)
    s.add_argument("--epochs", type=int, default=1)
    s.add_argument("--frames-per-sample", type=int, default=10)
    s.add_argument("--l-init", type=float, default=0.5)
    s.set_defaults(func=cmd_train)

    s = with_config(sub.add_parser("eval", help="score a map against ground truth"))
    s.add_argument("--map", required=True)
    s.add_argument("--frames", required=True, help="input frames; their labels are the fallback")
    s.add_argument("--gt", required=True)
    s.add_argument("--poses", required=True)
    s.add_argument("--max-range", type=float)
    s.add_argument("--out", help="report JSON (printed when omitted)")
    s.set_defaults(func=cmd_eval)

    s = with_config(sub.add_parser("export-ply", help="write voxel centroids as ASCII PLY"))
    s.add_argument("--map", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--variance-threshold", type=float)
    s.add_argument("--no-filter", action="store_true")
    s.set_defaults(func=cmd_export_ply)

    s = with_config(sub.add_parser("bench", help="resolution and filter-size sweeps"))
    s.add_argument("--params")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--frames", type=int, default=5)
    s.add_argument("--resolutions", type=float, nargs="+", default=list(bench_mod.RESOLUTIONS))
    s.add_argument("--filter-sizes", type=int, nargs="+", default=list(bench_mod.FILTER_SIZES))
    s.add_argument("--out")
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ConfigKeyError as exc:
        print(f"convbki: error: {exc.args[0]}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, MapFormatError, OSError) as exc:
        print(f"convbki: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"convbki: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
