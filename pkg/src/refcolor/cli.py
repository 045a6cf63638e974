"""Command-line entry point.

Subcommands: ``train`` (writes a checkpoint plus a metrics CSV and a loss
figure), ``colorize``, ``augment`` (reference-generation preview),
``verify`` (invariant suite), ``bench`` (informational CPU timings), and
``make-data`` (deterministic synthetic images for demos).

Exit codes: 0 success, 1 verification failure, 2 usage or configuration
error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from refcolor.augment import AugmentConfig, make_reference, make_target
from refcolor.bench import DEFAULT_SIZES, BenchError, run_bench, write_bench_csv
from refcolor.config import ConfigError, load_run_config, override_train
from refcolor.figures import save_bench_figure, save_loss_figure
from refcolor.imageio import load_image, resize_bilinear, save_image
from refcolor.model import ModelConfig
from refcolor.synthdata import make_dataset
from refcolor.tps import TpsSolveError
from refcolor.train import (
    TrainingDiverged,
    load_checkpoint,
    model_from_checkpoint,
    train_loop,
    write_metrics_csv,
)
from refcolor.verify import format_table, run_checks

IMAGE_PATTERNS = ("*.ppm", "*.png")


def _load_dataset(data_dir: Path) -> list:
    if not data_dir.is_dir():
        raise ConfigError(f"data directory {data_dir} does not exist")
    paths = sorted(p for pattern in IMAGE_PATTERNS for p in data_dir.glob(pattern))
    if not paths:
        raise ConfigError(f"no .ppm or .png images in {data_dir}")
    return [load_image(p) for p in paths]


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    cfg = override_train(cfg, seed=args.seed, steps=args.steps)
    dataset = _load_dataset(Path(args.data))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    metrics_path = out.with_suffix(".metrics.csv")
    figure_path = out.with_suffix(".loss.png")

    tick = max(1, cfg.train.steps // 20)

    def progress(row):
        if row.step % tick == 0 or row.step + 1 == cfg.train.steps:
            print(
                f"step {row.step:6d}  total {row.loss_total:.4f}  "
                f"rec {row.loss_rec:.4f}  perc {row.loss_perc:.4f}  {row.wall_ms:.0f} ms",
                file=sys.stderr,
            )

    _, rows = train_loop(
        dataset, cfg.model, cfg.augment, cfg.loss,
        steps=cfg.train.steps, batch_size=cfg.train.batch_size, seed=cfg.train.seed,
        lr=cfg.train.lr, beta1=cfg.train.beta1, beta2=cfg.train.beta2,
        adam_eps=cfg.train.adam_eps, checkpoint_interval=cfg.train.checkpoint_interval,
        checkpoint_path=out, progress=progress,
    )
    write_metrics_csv(rows, metrics_path)
    if rows:
        save_loss_figure(rows, figure_path)
        print(f"loss figure: {figure_path}")
    print(f"checkpoint: {out}")
    print(f"metrics: {metrics_path}")
    return 0


def cmd_colorize(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    model = model_from_checkpoint(ck)
    size = ck.config.input_size
    target_rgb = resize_bilinear(load_image(args.target), size, size)
    reference = resize_bilinear(load_image(args.reference), size, size)
    result = model.colorize(make_target(target_rgb), reference)
    save_image(result, args.out)
    print(f"colorized image: {args.out}")
    return 0


def cmd_augment(args) -> int:
    img = load_image(args.in_path)
    cfg = AugmentConfig(
        noise_sigma=args.noise_sigma, tps_grid=args.tps_grid,
        tps_max_offset=args.tps_max_offset, enable_flip=args.flip,
        enable_rotate=args.rotate, seed=args.seed,
    )
    rng = np.random.default_rng(args.seed)
    save_image(make_reference(img, rng, cfg), args.out)
    print(f"reference preview: {args.out}")
    return 0


def cmd_verify(args) -> int:
    results = run_checks()
    print(format_table(results))
    return 0 if all(r.ok for r in results) else 1


def cmd_bench(args) -> int:
    if args.checkpoint:
        ck = load_checkpoint(args.checkpoint)
        config, weights = ck.config, ck.params
    else:
        config, weights = ModelConfig.toy(), None
    sizes = tuple(sorted(set(args.size))) if args.size else DEFAULT_SIZES
    rows = run_bench(config, weights, sizes=sizes, repeats=args.repeats)
    print(f"{'size':>6}  {'median_s':>10}  runs")
    for r in rows:
        print(f"{r.size:>6}  {r.median_s:>10.4f}  " + " ".join(f"{t:.4f}" for t in r.times_s))
    print("CPU wall-clock timings for this implementation; not comparable to GPU-reported figures.")
    if args.report_dir:
        report = Path(args.report_dir)
        report.mkdir(parents=True, exist_ok=True)
        write_bench_csv(rows, report / "bench.csv")
        save_bench_figure(rows, report / "bench.png")
        print(f"report: {report / 'bench.csv'}, {report / 'bench.png'}")
    return 0


def cmd_make_data(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(make_dataset(args.count, args.size, args.seed)):
        save_image(img, out / f"img_{i:02d}.ppm")
    print(f"wrote {args.count} images to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="refcolor",
                                     description="Reference-guided image colorization toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on a directory of images")
    p.add_argument("--config", default=None, help="key=value config file (defaults used if omitted)")
    p.add_argument("--data", required=True, help="directory of .ppm/.png training images")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--seed", type=int, default=None, help="override the training seed")
    p.add_argument("--steps", type=int, default=None, help="override the step count")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("colorize", help="colorize a grayscale target against a reference")
    p.add_argument("--target", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_colorize)

    p = sub.add_parser("augment", help="preview the reference-generation pipeline")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-sigma", type=float, default=5.0)
    p.add_argument("--tps-grid", type=int, default=3)
    p.add_argument("--tps-max-offset", type=float, default=0.1)
    p.add_argument("--flip", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--rotate", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("verify", help="run the invariant suite")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="CPU latency benchmark (informational)")
    p.add_argument("--size", type=int, action="append", choices=DEFAULT_SIZES,
                   help="repeatable; default all of 256/512/1024")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--report-dir", default=None, help="write bench.csv and bench.png here")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("make-data", help="generate deterministic synthetic training images")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_make_data)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (TrainingDiverged, TpsSolveError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except BenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
