"""Informational CPU latency benchmark for the colorize path.

Timings are wall-clock medians over repeated full colorize calls (content
encoding, color encoding, decode, color-space conversion) at the
requested square sizes.  They characterize this CPU implementation only
and are not comparable to published GPU figures.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass

import numpy as np

from refcolor.imageio import GrayImage, RgbImage
from refcolor.model import ColorizerModel, ModelConfig

DEFAULT_SIZES = (256, 512, 1024)


class BenchError(RuntimeError):
    """Benchmark could not run at the requested size (e.g. out of memory)."""


@dataclass
class BenchRow:
    size: int
    median_s: float
    times_s: tuple


def run_bench(config: ModelConfig, weights: dict | None = None,
              sizes=DEFAULT_SIZES, repeats: int = 5, seed: int = 0) -> list:
    """Median seconds per colorize call at each size (same weights throughout)."""
    rows = []
    for size in sizes:
        cfg = config.with_input_size(size)
        model = ColorizerModel(cfg, seed=seed)
        if weights is not None:
            model.load_params(weights)
        rng = np.random.default_rng([seed, size])
        target = GrayImage(rng.uniform(0.0, 100.0, (size, size)))
        ref = RgbImage(rng.uniform(0.0, 1.0, (size, size, 3)))
        times = []
        try:
            for _ in range(repeats):
                t0 = time.perf_counter()
                model.colorize(target, ref)
                times.append(time.perf_counter() - t0)
        except MemoryError as exc:
            raise BenchError(f"out of memory at size {size}x{size}") from exc
        rows.append(BenchRow(size, float(np.median(times)), tuple(times)))
    return rows


def write_bench_csv(rows: list, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["size", "median_s", "runs"])
        for r in rows:
            writer.writerow([r.size, repr(r.median_s), ";".join(repr(t) for t in r.times_s)])
