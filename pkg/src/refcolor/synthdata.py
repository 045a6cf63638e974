"""Deterministic synthetic color images for demos and desk-scale training.

Each image blends a handful of saturated anchor colors through smooth
spatial blob masks over a shaded background, so chrominance varies with
position and luminance.  Successive images draw from rotated hue ranges,
giving the set distinct palettes.
"""

from __future__ import annotations

import colorsys

import numpy as np

from refcolor.imageio import RgbImage


def synthetic_image(rng: np.random.Generator, size: int = 64, hue_base: float | None = None) -> RgbImage:
    if hue_base is None:
        hue_base = float(rng.uniform(0.0, 1.0))
    ys, xs = np.mgrid[0:size, 0:size] / (size - 1)

    n_blobs = int(rng.integers(3, 6))
    weights = []
    colors = []
    for b in range(n_blobs):
        hue = (hue_base + rng.uniform(-0.12, 0.12) + 0.5 * (b % 2)) % 1.0
        sat = rng.uniform(0.6, 1.0)
        val = rng.uniform(0.5, 1.0)
        colors.append(colorsys.hsv_to_rgb(hue, sat, val))
        cx, cy = rng.uniform(0.0, 1.0, size=2)
        sigma = rng.uniform(0.15, 0.4)
        weights.append(np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * sigma**2)))

    # Background: a diagonal shade of the base hue.
    colors.append(colorsys.hsv_to_rgb(hue_base, 0.5, 0.85))
    weights.append(np.full_like(xs, 0.25))

    w = np.stack(weights)
    w /= w.sum(axis=0, keepdims=True)
    img = np.einsum("bhw,bc->hwc", w, np.asarray(colors))

    shade = 0.55 + 0.45 * (0.5 * xs + 0.5 * (1 - ys))
    return RgbImage(np.clip(img * shade[..., None], 0.0, 1.0))


def make_dataset(count: int = 8, size: int = 64, seed: int = 7) -> list:
    """``count`` images with evenly spread base hues; deterministic in seed."""
    images = []
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        images.append(synthetic_image(rng, size, hue_base=(i / max(count, 1) + 0.03) % 1.0))
    return images
