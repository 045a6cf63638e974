"""Self-reference training triples from single color images.

A training sample needs no external pair: the reference image is the
ground truth itself, pushed through value noise, a random thin-plate
warp, and optional flip/right-angle rotation.  The grayscale target is
the ground truth's own luminance.  With all knobs at identity settings
the triple degenerates to (L(GT), GT, GT).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from refcolor.colorspace import rgb_to_lab
from refcolor.imageio import GrayImage, RgbImage
from refcolor.tps import random_tps, warp_image


@dataclass(frozen=True)
class AugmentConfig:
    """Reference-generation knobs.

    ``noise_sigma`` is the Gaussian std-dev on the 0-255 value scale
    (applied as sigma/255 in [0,1] units); the warp displaces an
    n x n control grid by up to ``tps_max_offset`` of the image extent.
    """

    noise_sigma: float = 5.0
    tps_grid: int = 3
    tps_max_offset: float = 0.1
    enable_flip: bool = True
    enable_rotate: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if not 0.0 <= self.tps_max_offset < 0.5:
            raise ValueError(f"tps_max_offset must be in [0, 0.5), got {self.tps_max_offset}")


def content_transform(gt: RgbImage, rng: np.random.Generator, cfg: AugmentConfig) -> RgbImage:
    """Add i.i.d. Gaussian value noise (std sigma/255), clamped to [0,1]."""
    noisy = gt.pixels + rng.normal(0.0, cfg.noise_sigma / 255.0, size=gt.pixels.shape)
    return RgbImage(np.clip(noisy, 0.0, 1.0))


def make_reference(gt: RgbImage, rng: np.random.Generator, cfg: AugmentConfig) -> RgbImage:
    """Noise -> random TPS warp -> optional flip -> optional k*90 rotation.

    Deterministic given the generator state; output dimensions always
    equal the input's (non-square images restrict rotation to 180).
    """
    ref = content_transform(gt, rng, cfg)
    params = random_tps(rng, gt.height, gt.width, cfg.tps_grid, cfg.tps_max_offset)
    ref = warp_image(ref, params)
    px = ref.pixels
    if cfg.enable_flip and rng.random() < 0.5:
        px = px[:, ::-1]
    if cfg.enable_rotate:
        if gt.height == gt.width:
            k = int(rng.integers(0, 4))
        else:
            k = 2 * int(rng.integers(0, 2))
        if k:
            px = np.rot90(px, k, axes=(0, 1))
    return RgbImage(px)


def make_target(gt: RgbImage) -> GrayImage:
    """Luminance channel (CIE L, physical [0,100]) of the ground truth."""
    return GrayImage(rgb_to_lab(gt).L)
