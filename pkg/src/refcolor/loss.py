"""Training objectives: smooth-L1 chrominance reconstruction plus a
perceptual term on the reconstructed RGB image.

The perceptual distance compares deepest-layer features from a frozen
convolutional extractor.  Pretrained backbone weights are out of scope at
desk scale, so the default extractor uses seeded random frozen filters (a
workable perceptual surrogate); real weights can be loaded from a tensor
container file through the same interface.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from refcolor import tensor as T
from refcolor.colorspace import lab_to_rgb_graph
from refcolor.nn import Conv2d, act
from refcolor.serialize import read_container, write_container
from refcolor.tensor import Tensor


@dataclass(frozen=True)
class LossConfig:
    lambda_rec: float = 1.0
    lambda_perc: float = 0.1
    extractor_seed: int = 0
    extractor_channels: tuple = (16, 32, 64, 128, 128)
    extractor_path: str = ""  # empty: seeded random frozen features

    def __post_init__(self):
        object.__setattr__(self, "extractor_channels", tuple(int(c) for c in self.extractor_channels))
        if self.lambda_rec < 0 or self.lambda_perc < 0:
            raise ValueError("loss weights must be >= 0")


class FeatureExtractor:
    """Frozen stride-2 conv stack; deepest stage is the feature layer."""

    def __init__(self, convs: list):
        self.convs = convs
        for _, t in self.params():
            t.requires_grad = False

    @classmethod
    def from_seed(cls, seed: int, channels: tuple = (16, 32, 64, 128, 128),
                  k: int = 3, dtype=np.float32) -> "FeatureExtractor":
        rng = np.random.default_rng([seed, 0xFEA7])
        convs = []
        cin = 3
        for cout in channels:
            convs.append(Conv2d(rng, cin, cout, k, stride=2, dtype=dtype))
            cin = cout
        return cls(convs)

    @classmethod
    def load(cls, path, dtype=np.float32) -> "FeatureExtractor":
        _, meta, tensors = read_container(path)
        depth = int(meta["depth"])
        convs = []
        rng = np.random.default_rng(0)
        for i in range(depth):
            w = np.asarray(tensors[f"stage{i}.w"], dtype=dtype)
            b = np.asarray(tensors[f"stage{i}.b"], dtype=dtype)
            conv = Conv2d(rng, w.shape[1], w.shape[0], w.shape[2], stride=2, dtype=dtype)
            conv.w.data, conv.b.data = w, b
            convs.append(conv)
        return cls(convs)

    def save(self, path) -> None:
        tensors = {}
        for i, conv in enumerate(self.convs):
            tensors[f"stage{i}.w"] = conv.w.data
            tensors[f"stage{i}.b"] = conv.b.data
        write_container(path, {"kind": "feature-extractor", "depth": str(len(self.convs))}, tensors)

    def params(self):
        for i, conv in enumerate(self.convs):
            yield from conv.params(f"stage{i}")

    def features(self, rgb01: Tensor) -> Tensor:
        x = rgb01 * 2.0 - 1.0
        for conv in self.convs:
            x = act(conv(x))
        return x


def build_extractor(cfg: LossConfig, dtype=np.float32) -> FeatureExtractor:
    if cfg.extractor_path:
        return FeatureExtractor.load(cfg.extractor_path, dtype=dtype)
    return FeatureExtractor.from_seed(cfg.extractor_seed, cfg.extractor_channels, dtype=dtype)


def smooth_l1(pred: Tensor, gt: Tensor) -> Tensor:
    """Mean over elements of 0.5 d^2 for |d| < 1, else |d| - 0.5."""
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    d = pred - gt
    mag = d.abs()
    return T.where(mag.data < 1.0, d * d * 0.5, mag - 0.5).mean()


def perceptual(pred_rgb: Tensor, gt_rgb: Tensor, extractor: FeatureExtractor) -> Tensor:
    """Mean L1 distance between deepest features; gradient reaches pred only."""
    if pred_rgb.shape != gt_rgb.shape:
        raise ValueError(f"shape mismatch: {pred_rgb.shape} vs {gt_rgb.shape}")
    fp = extractor.features(pred_rgb)
    with T.no_grad():
        fg = extractor.features(gt_rgb.detach())
    return (fp - fg).abs().mean()


def total_loss(p_ab: Tensor, gt_ab: Tensor, t_l: Tensor, gt_rgb: Tensor,
               cfg: LossConfig, extractor: FeatureExtractor):
    """Weighted objective; returns (total Tensor, rec value, perc value).

    Inputs are physical units: p_ab/gt_ab chrominance, t_l luminance,
    gt_rgb in [0,1].  A zero weight skips its term entirely (ablations),
    so lambda_perc=0 yields exactly lambda_rec * smooth_l1.
    """
    total = None
    rec_val = perc_val = 0.0
    if cfg.lambda_rec != 0.0:
        rec = smooth_l1(p_ab, gt_ab)
        rec_val = float(rec.data)
        total = rec * cfg.lambda_rec
    if cfg.lambda_perc != 0.0:
        p_rgb = lab_to_rgb_graph(t_l, p_ab)
        perc = perceptual(p_rgb, gt_rgb, extractor)
        perc_val = float(perc.data)
        weighted = perc * cfg.lambda_perc
        total = weighted if total is None else total + weighted
    if total is None:
        total = Tensor(np.zeros((), dtype=p_ab.dtype))
    return total, rec_val, perc_val
