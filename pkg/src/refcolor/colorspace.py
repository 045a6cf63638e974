"""sRGB <-> CIE Lab conversion (D65 white point).

Two parallel implementations share the same constants: a vectorized numpy
path for whole images, and a tape-recorded path (``lab_to_rgb_graph``)
that the training loss differentiates through.

The white point is defined as the row sums of the sRGB->XYZ matrix, so
RGB (1,1,1) maps to exactly L=100, a=b=0, and the XYZ->sRGB matrix is the
numerical inverse, which keeps round trips exact to machine precision.
This module stores physical units (L in [0,100], ab in roughly
[-128,127]); network-facing scaling lives with the model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from refcolor import tensor as T
from refcolor.imageio import GrayImage, RgbImage

SRGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
XYZ_TO_SRGB = np.linalg.inv(SRGB_TO_XYZ)
WHITE_XYZ = SRGB_TO_XYZ.sum(axis=1)

# sRGB transfer function breakpoints, chosen mutually consistent so the
# encode/decode branches invert each other exactly.
_LIN_BREAK = 0.0031308
_SRGB_BREAK = 12.92 * _LIN_BREAK

# Lab f(t) breakpoint.
_DELTA = 6.0 / 29.0
_DELTA3 = _DELTA**3
_FSLOPE = 1.0 / (3.0 * _DELTA**2)
_FOFFS = 4.0 / 29.0


@dataclass(frozen=True)
class LabImage:
    """CIE Lab image; L, a, b are (H, W) float arrays in physical units."""

    L: np.ndarray
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        chans = []
        for name in ("L", "a", "b"):
            ch = np.asarray(getattr(self, name), dtype=np.float64).copy()
            ch.flags.writeable = False
            chans.append(ch)
            object.__setattr__(self, name, ch)
        if not (chans[0].shape == chans[1].shape == chans[2].shape) or chans[0].ndim != 2:
            raise ValueError("LabImage channels must share a 2-d shape")

    @property
    def height(self) -> int:
        return self.L.shape[0]

    @property
    def width(self) -> int:
        return self.L.shape[1]


def _srgb_decode(c: np.ndarray) -> np.ndarray:
    return np.where(c <= _SRGB_BREAK, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _srgb_encode(c: np.ndarray) -> np.ndarray:
    safe = np.maximum(c, _LIN_BREAK)
    return np.where(c <= _LIN_BREAK, 12.92 * c, 1.055 * safe ** (1 / 2.4) - 0.055)


def _lab_f(t: np.ndarray) -> np.ndarray:
    return np.where(t > _DELTA3, np.cbrt(t), _FSLOPE * t + _FOFFS)


def _lab_f_inv(f: np.ndarray) -> np.ndarray:
    return np.where(f > _DELTA, f**3, (f - _FOFFS) / _FSLOPE)


def rgb_to_lab(img: RgbImage) -> LabImage:
    """sRGB in [0,1] -> Lab via linear RGB and XYZ (D65)."""
    lin = _srgb_decode(img.pixels)
    xyz = lin @ SRGB_TO_XYZ.T
    f = _lab_f(xyz / WHITE_XYZ)
    fx, fy, fz = f[..., 0], f[..., 1], f[..., 2]
    return LabImage(116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz))


def lab_to_rgb(img: LabImage) -> RgbImage:
    """Inverse of rgb_to_lab; out-of-gamut results clamp to [0,1]."""
    fy = (img.L + 16.0) / 116.0
    fx = fy + img.a / 500.0
    fz = fy - img.b / 200.0
    xyz = np.stack([_lab_f_inv(fx), _lab_f_inv(fy), _lab_f_inv(fz)], axis=-1) * WHITE_XYZ
    lin = xyz @ XYZ_TO_SRGB.T
    return RgbImage(np.clip(_srgb_encode(lin), 0.0, 1.0))


def compose_lab(L: GrayImage, ab: np.ndarray) -> LabImage:
    """Assemble a LabImage from an L channel and an (H, W, 2) ab array."""
    ab = np.asarray(ab, dtype=np.float64)
    if ab.shape != (L.height, L.width, 2):
        raise ValueError(f"ab shape {ab.shape} does not match L {L.pixels.shape} + (2,)")
    return LabImage(L.pixels, ab[..., 0], ab[..., 1])


def split_lab(img: LabImage) -> tuple[GrayImage, np.ndarray]:
    """Inverse of compose_lab."""
    return GrayImage(img.L), np.stack([img.a, img.b], axis=-1)


# ---------------------------------------------------------------------
# differentiable path (loss graph)
# ---------------------------------------------------------------------


def lab_to_rgb_graph(L: T.Tensor, ab: T.Tensor) -> T.Tensor:
    """Lab -> sRGB as tape ops: L is (N,1,H,W), ab is (N,2,H,W) physical units.

    Returns (N,3,H,W) RGB in [0,1].  Differentiable almost everywhere;
    at the two piecewise breakpoints and the clamp boundaries the
    derivative of the interior/linear segment is used.
    """

    def f_inv(f: T.Tensor) -> T.Tensor:
        return T.where(f.data > _DELTA, f**3, (f - _FOFFS) * (1.0 / _FSLOPE))

    def encode(c: T.Tensor) -> T.Tensor:
        safe = c.clamp(lo=_LIN_BREAK)
        return T.where(c.data <= _LIN_BREAK, c * 12.92, safe ** (1 / 2.4) * 1.055 - 0.055)

    fy = (L + 16.0) * (1.0 / 116.0)
    fx = fy + T.narrow(ab, 1, 0, 1) * (1.0 / 500.0)
    fz = fy - T.narrow(ab, 1, 1, 1) * (1.0 / 200.0)
    xyz = [f_inv(fx) * WHITE_XYZ[0], f_inv(fy) * WHITE_XYZ[1], f_inv(fz) * WHITE_XYZ[2]]
    rgb = []
    for row in XYZ_TO_SRGB:
        lin = xyz[0] * row[0] + xyz[1] * row[1] + xyz[2] * row[2]
        rgb.append(encode(lin))
    return T.concat(rgb, axis=1).clamp(0.0, 1.0)
