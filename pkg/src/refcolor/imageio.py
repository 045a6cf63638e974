"""Image loading, saving, and resizing.

Every image entering the pipeline becomes a float array in [0, 1].  Binary
PPM (P6, maxval 255) is the bit-exact interchange format and is parsed
here directly; 8-bit RGB PNG is supported as a convenience through Pillow.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


class ImageFormatError(ValueError):
    """File is readable but not a supported image format/bit depth."""


@dataclass(frozen=True)
class RgbImage:
    """RGB image, float pixels, shape (height, width, 3).

    Pixels are row-major and nominally in [0, 1]; ``save_image`` clamps, so
    out-of-range values produced by intermediate math are representable.
    The pixel array is copied and frozen: images are immutable and safe to
    share across threads.
    """

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"RgbImage needs shape (H, W, 3), got {px.shape}")
        px = px.copy()
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class GrayImage:
    """Single-channel image, shape (height, width).

    Value semantics are set by the producer; the colorization path stores
    CIE L in [0, 100] here.
    """

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2:
            raise ValueError(f"GrayImage needs shape (H, W), got {px.shape}")
        px = px.copy()
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def _read_ppm(raw: bytes, path) -> RgbImage:
    # Header tokens may be separated by whitespace and '#' comments; the
    # maxval is followed by exactly one whitespace byte, then raw pixels.
    if not raw.startswith(b"P6"):
        raise ImageFormatError(f"{path}: not a binary PPM (P6) file")
    pos = 2
    fields = []
    while len(fields) < 3:
        if pos >= len(raw):
            raise ImageFormatError(f"{path}: truncated PPM header")
        ch = raw[pos:pos + 1]
        if ch == b"#":
            eol = raw.find(b"\n", pos)
            pos = len(raw) if eol < 0 else eol + 1
        elif ch.isspace():
            pos += 1
        else:
            m = re.match(rb"\d+", raw[pos:])
            if m is None:
                raise ImageFormatError(f"{path}: malformed PPM header")
            fields.append(int(m.group()))
            pos += m.end()
    width, height, maxval = fields
    if maxval != 255:
        raise ImageFormatError(f"{path}: only maxval 255 supported, got {maxval}")
    pos += 1  # single whitespace after maxval
    n = width * height * 3
    body = raw[pos:pos + n]
    if len(body) < n:
        raise ImageFormatError(f"{path}: expected {n} pixel bytes, found {len(body)}")
    data = np.frombuffer(body, dtype=np.uint8).reshape(height, width, 3)
    return RgbImage(data.astype(np.float64) / 255.0)


def _read_png(path) -> RgbImage:
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover - Pillow is a declared dep
        raise ImageFormatError(f"{path}: PNG support requires Pillow") from exc
    with Image.open(path) as im:
        if im.mode != "RGB":
            raise ImageFormatError(
                f"{path}: only 8-bit RGB PNG supported, got mode {im.mode!r}"
            )
        data = np.asarray(im, dtype=np.uint8)
    return RgbImage(data.astype(np.float64) / 255.0)


def load_image(path) -> RgbImage:
    """Load a P6 PPM or 8-bit RGB PNG; 8-bit values map to v/255 exactly."""
    raw = Path(path).read_bytes()
    if raw.startswith(b"P6"):
        return _read_ppm(raw, path)
    if raw.startswith(_PNG_MAGIC):
        return _read_png(path)
    raise ImageFormatError(f"{path}: unrecognized image format")


def quantize(img: RgbImage) -> np.ndarray:
    """8-bit representation written by ``save_image``: clamp then round(v*255)."""
    return np.rint(np.clip(img.pixels, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(img: RgbImage, path) -> None:
    """Write ``img`` as P6 PPM or PNG depending on the path suffix.

    load(save(img)) reproduces quantize(img) byte-exactly.
    """
    path = Path(path)
    data = quantize(img)
    if path.suffix.lower() == ".png":
        try:
            from PIL import Image
        except ImportError as exc:  # pragma: no cover
            raise ImageFormatError(f"{path}: PNG support requires Pillow") from exc
        Image.fromarray(data, mode="RGB").save(path, format="PNG")
        return
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    path.write_bytes(header + data.tobytes())


def resize_bilinear(img: RgbImage, out_h: int, out_w: int) -> RgbImage:
    """Bilinear resize with the half-pixel-center coordinate convention."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target size must be >= 1, got {out_h}x{out_w}")
    src = img.pixels
    in_h, in_w = src.shape[:2]
    if (out_h, out_w) == (in_h, in_w):
        return RgbImage(src)

    def axis_weights(n_in, n_out):
        pos = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0.0, n_in - 1)
        lo = np.floor(pos).astype(np.intp)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    y0, y1, wy = axis_weights(in_h, out_h)
    x0, x1, wx = axis_weights(in_w, out_w)
    wx = wx[None, :, None]
    top = src[y0][:, x0] * (1 - wx) + src[y0][:, x1] * wx
    bot = src[y1][:, x0] * (1 - wx) + src[y1][:, x1] * wx
    wy = wy[:, None, None]
    return RgbImage(top * (1 - wy) + bot * wy)
