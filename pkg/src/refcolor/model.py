"""The colorization network: color encoder, content encoder, decoder.

The content encoder turns the luminance image into a feature pyramid
f_1..f_N (halving resolution per scale); the color encoder collapses the
reference image to a 512-component embedding via strided convolutions,
global average pooling, and an MLP.  The decoder walks the pyramid coarse
to fine — upsample, fuse with the skip feature, then a color-modulated
convolution — and a tanh head emits the two chrominance channels.

Module boundaries speak physical units (L in [0,100], ab in [-110,110],
RGB in [0,1]); the scaling to network range happens inside.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

from refcolor import tensor as T
from refcolor.colorspace import compose_lab, lab_to_rgb
from refcolor.imageio import GrayImage, RgbImage
from refcolor.nn import Conv2d, Mlp, ModulatedConv2d, ResBlock, act
from refcolor.tensor import Tensor

# Network-facing scaling: L in [0,100] -> [-1,1], ab roughly [-110,110] -> [-1,1].
AB_RANGE = 110.0


def normalize_luminance(L: np.ndarray) -> np.ndarray:
    return L / 50.0 - 1.0


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; the embedding width is fixed at 512."""

    num_scales: int = 4
    channels: tuple = (32, 64, 128, 256)
    resblocks_per_scale: int = 1
    kernel: int = 3
    input_size: int = 64
    embed_dim: int = 512
    color_channels: tuple = (32, 64, 128, 256)
    demod_eps: float = 1e-8
    demod_mode: str = "per_output"
    style_scale: float = 0.0  # 0 means the per-block fan-in default

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "color_channels", tuple(int(c) for c in self.color_channels))
        if self.embed_dim != 512:
            raise ValueError(f"embedding width is fixed at 512, got {self.embed_dim}")
        if self.num_scales < 2:
            raise ValueError(f"need at least 2 scales, got {self.num_scales}")
        if len(self.channels) != self.num_scales:
            raise ValueError(f"channels {self.channels} must list one width per scale ({self.num_scales})")
        if self.kernel % 2 == 0 or self.kernel < 1:
            raise ValueError(f"kernel size must be odd, got {self.kernel}")
        if self.input_size % self.stride_factor:
            raise ValueError(f"input size {self.input_size} not divisible by {self.stride_factor}")
        if self.demod_mode not in ("per_output", "per_input"):
            raise ValueError(f"unknown demod_mode {self.demod_mode!r}")

    @property
    def stride_factor(self) -> int:
        return 2 ** (self.num_scales - 1)

    @classmethod
    def toy(cls) -> "ModelConfig":
        """CPU-trainable default: exercises every mechanism at 64x64."""
        return cls()

    @classmethod
    def paper_scale(cls) -> "ModelConfig":
        """256x256 variant; provided for completeness, not CPU-friendly."""
        return cls(input_size=256, channels=(64, 128, 256, 512),
                   color_channels=(64, 128, 256, 512), resblocks_per_scale=2)

    def with_input_size(self, size: int) -> "ModelConfig":
        return replace(self, input_size=size)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines)

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        kwargs = {}
        types = {f.name: f.type for f in fields(cls)}
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            key, _, val = line.partition("=")
            if key not in types:
                raise ValueError(f"unknown model config key {key!r}")
            if key in ("channels", "color_channels"):
                kwargs[key] = tuple(int(x) for x in val.split(","))
            elif key in ("demod_eps", "style_scale"):
                kwargs[key] = float(val)
            elif key == "demod_mode":
                kwargs[key] = val
            else:
                kwargs[key] = int(val)
        return cls(**kwargs)


@dataclass(frozen=True)
class ColorEmbedding:
    """512-component summary of a reference image's colors."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).copy()
        if v.shape != (512,):
            raise ValueError(f"color embedding must have 512 components, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("color embedding contains non-finite values")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)


class ColorizerModel:
    """Assembled network with named parameters; seeded, deterministic init."""

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        rng = np.random.default_rng([seed, 0xC0108])
        ch = config.channels
        k = config.kernel
        n = config.num_scales

        self.content_stem = Conv2d(rng, 1, ch[0], k, dtype=dtype)
        self.content_down = [Conv2d(rng, ch[i - 1], ch[i], k, stride=2, dtype=dtype) for i in range(1, n)]
        self.content_res = [
            [ResBlock(rng, ch[i], k, dtype=dtype) for _ in range(config.resblocks_per_scale)]
            for i in range(n)
        ]

        cc = config.color_channels
        self.color_convs = [Conv2d(rng, 3 if i == 0 else cc[i - 1], cc[i], k, stride=2, dtype=dtype)
                            for i in range(len(cc))]
        self.color_mlp = Mlp(rng, (cc[-1], config.embed_dim, config.embed_dim), dtype=dtype)

        s = config.style_scale if config.style_scale > 0 else None
        self.dec_up = []
        self.dec_fuse = []
        self.dec_mod = []
        for i in range(n - 1):  # stage i consumes skip f_{i+1} at width ch[i]
            self.dec_up.append(Conv2d(rng, ch[i + 1], ch[i], k, dtype=dtype))
            self.dec_fuse.append(Conv2d(rng, 2 * ch[i], ch[i], k, dtype=dtype))
            self.dec_mod.append(ModulatedConv2d(rng, ch[i], ch[i], k, config.embed_dim,
                                                s=s, eps=config.demod_eps,
                                                mode=config.demod_mode, dtype=dtype))

        self.head = Conv2d(rng, ch[0], 2, k, dtype=dtype)
        # Damp the head so untrained chrominance starts near gray while
        # staying sensitive to the embedding.
        self.head.w = Tensor((self.head.w.data * 0.1).astype(dtype), requires_grad=True)

    # -- parameters -----------------------------------------------------

    def named_params(self) -> dict:
        out: dict[str, Tensor] = {}

        def take(pairs):
            for name, t in pairs:
                out[name] = t

        take(self.content_stem.params("content.stem"))
        for i, blocks in enumerate(self.content_res):
            for j, blk in enumerate(blocks):
                take(blk.params(f"content.res{i}_{j}"))
        for i, conv in enumerate(self.content_down):
            take(conv.params(f"content.down{i + 1}"))
        for i, conv in enumerate(self.color_convs):
            take(conv.params(f"color.conv{i}"))
        take(self.color_mlp.params("color.mlp"))
        for i in range(len(self.dec_up)):
            take(self.dec_up[i].params(f"dec.s{i}.up"))
            take(self.dec_fuse[i].params(f"dec.s{i}.fuse"))
            take(self.dec_mod[i].params(f"dec.s{i}.mod"))
        take(self.head.params("head"))
        return out

    def load_params(self, values: dict) -> None:
        params = self.named_params()
        missing = set(params) - set(values)
        extra = set(values) - set(params)
        if missing or extra:
            raise ValueError(f"parameter name mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
        for name, tensor in params.items():
            arr = np.asarray(values[name], dtype=self.dtype)
            if arr.shape != tensor.data.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} != {tensor.data.shape}")
            tensor.data = arr.copy()

    # -- tensor-level forwards (differentiable) ---------------------------

    def embed_reference_t(self, rgb01: Tensor) -> Tensor:
        """(N,3,H,W) RGB in [0,1] -> (N,512) embeddings."""
        x = rgb01 * 2.0 - 1.0
        for conv in self.color_convs:
            x = act(conv(x))
        return self.color_mlp(T.global_avg_pool(x))

    def content_pyramid_t(self, L_phys: Tensor) -> list:
        """(N,1,H,W) physical L -> features f_1..f_N, halving per scale."""
        h, w = L_phys.shape[2], L_phys.shape[3]
        sf = self.config.stride_factor
        if h % sf or w % sf:
            raise ValueError(f"input {h}x{w} not divisible by stride factor {sf}")
        x = L_phys * (1.0 / 50.0) - 1.0
        x = act(self.content_stem(x))
        for blk in self.content_res[0]:
            x = blk(x)
        feats = [x]
        for i, down in enumerate(self.content_down):
            x = act(down(x))
            for blk in self.content_res[i + 1]:
                x = blk(x)
            feats.append(x)
        return feats

    def decode_t(self, feats: list, z: Tensor) -> Tensor:
        """Pyramid + embeddings -> (N,2,H,W) chrominance in physical units."""
        if len(feats) != self.config.num_scales:
            raise ValueError(f"expected {self.config.num_scales} pyramid levels, got {len(feats)}")
        g = feats[-1]
        for i in reversed(range(self.config.num_scales - 1)):
            up = act(self.dec_up[i](T.upsample_nearest2x(g)))
            fused = act(self.dec_fuse[i](T.concat([up, feats[i]], axis=1)))
            g = act(self.dec_mod[i](fused, z))
        return T.tanh(self.head(g)) * AB_RANGE

    # -- image-level wrappers (inference) ---------------------------------

    def _check_size(self, h: int, w: int, what: str) -> None:
        s = self.config.input_size
        if (h, w) != (s, s):
            raise ValueError(f"{what} must be {s}x{s} for this model, got {h}x{w}")

    def encode_color(self, ref: RgbImage) -> ColorEmbedding:
        self._check_size(ref.height, ref.width, "reference image")
        x = Tensor(ref.pixels.transpose(2, 0, 1)[None].astype(self.dtype))
        with T.no_grad():
            z = self.embed_reference_t(x)
        return ColorEmbedding(z.data[0].astype(np.float64))

    def encode_content(self, target: GrayImage) -> list:
        self._check_size(target.height, target.width, "target image")
        x = Tensor(target.pixels[None, None].astype(self.dtype))
        with T.no_grad():
            feats = self.content_pyramid_t(x)
        return [f.data[0] for f in feats]

    def decode(self, pyramid: list, z: ColorEmbedding) -> np.ndarray:
        feats = [Tensor(np.asarray(f, dtype=self.dtype)[None]) for f in pyramid]
        zt = Tensor(z.values[None].astype(self.dtype))
        with T.no_grad():
            ab = self.decode_t(feats, zt)
        return ab.data[0]

    def colorize(self, target: GrayImage, ref: RgbImage) -> RgbImage:
        """Predict ab for the target against the reference; L is kept exactly."""
        self._check_size(target.height, target.width, "target image")
        self._check_size(ref.height, ref.width, "reference image")
        L_t = Tensor(target.pixels[None, None].astype(self.dtype))
        ref_t = Tensor(ref.pixels.transpose(2, 0, 1)[None].astype(self.dtype))
        with T.no_grad():
            ab = self.decode_t(self.content_pyramid_t(L_t), self.embed_reference_t(ref_t))
        ab_hwc = ab.data[0].transpose(1, 2, 0).astype(np.float64)
        return lab_to_rgb(compose_lab(target, ab_hwc))
