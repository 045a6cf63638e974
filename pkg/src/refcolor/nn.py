"""Neural layers: plain conv stacks plus the color-modulated convolution.

The modulated block is the mechanism that injects a color embedding into
the decoder.  A learned linear map projects the 512-vector to one scale
factor per input channel; the base kernel is multiplied by those factors
(times a constant ``s``), then rescaled so each output channel's weight
vector has unit L2 norm (up to ``eps``), and only then convolved with the
features.  The normalization makes the convolution respond to the
*direction* of the modulated weights, not their magnitude.

Layers hold parameters as Tensors and are callable on Tensors; every
forward is pure and deterministic given the parameters.
"""

from __future__ import annotations

import numpy as np

from refcolor import tensor as T
from refcolor.tensor import Tensor

LEAKY_ALPHA = 0.2


def act(x: Tensor) -> Tensor:
    return T.leaky_relu(x, LEAKY_ALPHA)


class Conv2d:
    """Convolution layer with He-normal weights and zero bias."""

    def __init__(self, rng: np.random.Generator, cin: int, cout: int, k: int = 3,
                 stride: int = 1, dtype=np.float32):
        std = np.sqrt(2.0 / (cin * k * k))
        self.w = Tensor(rng.normal(0.0, std, size=(cout, cin, k, k)).astype(dtype), requires_grad=True)
        self.b = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)
        self.stride = stride
        self.pad = k // 2

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.w, self.b, stride=self.stride, pad=self.pad)

    def params(self, prefix: str):
        yield f"{prefix}.w", self.w
        yield f"{prefix}.b", self.b


class Linear:
    def __init__(self, rng: np.random.Generator, din: int, dout: int, dtype=np.float32,
                 w_std: float | None = None, b_init: float = 0.0):
        std = np.sqrt(1.0 / din) if w_std is None else w_std
        self.w = Tensor(rng.normal(0.0, std, size=(din, dout)).astype(dtype), requires_grad=True)
        self.b = Tensor(np.full(dout, b_init, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.w, self.b)

    def params(self, prefix: str):
        yield f"{prefix}.w", self.w
        yield f"{prefix}.b", self.b


class Mlp:
    """Chain of linear layers with activations between; final layer linear."""

    def __init__(self, rng: np.random.Generator, widths: tuple, dtype=np.float32):
        self.layers = [Linear(rng, widths[i], widths[i + 1], dtype) for i in range(len(widths) - 1)]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i + 1 < len(self.layers):
                x = act(x)
        return x

    def params(self, prefix: str):
        for i, layer in enumerate(self.layers):
            yield from layer.params(f"{prefix}.{i}")


class ResBlock:
    """x + conv(act(conv(act(x)))), channel-preserving."""

    def __init__(self, rng: np.random.Generator, channels: int, k: int = 3, dtype=np.float32):
        self.conv1 = Conv2d(rng, channels, channels, k, dtype=dtype)
        self.conv2 = Conv2d(rng, channels, channels, k, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return x + self.conv2(act(self.conv1(act(x))))

    def params(self, prefix: str):
        yield from self.conv1.params(f"{prefix}.conv1")
        yield from self.conv2.params(f"{prefix}.conv2")


def modulate(w: Tensor, s: float, sigma: Tensor) -> Tensor:
    """Scale a (Cout, Cin, K, K) kernel per input channel and sample.

    ``sigma`` is (N, Cin); the result is a per-sample weight bank
    (N, Cout, Cin, K, K) with entries w[j,i,k1,k2] * s * sigma[n,i].
    """
    cout, cin, k, _ = w.shape
    if sigma.shape[-1] != cin:
        raise ValueError(f"sigma trailing dim {sigma.shape[-1]} != input channels {cin}")
    n = sigma.shape[0]
    return w.reshape(1, cout, cin, k, k) * (sigma * s).reshape(n, 1, cin, 1, 1)


def demodulate(w_mod: Tensor, eps: float, mode: str = "per_output") -> Tensor:
    """Rescale modulated weights to unit L2 norm per output channel.

    Accepts (Cout, Cin, K, K) or batched (N, Cout, Cin, K, K) weights.
    ``per_output`` divides each output channel's coefficients by
    sqrt(sum over (Cin, K, K) of w^2 + eps) — exactly unit norm at eps=0.
    ``per_input`` instead normalizes over everything except the input
    channel dimension (alternative reading; not the default).
    """
    base = w_mod.data.ndim - 4
    if base not in (0, 1):
        raise ValueError(f"expected 4-d or 5-d weights, got {w_mod.shape}")
    if mode == "per_output":
        axes = (base + 1, base + 2, base + 3)
    elif mode == "per_input":
        axes = (base, base + 2, base + 3)
    else:
        raise ValueError(f"unknown demodulation mode {mode!r}")
    norm_sq = (w_mod * w_mod).sum(axis=axes, keepdims=True)
    return w_mod * (norm_sq + eps) ** -0.5


class ModulatedConv2d:
    """Convolution whose weights are steered by a color embedding.

    The embedding-to-scale projection starts at the identity (bias 1,
    small random weights) so early training behaves like a plain conv.
    ``s`` defaults to the fan-in normalizer 1/sqrt(Cin * K^2).
    """

    def __init__(self, rng: np.random.Generator, cin: int, cout: int, k: int = 3,
                 embed_dim: int = 512, s: float | None = None, eps: float = 1e-8,
                 mode: str = "per_output", dtype=np.float32):
        self.w = Tensor(rng.normal(0.0, 1.0, size=(cout, cin, k, k)).astype(dtype), requires_grad=True)
        self.style = Linear(rng, embed_dim, cin, dtype, w_std=0.01, b_init=1.0)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)
        self.s = float(s) if s is not None else 1.0 / np.sqrt(cin * k * k)
        self.eps = eps
        self.mode = mode
        self.pad = k // 2

    def __call__(self, d: Tensor, z: Tensor) -> Tensor:
        sigma = self.style(z)
        w_final = demodulate(modulate(self.w, self.s, sigma), self.eps, self.mode)
        return T.conv2d(d, w_final, self.bias, stride=1, pad=self.pad)

    def params(self, prefix: str):
        yield f"{prefix}.w", self.w
        yield from self.style.params(f"{prefix}.style")
        yield f"{prefix}.bias", self.bias
