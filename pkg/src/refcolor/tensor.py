"""Dense tensors with reverse-mode automatic differentiation.

Forward operations record their inputs and a backward rule on the result
node; the recorded graph is the tape.  ``backward`` walks it once in
reverse topological order and accumulates gradients additively into every
leaf that requires them.  Only the operation set the colorization model
needs is provided; kernels are numpy-backed (convolution via im2col and
BLAS matmul) and single-threaded at the Python level.

Images follow the (batch, channel, height, width) layout throughout.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

_grad_enabled = True

# When set, every forward op asserts its result is finite (slow; used by
# the verification suite and available for debugging runs).
check_finite = False


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """N-dimensional float array, optionally participating in the tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        return float(self.data)

    # -- arithmetic ---------------------------------------------------
    # Python/numpy scalars take a dedicated path that preserves the
    # tensor's dtype (wrapping them as arrays would promote float32
    # graphs to float64 under NEP 50).

    def __add__(self, other):
        if isinstance(other, _SCALARS):
            return add_scalar(self, float(other))
        return add(self, other)

    def __radd__(self, other):
        return self.__add__(other)

    def __sub__(self, other):
        if isinstance(other, _SCALARS):
            return add_scalar(self, -float(other))
        return sub(self, other)

    def __rsub__(self, other):
        if isinstance(other, _SCALARS):
            return add_scalar(mul_scalar(self, -1.0), float(other))
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, _SCALARS):
            return mul_scalar(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, _SCALARS):
            return mul_scalar(self, 1.0 / float(other))
        return div(self, other)

    def __rtruediv__(self, other):
        if isinstance(other, _SCALARS):
            return mul_scalar(pow_const(self, -1), float(other))
        return div(other, self)

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def __pow__(self, p):
        return pow_const(self, p)

    # -- shape and reduction ------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return sum_over(self, axis=axis, keepdims=keepdims)

    def mean(self) -> "Tensor":
        return self.sum() * (1.0 / self.data.size)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    # -- activations ---------------------------------------------------

    def relu(self) -> "Tensor":
        return relu(self)

    def leaky_relu(self, alpha: float = 0.2) -> "Tensor":
        return leaky_relu(self, alpha)

    def tanh(self) -> "Tensor":
        return tanh(self)

    def abs(self) -> "Tensor":
        return abs_val(self)

    def clamp(self, lo=None, hi=None) -> "Tensor":
        return clamp(self, lo, hi)

    def backward(self, free_graph: bool = True) -> None:
        backward(self, free_graph=free_graph)


_SCALARS = (int, float, np.floating, np.integer)


def _make(data, parents, backward_fn) -> Tensor:
    if check_finite and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite value produced by forward op")
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def add_scalar(a: Tensor, c: float) -> Tensor:
    def backward_fn(g):
        return (g,)

    return _make(a.data + c, (a,), backward_fn)


def mul_scalar(a: Tensor, c: float) -> Tensor:
    def backward_fn(g):
        return (g * c,)

    return _make(a.data * c, (a,), backward_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _coerce(a), _coerce(b)

    def backward_fn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(a.data + b.data, (a, b), backward_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _coerce(a), _coerce(b)

    def backward_fn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _make(a.data - b.data, (a, b), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _coerce(a), _coerce(b)

    def backward_fn(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _make(a.data * b.data, (a, b), backward_fn)


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = _coerce(a), _coerce(b)

    def backward_fn(g):
        return (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        )

    return _make(a.data / b.data, (a, b), backward_fn)


def pow_const(a: Tensor, p: float) -> Tensor:
    # Non-integer p requires positive base; integer p works on any sign.
    def backward_fn(g):
        return (g * p * a.data ** (p - 1),)

    return _make(a.data**p, (a,), backward_fn)


def relu(a: Tensor) -> Tensor:
    # Subgradient 0 at the kink.
    def backward_fn(g):
        return (g * (a.data > 0),)

    return _make(np.maximum(a.data, 0), (a,), backward_fn)


def leaky_relu(a: Tensor, alpha: float = 0.2) -> Tensor:
    def backward_fn(g):
        return (g * np.where(a.data > 0, 1.0, alpha).astype(a.data.dtype),)

    return _make(np.where(a.data > 0, a.data, alpha * a.data), (a,), backward_fn)


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)

    def backward_fn(g):
        return (g * (1.0 - t * t),)

    return _make(t, (a,), backward_fn)


def abs_val(a: Tensor) -> Tensor:
    def backward_fn(g):
        return (g * np.sign(a.data),)

    return _make(np.abs(a.data), (a,), backward_fn)


def clamp(a: Tensor, lo=None, hi=None) -> Tensor:
    # Gradient passes on the closed interval [lo, hi]: at a clamp boundary
    # the interior (linear) side's derivative is used.
    def backward_fn(g):
        mask = np.ones_like(a.data, dtype=bool)
        if lo is not None:
            mask &= a.data >= lo
        if hi is not None:
            mask &= a.data <= hi
        return (g * mask,)

    return _make(np.clip(a.data, lo, hi), (a,), backward_fn)


def where(mask: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    """Elementwise select by a constant boolean mask (mask gets no gradient)."""
    mask = np.asarray(mask, dtype=bool)

    def backward_fn(g):
        return (
            _unbroadcast(g * mask, a.data.shape),
            _unbroadcast(g * ~mask, b.data.shape),
        )

    return _make(np.where(mask, a.data, b.data), (a, b), backward_fn)


# ---------------------------------------------------------------------
# reductions and shape
# ---------------------------------------------------------------------


def sum_over(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is not None and not isinstance(axis, tuple):
        axis = (axis,)

    def backward_fn(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward_fn)


def reshape(a: Tensor, shape) -> Tensor:
    def backward_fn(g):
        return (g.reshape(a.data.shape),)

    return _make(a.data.reshape(shape), (a,), backward_fn)


def concat(tensors, axis: int) -> Tensor:
    tensors = list(tensors)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g):
        return tuple(
            np.take(g, range(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(tensors))
        )

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward_fn)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    if start < 0 or start + length > a.data.shape[axis]:
        raise ValueError(f"narrow [{start}:{start + length}] out of bounds on axis {axis} of {a.data.shape}")
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)

    def backward_fn(g):
        out = np.zeros_like(a.data)
        out[index] = g
        return (out,)

    return _make(a.data[index].copy(), (a,), backward_fn)


def upsample_nearest2x(a: Tensor) -> Tensor:
    if a.data.ndim != 4:
        raise ValueError(f"upsample_nearest2x expects (N,C,H,W), got {a.data.shape}")
    n, c, h, w = a.data.shape

    def backward_fn(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _make(a.data.repeat(2, axis=2).repeat(2, axis=3), (a,), backward_fn)


def global_avg_pool(a: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C) spatial mean."""
    if a.data.ndim != 4:
        raise ValueError(f"global_avg_pool expects (N,C,H,W), got {a.data.shape}")
    n, c, h, w = a.data.shape

    def backward_fn(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), a.data.shape),)

    return _make(a.data.mean(axis=(2, 3)), (a,), backward_fn)


# ---------------------------------------------------------------------
# linear and convolution
# ---------------------------------------------------------------------


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map: x (N, D) @ w (D, E) + b (E)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ValueError(f"linear shape mismatch: x {x.data.shape}, w {w.data.shape}")
    out = x.data @ w.data
    if b is not None:
        if b.data.shape != (w.data.shape[1],):
            raise ValueError(f"linear bias shape {b.data.shape} != ({w.data.shape[1]},)")
        out = out + b.data

    def backward_fn(g):
        grads = [g @ w.data.T, x.data.T @ g]
        if b is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, backward_fn)


# im2col buffers above this size (elements) are processed in row chunks
# during forward-only evaluation to bound peak memory at large resolutions.
_CONV_CHUNK_ELEMS = 1 << 26


def _im2col(xp: np.ndarray, k: int, stride: int, oh: int, ow: int) -> np.ndarray:
    n, c = xp.shape[:2]
    cols = np.empty((n, c, k, k, oh, ow), dtype=xp.dtype)
    for ki in range(k):
        for kj in range(k):
            cols[:, :, ki, kj] = xp[:, :, ki : ki + stride * oh : stride, kj : kj + stride * ow : stride]
    return cols.reshape(n, c * k * k, oh * ow)


def _col2im(dcols: np.ndarray, xshape, k: int, stride: int, pad: int, oh: int, ow: int) -> np.ndarray:
    n, c, h, w = xshape
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=dcols.dtype)
    d6 = dcols.reshape(n, c, k, k, oh, ow)
    for ki in range(k):
        for kj in range(k):
            dxp[:, :, ki : ki + stride * oh : stride, kj : kj + stride * ow : stride] += d6[:, :, ki, kj]
    if pad:
        return dxp[:, :, pad : pad + h, pad : pad + w]
    return dxp


def _conv_geometry(xshape, wshape, stride, pad):
    if len(xshape) != 4:
        raise ValueError(f"conv2d input must be (N,C,H,W), got {xshape}")
    if len(wshape) == 4:
        cout, cin, k, k2 = wshape
    elif len(wshape) == 5:
        nb, cout, cin, k, k2 = wshape
        if nb != xshape[0]:
            raise ValueError(f"per-sample weights batch {nb} != input batch {xshape[0]}")
    else:
        raise ValueError(f"conv2d weights must be 4-d or 5-d, got {wshape}")
    if k != k2 or k % 2 == 0:
        raise ValueError(f"conv2d kernel must be square with odd size, got {k}x{k2}")
    if cin != xshape[1]:
        raise ValueError(f"conv2d channel mismatch: input {xshape[1]}, weights {cin}")
    n, _, h, w = xshape
    if h + 2 * pad < k or w + 2 * pad < k:
        raise ValueError(f"conv2d input {h}x{w} smaller than kernel {k} at pad {pad}")
    # Floor output arithmetic (the deep-learning convention): windows that
    # do not fit at the bottom/right are dropped, so stride-2 stages halve
    # even sizes exactly.
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    return n, cout, cin, k, oh, ow


def _conv_forward(xd: np.ndarray, wd: np.ndarray, stride: int, pad: int, oh: int, ow: int):
    """Returns (out, cols); cols is None when the row-chunked path ran."""
    n, c = xd.shape[:2]
    k = wd.shape[-1]
    cout = wd.shape[-4]
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd
    w2 = wd.reshape(-1, cout, c * k * k) if wd.ndim == 5 else wd.reshape(cout, c * k * k)

    if n * c * k * k * oh * ow <= _CONV_CHUNK_ELEMS:
        cols = _im2col(xp, k, stride, oh, ow)
        return np.matmul(w2, cols).reshape(n, cout, oh, ow), cols

    # Row-chunked evaluation: slice output rows, im2col the matching input band.
    out = np.empty((n, cout, oh, ow), dtype=xd.dtype)
    rows = max(1, _CONV_CHUNK_ELEMS // (n * c * k * k * ow))
    for r0 in range(0, oh, rows):
        r1 = min(r0 + rows, oh)
        band = xp[:, :, r0 * stride : (r1 - 1) * stride + k, :]
        cols = _im2col(band, k, stride, r1 - r0, ow)
        out[:, :, r0:r1, :] = np.matmul(w2, cols).reshape(n, cout, r1 - r0, ow)
    return out, None


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-d cross-correlation.

    ``w`` is (Cout, Cin, K, K) for shared weights or (N, Cout, Cin, K, K)
    for per-sample weights (one kernel bank per batch element, as produced
    by weight modulation).  ``bias`` is (Cout,), shared across the batch.
    """
    n, cout, cin, k, oh, ow = _conv_geometry(x.data.shape, w.data.shape, stride, pad)
    out, saved_cols = _conv_forward(x.data, w.data, stride, pad, oh, ow)
    if bias is not None:
        if bias.data.shape != (cout,):
            raise ValueError(f"conv2d bias shape {bias.data.shape} != ({cout},)")
        out = out + bias.data[None, :, None, None]

    def backward_fn(g):
        per_sample = w.data.ndim == 5
        gg = g.reshape(n, cout, oh * ow)
        cols = saved_cols
        if cols is None:  # chunked forward; rebuild once for the backward pass
            xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
            cols = _im2col(xp, k, stride, oh, ow)
        w2 = w.data.reshape(n, cout, cin * k * k) if per_sample else w.data.reshape(cout, cin * k * k)
        dw = np.matmul(gg, cols.transpose(0, 2, 1))
        if not per_sample:
            dw = dw.sum(axis=0)
        dcols = np.matmul(w2.transpose(0, 2, 1) if per_sample else w2.T, gg)
        dx = _col2im(dcols, x.data.shape, k, stride, pad, oh, ow)
        grads = [dx, dw.reshape(w.data.shape)]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    parents = (x, w) if bias is None else (x, w, bias)
    return _make(out, parents, backward_fn)


# ---------------------------------------------------------------------
# backward engine
# ---------------------------------------------------------------------


def backward(loss: Tensor, free_graph: bool = True) -> None:
    """Populate ``grad`` on every requires_grad leaf reachable from ``loss``.

    Gradients accumulate additively across uses of a tensor; existing leaf
    grads are accumulated into, not replaced.  With ``free_graph`` the tape
    is torn down as it is consumed (the default for training steps).
    """
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar, got shape {loss.data.shape}")

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is None or node.grad is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node._parents, grads):
            if parent.requires_grad and g is not None:
                if parent.grad is None:
                    # own copy: g may alias node.grad or a broadcast view
                    parent.grad = np.array(g)
                else:
                    parent.grad += g
        if free_graph:
            node._backward = None
            node._parents = ()
        if node is not loss:
            node.grad = None


def grad_check(f, inputs, eps: float = 1e-5) -> float:
    """Max relative error between autodiff and central finite differences.

    ``f`` maps the input tensors to a scalar Tensor; inputs should be
    float64 leaves.  Relative error per coordinate is
    |a - n| / max(|a|, |n|, 1e-8).  Inputs are restored on return.
    """
    if isinstance(inputs, Tensor):
        inputs = [inputs]
    for t in inputs:
        t.grad = None
        t.requires_grad = True
    out = f(*inputs)
    backward(out)
    worst = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        aflat = analytic.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            with no_grad():
                flat[i] = orig + eps
                f_plus = float(f(*inputs).data)
                flat[i] = orig - eps
                f_minus = float(f(*inputs).data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = float(aflat[i])
            worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), 1e-8))
    return worst
