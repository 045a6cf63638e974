import numpy as np
import pytest

from oracles import linear_reference

from refcolor import tensor as T
from refcolor.tensor import Tensor, backward, grad_check
from refcolor.verify import conv2d_reference


# -- convolution ---------------------------------------------------------


def test_conv_identity_kernel():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 3, 5, 5))
    w = np.zeros((3, 3, 1, 1))
    for c in range(3):
        w[c, c, 0, 0] = 1.0
    out = T.conv2d(Tensor(x), Tensor(w)).data
    np.testing.assert_array_equal(out, x)


def test_conv_box_filter_on_constant():
    x = np.full((1, 1, 4, 4), 0.9)
    w = np.full((1, 1, 3, 3), 1.0 / 9.0)
    out = T.conv2d(Tensor(x), Tensor(w), pad=1).data
    want = conv2d_reference(x, w, None, 1, 1)
    np.testing.assert_allclose(out, want, atol=1e-12)
    # Interior keeps the constant; zero padding attenuates the border.
    np.testing.assert_allclose(out[0, 0, 1:-1, 1:-1], 0.9, atol=1e-12)
    assert out[0, 0, 0, 0] == pytest.approx(0.9 * 4 / 9, abs=1e-12)


def test_conv_matches_naive_oracle_randomized():
    rng = np.random.default_rng(1)
    for _ in range(15):
        k = int(rng.choice([1, 3, 5]))
        stride = int(rng.choice([1, 2, 3]))
        pad = int(rng.integers(0, 3))
        cin, cout, n = (int(rng.integers(1, 4)) for _ in range(3))
        h = int(rng.integers(k, k + 6))
        x = rng.standard_normal((n, cin, h, h))
        w = rng.standard_normal((cout, cin, k, k))
        b = rng.standard_normal(cout)
        got = T.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, pad=pad).data
        want = conv2d_reference(x, w, b, stride, pad)
        np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-10)


def test_conv_per_sample_weights_match_loop():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((3, 2, 6, 6))
    w = rng.standard_normal((3, 4, 2, 3, 3))
    got = T.conv2d(Tensor(x), Tensor(w), stride=1, pad=1).data
    for i in range(3):
        want = conv2d_reference(x[i : i + 1], w[i], None, 1, 1)
        np.testing.assert_allclose(got[i : i + 1], want, rtol=1e-6, atol=1e-10)


def test_conv_shape_errors():
    x = Tensor(np.zeros((1, 2, 4, 4)))
    with pytest.raises(ValueError):
        T.conv2d(x, Tensor(np.zeros((1, 3, 3, 3))))  # channel mismatch
    with pytest.raises(ValueError):
        T.conv2d(x, Tensor(np.zeros((1, 2, 2, 2))))  # even kernel
    with pytest.raises(ValueError):
        T.conv2d(x, Tensor(np.zeros((2, 1, 2, 3, 3))))  # wrong batch


def test_conv_chunked_path_matches_direct():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((1, 2, 16, 16)).astype(np.float32)
    w = rng.standard_normal((3, 2, 3, 3)).astype(np.float32)
    direct = T.conv2d(Tensor(x), Tensor(w), pad=1).data
    old = T._CONV_CHUNK_ELEMS
    T._CONV_CHUNK_ELEMS = 64  # force row chunking
    try:
        chunked = T.conv2d(Tensor(x), Tensor(w), pad=1).data
    finally:
        T._CONV_CHUNK_ELEMS = old
    np.testing.assert_array_equal(direct, chunked)


# -- linear and elementwise ----------------------------------------------


def test_linear_identity_and_zero():
    x = np.random.default_rng(4).standard_normal((3, 4))
    out = T.linear(Tensor(x), Tensor(np.eye(4)), Tensor(np.zeros(4))).data
    np.testing.assert_array_equal(out, x)
    b = np.array([1.0, -2.0])
    out = T.linear(Tensor(np.zeros((3, 5))), Tensor(np.zeros((5, 2))), Tensor(b)).data
    np.testing.assert_array_equal(out, np.tile(b, (3, 1)))


def test_linear_matches_nested_loop():
    rng = np.random.default_rng(5)
    x, w, b = rng.standard_normal((4, 3)), rng.standard_normal((3, 5)), rng.standard_normal(5)
    got = T.linear(Tensor(x), Tensor(w), Tensor(b)).data
    np.testing.assert_allclose(got, linear_reference(x, w, b), rtol=1e-6, atol=1e-12)


def test_elementwise_values():
    x = Tensor(np.array([-1.0, 0.0, 2.0]))
    np.testing.assert_array_equal(x.relu().data, [0.0, 0.0, 2.0])
    np.testing.assert_array_equal(x.leaky_relu(0.2).data, [-0.2, 0.0, 2.0])
    assert T.tanh(Tensor(np.zeros(1))).data[0] == 0.0
    np.testing.assert_array_equal(x.abs().data, [1.0, 0.0, 2.0])
    np.testing.assert_array_equal(x.clamp(-0.5, 1.0).data, [-0.5, 0.0, 1.0])


def test_structure_ops():
    up = T.upsample_nearest2x(Tensor(np.array([[[[3.0]]]]))).data
    np.testing.assert_array_equal(up, np.full((1, 1, 2, 2), 3.0))
    a, b = Tensor(np.ones((1, 2, 2, 2))), Tensor(np.zeros((1, 3, 2, 2)))
    cat = T.concat([a, b], axis=1)
    np.testing.assert_array_equal(T.narrow(cat, 1, 0, 2).data, a.data)
    np.testing.assert_array_equal(T.narrow(cat, 1, 2, 3).data, b.data)
    pooled = T.global_avg_pool(Tensor(np.full((2, 3, 4, 4), 1.25))).data
    np.testing.assert_allclose(pooled, 1.25)


def test_scalar_ops_preserve_dtype():
    x = Tensor(np.ones((2, 2), dtype=np.float32))
    for expr in (x * 2.0, x + 1.0, x - 1.0, x / 2.0, -x, 2.0 - x, 1.0 / x, x**2):
        assert expr.dtype == np.float32


# -- backward engine -----------------------------------------------------


def test_backward_sum_gives_ones():
    x = Tensor(np.random.default_rng(6).standard_normal((3, 4)), requires_grad=True)
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_backward_quadratic():
    x = Tensor(np.random.default_rng(7).standard_normal(5), requires_grad=True)
    (x * x).sum().backward()
    np.testing.assert_allclose(x.grad, 2 * x.data, rtol=1e-12)


def test_gradient_accumulates_over_reuse():
    rng = np.random.default_rng(8)
    base = rng.standard_normal(4)
    c1, c2 = Tensor(rng.standard_normal(4)), Tensor(rng.standard_normal(4))
    x = Tensor(base.copy(), requires_grad=True)
    ((x * c1).sum() + (x * c2).sum()).backward()
    # Duplicated-input construction: each copy carries one path's gradient.
    xa = Tensor(base.copy(), requires_grad=True)
    xb = Tensor(base.copy(), requires_grad=True)
    ((xa * c1).sum() + (xb * c2).sum()).backward()
    np.testing.assert_allclose(x.grad, xa.grad + xb.grad, rtol=1e-12)


def test_backward_requires_scalar():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ValueError):
        backward(x * 2.0)


def test_ops_do_not_mutate_inputs():
    rng = np.random.default_rng(9)
    x = rng.standard_normal((2, 2, 4, 4))
    w = rng.standard_normal((3, 2, 3, 3))
    xt, wt = Tensor(x.copy(), requires_grad=True), Tensor(w.copy(), requires_grad=True)
    out = T.conv2d(xt.relu() * 2.0, wt, pad=1)
    out.sum().backward()
    np.testing.assert_array_equal(xt.data, x)
    np.testing.assert_array_equal(wt.data, w)


def test_no_grad_blocks_recording():
    x = Tensor(np.ones(3), requires_grad=True)
    with T.no_grad():
        y = x * 2.0
    assert not y.requires_grad and y._backward is None


def test_check_finite_flag():
    T.check_finite = True
    try:
        with np.errstate(divide="ignore"), pytest.raises(FloatingPointError):
            Tensor(np.array([1.0])) / Tensor(np.array([0.0]))
    finally:
        T.check_finite = False


# -- finite-difference gradient checks ------------------------------------


def test_grad_check_exact_for_linear():
    # Central differences are exact for linear f at any eps; a larger eps
    # keeps the difference quotient clear of float cancellation noise.
    x = Tensor(np.random.default_rng(10).standard_normal(6))
    assert grad_check(lambda t: t.sum(), [x], eps=1e-2) < 1e-12


@pytest.mark.parametrize(
    "builder",
    [
        lambda rng: (lambda p: (p.tanh() * p).sum(), [Tensor(rng.standard_normal((3, 3)))]),
        lambda rng: (lambda p: ((p**2.5) * 0.5).sum(), [Tensor(rng.uniform(0.5, 2, (3, 3)))]),
        lambda rng: (
            lambda p, q, _mask=rng.standard_normal((3, 3)) > 0: T.where(_mask, p * q, p - q).sum(),
            [Tensor(rng.standard_normal((3, 3))), Tensor(rng.standard_normal((3, 3)))],
        ),
        lambda rng: (
            lambda p: T.upsample_nearest2x(p).clamp(-0.8, 0.8).sum(),
            [Tensor(rng.uniform(-0.5, 0.5, (1, 2, 3, 3)))],
        ),
        lambda rng: (
            lambda p: (p.sum(axis=0, keepdims=True) * p).mean(),
            [Tensor(rng.standard_normal((4, 3)))],
        ),
        lambda rng: (
            lambda p, w: T.conv2d(p, w, stride=2, pad=1).tanh().sum(),
            [Tensor(rng.standard_normal((2, 2, 6, 6))), Tensor(rng.standard_normal((3, 2, 3, 3)))],
        ),
        lambda rng: (
            lambda p, w: T.conv2d(p, w, pad=1).sum(),
            [Tensor(rng.standard_normal((2, 1, 4, 4))), Tensor(rng.standard_normal((2, 3, 1, 3, 3)))],
        ),
    ],
)
def test_grad_check_composites(builder):
    # Mask in the `where` case is fixed noise; inputs avoid non-smooth points.
    f, inputs = builder(np.random.default_rng(11))
    assert grad_check(f, inputs) < 1e-4


def test_grad_check_catches_broken_backward(monkeypatch):
    def bad_tanh(a):
        t = np.tanh(a.data)

        def backward_fn(g):
            return (g * 0.5,)  # wrong rule

        return T._make(t, (a,), backward_fn)

    monkeypatch.setattr(T, "tanh", bad_tanh)
    x = Tensor(np.random.default_rng(12).standard_normal(4))
    assert grad_check(lambda p: T.tanh(p).sum(), [x]) > 1e-2
