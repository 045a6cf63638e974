import numpy as np
import pytest

from refcolor import tensor as T
from refcolor.nn import Conv2d, Mlp, ModulatedConv2d, ResBlock, demodulate, modulate
from refcolor.tensor import Tensor, grad_check


def test_modulate_identity_and_zero():
    w = Tensor(np.random.default_rng(0).standard_normal((4, 3, 3, 3)))
    ones = Tensor(np.ones((2, 3)))
    out = modulate(w, 1.0, ones).data
    np.testing.assert_array_equal(out[0], w.data)
    np.testing.assert_array_equal(out[1], w.data)
    np.testing.assert_array_equal(modulate(w, 1.0, Tensor(np.zeros((2, 3)))).data, 0.0)


def test_modulate_direct_formula():
    w = Tensor(np.ones((1, 2, 1, 1)))
    sigma = Tensor(np.array([[1.0, 3.0]]))
    out = modulate(w, 2.0, sigma).data
    np.testing.assert_array_equal(out.ravel(), [2.0, 6.0])


def test_demodulate_unit_weight():
    w = Tensor(np.ones((1, 1, 1, 1)))
    np.testing.assert_allclose(demodulate(w, eps=0.0).data, 1.0, atol=1e-12)


def test_demodulate_scale_invariance():
    rng = np.random.default_rng(1)
    w = Tensor(rng.standard_normal((4, 3, 3, 3)))
    base = demodulate(w, eps=0.0).data
    for c in (0.5, 2.0, 10.0):
        scaled = demodulate(Tensor(w.data * c), eps=0.0).data
        np.testing.assert_allclose(scaled, base, atol=1e-12)


def test_demodulate_output_norms():
    rng = np.random.default_rng(2)
    for _ in range(20):
        w = Tensor(rng.standard_normal((2, 5, 4, 3, 3)))
        out = demodulate(w, eps=1e-8).data
        norms = np.sqrt((out**2).sum(axis=(2, 3, 4)))
        assert np.abs(norms - 1.0).max() < 1e-6


def test_demodulate_per_input_mode():
    rng = np.random.default_rng(3)
    w = Tensor(rng.standard_normal((5, 4, 3, 3)))
    out = demodulate(w, eps=0.0, mode="per_input").data
    norms = np.sqrt((out**2).sum(axis=(0, 2, 3)))  # per input channel
    np.testing.assert_allclose(norms, 1.0, atol=1e-9)


def test_modulated_conv_identity_configuration():
    # Style projection forced to all-ones, 1x1 base kernel: demodulated
    # weight is exactly 1, so the block is the identity plus bias.
    block = ModulatedConv2d(np.random.default_rng(4), 1, 1, k=1, embed_dim=512, s=1.0, eps=0.0)
    block.w.data = np.ones((1, 1, 1, 1), dtype=np.float32)
    block.style.w.data = np.zeros_like(block.style.w.data)
    block.style.b.data = np.ones_like(block.style.b.data)
    d = Tensor(np.random.default_rng(5).standard_normal((2, 1, 5, 5)).astype(np.float32))
    z = Tensor(np.random.default_rng(6).standard_normal((2, 512)).astype(np.float32))
    out = block(d, z).data
    np.testing.assert_allclose(out, d.data, atol=1e-6)


def test_modulated_conv_matches_decomposition_oracle():
    rng = np.random.default_rng(7)
    block = ModulatedConv2d(np.random.default_rng(8), 3, 4, k=3, embed_dim=512, dtype=np.float64)
    d = Tensor(rng.standard_normal((2, 3, 6, 6)))
    z = Tensor(rng.standard_normal((2, 512)))
    fused = block(d, z).data
    # Two-step oracle: precompute the demodulated weights, then convolve.
    sigma = block.style(z)
    w_final = demodulate(modulate(block.w, block.s, sigma), block.eps)
    explicit = T.conv2d(d, w_final, block.bias, stride=1, pad=1).data
    np.testing.assert_allclose(fused, explicit, atol=1e-12)


def test_modulated_conv_positive_scale_invariance():
    rng = np.random.default_rng(9)
    w = Tensor(rng.standard_normal((4, 3, 3, 3)))
    sigma = Tensor(rng.uniform(0.5, 2.0, (2, 3)))
    d = Tensor(rng.standard_normal((2, 3, 5, 5)))

    def out_for(scale, eps):
        wf = demodulate(modulate(w, 1.0, sigma * scale), eps=eps)
        return T.conv2d(d, wf, pad=1).data

    base = out_for(1.0, 0.0)
    deviations = {}
    for eps in (0.0, 1e-8, 1e-4, 1e-2):
        dev = 0.0
        for c in (0.5, 2.0, 10.0):
            dev = max(dev, float(np.abs(out_for(c, eps) - base).max()))
        deviations[eps] = dev
    assert deviations[0.0] < 1e-12
    # With eps > 0 the deviation is bounded and grows monotonically in eps.
    assert deviations[0.0] <= deviations[1e-8] <= deviations[1e-4] <= deviations[1e-2]
    assert deviations[1e-2] < 1.0


def test_modulated_conv_gradcheck():
    rng = np.random.default_rng(10)
    block = ModulatedConv2d(np.random.default_rng(11), 2, 3, k=3, embed_dim=512, dtype=np.float64)
    # Healthy style-weight magnitudes keep the z gradient clear of the
    # finite-difference noise floor (the near-identity init makes it tiny).
    block.style.w.data = rng.normal(0.0, 0.1, size=block.style.w.data.shape)
    d = Tensor(rng.standard_normal((1, 2, 4, 4)))
    z = Tensor(rng.standard_normal((1, 512)) * 0.1)
    probe = Tensor(rng.standard_normal((1, 3, 4, 4)))
    err = grad_check(lambda p, q, w_: (T.conv2d(p, demodulate(modulate(w_, block.s, block.style(q)), block.eps), block.bias, pad=1) * probe).sum(),
                     [d, z, block.w])
    assert err < 1e-4


def test_resblock_zero_weights_is_identity():
    blk = ResBlock(np.random.default_rng(12), 3, dtype=np.float64)
    blk.conv2.w.data = np.zeros_like(blk.conv2.w.data)
    blk.conv2.b.data = np.zeros_like(blk.conv2.b.data)
    x = Tensor(np.random.default_rng(13).standard_normal((2, 3, 5, 5)))
    np.testing.assert_array_equal(blk(x).data, x.data)


def test_resblock_shape_and_gradcheck():
    blk = ResBlock(np.random.default_rng(14), 2, dtype=np.float64)
    x = Tensor(np.random.default_rng(15).standard_normal((1, 2, 6, 6)))
    assert blk(x).shape == x.shape
    assert grad_check(lambda p: blk(p).tanh().sum(), [x]) < 1e-4


def test_mlp_identity_zero_and_oracle():
    mlp = Mlp(np.random.default_rng(16), (3, 3), dtype=np.float64)
    mlp.layers[0].w.data = np.eye(3)
    mlp.layers[0].b.data = np.zeros(3)
    x = np.random.default_rng(17).standard_normal((4, 3))
    np.testing.assert_array_equal(mlp(Tensor(x)).data, x)

    mlp2 = Mlp(np.random.default_rng(18), (3, 5, 2), dtype=np.float64)
    zero_out = mlp2(Tensor(np.zeros((2, 3)))).data
    # Zero input propagates the bias chain.
    hidden = np.where(mlp2.layers[0].b.data > 0, mlp2.layers[0].b.data, 0.2 * mlp2.layers[0].b.data)
    want = hidden @ mlp2.layers[1].w.data + mlp2.layers[1].b.data
    np.testing.assert_allclose(zero_out, np.tile(want, (2, 1)), atol=1e-12)

    x2 = np.random.default_rng(19).standard_normal((3, 3))
    got = mlp2(Tensor(x2)).data
    h = x2 @ mlp2.layers[0].w.data + mlp2.layers[0].b.data
    h = np.where(h > 0, h, 0.2 * h)
    np.testing.assert_allclose(got, h @ mlp2.layers[1].w.data + mlp2.layers[1].b.data, atol=1e-12)


def test_modulate_rejects_bad_sigma():
    w = Tensor(np.zeros((2, 3, 1, 1)))
    with pytest.raises(ValueError):
        modulate(w, 1.0, Tensor(np.zeros((1, 4))))


def test_conv_layer_forward_deterministic():
    conv_a = Conv2d(np.random.default_rng(20), 2, 3)
    conv_b = Conv2d(np.random.default_rng(20), 2, 3)
    x = Tensor(np.random.default_rng(21).standard_normal((1, 2, 4, 4)).astype(np.float32))
    np.testing.assert_array_equal(conv_a(x).data, conv_b(x).data)
