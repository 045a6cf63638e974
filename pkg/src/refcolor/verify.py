"""Self-contained invariant suite behind the ``verify`` CLI command.

Each check is independent and reports pass/fail with a measured margin;
the suite is the fast cross-section of the full test suite (gradient
checks, color round trips, spline exactness, weight-normalization norms,
convolution against the naive oracle) and finishes in well under five
minutes on a laptop-class CPU.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from refcolor import tensor as T
from refcolor.colorspace import lab_to_rgb, lab_to_rgb_graph, rgb_to_lab
from refcolor.imageio import RgbImage
from refcolor.loss import FeatureExtractor, LossConfig, smooth_l1, total_loss
from refcolor.nn import ModulatedConv2d, ResBlock, demodulate, modulate
from refcolor.tensor import Tensor, grad_check
from refcolor.tps import TpsParams, eval_tps, fit_tps, warp_image
from refcolor.train import AdamState, adam_step


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str


def conv2d_reference(x: np.ndarray, w: np.ndarray, bias=None, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Naive nested-loop cross-correlation; the independent convolution oracle."""
    n, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    oh = (h + 2 * pad - k) // stride + 1
    ow = (wd + 2 * pad - k) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((n, cout, oh, ow), dtype=np.float64)
    for ni in range(n):
        for co in range(cout):
            for oy in range(oh):
                for ox in range(ow):
                    acc = 0.0
                    for ci in range(cin):
                        for ky in range(k):
                            for kx in range(k):
                                acc += xp[ni, ci, oy * stride + ky, ox * stride + kx] * w[co, ci, ky, kx]
                    out[ni, co, oy, ox] = acc + (bias[co] if bias is not None else 0.0)
    return out


def _check_conv_oracle(cases: int = 12, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        k = int(rng.choice([1, 3, 5]))
        stride = int(rng.choice([1, 2]))
        pad = int(rng.integers(0, k // 2 + 1))
        cin, cout = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        oh = int(rng.integers(1, 5))
        h = (oh - 1) * stride + k - 2 * pad
        if h < 1:
            continue
        x = rng.standard_normal((int(rng.integers(1, 3)), cin, h, h))
        w = rng.standard_normal((cout, cin, k, k))
        b = rng.standard_normal(cout)
        got = T.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, pad=pad).data
        want = conv2d_reference(x, w, b, stride, pad)
        denom = max(1e-12, float(np.abs(want).max()))
        worst = max(worst, float(np.abs(got - want).max()) / denom)
    return CheckResult("conv2d vs naive-loop oracle", worst < 1e-5, f"max rel err {worst:.2e}")


def _check_gradcheck_ops(seed: int = 1) -> CheckResult:
    rng = np.random.default_rng(seed)

    def away_from(x, kink, margin=0.2):
        shifted = np.where(np.abs(x - kink) < margin, x + np.sign(x - kink + 1e-9) * margin, x)
        return shifted

    cases = []
    a = Tensor(rng.standard_normal((2, 3)))
    b = Tensor(rng.uniform(1.0, 3.0, (2, 3)))
    cases.append(("add/mul/div", lambda p, q: ((p * q + p) / q).sum(), [a, b]))
    r = Tensor(away_from(rng.standard_normal((3, 4)), 0.0))
    cases.append(("relu", lambda p: p.relu().sum(), [r]))
    cases.append(("leaky_relu", lambda p: p.leaky_relu(0.2).sum(), [Tensor(away_from(rng.standard_normal((3, 4)), 0.0))]))
    cases.append(("tanh", lambda p: p.tanh().sum(), [Tensor(rng.standard_normal((3, 4)))]))
    cases.append(("abs", lambda p: p.abs().sum(), [Tensor(away_from(rng.standard_normal((3, 4)), 0.0))]))
    c = Tensor(away_from(away_from(rng.uniform(-2, 2, (3, 4)), -1.0), 1.0))
    cases.append(("clamp", lambda p: p.clamp(-1, 1).sum(), [c]))
    cases.append(("pow", lambda p: (p ** 1.7).sum(), [Tensor(rng.uniform(0.5, 2.0, (3, 4)))]))
    cases.append(("reductions", lambda p: (p.sum(axis=1, keepdims=True) * p).mean(), [Tensor(rng.standard_normal((3, 4)))]))
    cases.append(("reshape/concat/narrow", lambda p, q: T.narrow(T.concat([p.reshape(2, 6), q.reshape(2, 6)], axis=1), 1, 3, 6).sum(), [Tensor(rng.standard_normal((3, 4))), Tensor(rng.standard_normal((3, 4)))]))
    cases.append(("upsample/gap", lambda p: T.global_avg_pool(T.upsample_nearest2x(p)).sum(), [Tensor(rng.standard_normal((2, 3, 2, 2)))]))
    cases.append(("linear", lambda p, q, s: T.linear(p, q, s).tanh().sum(), [Tensor(rng.standard_normal((3, 4))), Tensor(rng.standard_normal((4, 2))), Tensor(rng.standard_normal(2))]))
    cases.append(("conv2d", lambda p, q, s: T.conv2d(p, q, s, stride=2, pad=1).tanh().sum(), [Tensor(rng.standard_normal((2, 2, 5, 5))), Tensor(rng.standard_normal((3, 2, 3, 3))), Tensor(rng.standard_normal(3))]))
    worst = 0.0
    failed = []
    for name, fn, inputs in cases:
        err = grad_check(fn, inputs)
        worst = max(worst, err)
        if err >= 1e-4:
            failed.append(f"{name}={err:.1e}")
    detail = f"max rel err {worst:.2e}" + (f"; failed: {', '.join(failed)}" if failed else "")
    return CheckResult("gradient check: primitive ops", not failed, detail)


def _check_gradcheck_composites(seed: int = 2) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0

    blk = ResBlock(np.random.default_rng(3), 3, dtype=np.float64)
    x = Tensor(rng.standard_normal((1, 3, 4, 4)))
    worst = max(worst, grad_check(lambda p: blk(p).sum(), [x]))

    mod = ModulatedConv2d(np.random.default_rng(4), 3, 4, 3, embed_dim=512, dtype=np.float64)
    # Larger-than-init style weights keep the z gradient above the
    # finite-difference noise floor.
    mod.style.w.data = rng.normal(0.0, 0.1, size=mod.style.w.data.shape)
    d = Tensor(rng.standard_normal((2, 3, 4, 4)))
    z = Tensor(rng.standard_normal((2, 512)) * 0.1)
    probe = Tensor(rng.standard_normal((2, 4, 4, 4)))
    worst = max(worst, grad_check(lambda p, q: (mod(p, q) * probe).sum(), [d, z]))

    extractor = FeatureExtractor.from_seed(0, channels=(4, 6), dtype=np.float64)
    cfg = LossConfig(extractor_channels=(4, 6))
    L = Tensor(rng.uniform(20, 80, (1, 1, 4, 4)))
    gt_ab = Tensor(rng.uniform(-30, 30, (1, 2, 4, 4)))
    gt_rgb = Tensor(rng.uniform(0.1, 0.9, (1, 3, 4, 4)))
    p_ab = Tensor(rng.uniform(-30, 30, (1, 2, 4, 4)))
    worst = max(worst, grad_check(lambda p: total_loss(p, gt_ab, L, gt_rgb, cfg, extractor)[0], [p_ab]))

    return CheckResult("gradient check: composites", worst < 1e-4, f"max rel err {worst:.2e}")


def _check_color_roundtrip(samples: int = 20000, seed: int = 5) -> CheckResult:
    rng = np.random.default_rng(seed)
    rgb = RgbImage(rng.uniform(0, 1, (samples, 1, 3)))
    back = lab_to_rgb(rgb_to_lab(rgb))
    err = float(np.abs(back.pixels - rgb.pixels).max())
    white = rgb_to_lab(RgbImage(np.ones((1, 1, 3))))
    red = rgb_to_lab(RgbImage(np.array([[[1.0, 0.0, 0.0]]])))
    spot = max(
        abs(float(white.L[0, 0]) - 100.0), abs(float(white.a[0, 0])), abs(float(white.b[0, 0])),
        abs(float(red.L[0, 0]) - 53.2408), abs(float(red.a[0, 0]) - 80.0925),
        abs(float(red.b[0, 0]) - 67.2032),
    )
    ok = err < 1e-4 and spot < 1e-2
    return CheckResult("color space round trip + spot values", ok,
                       f"round-trip max {err:.2e}, spot max {spot:.2e}")


def _check_tps(seed: int = 6) -> CheckResult:
    rng = np.random.default_rng(seed)
    src = rng.uniform(0, 63, (8, 2))
    dst = src + rng.uniform(-5, 5, (8, 2))
    params = fit_tps(src, dst, reg=0.0)
    interp = float(np.abs(eval_tps(params, src) - dst).max())
    side = max(
        float(np.abs(params.radial_weights.sum(axis=0)).max()),
        float(np.abs((params.radial_weights * src[:, :1]).sum(axis=0)).max()),
        float(np.abs((params.radial_weights * src[:, 1:]).sum(axis=0)).max()),
    )
    img = RgbImage(rng.uniform(0, 1, (16, 16, 3)))
    ident = warp_image(img, TpsParams.identity())
    ident_ok = np.array_equal(ident.pixels, img.pixels)
    grid = np.array([[0.0, 0.0], [15.0, 0.0], [0.0, 15.0], [15.0, 15.0]])
    shift = fit_tps(grid, grid + np.array([3.0, 0.0]), reg=0.0)
    shifted = warp_image(img, shift)
    trans_err = float(np.abs(shifted.pixels[:, : 16 - 3] - img.pixels[:, 3:]).max())
    ok = interp < 1e-6 and side < 1e-8 and ident_ok and trans_err < 1e-9
    return CheckResult("thin-plate spline exactness + warps", ok,
                       f"interp {interp:.1e}, side {side:.1e}, identity {'exact' if ident_ok else 'BROKEN'}, shift {trans_err:.1e}")


def _check_demodulation(draws: int = 20, seed: int = 7) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst_norm = 0.0
    for _ in range(draws):
        w = Tensor(rng.standard_normal((4, 3, 3, 3)))
        sigma = Tensor(rng.uniform(0.5, 2.0, (2, 3)))
        wd = demodulate(modulate(w, 1.0, sigma), eps=0.0).data
        norms = np.sqrt((wd**2).sum(axis=(2, 3, 4)))
        worst_norm = max(worst_norm, float(np.abs(norms - 1.0).max()))
    w = Tensor(rng.standard_normal((4, 3, 3, 3)))
    sigma = Tensor(rng.uniform(0.5, 2.0, (2, 3)))
    base = demodulate(modulate(w, 1.0, sigma), eps=0.0).data
    worst_scale = 0.0
    for c in (0.5, 2.0, 10.0):
        scaled = demodulate(modulate(w, 1.0, sigma * c), eps=0.0).data
        worst_scale = max(worst_scale, float(np.abs(scaled - base).max()))
    ok = worst_norm < 1e-6 and worst_scale < 1e-12
    return CheckResult("demodulated weight norms + scale invariance", ok,
                       f"norm dev {worst_norm:.2e}, scale dev {worst_scale:.2e}")


def _check_loss_values() -> CheckResult:
    vals = []
    for d, want in ((0.5, 0.125), (2.0, 1.5), (1.0, 0.5)):
        got = float(smooth_l1(Tensor(np.full((4, 4), d)), Tensor(np.zeros((4, 4)))).data)
        vals.append(abs(got - want))
    # lambda-weighted combination with known parts.
    cfg = LossConfig(lambda_rec=1.0, lambda_perc=0.1, extractor_channels=(4, 6))
    extractor = FeatureExtractor.from_seed(0, channels=(4, 6), dtype=np.float64)
    rng = np.random.default_rng(8)
    L = Tensor(rng.uniform(20, 80, (1, 1, 4, 4)))
    gt_ab = Tensor(rng.uniform(-20, 20, (1, 2, 4, 4)))
    p_ab = Tensor(rng.uniform(-20, 20, (1, 2, 4, 4)))
    gt_rgb = Tensor(rng.uniform(0, 1, (1, 3, 4, 4)))
    total, rec, perc = total_loss(p_ab, gt_ab, L, gt_rgb, cfg, extractor)
    comb = abs(float(total.data) - (rec + 0.1 * perc))
    ok = max(vals) < 1e-12 and comb < 1e-9
    return CheckResult("smooth-L1 spot values + weighting", ok,
                       f"spot dev {max(vals):.1e}, combination dev {comb:.1e}")


def _check_adam() -> CheckResult:
    p = Tensor(np.zeros(1), requires_grad=True)
    p.grad = np.ones(1)
    state = AdamState(lr=0.1, beta1=0.9, beta2=0.99, eps=1e-12)
    adam_step({"p": p}, state)
    first = abs(float(p.data[0]) + 0.1)
    q = Tensor(np.full(3, 2.0), requires_grad=True)
    q.grad = np.zeros(3)
    adam_step({"q": q}, AdamState())
    zero = float(np.abs(q.data - 2.0).max())
    ok = first < 1e-9 and zero == 0.0
    return CheckResult("adam first step + zero-gradient no-op", ok,
                       f"first-step dev {first:.1e}, zero-grad dev {zero:.1e}")


def _check_lab_graph_gradient(seed: int = 9) -> CheckResult:
    rng = np.random.default_rng(seed)
    L = Tensor(rng.uniform(25, 75, (1, 1, 3, 3)))
    ab = Tensor(rng.uniform(-25, 25, (1, 2, 3, 3)))
    weights = Tensor(rng.standard_normal((1, 3, 3, 3)))
    err = grad_check(lambda l, c: (lab_to_rgb_graph(l, c) * weights).sum(), [L, ab])
    return CheckResult("differentiable Lab->RGB gradient", err < 1e-4, f"max rel err {err:.2e}")


def default_checks():
    return [
        _check_conv_oracle,
        _check_gradcheck_ops,
        _check_gradcheck_composites,
        _check_lab_graph_gradient,
        _check_color_roundtrip,
        _check_tps,
        _check_demodulation,
        _check_loss_values,
        _check_adam,
    ]


def run_checks(checks=None, extra=None) -> list:
    fns = list(default_checks() if checks is None else checks)
    if extra:
        fns.extend(extra)
    results = []
    for fn in fns:
        try:
            results.append(fn())
        except Exception as exc:  # a crashed check is a failed check
            results.append(CheckResult(getattr(fn, "__name__", "check"), False, f"raised {exc!r}"))
    return results


def format_table(results: list) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{r.name.ljust(width)}  {'PASS' if r.ok else 'FAIL'}  {r.detail}" for r in results]
    n_ok = sum(r.ok for r in results)
    lines.append(f"{n_ok}/{len(results)} checks passed")
    return "\n".join(lines)
