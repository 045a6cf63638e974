import numpy as np
import pytest

import refcolor.train as train_mod
from refcolor.augment import AugmentConfig
from refcolor.imageio import GrayImage, RgbImage
from refcolor.loss import LossConfig, build_extractor
from refcolor.model import ColorizerModel, ModelConfig
from refcolor.serialize import ContainerError, read_container, write_container
from refcolor.synthdata import make_dataset
from refcolor.tensor import Tensor
from refcolor.train import (
    AdamState,
    Checkpoint,
    MetricsRow,
    TrainingDiverged,
    adam_step,
    load_checkpoint,
    model_from_checkpoint,
    read_metrics_csv,
    save_checkpoint,
    train_loop,
    write_metrics_csv,
)

TINY_MODEL = ModelConfig(num_scales=2, channels=(4, 6), color_channels=(4, 6), input_size=16)
TINY_LOSS = LossConfig(extractor_channels=(4, 6))
FAST_AUG = AugmentConfig(noise_sigma=2.0, tps_grid=3, tps_max_offset=0.05)


def _dataset(n=3):
    return make_dataset(n, 16, seed=5)


# -- Adam -----------------------------------------------------------------


def test_adam_zero_gradient_is_noop():
    p = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    p.grad = np.zeros(3)
    adam_step({"p": p}, AdamState())
    np.testing.assert_array_equal(p.data, [1.0, -2.0, 3.0])


def test_adam_first_step_hand_value():
    # t=1: m_hat = g, v_hat = g^2, update = -lr * g/|g| = -0.1.
    p = Tensor(np.zeros(1), requires_grad=True)
    p.grad = np.ones(1)
    adam_step({"p": p}, AdamState(lr=0.1, beta1=0.9, beta2=0.99, eps=0.0))
    assert p.data[0] == pytest.approx(-0.1, abs=1e-12)


def test_adam_trajectories_bitwise_identical():
    def run():
        rng = np.random.default_rng(0)
        p = Tensor(rng.standard_normal(5), requires_grad=True)
        state = AdamState(lr=1e-2)
        for step in range(20):
            p.grad = np.sin(p.data * (step + 1))
            adam_step({"p": p}, state)
        return p.data

    np.testing.assert_array_equal(run(), run())


def test_adam_validation():
    with pytest.raises(ValueError):
        AdamState(beta1=1.0)
    p = Tensor(np.zeros(2), requires_grad=True)
    p.grad = np.zeros(3)
    with pytest.raises(ValueError):
        adam_step({"p": p}, AdamState())


# -- container and checkpoints ---------------------------------------------


def test_container_round_trip_bitwise(tmp_path):
    rng = np.random.default_rng(1)
    tensors = {
        "a.w": rng.standard_normal((3, 4)).astype(np.float32),
        "b": rng.standard_normal(7),
        "meta\nval": np.arange(5, dtype=np.int64).astype(np.float64),
    }
    meta = {"kind": "test", "text": "line1\nline2\\with backslash"}
    p1, p2 = tmp_path / "c1.bin", tmp_path / "c2.bin"
    write_container(p1, meta, tensors)
    version, meta2, tensors2 = read_container(p1)
    assert version == 1 and meta2 == meta
    for k, v in tensors.items():
        np.testing.assert_array_equal(tensors2[k], v)
        assert tensors2[k].dtype == v.dtype
    write_container(p2, meta2, tensors2)
    assert p1.read_bytes() == p2.read_bytes()


def test_container_rejects_corruption(tmp_path):
    p = tmp_path / "c.bin"
    write_container(p, {"kind": "t"}, {"x": np.zeros(4)})
    raw = p.read_bytes()
    (tmp_path / "trunc.bin").write_bytes(raw[:-9])
    with pytest.raises(ContainerError):
        read_container(tmp_path / "trunc.bin")
    (tmp_path / "magic.bin").write_bytes(b"X" + raw[1:])
    with pytest.raises(ContainerError):
        read_container(tmp_path / "magic.bin")
    bumped = bytearray(raw)
    bumped[8] = 99  # version field
    (tmp_path / "ver.bin").write_bytes(bytes(bumped))
    with pytest.raises(ContainerError):
        read_container(tmp_path / "ver.bin")


def test_checkpoint_round_trip(tmp_path):
    model = ColorizerModel(TINY_MODEL, seed=3)
    params = {k: v.data.copy() for k, v in model.named_params().items()}
    adam = AdamState(lr=2e-4, t=5)
    adam.m = {k: np.zeros_like(v) for k, v in params.items()}
    adam.v = {k: np.ones_like(v) for k, v in params.items()}
    ck = Checkpoint(TINY_MODEL, params, seed=3, step=5, adam=adam)
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(ck, p1)
    loaded = load_checkpoint(p1)
    assert loaded.config == TINY_MODEL and loaded.step == 5 and loaded.seed == 3
    assert loaded.adam.t == 5 and loaded.adam.lr == 2e-4
    save_checkpoint(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_preserves_inference_bitwise(tmp_path):
    ds = _dataset()
    ck, _ = train_loop(ds, TINY_MODEL, FAST_AUG, TINY_LOSS, steps=2, batch_size=2, seed=1)
    path = tmp_path / "m.ckpt"
    save_checkpoint(ck, path)
    model_a = model_from_checkpoint(ck)
    model_b = model_from_checkpoint(load_checkpoint(path))
    target = GrayImage(np.random.default_rng(2).uniform(0, 100, (16, 16)))
    ref = RgbImage(np.random.default_rng(3).uniform(0, 1, (16, 16, 3)))
    np.testing.assert_array_equal(model_a.colorize(target, ref).pixels,
                                  model_b.colorize(target, ref).pixels)


# -- training loop ----------------------------------------------------------


def test_zero_steps_returns_initialization():
    ds = _dataset()
    ck, rows = train_loop(ds, TINY_MODEL, FAST_AUG, TINY_LOSS, steps=0, batch_size=2, seed=7)
    assert rows == []
    init = ColorizerModel(TINY_MODEL, seed=7).named_params()
    assert set(ck.params) == set(init)
    for name, tensor in init.items():
        np.testing.assert_array_equal(ck.params[name], tensor.data)


def test_training_reproducible_and_loss_finite():
    ds = _dataset()
    _, rows_a = train_loop(ds, TINY_MODEL, FAST_AUG, TINY_LOSS, steps=6, batch_size=2, seed=11)
    _, rows_b = train_loop(ds, TINY_MODEL, FAST_AUG, TINY_LOSS, steps=6, batch_size=2, seed=11)
    assert [r.loss_total for r in rows_a] == [r.loss_total for r in rows_b]
    assert [r.loss_rec for r in rows_a] == [r.loss_rec for r in rows_b]
    assert all(np.isfinite(r.loss_total) for r in rows_a)
    _, rows_c = train_loop(ds, TINY_MODEL, FAST_AUG, TINY_LOSS, steps=6, batch_size=2, seed=12)
    assert [r.loss_total for r in rows_c] != [r.loss_total for r in rows_a]


def test_extractor_stays_frozen():
    ds = _dataset()
    ext = build_extractor(TINY_LOSS)
    before = {name: p.data.copy() for name, p in ext.params()}
    # train_loop builds its own extractor from the same config/seed;
    # bit-compare a freshly built one after training ran.
    train_loop(ds, TINY_MODEL, FAST_AUG, TINY_LOSS, steps=3, batch_size=2, seed=0)
    after = build_extractor(TINY_LOSS)
    for name, p in after.params():
        np.testing.assert_array_equal(before[name], p.data)


def test_diverged_training_dumps_state(tmp_path, monkeypatch):
    def poisoned(*args, **kwargs):
        return Tensor(np.array(np.nan)), np.nan, np.nan

    monkeypatch.setattr(train_mod, "total_loss", poisoned)
    out = tmp_path / "model.ckpt"
    with pytest.raises(TrainingDiverged) as info:
        train_loop(_dataset(), TINY_MODEL, FAST_AUG, TINY_LOSS, steps=2, batch_size=2,
                   seed=0, checkpoint_path=out)
    assert info.value.dump_path is not None and info.value.dump_path.exists()
    dumped = load_checkpoint(info.value.dump_path)
    assert dumped.step == 0


def test_metrics_csv_round_trip(tmp_path):
    rows = [MetricsRow(0, 1.5, 1.25, 2.5, 10.0), MetricsRow(1, 0.75, 0.5, 2.49999, 11.5)]
    path = tmp_path / "m.csv"
    write_metrics_csv(rows, path)
    assert read_metrics_csv(path) == rows
    header = path.read_text().splitlines()[0]
    assert header == "step,loss_total,loss_rec,loss_perc,wall_ms"


def test_train_loop_rejects_empty_dataset():
    with pytest.raises(ValueError):
        train_loop([], TINY_MODEL, FAST_AUG, TINY_LOSS, steps=1)
