"""Adam optimization, the self-reference training loop, and checkpoints.

Each step draws a batch of ground-truth images, manufactures a fresh
reference per sample (new noise and warp every time), runs the model,
and applies one Adam update.  Everything is derived from a single master
seed, so two runs with the same seed and data produce identical metrics.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from refcolor import tensor as T
from refcolor.augment import AugmentConfig, make_reference
from refcolor.colorspace import rgb_to_lab
from refcolor.imageio import resize_bilinear
from refcolor.loss import LossConfig, build_extractor, total_loss
from refcolor.model import ColorizerModel, ModelConfig
from refcolor.serialize import read_container, write_container
from refcolor.tensor import Tensor

CHECKPOINT_VERSION = 1

# Seed-stream tags keeping the batch-index and per-sample augmentation
# streams disjoint.
_STREAM_BATCH = 11
_STREAM_AUG = 12


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the path of the diagnostic dump."""

    def __init__(self, message: str, dump_path=None):
        super().__init__(message)
        self.dump_path = dump_path


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError(f"betas must be in [0,1), got {self.beta1}, {self.beta2}")


def adam_step(params: dict, state: AdamState) -> None:
    """One bias-corrected Adam update; a missing gradient counts as zero."""
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape {p.data.shape} for {name}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        p.data = p.data - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


@dataclass
class MetricsRow:
    step: int
    loss_total: float
    loss_rec: float
    loss_perc: float
    wall_ms: float


def write_metrics_csv(rows: list, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss_total", "loss_rec", "loss_perc", "wall_ms"])
        for r in rows:
            writer.writerow([r.step, repr(r.loss_total), repr(r.loss_rec), repr(r.loss_perc), repr(r.wall_ms)])


def read_metrics_csv(path) -> list:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            rows.append(MetricsRow(int(rec["step"]), float(rec["loss_total"]),
                                   float(rec["loss_rec"]), float(rec["loss_perc"]),
                                   float(rec["wall_ms"])))
    return rows


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict
    seed: int
    step: int
    adam: AdamState | None = None
    version: int = CHECKPOINT_VERSION


def save_checkpoint(ck: Checkpoint, path) -> None:
    meta = {
        "kind": "checkpoint",
        "version": str(ck.version),
        "config": ck.config.to_text(),
        "seed": str(ck.seed),
        "step": str(ck.step),
        "has_adam": "1" if ck.adam is not None else "0",
    }
    tensors = dict(ck.params)
    if ck.adam is not None:
        meta.update(adam_lr=repr(ck.adam.lr), adam_beta1=repr(ck.adam.beta1),
                    adam_beta2=repr(ck.adam.beta2), adam_eps=repr(ck.adam.eps),
                    adam_t=str(ck.adam.t))
        for name, arr in ck.adam.m.items():
            tensors[f"opt.m.{name}"] = arr
        for name, arr in ck.adam.v.items():
            tensors[f"opt.v.{name}"] = arr
    write_container(path, meta, tensors)


def load_checkpoint(path) -> Checkpoint:
    _, meta, tensors = read_container(path)
    if meta.get("kind") != "checkpoint":
        raise ValueError(f"{path}: container is not a checkpoint (kind={meta.get('kind')!r})")
    if int(meta.get("version", "0")) != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: checkpoint version {meta.get('version')} unsupported")
    config = ModelConfig.from_text(meta["config"])
    params = {k: v for k, v in tensors.items() if not k.startswith("opt.")}
    adam = None
    if meta.get("has_adam") == "1":
        adam = AdamState(lr=float(meta["adam_lr"]), beta1=float(meta["adam_beta1"]),
                         beta2=float(meta["adam_beta2"]), eps=float(meta["adam_eps"]),
                         t=int(meta["adam_t"]))
        for k, v in tensors.items():
            if k.startswith("opt.m."):
                adam.m[k[len("opt.m."):]] = v
            elif k.startswith("opt.v."):
                adam.v[k[len("opt.v."):]] = v
    return Checkpoint(config=config, params=params, seed=int(meta["seed"]),
                      step=int(meta["step"]), adam=adam)


def model_from_checkpoint(ck: Checkpoint, dtype=np.float32) -> ColorizerModel:
    model = ColorizerModel(ck.config, seed=ck.seed, dtype=dtype)
    model.load_params(ck.params)
    return model


def _snapshot_params(params: dict) -> dict:
    return {name: t.data.copy() for name, t in params.items()}


def _prepare_dataset(dataset: list, size: int):
    """Resize once and precompute the per-image constants of each triple."""
    prepped = []
    for img in dataset:
        img = resize_bilinear(img, size, size)
        lab = rgb_to_lab(img)
        prepped.append({
            "gt": img,
            "L": lab.L.astype(np.float32)[None],                     # (1,S,S)
            "ab": np.stack([lab.a, lab.b]).astype(np.float32),       # (2,S,S)
            "rgb": img.pixels.transpose(2, 0, 1).astype(np.float32),  # (3,S,S)
        })
    return prepped


def train_loop(dataset: list, model_cfg: ModelConfig, aug_cfg: AugmentConfig,
               loss_cfg: LossConfig, *, steps: int, batch_size: int = 8, seed: int = 0,
               lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.99,
               adam_eps: float = 1e-8, checkpoint_interval: int = 0,
               checkpoint_path=None, progress=None):
    """Run the paired self-reference training; returns (Checkpoint, metrics).

    A non-finite loss aborts with ``TrainingDiverged`` after dumping the
    current state next to ``checkpoint_path`` for inspection.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    if steps < 0 or batch_size < 1:
        raise ValueError(f"bad steps/batch: {steps}/{batch_size}")

    prepped = _prepare_dataset(dataset, model_cfg.input_size)
    model = ColorizerModel(model_cfg, seed=seed)
    params = model.named_params()
    extractor = build_extractor(loss_cfg)
    adam = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=adam_eps)
    rows: list[MetricsRow] = []

    for step in range(steps):
        t0 = time.perf_counter()
        batch_rng = np.random.default_rng([seed, _STREAM_BATCH, step])
        idx = batch_rng.integers(0, len(prepped), size=batch_size)
        refs = []
        for j, i in enumerate(idx):
            aug_rng = np.random.default_rng([seed, _STREAM_AUG, step, j])
            ref = make_reference(prepped[i]["gt"], aug_rng, aug_cfg)
            refs.append(ref.pixels.transpose(2, 0, 1).astype(np.float32))

        L_t = Tensor(np.stack([prepped[i]["L"] for i in idx]))
        gt_ab = Tensor(np.stack([prepped[i]["ab"] for i in idx]))
        gt_rgb = Tensor(np.stack([prepped[i]["rgb"] for i in idx]))
        ref_t = Tensor(np.stack(refs))

        feats = model.content_pyramid_t(L_t)
        z = model.embed_reference_t(ref_t)
        p_ab = model.decode_t(feats, z)
        total, rec_val, perc_val = total_loss(p_ab, gt_ab, L_t, gt_rgb, loss_cfg, extractor)

        total_val = float(total.data)
        if not np.isfinite(total_val):
            dump = None
            if checkpoint_path is not None:
                dump = Path(str(checkpoint_path) + ".diverged")
                save_checkpoint(Checkpoint(model_cfg, _snapshot_params(params), seed, step, adam), dump)
            raise TrainingDiverged(
                f"non-finite loss at step {step}: total={total_val} rec={rec_val} perc={perc_val}",
                dump_path=dump,
            )

        for p in params.values():
            p.grad = None
        T.backward(total)
        adam_step(params, adam)

        rows.append(MetricsRow(step, total_val, rec_val, perc_val,
                               (time.perf_counter() - t0) * 1e3))
        if progress is not None:
            progress(rows[-1])
        if checkpoint_interval and checkpoint_path is not None and (step + 1) % checkpoint_interval == 0:
            save_checkpoint(Checkpoint(model_cfg, _snapshot_params(params), seed, step + 1, adam),
                            checkpoint_path)

    ck = Checkpoint(model_cfg, _snapshot_params(params), seed, steps, adam)
    if checkpoint_path is not None:
        save_checkpoint(ck, checkpoint_path)
    return ck, rows
