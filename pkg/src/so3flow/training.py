"""Seeded training loop: Adam from scratch, fresh flow samples per epoch.

Given the same seed, config, dataset, and build, two runs produce
bit-identical checkpoints; everything stochastic flows from one Generator.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from . import flowpath
from .checkpoint import save_checkpoint
from .errors import EmptyDatasetError, ShapeMismatchError
from .nn import Model, ModelConfig, prepare_cloud


@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 64
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    loss_weights: tuple = (1.0, 1.0, 1.0)
    seed: int = 0

    def validate(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0):
            raise ValueError("adam betas must lie in [0, 1)")
        if self.adam_eps <= 0:
            raise ValueError("adam_eps must be positive")
        if len(self.loss_weights) != 3 or any(w < 0 for w in self.loss_weights):
            raise ValueError("loss_weights must be three non-negative numbers")


class Adam:
    """Textbook Adam with bias correction over a ParameterStore."""

    def __init__(self, store, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {n: np.zeros_like(t) for n, t in store.tensors.items()}
        self.v = {n: np.zeros_like(t) for n, t in store.tensors.items()}

    def step(self, grads):
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.step_count
        c2 = 1.0 - b2**self.step_count
        for name, p in self.store.tensors.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ShapeMismatchError(
                    f"{name}: grad shape {g.shape} vs param {p.shape}"
                )
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def rotation_flow_loss(predicted, sample):
    """Squared error against the sample's target velocity, in float64."""
    diff = np.asarray(predicted, dtype=np.float64) - sample.target_v
    return float(diff @ diff)


def center_size_loss(pred_center, pred_size, gt_center, gt_size):
    dc = np.asarray(pred_center, dtype=np.float64) - gt_center
    ds = np.asarray(pred_size, dtype=np.float64) - gt_size
    return float(dc @ dc), float(ds @ ds)


@dataclass
class EpochStats:
    epoch: int
    rot: float
    center: float
    size: float
    total: float


def write_loss_curve(path, curve):
    with open(path, "w") as f:
        f.write("epoch,rot_loss,center_loss,size_loss,total_loss\n")
        for row in curve:
            f.write(
                f"{row.epoch},{row.rot!r},{row.center!r},"
                f"{row.size!r},{row.total!r}\n"
            )


def read_loss_curve(path):
    curve = []
    with open(path) as f:
        header = f.readline().strip()
        if header != "epoch,rot_loss,center_loss,size_loss,total_loss":
            raise ValueError(f"unexpected loss curve header: {header}")
        for line in f:
            e, r, c, s, t = line.strip().split(",")
            curve.append(EpochStats(int(e), float(r), float(c), float(s), float(t)))
    return curve


def preprocess(instances):
    """FPS subset, centroid, and targets per instance, computed once."""
    out = []
    for inst in instances:
        pts, centroid = prepare_cloud(inst.observed)
        out.append(
            {
                "points": pts,
                "centroid": centroid,
                "cat": inst.category,
                "gt_r": inst.gt_rotation,
                "gt_center": inst.gt_center,
                "gt_size": inst.gt_size,
            }
        )
    return out


def _assemble(items, rng, rotation_mode):
    batch = {
        "points": np.stack([it["points"] for it in items]),
        "cats": np.array([it["cat"] for it in items], dtype=np.int64),
        "centroid": np.stack([it["centroid"] for it in items]),
        "gt_center": np.stack([it["gt_center"] for it in items]),
        "gt_size": np.stack([it["gt_size"] for it in items]),
    }
    if rotation_mode == "flow":
        samples = [flowpath.sample_flow(rng, it["gt_r"]) for it in items]
        batch["r_t"] = np.stack([s.r_t for s in samples])
        batch["t"] = np.array([s.t for s in samples])
        batch["target_v"] = np.stack([s.target_v for s in samples])
    else:
        batch["gt_r"] = np.stack([it["gt_r"] for it in items])
    return batch


def train(instances, cfg, model_cfg=None, out_dir=None):
    """Train a model on SceneInstances; returns (model, loss curve).

    When out_dir is given, writes checkpoint.json/.bin and loss_curve.csv
    there at the end.
    """
    cfg.validate()
    if not instances:
        raise EmptyDatasetError("no training instances")
    if model_cfg is None:
        model_cfg = ModelConfig(seed=cfg.seed)
    model = Model(model_cfg)
    adam = Adam(
        model.store,
        lr=cfg.learning_rate,
        beta1=cfg.adam_beta1,
        beta2=cfg.adam_beta2,
        eps=cfg.adam_eps,
    )
    rng = np.random.default_rng(cfg.seed)
    data = preprocess(instances)
    n = len(data)
    curve = []
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        sums = np.zeros(4)
        for start in range(0, n, cfg.batch_size):
            items = [data[i] for i in perm[start : start + cfg.batch_size]]
            batch = _assemble(items, rng, model_cfg.rotation_mode)
            model.zero_grads()
            losses, tape = model.loss_and_tape(batch, cfg.loss_weights)
            model.backward(tape)
            adam.step(model.store.grads)
            b = len(items)
            sums += b * np.array(
                [losses["rot"], losses["center"], losses["size"], losses["total"]]
            )
        means = sums / n
        curve.append(EpochStats(epoch, *means))
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        save_checkpoint(
            model, os.path.join(out_dir, "checkpoint.json"), rng_seed=cfg.seed
        )
        write_loss_curve(os.path.join(out_dir, "loss_curve.csv"), curve)
    return model, curve
