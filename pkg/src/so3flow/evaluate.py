"""Evaluation over a test split, ablation sweeps, and the math self-check.

run_eval times estimate_pose per instance (nothing else is inside the timer),
computes the pose metrics against regenerated canonical clouds, and writes
the per-instance CSV plus the aggregate summary. run_ablation trains any
missing variant checkpoint, evaluates each variant, and writes one summary
table. run_selfcheck executes the core math invariant suites and prints one
line per suite.
"""

import csv
import math
import os
import time

import numpy as np

from . import flowpath, so3
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import EmptyDatasetError
from .inference import IntegratorConfig, estimate_pose, integrate
from .metrics import (
    EvalRecord,
    EvalReport,
    metric_adds,
    metric_deg,
    metric_shift,
    success_flags,
    write_report,
)
from .nn import Dense, Model, ModelConfig, ParameterStore, Tape
from .synthdata import canonical_points, load_dataset
from .training import TrainConfig, train, write_loss_curve

STEP_SWEEP = (1, 2, 5, 10, 20)
ABLATION_KINDS = ("steps", "scheme", "fusion", "representation")

ABLATION_FIELDS = (
    "variant",
    "scheme",
    "n_steps",
    "n_instances",
    "mean_deg",
    "median_deg",
    "mean_shift",
    "success_rate_5deg_2cm",
    "success_rate_5deg_5cm",
    "mean_adds",
    "mean_wall_ms",
)


def eval_instances(model, instances, gen_cfg, integrator_cfg, rng_seed=0):
    """Evaluate a model on SceneInstances; returns a validated EvalReport."""
    if not instances:
        raise EmptyDatasetError("no instances to evaluate")
    records = []
    for inst in instances:
        rng = np.random.default_rng([rng_seed, inst.instance_id])
        start = time.perf_counter()
        est = estimate_pose(model, inst.observed, inst.category, integrator_cfg, rng=rng)
        wall_ms = (time.perf_counter() - start) * 1000.0
        canonical = canonical_points(gen_cfg, inst.instance_id)
        deg = metric_deg(est.rotation, inst.gt_rotation)
        shift = metric_shift(est.center, inst.gt_center)
        adds = metric_adds(
            (est.rotation, est.center), (inst.gt_rotation, inst.gt_center), canonical
        )
        tight, loose = success_flags(deg, shift)
        records.append(
            EvalRecord(
                instance_id=inst.instance_id,
                category=inst.kind,
                deg_error=deg,
                shift=shift,
                success_5deg_2cm=tight,
                success_5deg_5cm=loose,
                adds=adds,
                wall_ms=wall_ms,
            )
        )
    return EvalReport.from_records(records)


def run_eval(checkpoint_path, data_dir, integrator_cfg=None, out_dir=None, rng_seed=0):
    """Evaluate a checkpoint on the test split; optionally write report files."""
    if integrator_cfg is None:
        integrator_cfg = IntegratorConfig()
    model, _ = load_checkpoint(checkpoint_path)
    gen_cfg, instances = load_dataset(data_dir)
    test = [i for i in instances if i.split == "test"]
    report = eval_instances(model, test, gen_cfg, integrator_cfg, rng_seed=rng_seed)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_report(
            report,
            os.path.join(out_dir, "eval_report.csv"),
            os.path.join(out_dir, "eval_summary.json"),
        )
    return report


def _variant_model(name, model_cfg, train_instances, train_cfg, ckpt_dir):
    """Load the cached checkpoint for a variant, or train and save it."""
    path = os.path.join(ckpt_dir, f"{name}.json")
    if os.path.exists(path):
        model, _ = load_checkpoint(path)
        return model
    model, curve = train(train_instances, train_cfg, model_cfg=model_cfg)
    os.makedirs(ckpt_dir, exist_ok=True)
    save_checkpoint(model, path, rng_seed=train_cfg.seed)
    write_loss_curve(os.path.join(ckpt_dir, f"{name}_loss.csv"), curve)
    return model


def _summary_row(variant, scheme, n_steps, report):
    row = {"variant": variant, "scheme": scheme, "n_steps": n_steps}
    row.update(report.summary)
    return row


def write_table(path, rows, fields=ABLATION_FIELDS):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(fields)
        for row in rows:
            writer.writerow(
                [repr(row[k]) if isinstance(row[k], float) else row[k] for k in fields]
            )


def read_table(path, fields=ABLATION_FIELDS):
    rows = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = tuple(next(reader))
        if header != tuple(fields):
            raise ValueError(f"unexpected table header: {header}")
        for raw in reader:
            row = {}
            for key, value in zip(fields, raw):
                if key in ("variant", "scheme"):
                    row[key] = value
                elif key in ("n_steps", "n_instances"):
                    row[key] = int(value)
                else:
                    row[key] = float(value)
            rows.append(row)
    return rows


def run_ablation(
    kind,
    data_dir,
    out_dir,
    train_cfg=None,
    integrator_cfg=None,
    model_cfg=None,
    rng_seed=0,
):
    """One ablation sweep; returns the summary rows and writes them as CSV."""
    if kind not in ABLATION_KINDS:
        raise ValueError(f"unknown ablation kind {kind!r}")
    if train_cfg is None:
        train_cfg = TrainConfig()
    if integrator_cfg is None:
        integrator_cfg = IntegratorConfig()
    gen_cfg, instances = load_dataset(data_dir)
    train_split = [i for i in instances if i.split == "train"]
    test_split = [i for i in instances if i.split == "test"]
    n_cats = max(8, len(gen_cfg.categories))
    if model_cfg is None:
        model_cfg = ModelConfig(seed=train_cfg.seed, n_categories=n_cats)
    ckpt_dir = os.path.join(out_dir, "checkpoints")

    def evaluate(model, cfg):
        return eval_instances(model, test_split, gen_cfg, cfg, rng_seed=rng_seed)

    def variant(name, **overrides):
        cfg = ModelConfig(**{**model_cfg.to_dict(), **overrides})
        return _variant_model(name, cfg, train_split, train_cfg, ckpt_dir)

    rows = []
    if kind == "steps":
        model = variant("flow_film")
        for n in STEP_SWEEP:
            cfg = IntegratorConfig(
                n_steps=n, scheme=integrator_cfg.scheme, init=integrator_cfg.init
            )
            rows.append(_summary_row("flow_film", cfg.scheme, n, evaluate(model, cfg)))
    elif kind == "scheme":
        model = variant("flow_film")
        for scheme in ("rk2", "euler"):
            for n in STEP_SWEEP:
                cfg = IntegratorConfig(n_steps=n, scheme=scheme, init=integrator_cfg.init)
                rows.append(_summary_row("flow_film", scheme, n, evaluate(model, cfg)))
    elif kind == "fusion":
        for fusion in ("film", "pointwise", "geometry"):
            name = "flow_film" if fusion == "film" else f"flow_{fusion}"
            model = variant(name, fusion=fusion)
            rows.append(
                _summary_row(
                    name,
                    integrator_cfg.scheme,
                    integrator_cfg.n_steps,
                    evaluate(model, integrator_cfg),
                )
            )
    else:
        model = variant("flow_film")
        rows.append(
            _summary_row(
                "flow_film",
                integrator_cfg.scheme,
                integrator_cfg.n_steps,
                evaluate(model, integrator_cfg),
            )
        )
        direct = variant("matrix_film", rotation_mode="matrix")
        # The regression head bypasses the integrator entirely.
        rows.append(_summary_row("matrix_film", "direct", 0, evaluate(direct, integrator_cfg)))
    os.makedirs(out_dir, exist_ok=True)
    write_table(os.path.join(out_dir, f"ablation_{kind}.csv"), rows)
    return rows


# -- self-check suites --------------------------------------------------------


def _suite_roundtrip():
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(10000):
        axis = rng.normal(size=3)
        axis = axis / np.linalg.norm(axis)
        w = rng.uniform(1e-12, math.pi - 0.01) * axis
        err = float(np.linalg.norm(so3.log_map(so3.exp_map(w)) - w))
        worst = max(worst, err)
    return worst < 1e-9, f"max roundtrip error {worst:.3e}"


def _suite_path_velocity():
    rng = np.random.default_rng(102)
    h = 1e-5
    worst = 0.0
    for _ in range(1000):
        r0 = so3.sample_uniform(rng)
        r1 = so3.sample_uniform(rng)
        t = float(rng.uniform(2 * h, 1.0 - 2 * h))
        while abs(t - 0.5) <= 1e-3:
            t = float(rng.uniform(2 * h, 1.0 - 2 * h))
        before = flowpath.path_point(r0, r1, t - h)
        after = flowpath.path_point(r0, r1, t + h)
        fd = so3.log_map(before.T @ after) / (2.0 * h)
        target = flowpath.target_velocity(t, flowpath.relative_tangent(r0, r1))
        worst = max(worst, float(np.max(np.abs(fd - target))))
    cont = 0.0
    eps = 1e-8
    for _ in range(50):
        r0 = so3.sample_uniform(rng)
        r1 = so3.sample_uniform(rng)
        left = flowpath.path_point(r0, r1, 0.5 - eps)
        right = flowpath.path_point(r0, r1, 0.5 + eps)
        cont = max(cont, so3.geodesic_distance(left, right))
    ok = worst < 1e-3 and cont < 1e-6
    return ok, f"max velocity error {worst:.3e}, reflection gap {cont:.3e}"


def _suite_integrator():
    rng = np.random.default_rng(103)
    worst = 0.0
    for _ in range(1000):
        r0 = so3.sample_uniform(rng)
        r1 = so3.sample_uniform(rng)
        omega = flowpath.relative_tangent(r0, r1)

        def field(r, t, v=omega):
            return 2.0 * v

        for n_steps in (5, 1):
            cfg = IntegratorConfig(n_steps=n_steps)
            err = so3.geodesic_distance(integrate(r0, field, cfg), r1)
            worst = max(worst, err)
    return worst < 1e-9, f"max constant-field error {worst:.3e}"


def _suite_gradients():
    cfg = ModelConfig(seed=0)
    model = Model(cfg)
    rng = np.random.default_rng(104)
    for t in model.store.tensors.values():
        t += rng.normal(scale=0.05, size=t.shape).astype(t.dtype)
    batch = {
        "points": rng.normal(size=(2, 512, 3)).astype(np.float32),
        "cats": rng.integers(0, 4, size=2),
        "centroid": rng.normal(size=(2, 3)),
        "gt_center": rng.normal(size=(2, 3)),
        "gt_size": rng.uniform(0.3, 1.0, size=(2, 3)),
        "r_t": np.stack([so3.sample_uniform(rng) for _ in range(2)]),
        "t": rng.uniform(size=2),
        "target_v": rng.normal(size=(2, 3)),
    }
    weights = (1.0, 1.0, 1.0)
    model.zero_grads()
    _, tape = model.loss_and_tape(batch, weights)
    model.backward(tape)
    m64 = model.clone(np.float64)
    h = 1e-3
    worst_full = 0.0
    names = list(model.store.tensors)
    for _ in range(20):
        name = names[int(rng.integers(len(names)))]
        t64 = m64.store.tensors[name]
        idx = int(rng.integers(t64.size))
        orig = float(t64.flat[idx])
        t64.flat[idx] = orig + h
        lp = m64.loss_and_tape(batch, weights)[0]["total"]
        t64.flat[idx] = orig - h
        lm = m64.loss_and_tape(batch, weights)[0]["total"]
        t64.flat[idx] = orig
        fd = (lp - lm) / (2.0 * h)
        an = float(model.store.grads[name].flat[idx])
        rel = abs(an - fd) / max(abs(an), abs(fd), 1e-3)
        worst_full = max(worst_full, rel)
    # Isolated affine layer, checked in float64 where the FD oracle is sharp.
    store = ParameterStore(dtype=np.float64)
    layer = Dense(store, "probe", 7, 5, np.random.default_rng(105))
    x = rng.normal(size=(3, 7))
    store.zero_grads()
    y = layer(x)
    layer.backward(x, y)
    worst_layer = 0.0
    for name in ("probe.w", "probe.b"):
        t64 = store.tensors[name]
        for idx in range(t64.size):
            orig = float(t64.flat[idx])
            t64.flat[idx] = orig + h
            lp = 0.5 * float(np.sum(layer(x) ** 2))
            t64.flat[idx] = orig - h
            lm = 0.5 * float(np.sum(layer(x) ** 2))
            t64.flat[idx] = orig
            fd = (lp - lm) / (2.0 * h)
            an = float(store.grads[name].flat[idx])
            rel = abs(an - fd) / max(abs(an), abs(fd), 1e-3)
            worst_layer = max(worst_layer, rel)
    ok = worst_full < 1e-2 and worst_layer < 1e-3
    return ok, f"max rel error full {worst_full:.3e}, layer {worst_layer:.3e}"


SELFCHECK_SUITES = (
    ("so3 roundtrips", _suite_roundtrip),
    ("path-velocity consistency", _suite_path_velocity),
    ("constant-field integrator", _suite_integrator),
    ("gradient checks", _suite_gradients),
)


def run_selfcheck():
    """Run every suite, print one line per suite, return a process exit code."""
    failed = False
    for name, suite in SELFCHECK_SUITES:
        try:
            ok, detail = suite()
        except Exception as e:  # a crashing suite is a failing suite
            ok, detail = False, f"crashed: {type(e).__name__}: {e}"
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        failed = failed or not ok
    return 1 if failed else 0
