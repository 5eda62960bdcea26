"""Synthetic scene generation: canonical shapes with known pose.

Each instance is a surface-sampled shape, scaled, rotated by a Haar-random
rotation, translated, noised, and half-space occluded.  Generation is fully
deterministic: instance i is produced by ``default_rng([seed, i])`` with a
fixed draw order (shape points, scale, rotation, center, noise, occlusion
direction), so canonical clouds can be regenerated exactly from the manifest
without storing them.
"""

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from . import so3
from .errors import (
    EmptyDatasetError,
    UnknownCategoryError,
    UnknownKindError,
    WrongPointCountError,
)

ASYMMETRIC_KINDS = ("asymmetric_box", "l_bracket", "cylinder_with_notch", "cone")
SYMMETRIC_KINDS = ("symmetric_cylinder", "symmetric_box")
ALL_KINDS = ASYMMETRIC_KINDS + SYMMETRIC_KINDS

MIN_POINTS = 64
MANIFEST_NAME = "manifest.json"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class GenConfig:
    n_train: int = 2000
    n_test: int = 400
    categories: tuple = ASYMMETRIC_KINDS
    noise_sigma: float = 0.002
    occlusion_fraction: float = 0.3
    seed: int = 0
    points_per_instance: int = 4096

    def validate(self):
        if self.n_train < 1 or self.n_test < 1:
            raise ValueError("instance counts must be at least 1")
        if not self.categories:
            raise UnknownCategoryError("categories must be non-empty")
        for kind in self.categories:
            if kind not in ALL_KINDS:
                raise UnknownCategoryError(f"unknown category {kind!r}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not 0.0 <= self.occlusion_fraction <= 0.5:
            raise ValueError("occlusion_fraction must be in [0, 0.5]")
        if self.points_per_instance < MIN_POINTS:
            raise WrongPointCountError(f"need at least {MIN_POINTS} points")
        kept = self.points_per_instance - math.floor(
            self.occlusion_fraction * self.points_per_instance
        )
        if kept < MIN_POINTS:
            raise WrongPointCountError(
                "occlusion would leave fewer than the minimum point count"
            )

    def to_dict(self):
        return {
            "n_train": self.n_train,
            "n_test": self.n_test,
            "categories": list(self.categories),
            "noise_sigma": self.noise_sigma,
            "occlusion_fraction": self.occlusion_fraction,
            "seed": self.seed,
            "points_per_instance": self.points_per_instance,
        }

    @classmethod
    def from_dict(cls, d):
        cfg = cls(
            n_train=int(d["n_train"]),
            n_test=int(d["n_test"]),
            categories=tuple(d["categories"]),
            noise_sigma=float(d["noise_sigma"]),
            occlusion_fraction=float(d["occlusion_fraction"]),
            seed=int(d["seed"]),
            points_per_instance=int(d["points_per_instance"]),
        )
        cfg.validate()
        return cfg


@dataclass(frozen=True)
class SceneInstance:
    category: int
    kind: str
    observed: np.ndarray
    gt_rotation: np.ndarray
    gt_center: np.ndarray
    gt_size: np.ndarray
    instance_id: int
    split: str

    def validate(self, noise_sigma=0.0):
        if self.observed.ndim != 2 or self.observed.shape[1] != 3:
            raise ValueError("observed must be (n, 3)")
        if self.observed.shape[0] < MIN_POINTS:
            raise WrongPointCountError("observed cloud below minimum point count")
        if not np.all(self.gt_size > 0):
            raise ValueError("gt_size components must be positive")
        # Every observed point must sit inside the gt box inflated by the
        # noise bound (noise vectors are clipped to 3 sigma in length, so the
        # canonical-frame deviation per axis cannot exceed 3 sigma).
        local = (self.observed - self.gt_center) @ self.gt_rotation
        limit = self.gt_size / 2.0 + 3.0 * noise_sigma + 1e-9
        if not np.all(np.abs(local) <= limit):
            raise ValueError("observed points fall outside the inflated gt box")


class _Patch:
    """One surface piece: sampling-domain area, sampler, optional accept mask.

    Candidates are allocated across patches in proportion to the full
    sampling-domain area, so after acceptance thinning the density per unit
    area is constant across the whole shape.
    """

    def __init__(self, area, sample, accept=None):
        self.area = area
        self.sample = sample
        self.accept = accept


def _rect(origin, edge_u, edge_v, accept=None):
    o = np.asarray(origin, dtype=np.float64)
    u = np.asarray(edge_u, dtype=np.float64)
    v = np.asarray(edge_v, dtype=np.float64)
    area = float(np.linalg.norm(np.cross(u, v)))

    def sample(rng, m):
        a = rng.random((m, 1))
        b = rng.random((m, 1))
        return o + a * u + b * v

    return _Patch(area, sample, accept)


def _disk(z, radius, accept=None):
    def sample(rng, m):
        r = radius * np.sqrt(rng.random(m))
        phi = 2.0 * math.pi * rng.random(m)
        pts = np.empty((m, 3))
        pts[:, 0] = r * np.cos(phi)
        pts[:, 1] = r * np.sin(phi)
        pts[:, 2] = z
        return pts

    return _Patch(math.pi * radius * radius, sample, accept)


def _cylinder_side(radius, z0, z1, accept=None):
    def sample(rng, m):
        phi = 2.0 * math.pi * rng.random(m)
        z = z0 + (z1 - z0) * rng.random(m)
        pts = np.empty((m, 3))
        pts[:, 0] = radius * np.cos(phi)
        pts[:, 1] = radius * np.sin(phi)
        pts[:, 2] = z
        return pts

    return _Patch(2.0 * math.pi * radius * (z1 - z0), sample, accept)


def _cone_side(base_radius, z_base, z_apex, accept=None):
    height = z_apex - z_base
    slant = math.hypot(base_radius, height)

    def sample(rng, m):
        # Area element grows linearly with slant distance from the apex,
        # so the uniform fraction is sqrt of a uniform variate.
        f = np.sqrt(rng.random(m))
        phi = 2.0 * math.pi * rng.random(m)
        r = base_radius * f
        pts = np.empty((m, 3))
        pts[:, 0] = r * np.cos(phi)
        pts[:, 1] = r * np.sin(phi)
        pts[:, 2] = z_apex - height * f
        return pts

    return _Patch(math.pi * base_radius * slant, sample, accept)


def _box_faces(hx, hy, hz, accept_by_face=None):
    accept_by_face = accept_by_face or {}
    faces = {
        "+x": _rect([hx, -hy, -hz], [0, 2 * hy, 0], [0, 0, 2 * hz]),
        "-x": _rect([-hx, -hy, -hz], [0, 2 * hy, 0], [0, 0, 2 * hz]),
        "+y": _rect([-hx, hy, -hz], [2 * hx, 0, 0], [0, 0, 2 * hz]),
        "-y": _rect([-hx, -hy, -hz], [2 * hx, 0, 0], [0, 0, 2 * hz]),
        "+z": _rect([-hx, -hy, hz], [2 * hx, 0, 0], [0, 2 * hy, 0]),
        "-z": _rect([-hx, -hy, -hz], [2 * hx, 0, 0], [0, 2 * hy, 0]),
    }
    for name, accept in accept_by_face.items():
        faces[name].accept = accept
    return [faces[k] for k in ("+x", "-x", "+y", "-y", "+z", "-z")]


def _asymmetric_box_patches():
    # Corner cut: the whole positive octant is removed.  The marker spans
    # an eighth of all view directions, so orientation is recoverable from
    # the radial silhouette alone, not just from fine surface detail.
    hx, hy, hz = 0.4, 0.25, 0.15
    patches = _box_faces(
        hx,
        hy,
        hz,
        {
            "+x": lambda p: ~((p[:, 1] > 0) & (p[:, 2] > 0)),
            "+y": lambda p: ~((p[:, 0] > 0) & (p[:, 2] > 0)),
            "+z": lambda p: ~((p[:, 0] > 0) & (p[:, 1] > 0)),
        },
    )
    # Inner walls of the corner cut, lying on the coordinate planes.
    patches += [
        _rect([0, 0, 0], [0, hy, 0], [0, 0, hz]),
        _rect([0, 0, 0], [hx, 0, 0], [0, 0, hz]),
        _rect([0, 0, 0], [hx, 0, 0], [0, hy, 0]),
    ]
    return patches, np.array([2 * hx, 2 * hy, 2 * hz])


def _l_bracket_patches():
    # Arm A spans the full x range below y=0; arm B rises above y=0 on the
    # left.  The shared y=0 rectangle over B's footprint is interior.
    hz = 0.15
    ax0, ax1, ay0, ay1 = -0.4, 0.4, -0.35, 0.0
    bx0, bx1, by0, by1 = -0.4, -0.15, 0.0, 0.35
    dz = 2 * hz
    patches = [
        _rect([ax0, ay0, -hz], [ax1 - ax0, 0, 0], [0, 0, dz]),
        _rect(
            [ax0, ay1, -hz],
            [ax1 - ax0, 0, 0],
            [0, 0, dz],
            accept=lambda p: p[:, 0] > bx1,
        ),
        _rect([ax0, ay0, -hz], [0, ay1 - ay0, 0], [0, 0, dz]),
        _rect([ax1, ay0, -hz], [0, ay1 - ay0, 0], [0, 0, dz]),
        _rect([ax0, ay0, hz], [ax1 - ax0, 0, 0], [0, ay1 - ay0, 0]),
        _rect([ax0, ay0, -hz], [ax1 - ax0, 0, 0], [0, ay1 - ay0, 0]),
        _rect([bx0, by1, -hz], [bx1 - bx0, 0, 0], [0, 0, dz]),
        _rect([bx0, by0, -hz], [0, by1 - by0, 0], [0, 0, dz]),
        _rect([bx1, by0, -hz], [0, by1 - by0, 0], [0, 0, dz]),
        _rect([bx0, by0, hz], [bx1 - bx0, 0, 0], [0, by1 - by0, 0]),
        _rect([bx0, by0, -hz], [bx1 - bx0, 0, 0], [0, by1 - by0, 0]),
    ]
    return patches, np.array([0.8, 0.7, 0.3])


def _sector_mask(half_angle, center_phi=0.0):
    """Membership test for the azimuthal sector |phi - center| < half_angle."""
    c, s = math.cos(center_phi), math.sin(center_phi)
    cos_half = math.cos(half_angle)

    def inside(p):
        r = np.hypot(p[:, 0], p[:, 1])
        along = c * p[:, 0] + s * p[:, 1]
        # Points on the axis count as inside: the wedge walls meet there.
        return np.where(r > 1e-12, along > cos_half * r, True)

    return inside


def _cylinder_with_notch_patches():
    # Wedge notch: a 100-degree azimuthal sector is removed down to the
    # axis over the upper part of the cylinder.  The intact bottom section
    # breaks the end-over-end flip that a full-height wedge would keep.
    r, hz = 0.25, 0.35
    half = math.radians(50.0)
    z_floor = -0.05
    in_sector = _sector_mask(half)
    wall_u = [r * math.cos(half), r * math.sin(half), 0]
    wall_l = [r * math.cos(half), -r * math.sin(half), 0]

    def outside_notch(p):
        return ~(in_sector(p) & (p[:, 2] > z_floor))

    patches = [
        _cylinder_side(r, -hz, hz, accept=outside_notch),
        _disk(hz, r, accept=lambda p: ~in_sector(p)),
        _disk(-hz, r),
        # Notch floor sector and the two flat walls meeting at the axis.
        _disk(z_floor, r, accept=in_sector),
        _rect([0, 0, z_floor], wall_u, [0, 0, hz - z_floor]),
        _rect([0, 0, z_floor], wall_l, [0, 0, hz - z_floor]),
    ]
    return patches, np.array([2 * r, 2 * r, 2 * hz])


def _cone_patches():
    # Wedge notch on the -x side of the lower half, where the cone is
    # widest; the apex half stays intact so the axis is unambiguous.
    base_r, z_base, z_apex = 0.3, -0.3, 0.3
    half = math.radians(50.0)
    z_ceil = 0.0
    in_sector = _sector_mask(half, center_phi=math.pi)

    def radius_at(z):
        return base_r * (z_apex - z) / (z_apex - z_base)

    def in_notch(p):
        return in_sector(p) & (p[:, 2] < z_ceil)

    def inside_cone(p):
        return np.hypot(p[:, 0], p[:, 1]) <= radius_at(p[:, 2])

    wall_u = [
        base_r * math.cos(math.pi + half),
        base_r * math.sin(math.pi + half),
        0,
    ]
    wall_l = [
        base_r * math.cos(math.pi - half),
        base_r * math.sin(math.pi - half),
        0,
    ]
    patches = [
        _cone_side(base_r, z_base, z_apex, accept=lambda p: ~in_notch(p)),
        _disk(z_base, base_r, accept=lambda p: ~in_sector(p)),
        # Notch ceiling sector plus two flat walls clipped to the cone.
        _disk(z_ceil, radius_at(z_ceil), accept=in_sector),
        _rect([0, 0, z_base], wall_u, [0, 0, z_ceil - z_base], accept=inside_cone),
        _rect([0, 0, z_base], wall_l, [0, 0, z_ceil - z_base], accept=inside_cone),
    ]
    return patches, np.array([2 * base_r, 2 * base_r, z_apex - z_base])


def _symmetric_cylinder_patches():
    r, hz = 0.25, 0.35
    patches = [_cylinder_side(r, -hz, hz), _disk(hz, r), _disk(-hz, r)]
    return patches, np.array([2 * r, 2 * r, 2 * hz])


def _symmetric_box_patches():
    h = 0.25
    return _box_faces(h, h, h), np.array([2 * h, 2 * h, 2 * h])


_SHAPE_BUILDERS = {
    "asymmetric_box": _asymmetric_box_patches,
    "l_bracket": _l_bracket_patches,
    "cylinder_with_notch": _cylinder_with_notch_patches,
    "cone": _cone_patches,
    "symmetric_cylinder": _symmetric_cylinder_patches,
    "symmetric_box": _symmetric_box_patches,
}


def _sample_surface(patches, n, rng):
    areas = np.array([p.area for p in patches])
    probs = areas / areas.sum()
    pool = []
    have = 0
    while have < n:
        counts = rng.multinomial(max(4 * n, 256), probs)
        for patch, count in zip(patches, counts):
            if count == 0:
                continue
            pts = patch.sample(rng, int(count))
            if patch.accept is not None:
                pts = pts[patch.accept(pts)]
            if len(pts):
                pool.append(pts)
                have += len(pts)
    pool = np.concatenate(pool, axis=0)
    # Global shuffle before trimming: a prefix of the patch-ordered pool
    # would oversample early patches, breaking uniformity on the union.
    order = rng.permutation(len(pool))
    return pool[order[:n]]


def make_canonical_shape(kind, n_points, rng):
    """Surface-sample a unit-scale shape; returns (points, size extents)."""
    if kind not in _SHAPE_BUILDERS:
        raise UnknownKindError(f"unknown shape kind {kind!r}")
    if n_points < MIN_POINTS:
        raise WrongPointCountError(f"need at least {MIN_POINTS} points")
    patches, size = _SHAPE_BUILDERS[kind]()
    return _sample_surface(patches, n_points, rng), size


def render_instance(
    kind, points, size, r_gt, center, cfg, rng, instance_id=0, split="train", category=0
):
    """Pose, noise, and occlude a canonical cloud into a SceneInstance."""
    center = np.asarray(center, dtype=np.float64)
    observed = points @ r_gt.T + center
    if cfg.noise_sigma > 0:
        noise = rng.normal(0.0, cfg.noise_sigma, observed.shape)
        # Clip noise vector length at 3 sigma so observed points stay inside
        # the gt box inflated by 3 sigma on every axis.
        length = np.linalg.norm(noise, axis=1, keepdims=True)
        cap = 3.0 * cfg.noise_sigma
        observed = observed + noise * np.minimum(1.0, cap / np.maximum(length, 1e-300))
    if cfg.occlusion_fraction > 0:
        n = observed.shape[0]
        drop = math.floor(cfg.occlusion_fraction * n)
        if drop > 0:
            direction = rng.normal(size=3)
            length = np.linalg.norm(direction)
            direction = direction / length if length > 1e-12 else np.array([1.0, 0, 0])
            # Drop the `drop` points farthest along the direction; this is a
            # half-space cut through the cloud positioned to remove exactly
            # that fraction.
            proj = (observed - observed.mean(axis=0)) @ direction
            keep = np.sort(np.argsort(proj, kind="stable")[: n - drop])
            observed = observed[keep]
    inst = SceneInstance(
        category=category,
        kind=kind,
        observed=observed,
        gt_rotation=r_gt,
        gt_center=center,
        gt_size=np.asarray(size, dtype=np.float64),
        instance_id=instance_id,
        split=split,
    )
    inst.validate(noise_sigma=cfg.noise_sigma)
    return inst


def _instance_kind(cfg, instance_id):
    return cfg.categories[instance_id % len(cfg.categories)]


def _instance_rng(cfg, instance_id):
    return np.random.default_rng([cfg.seed, instance_id])


def _synth_instance(cfg, instance_id, split):
    """Build instance `instance_id` from scratch; the single generation path.

    Draw order is fixed: shape points, scale, rotation, center, then the
    render draws (noise, occlusion direction).
    """
    kind = _instance_kind(cfg, instance_id)
    rng = _instance_rng(cfg, instance_id)
    points, size = make_canonical_shape(kind, cfg.points_per_instance, rng)
    scale = float(rng.uniform(0.5, 1.5))
    r_gt = so3.sample_uniform(rng)
    center = rng.uniform(-0.3, 0.3, 3)
    return render_instance(
        kind,
        points * scale,
        size * scale,
        r_gt,
        center,
        cfg,
        rng,
        instance_id=instance_id,
        split=split,
        category=cfg.categories.index(kind),
    )


def canonical_points(cfg, instance_id):
    """Regenerate the scaled canonical cloud of an instance (for ADD-S)."""
    kind = _instance_kind(cfg, instance_id)
    rng = _instance_rng(cfg, instance_id)
    points, _ = make_canonical_shape(kind, cfg.points_per_instance, rng)
    return points * float(rng.uniform(0.5, 1.5))


def _point_file(instance_id):
    return os.path.join("points", f"instance_{instance_id:06d}.txt")


def _write_points(path, points):
    lines = [",".join(repr(float(v)) for v in row) for row in points]
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def _read_points(path):
    rows = []
    with open(path) as f:
        for line in f:
            x, y, z = line.strip().split(",")
            rows.append([float(x), float(y), float(z)])
    return np.array(rows, dtype=np.float64)


def generate_dataset(cfg, out_dir):
    """Write manifest.json plus one point file per instance; returns manifest path."""
    cfg.validate()
    os.makedirs(os.path.join(out_dir, "points"), exist_ok=True)
    records = []
    ids = [(i, "train") for i in range(cfg.n_train)]
    ids += [(cfg.n_train + i, "test") for i in range(cfg.n_test)]
    for instance_id, split in ids:
        inst = _synth_instance(cfg, instance_id, split)
        rel = _point_file(instance_id)
        _write_points(os.path.join(out_dir, rel), inst.observed)
        records.append(
            {
                "instance_id": instance_id,
                "split": split,
                "category": inst.kind,
                "gt_rotation": [float(v) for v in inst.gt_rotation.reshape(9)],
                "gt_center": [float(v) for v in inst.gt_center],
                "gt_size": [float(v) for v in inst.gt_size],
                "point_file": rel,
            }
        )
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": cfg.to_dict(),
        "categories": list(cfg.categories),
        "instances": records,
    }
    manifest_path = os.path.join(out_dir, MANIFEST_NAME)
    with open(manifest_path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest_path


def load_dataset(data_dir):
    """Read a generated dataset; returns (cfg, instances sorted by id)."""
    with open(os.path.join(data_dir, MANIFEST_NAME)) as f:
        manifest = json.load(f)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValueError("unsupported dataset format version")
    cfg = GenConfig.from_dict(manifest["config"])
    categories = list(manifest["categories"])
    instances = []
    seen = set()
    for rec in sorted(manifest["instances"], key=lambda r: r["instance_id"]):
        instance_id = int(rec["instance_id"])
        if instance_id in seen:
            raise ValueError(f"duplicate instance_id {instance_id}")
        seen.add(instance_id)
        kind = rec["category"]
        if kind not in categories:
            raise UnknownCategoryError(f"instance category {kind!r} not in manifest")
        inst = SceneInstance(
            category=categories.index(kind),
            kind=kind,
            observed=_read_points(os.path.join(data_dir, rec["point_file"])),
            gt_rotation=np.array(rec["gt_rotation"], dtype=np.float64).reshape(3, 3),
            gt_center=np.array(rec["gt_center"], dtype=np.float64),
            gt_size=np.array(rec["gt_size"], dtype=np.float64),
            instance_id=instance_id,
            split=rec["split"],
        )
        inst.validate(noise_sigma=cfg.noise_sigma)
        instances.append(inst)
    if not instances:
        raise EmptyDatasetError("manifest lists no instances")
    return cfg, instances
