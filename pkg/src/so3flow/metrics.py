"""Pose-error metrics and the evaluation report container.

deg_error is the geodesic angle in degrees, shift the Euclidean center
distance, adds the symmetry-aware mean closest-point distance between the
canonical cloud under the two poses. Reports are written as a per-instance
CSV plus a JSON aggregate summary; invariants are checked on every write.
"""

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import kernels, so3
from .errors import ReportInvariantError

DEG_THRESHOLD = 5.0
SHIFT_TIGHT = 0.02
SHIFT_LOOSE = 0.05

CSV_FIELDS = (
    "instance_id",
    "category",
    "deg_error",
    "shift",
    "success_5deg_2cm",
    "success_5deg_5cm",
    "adds",
    "wall_ms",
)

SUMMARY_FIELDS = (
    "n_instances",
    "mean_deg",
    "median_deg",
    "mean_shift",
    "success_rate_5deg_2cm",
    "success_rate_5deg_5cm",
    "mean_adds",
    "mean_wall_ms",
)


def metric_deg(pred, gt):
    """Geodesic angle between two rotations, in degrees."""
    return so3.geodesic_distance(pred, gt) * 180.0 / math.pi


def metric_shift(pred_center, gt_center):
    """Euclidean distance between predicted and true centers."""
    return float(np.linalg.norm(np.asarray(pred_center) - np.asarray(gt_center)))


def metric_adds(pred_pose, gt_pose, canonical):
    """Mean over gt-posed points of the distance to the nearest pred-posed point."""
    r_pred, c_pred = pred_pose
    r_gt, c_gt = gt_pose
    canonical = np.asarray(canonical, dtype=np.float64)
    posed_gt = canonical @ np.asarray(r_gt).T + np.asarray(c_gt)
    posed_pred = canonical @ np.asarray(r_pred).T + np.asarray(c_pred)
    return kernels.nn_mean_dist(posed_gt, posed_pred)


def sample_spacing(points):
    """Sampling pitch sqrt(area/n), estimated as twice the mean NN distance."""
    return 2.0 * kernels.nn_spacing(points)


def success_flags(deg_error, shift):
    """(5 degree, 2 cm) and (5 degree, 5 cm) success indicators."""
    tight = deg_error < DEG_THRESHOLD and shift < SHIFT_TIGHT
    loose = deg_error < DEG_THRESHOLD and shift < SHIFT_LOOSE
    return tight, loose


@dataclass(frozen=True)
class EvalRecord:
    instance_id: int
    category: str
    deg_error: float
    shift: float
    success_5deg_2cm: bool
    success_5deg_5cm: bool
    adds: float
    wall_ms: float


def aggregate(records):
    degs = np.array([r.deg_error for r in records])
    return {
        "n_instances": len(records),
        "mean_deg": float(np.mean(degs)),
        "median_deg": float(np.median(degs)),
        "mean_shift": float(np.mean([r.shift for r in records])),
        "success_rate_5deg_2cm": float(
            np.mean([float(r.success_5deg_2cm) for r in records])
        ),
        "success_rate_5deg_5cm": float(
            np.mean([float(r.success_5deg_5cm) for r in records])
        ),
        "mean_adds": float(np.mean([r.adds for r in records])),
        "mean_wall_ms": float(np.mean([r.wall_ms for r in records])),
    }


@dataclass(frozen=True)
class EvalReport:
    records: tuple
    summary: dict = field(default=None)

    @classmethod
    def from_records(cls, records):
        records = tuple(sorted(records, key=lambda r: r.instance_id))
        return cls(records=records, summary=aggregate(records))

    def validate(self):
        if not self.records:
            raise ReportInvariantError("report has no records")
        ids = [r.instance_id for r in self.records]
        if ids != sorted(ids) or len(set(ids)) != len(ids):
            raise ReportInvariantError("records must be sorted by unique instance_id")
        for r in self.records:
            if not 0.0 <= r.deg_error <= 180.0:
                raise ReportInvariantError(
                    f"instance {r.instance_id}: deg_error {r.deg_error} outside [0, 180]"
                )
            if r.success_5deg_2cm and not r.success_5deg_5cm:
                raise ReportInvariantError(
                    f"instance {r.instance_id}: 2cm success without 5cm success"
                )
            if r.shift < 0 or r.adds < 0 or r.wall_ms < 0:
                raise ReportInvariantError(
                    f"instance {r.instance_id}: negative metric value"
                )
        for key in ("success_rate_5deg_2cm", "success_rate_5deg_5cm"):
            if not 0.0 <= self.summary[key] <= 1.0:
                raise ReportInvariantError(f"{key} outside [0, 1]")
        if self.summary != aggregate(self.records):
            raise ReportInvariantError("summary does not match the records")


def write_report(report, csv_path, summary_path):
    """Validate and serialize a report; floats use round-trip-exact repr."""
    report.validate()
    os.makedirs(os.path.dirname(os.path.abspath(csv_path)), exist_ok=True)
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_FIELDS)
        for r in report.records:
            writer.writerow(
                [
                    r.instance_id,
                    r.category,
                    repr(r.deg_error),
                    repr(r.shift),
                    int(r.success_5deg_2cm),
                    int(r.success_5deg_5cm),
                    repr(r.adds),
                    repr(r.wall_ms),
                ]
            )
    with open(summary_path, "w") as f:
        json.dump(report.summary, f, indent=2, sort_keys=True)
        f.write("\n")


def read_report(csv_path, summary_path):
    records = []
    with open(csv_path, newline="") as f:
        reader = csv.reader(f)
        header = tuple(next(reader))
        if header != CSV_FIELDS:
            raise ReportInvariantError(f"unexpected report header: {header}")
        for row in reader:
            records.append(
                EvalRecord(
                    instance_id=int(row[0]),
                    category=row[1],
                    deg_error=float(row[2]),
                    shift=float(row[3]),
                    success_5deg_2cm=bool(int(row[4])),
                    success_5deg_5cm=bool(int(row[5])),
                    adds=float(row[6]),
                    wall_ms=float(row[7]),
                )
            )
    with open(summary_path) as f:
        summary = json.load(f)
    report = EvalReport(records=tuple(records), summary=summary)
    report.validate()
    return report
