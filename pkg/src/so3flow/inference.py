"""Rotation integration on SO(3) and full pose estimation.

The learned velocity field is integrated from t_start to t_end (default
[0, 0.5], where the flow path reaches the target) with Heun's method or
explicit Euler, composing each increment through the exponential map so
iterates stay on the manifold; accumulated drift beyond tolerance is
projected away.
"""

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import so3
from .errors import SingularMatrixError
from .nn import prepare_cloud

# field(r, t) -> body-frame velocity (3,)
VelocityField = Callable[[np.ndarray, float], np.ndarray]

SCHEMES = ("rk2", "euler")
INIT_MODES = ("identity", "uniform", "given")

# Frobenius drift beyond which an iterate is re-projected onto SO(3).
_DRIFT_TOL = 1e-9


@dataclass
class IntegratorConfig:
    n_steps: int = 5
    t_start: float = 0.0
    t_end: float = 0.5
    scheme: str = "rk2"
    n_hypotheses: int = 1
    init: str = "identity"
    init_rotation: Optional[np.ndarray] = None

    def validate(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be at least 1")
        if not 0.0 <= self.t_start < self.t_end <= 1.0:
            raise ValueError("need 0 <= t_start < t_end <= 1")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.init not in INIT_MODES:
            raise ValueError(f"init must be one of {INIT_MODES}")
        if self.n_hypotheses < 1:
            raise ValueError("n_hypotheses must be at least 1")
        if self.init == "given":
            if self.init_rotation is None:
                raise ValueError("init='given' requires init_rotation")
            so3.check_rotation(self.init_rotation)


@dataclass
class PoseEstimate:
    rotation: np.ndarray
    center: np.ndarray
    size: np.ndarray


def euler_step(r, t, dt, field):
    """r exp(dt f(r, t))."""
    return r @ so3.exp_map(dt * np.asarray(field(r, t), dtype=np.float64))


def rk2_step(r, t, dt, field):
    """Heun step: average the field at the state and at an Euler probe."""
    w1 = np.asarray(field(r, t), dtype=np.float64)
    r_prov = r @ so3.exp_map(dt * w1)
    w2 = np.asarray(field(r_prov, t + dt), dtype=np.float64)
    return r @ so3.exp_map(0.5 * dt * (w1 + w2))


def integrate(r_init, field, cfg):
    """Integrate the field from t_start to t_end starting at r_init."""
    cfg.validate()
    r = so3.check_rotation(r_init)
    dt = (cfg.t_end - cfg.t_start) / cfg.n_steps
    step = rk2_step if cfg.scheme == "rk2" else euler_step
    for k in range(cfg.n_steps):
        t = cfg.t_start + k * dt
        r = step(r, t, dt, field)
        if np.linalg.norm(r.T @ r - np.eye(3)) > _DRIFT_TOL:
            r = so3.project_to_rotation(r)
    assert so3.is_rotation(r, tol=1e-6)
    return r


def _initial_rotations(cfg, rng):
    if cfg.init == "identity":
        return [np.eye(3) for _ in range(cfg.n_hypotheses)]
    if cfg.init == "given":
        base = so3.check_rotation(cfg.init_rotation)
        return [base.copy() for _ in range(cfg.n_hypotheses)]
    if rng is None:
        rng = np.random.default_rng(0)
    return [so3.sample_uniform(rng) for _ in range(cfg.n_hypotheses)]


def chordal_mean(rotations):
    """Projection of the entrywise mean onto SO(3).

    Falls back to the first input in the degenerate case where the mean
    matrix is rank-deficient (antipodal inputs).
    """
    mean = np.mean(np.asarray(rotations, dtype=np.float64), axis=0)
    try:
        return so3.project_to_rotation(mean)
    except SingularMatrixError:
        return np.asarray(rotations[0], dtype=np.float64)


def estimate_rotation(model, z, cfg, rng=None):
    """Integrate the learned field from each hypothesis and aggregate.

    For direct-regression models the head output is projected instead;
    the integrator settings are ignored in that mode.
    """
    if model.cfg.rotation_mode == "matrix":
        return so3.project_to_rotation(model.regress_matrix(z))
    cfg.validate()

    def field(r, t):
        return model.velocity(r, t, z)

    finals = [integrate(r0, field, cfg) for r0 in _initial_rotations(cfg, rng)]
    if len(finals) == 1:
        return finals[0]
    return chordal_mean(finals)


def estimate_pose(model, points, category, cfg, rng=None):
    """Full pose from an observed cloud: rotation, center, size."""
    sub, centroid = prepare_cloud(points)
    z = model.condition(sub, category)
    rotation = estimate_rotation(model, z, cfg, rng=rng)
    center = model.center(z, centroid)
    size = model.size(z)
    return PoseEstimate(rotation=rotation, center=center, size=size)
