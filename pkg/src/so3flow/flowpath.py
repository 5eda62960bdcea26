"""Reflected geodesic path between rotations and its supervision targets.

The path runs from r0 at t = 0 to r1 at t = 0.5 along the geodesic and
retraces itself back to r0 by t = 1. The body-frame velocity is piecewise
constant: +2 omega on the way out, -2 omega on the way back, with t = 0.5
assigned to the outgoing branch.
"""

from dataclasses import dataclass

import numpy as np

from . import so3
from .errors import TimeOutOfRangeError


@dataclass(frozen=True)
class FlowSample:
    """One supervision point on a reflected path."""

    r_t: np.ndarray  # (3, 3) rotation at time t
    t: float
    target_v: np.ndarray  # (3,) body-frame regression target
    omega: np.ndarray  # (3,) log(r0^T r1)
    r0: np.ndarray
    r1: np.ndarray


def _check_t(t):
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise TimeOutOfRangeError(f"t={t} outside [0, 1]")
    return t


def relative_tangent(r0, r1):
    """log of the relative rotation r0^T r1, in the body frame of r0."""
    r0 = so3.check_rotation(r0)
    r1 = so3.check_rotation(r1)
    # The product of two valid rotations can drift past the validation
    # tolerance, so take the unchecked log.
    return so3._log_unchecked(r0.T @ r1)


def path_point(r0, r1, t):
    """Rotation on the reflected path at time t.

    Outgoing branch r0 exp(2 t omega) for t <= 0.5, returning branch
    r1 exp(-(2t - 1) omega) afterwards; the two meet at r1 for t = 0.5.
    """
    t = _check_t(t)
    omega = relative_tangent(r0, r1)
    if t <= 0.5:
        return np.asarray(r0, dtype=np.float64) @ so3.exp_map(2.0 * t * omega)
    return np.asarray(r1, dtype=np.float64) @ so3.exp_map(-(2.0 * t - 1.0) * omega)


def target_velocity(t, omega):
    """Body-frame path velocity: +2 omega for t <= 0.5, -2 omega after."""
    t = _check_t(t)
    omega = np.asarray(omega, dtype=np.float64)
    if omega.shape != (3,):
        raise ValueError(f"expected shape (3,), got {omega.shape}")
    if t <= 0.5:
        return 2.0 * omega
    return -2.0 * omega


def sample_flow(rng, r1):
    """Draw one training point: Haar r0, uniform t, state and target on
    the reflected path toward r1."""
    r1 = so3.check_rotation(r1)
    r0 = so3.sample_uniform(rng)
    t = float(rng.uniform())
    omega = so3._log_unchecked(r0.T @ r1)
    if t <= 0.5:
        r_t = r0 @ so3.exp_map(2.0 * t * omega)
        target = 2.0 * omega
    else:
        r_t = r1 @ so3.exp_map(-(2.0 * t - 1.0) * omega)
        target = -2.0 * omega
    return FlowSample(r_t=r_t, t=t, target_v=target, omega=omega, r0=r0, r1=r1)
