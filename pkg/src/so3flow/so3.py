"""Scalar SO(3) primitives in float64.

Conventions: rotations are 3x3 row-major matrices acting on column vectors,
tangent vectors live in the body frame, angles in radians.  Every function
validates its rotation inputs against ROTATION_TOL; batched variants of the
hot paths live in kernels.py.
"""

import math

import numpy as np

from .errors import NotRotationError, NotSkewError, SingularMatrixError

# Branch thresholds.  Below SMALL_ANGLE the closed forms divide ~theta^2 by
# ~theta^2 and lose everything, so exp/log switch to low-order expansions
# whose truncation error (~theta^2/6) is < 1e-17 there.
SMALL_ANGLE = 1e-8
# Within NEAR_PI of pi the off-diagonal difference r - r^T vanishes and the
# axis must be recovered from the symmetric part instead.
NEAR_PI = 1e-6
# Frobenius tolerance on ||R^T R - I|| and |det R - 1|.
ROTATION_TOL = 1e-9

# acos((tr-1)/2) loses ~1/sin(theta) digits for tiny theta; below this cutoff
# theta is re-derived from the antisymmetric part, which stays well
# conditioned.  At 1e-4 the acos route is still good to ~2e-12, so the two
# agree across the seam.
_ACOS_REFINE = 1e-4
# Smallest singular value treated as rank deficiency in the polar projection.
_RANK_TOL = 1e-12
# Axis components below this count as zero for the antipodal sign convention.
_AXIS_ZERO = 1e-9


def hat(v):
    """Map a 3-vector to the antisymmetric matrix with hat(v) @ u = v x u."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (3,):
        raise ValueError(f"expected shape (3,), got {v.shape}")
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def vee(m, tol=1e-9):
    """Inverse of hat.

    Raises NotSkewError if ||m + m^T|| exceeds tol in Frobenius norm.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (3, 3):
        raise ValueError(f"expected shape (3, 3), got {m.shape}")
    if np.linalg.norm(m + m.T) > tol:
        raise NotSkewError("matrix is not antisymmetric within tolerance")
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def is_rotation(m, tol=ROTATION_TOL):
    """True if m is orthogonal with determinant 1 within tol."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (3, 3):
        return False
    if not np.all(np.isfinite(m)):
        return False
    if np.linalg.norm(m.T @ m - np.eye(3)) > tol:
        return False
    return abs(np.linalg.det(m) - 1.0) <= tol


def check_rotation(m, tol=ROTATION_TOL):
    """Return m as float64 after validating it; raises NotRotationError."""
    m = np.asarray(m, dtype=np.float64)
    if not is_rotation(m, tol):
        raise NotRotationError("matrix is not a rotation within tolerance")
    return m


def exp_map(v):
    """Rodrigues exponential of a tangent vector.

    Args:
        v: (3,) axis-angle vector; its norm is the rotation angle.

    Returns:
        (3, 3) rotation matrix.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (3,):
        raise ValueError(f"expected shape (3,), got {v.shape}")
    theta2 = float(v @ v)
    theta = math.sqrt(theta2)
    k = hat(v)
    if theta < SMALL_ANGLE:
        # Truncation error ~theta^2/6 < 1e-17, below float64 resolution.
        r = np.eye(3) + k + 0.5 * (k @ k)
    else:
        a = math.sin(theta) / theta
        b = (1.0 - math.cos(theta)) / theta2
        r = np.eye(3) + a * k + b * (k @ k)
    assert is_rotation(r)
    return r


def _log_unchecked(r):
    """log_map body without input validation; r must already be float64."""
    c = (float(np.trace(r)) - 1.0) / 2.0
    c = min(1.0, max(-1.0, c))
    theta = math.acos(c)
    # w = vee((r - r^T)/2); its norm equals sin(theta) exactly in real
    # arithmetic, which both small branches below lean on.
    w = 0.5 * np.array(
        [r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]]
    )
    sn = float(np.linalg.norm(w))
    if theta < SMALL_ANGLE:
        # sin(theta) ~ theta: relative error theta^2/6 < 1e-17.
        return w
    if math.pi - theta < NEAR_PI:
        # Near pi, r - r^T ~ 0 and acos loses ~1/sin(theta) digits.  The
        # angle comes from the antisymmetric norm (sin(pi - theta)), the
        # axis from the symmetric part, whose diagonal equals that of
        # (r + I)/2: the largest entry picks the best-conditioned column
        # and the off-diagonal entries fix the relative signs.  Removing
        # the isotropic (1 + c)/2 term leaves the column proportional to
        # the axis exactly.
        theta = math.pi - math.asin(min(sn, 1.0))
        s = 0.25 * (r + r.T) + 0.5 * np.eye(3)
        i = int(np.argmax(np.diag(s)))
        axis = s[:, i].copy()
        axis[i] -= 0.5 * (1.0 + c)
        axis = axis / np.linalg.norm(axis)
        # Canonical sign: first component of magnitude > _AXIS_ZERO is
        # positive (the axis is only defined up to sign at pi).
        for comp in axis:
            if abs(comp) > _AXIS_ZERO:
                if comp < 0.0:
                    axis = -axis
                break
        return theta * axis
    if sn == 0.0:
        # Exactly symmetric input with theta just above the series branch:
        # only reachable through rounding on near-identity products, where
        # the zero vector is also the correct log.
        return w
    if theta < _ACOS_REFINE:
        # acos is ill-conditioned here (error ~eps/sin(theta)); asin of the
        # antisymmetric-part norm recovers theta to full precision.
        theta = math.asin(min(sn, 1.0))
    return (theta / sn) * w


def log_map(r):
    """Principal logarithm of a rotation.

    Args:
        r: (3, 3) rotation matrix.

    Returns:
        (3,) axis-angle vector with norm in [0, pi].
    """
    return _log_unchecked(check_rotation(r))


def geodesic_distance(a, b):
    """Angle of the relative rotation a^T b, in radians."""
    a = check_rotation(a)
    b = check_rotation(b)
    # The product can drift slightly past ROTATION_TOL even for valid
    # inputs, so skip revalidation and take the log directly.
    return float(np.linalg.norm(_log_unchecked(a.T @ b)))


def _quat_to_matrix(q):
    """Rotation matrix of a unit quaternion (w, x, y, z)."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def sample_uniform(rng):
    """Draw a rotation from the uniform (Haar) distribution.

    Normalizing a 4-vector of i.i.d. standard normals gives a uniform unit
    quaternion; both antipodes map to the same matrix.

    Args:
        rng: numpy Generator.
    """
    q = rng.standard_normal(4)
    q = q / np.linalg.norm(q)
    r = _quat_to_matrix(q)
    assert is_rotation(r)
    return r


def project_to_rotation(m):
    """Nearest rotation in Frobenius norm, via SVD.

    Raises SingularMatrixError when the smallest singular value is below
    1e-12, where the projection is not unique.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (3, 3):
        raise ValueError(f"expected shape (3, 3), got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains non-finite entries")
    u, sv, vt = np.linalg.svd(m)
    if sv[-1] < _RANK_TOL:
        raise SingularMatrixError("matrix is rank-deficient")
    d = np.sign(np.linalg.det(u @ vt))
    r = u @ np.diag([1.0, 1.0, d]) @ vt
    assert is_rotation(r)
    return r
