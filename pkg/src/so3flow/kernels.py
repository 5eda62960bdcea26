"""Batched hot kernels with a jitted and a pure-numpy implementation.

The jitted path is used when numba imports cleanly; setting SO3FLOW_NUMBA=0
in the environment forces the numpy path (BACKEND tells which one won).
Index-producing kernels (fps_indices) select identically on both backends;
distance reductions agree to float rounding, not bitwise.

Scalar reference semantics live in so3.py; equivalence is enforced by the
test-suite over both implementations regardless of the active backend.
"""

import math
import os

import numpy as np

from . import so3
from .errors import BadKError

_SMALL = so3.SMALL_ANGLE
_NEAR_PI = so3.NEAR_PI
_REFINE = 1e-4


# ---------------------------------------------------------------------------
# numpy implementations


def _fps_indices_np(points, k, seed_index):
    n = points.shape[0]
    out = np.empty(k, dtype=np.int64)
    out[0] = seed_index
    # dist[i] = min squared distance from i to the selected set; selected
    # entries are pinned to -1 so duplicates can never be re-picked.
    diff = points - points[seed_index]
    dist = np.einsum("ij,ij->i", diff, diff)
    dist[seed_index] = -1.0
    for m in range(1, k):
        nxt = int(np.argmax(dist))
        out[m] = nxt
        diff = points - points[nxt]
        d2 = np.einsum("ij,ij->i", diff, diff)
        np.minimum(dist, d2, out=dist)
        dist[nxt] = -1.0
    return out


def _nn_min_dists_np(a, b):
    # Row-wise min distances, chunked so the pairwise block stays small.
    na = a.shape[0]
    out = np.empty(na)
    step = max(1, 2**22 // max(1, b.shape[0]))
    for s in range(0, na, step):
        block = a[s : s + step]
        d2 = (
            np.sum(block * block, axis=1)[:, None]
            - 2.0 * (block @ b.T)
            + np.sum(b * b, axis=1)[None, :]
        )
        out[s : s + step] = np.sqrt(np.maximum(d2.min(axis=1), 0.0))
    return out


def _nn_mean_dist_np(a, b):
    return float(np.mean(_nn_min_dists_np(a, b)))


def _nn_spacing_np(points):
    n = points.shape[0]
    d2 = (
        np.sum(points * points, axis=1)[:, None]
        - 2.0 * (points @ points.T)
        + np.sum(points * points, axis=1)[None, :]
    )
    np.fill_diagonal(d2, np.inf)
    return float(np.mean(np.sqrt(np.maximum(d2.min(axis=1), 0.0))))


def _batch_exp_np(omegas):
    n = omegas.shape[0]
    t2 = np.einsum("ij,ij->i", omegas, omegas)
    t = np.sqrt(t2)
    small = t < _SMALL
    a = np.empty(n)
    b = np.empty(n)
    # Low-order series below the threshold, matching the scalar branch.
    a[small] = 1.0
    b[small] = 0.5
    ts = t[~small]
    a[~small] = np.sin(ts) / ts
    b[~small] = (1.0 - np.cos(ts)) / t2[~small]
    x, y, z = omegas[:, 0], omegas[:, 1], omegas[:, 2]
    out = np.empty((n, 3, 3))
    # R = (1 - b t^2) I + a hat(v) + b v v^T, written entrywise.
    out[:, 0, 0] = 1.0 - b * (y * y + z * z)
    out[:, 1, 1] = 1.0 - b * (x * x + z * z)
    out[:, 2, 2] = 1.0 - b * (x * x + y * y)
    out[:, 0, 1] = b * x * y - a * z
    out[:, 1, 0] = b * x * y + a * z
    out[:, 0, 2] = b * x * z + a * y
    out[:, 2, 0] = b * x * z - a * y
    out[:, 1, 2] = b * y * z - a * x
    out[:, 2, 1] = b * y * z + a * x
    return out


def _batch_log_np(rs):
    n = rs.shape[0]
    tr = rs[:, 0, 0] + rs[:, 1, 1] + rs[:, 2, 2]
    c = np.clip((tr - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(c)
    w = 0.5 * np.stack(
        [
            rs[:, 2, 1] - rs[:, 1, 2],
            rs[:, 0, 2] - rs[:, 2, 0],
            rs[:, 1, 0] - rs[:, 0, 1],
        ],
        axis=1,
    )
    sn = np.linalg.norm(w, axis=1)
    refine = (theta >= _SMALL) & (theta < _REFINE)
    theta[refine] = np.arcsin(np.minimum(sn[refine], 1.0))
    scale = np.ones(n)
    # sn == 0 above the series branch only happens for rounding-level
    # near-identity inputs, where w = 0 is already the answer.
    mid = (theta >= _SMALL) & (sn > 0.0)
    scale[mid] = theta[mid] / sn[mid]
    out = w * scale[:, None]
    near = (math.pi - theta) < _NEAR_PI
    for i in np.nonzero(near)[0]:
        out[i] = so3._log_unchecked(rs[i])
    return out


def _quats_to_matrices_np(q):
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    out = np.empty((q.shape[0], 3, 3))
    out[:, 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    out[:, 0, 1] = 2.0 * (x * y - w * z)
    out[:, 0, 2] = 2.0 * (x * z + w * y)
    out[:, 1, 0] = 2.0 * (x * y + w * z)
    out[:, 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    out[:, 1, 2] = 2.0 * (y * z - w * x)
    out[:, 2, 0] = 2.0 * (x * z - w * y)
    out[:, 2, 1] = 2.0 * (y * z + w * x)
    out[:, 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return out


# ---------------------------------------------------------------------------
# numba implementations

_want_numba = os.environ.get("SO3FLOW_NUMBA", "1") != "0"
BACKEND = "numpy"

if _want_numba:
    try:
        from numba import njit
    except ImportError:
        njit = None
    if njit is not None:
        BACKEND = "numba"

        @njit(cache=True)
        def _fps_indices_nb(points, k, seed_index):
            n = points.shape[0]
            out = np.empty(k, dtype=np.int64)
            out[0] = seed_index
            dist = np.empty(n)
            for i in range(n):
                dx = points[i, 0] - points[seed_index, 0]
                dy = points[i, 1] - points[seed_index, 1]
                dz = points[i, 2] - points[seed_index, 2]
                dist[i] = dx * dx + dy * dy + dz * dz
            dist[seed_index] = -1.0
            for m in range(1, k):
                nxt = 0
                best = dist[0]
                for i in range(1, n):
                    if dist[i] > best:
                        best = dist[i]
                        nxt = i
                out[m] = nxt
                for i in range(n):
                    dx = points[i, 0] - points[nxt, 0]
                    dy = points[i, 1] - points[nxt, 1]
                    dz = points[i, 2] - points[nxt, 2]
                    d2 = dx * dx + dy * dy + dz * dz
                    if d2 < dist[i]:
                        dist[i] = d2
                dist[nxt] = -1.0
            return out

        @njit(cache=True)
        def _nn_min_dists_nb(a, b):
            na = a.shape[0]
            nb = b.shape[0]
            out = np.empty(na)
            for i in range(na):
                best = np.inf
                for j in range(nb):
                    dx = a[i, 0] - b[j, 0]
                    dy = a[i, 1] - b[j, 1]
                    dz = a[i, 2] - b[j, 2]
                    d2 = dx * dx + dy * dy + dz * dz
                    if d2 < best:
                        best = d2
                out[i] = math.sqrt(best)
            return out

        @njit(cache=True)
        def _nn_mean_dist_nb(a, b):
            return float(np.mean(_nn_min_dists_nb(a, b)))

        @njit(cache=True)
        def _nn_spacing_nb(points):
            n = points.shape[0]
            acc = 0.0
            for i in range(n):
                best = np.inf
                for j in range(n):
                    if j == i:
                        continue
                    dx = points[i, 0] - points[j, 0]
                    dy = points[i, 1] - points[j, 1]
                    dz = points[i, 2] - points[j, 2]
                    d2 = dx * dx + dy * dy + dz * dz
                    if d2 < best:
                        best = d2
                acc += math.sqrt(best)
            return acc / n

        @njit(cache=True)
        def _batch_exp_nb(omegas):
            n = omegas.shape[0]
            out = np.empty((n, 3, 3))
            for i in range(n):
                x, y, z = omegas[i, 0], omegas[i, 1], omegas[i, 2]
                t2 = x * x + y * y + z * z
                t = math.sqrt(t2)
                if t < _SMALL:
                    a = 1.0
                    b = 0.5
                else:
                    a = math.sin(t) / t
                    b = (1.0 - math.cos(t)) / t2
                out[i, 0, 0] = 1.0 - b * (y * y + z * z)
                out[i, 1, 1] = 1.0 - b * (x * x + z * z)
                out[i, 2, 2] = 1.0 - b * (x * x + y * y)
                out[i, 0, 1] = b * x * y - a * z
                out[i, 1, 0] = b * x * y + a * z
                out[i, 0, 2] = b * x * z + a * y
                out[i, 2, 0] = b * x * z - a * y
                out[i, 1, 2] = b * y * z - a * x
                out[i, 2, 1] = b * y * z + a * x
            return out

        @njit(cache=True)
        def _batch_log_nb(rs):
            n = rs.shape[0]
            out = np.empty((n, 3))
            for i in range(n):
                r = rs[i]
                c = (r[0, 0] + r[1, 1] + r[2, 2] - 1.0) / 2.0
                if c > 1.0:
                    c = 1.0
                elif c < -1.0:
                    c = -1.0
                theta = math.acos(c)
                wx = 0.5 * (r[2, 1] - r[1, 2])
                wy = 0.5 * (r[0, 2] - r[2, 0])
                wz = 0.5 * (r[1, 0] - r[0, 1])
                sn = math.sqrt(wx * wx + wy * wy + wz * wz)
                if theta < _SMALL:
                    out[i, 0] = wx
                    out[i, 1] = wy
                    out[i, 2] = wz
                    continue
                if math.pi - theta < _NEAR_PI:
                    theta = math.pi - math.asin(min(sn, 1.0))
                    s00 = 0.5 * (r[0, 0] + 1.0)
                    s11 = 0.5 * (r[1, 1] + 1.0)
                    s22 = 0.5 * (r[2, 2] + 1.0)
                    iso = 0.5 * (1.0 + c)
                    ax = np.empty(3)
                    if s00 >= s11 and s00 >= s22:
                        ax[0] = s00 - iso
                        ax[1] = 0.25 * (r[1, 0] + r[0, 1])
                        ax[2] = 0.25 * (r[2, 0] + r[0, 2])
                    elif s11 >= s00 and s11 >= s22:
                        ax[0] = 0.25 * (r[0, 1] + r[1, 0])
                        ax[1] = s11 - iso
                        ax[2] = 0.25 * (r[2, 1] + r[1, 2])
                    else:
                        ax[0] = 0.25 * (r[0, 2] + r[2, 0])
                        ax[1] = 0.25 * (r[1, 2] + r[2, 1])
                        ax[2] = s22 - iso
                    nrm = math.sqrt(ax[0] ** 2 + ax[1] ** 2 + ax[2] ** 2)
                    for d in range(3):
                        ax[d] /= nrm
                    for d in range(3):
                        if abs(ax[d]) > 1e-9:
                            if ax[d] < 0.0:
                                ax[0] = -ax[0]
                                ax[1] = -ax[1]
                                ax[2] = -ax[2]
                            break
                    out[i, 0] = theta * ax[0]
                    out[i, 1] = theta * ax[1]
                    out[i, 2] = theta * ax[2]
                    continue
                if sn == 0.0:
                    out[i, 0] = wx
                    out[i, 1] = wy
                    out[i, 2] = wz
                    continue
                if theta < _REFINE:
                    theta = math.asin(min(sn, 1.0))
                scale = theta / sn
                out[i, 0] = scale * wx
                out[i, 1] = scale * wy
                out[i, 2] = scale * wz
            return out

        @njit(cache=True)
        def _quats_to_matrices_nb(q):
            n = q.shape[0]
            out = np.empty((n, 3, 3))
            for i in range(n):
                w, x, y, z = q[i, 0], q[i, 1], q[i, 2], q[i, 3]
                out[i, 0, 0] = 1.0 - 2.0 * (y * y + z * z)
                out[i, 0, 1] = 2.0 * (x * y - w * z)
                out[i, 0, 2] = 2.0 * (x * z + w * y)
                out[i, 1, 0] = 2.0 * (x * y + w * z)
                out[i, 1, 1] = 1.0 - 2.0 * (x * x + z * z)
                out[i, 1, 2] = 2.0 * (y * z - w * x)
                out[i, 2, 0] = 2.0 * (x * z - w * y)
                out[i, 2, 1] = 2.0 * (y * z + w * x)
                out[i, 2, 2] = 1.0 - 2.0 * (x * x + y * y)
            return out


# ---------------------------------------------------------------------------
# public dispatch


def _as_points(a, name):
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != 3:
        raise ValueError(f"{name} must have shape (n, 3), got {a.shape}")
    return a


def fps_indices(points, k, seed_index=0):
    """Greedy farthest-point sampling.

    The first selected index is seed_index; each next pick maximizes the
    minimum distance to everything selected so far, ties broken by lowest
    index. Selection is identical on both backends.

    Args:
        points: (n, 3) array.
        k: number of indices to select, 1 <= k <= n.
        seed_index: index of the first selection.

    Returns:
        (k,) int64 indices.
    """
    points = _as_points(points, "points")
    n = points.shape[0]
    if not 1 <= k <= n:
        raise BadKError(f"k={k} outside [1, {n}]")
    if not 0 <= seed_index < n:
        raise ValueError(f"seed_index={seed_index} outside [0, {n})")
    if BACKEND == "numba":
        return _fps_indices_nb(points, k, seed_index)
    return _fps_indices_np(points, k, seed_index)


def nn_mean_dist(a, b):
    """Mean over rows of a of the distance to the nearest row of b."""
    a = _as_points(a, "a")
    b = _as_points(b, "b")
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("point sets must be non-empty")
    if BACKEND == "numba":
        return float(_nn_mean_dist_nb(a, b))
    return _nn_mean_dist_np(a, b)


def nn_spacing(points):
    """Mean distance from each point to its nearest other point."""
    points = _as_points(points, "points")
    if points.shape[0] < 2:
        raise ValueError("need at least two points")
    if BACKEND == "numba":
        return float(_nn_spacing_nb(points))
    return _nn_spacing_np(points)


def batch_exp(omegas):
    """Rodrigues exponential over a batch of (n, 3) tangent vectors."""
    omegas = _as_points(omegas, "omegas")
    if BACKEND == "numba":
        return _batch_exp_nb(omegas)
    return _batch_exp_np(omegas)


def batch_log(rs):
    """Principal log over a batch of (n, 3, 3) rotations.

    Inputs are assumed valid rotations; validation stays with the scalar
    entry points.
    """
    rs = np.ascontiguousarray(rs, dtype=np.float64)
    if rs.ndim != 3 or rs.shape[1:] != (3, 3):
        raise ValueError(f"expected shape (n, 3, 3), got {rs.shape}")
    if BACKEND == "numba":
        return _batch_log_nb(rs)
    return _batch_log_np(rs)


def quats_to_matrices(q):
    """Rotation matrices of unit quaternions, rows (w, x, y, z)."""
    q = np.ascontiguousarray(q, dtype=np.float64)
    if q.ndim != 2 or q.shape[1] != 4:
        raise ValueError(f"expected shape (n, 4), got {q.shape}")
    if BACKEND == "numba":
        return _quats_to_matrices_nb(q)
    return _quats_to_matrices_np(q)


def sample_uniform_batch(rng, n):
    """n Haar-uniform rotations from normalized 4-normal quaternions."""
    q = rng.standard_normal((n, 4))
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    return quats_to_matrices(q)
