import numpy as np
import pytest

from so3flow import kernels, so3
from so3flow.errors import BadKError


def brute_force_fps(points, k, seed_index):
    """Greedy max-min reference: scan the whole candidate set each step,
    strictly-greater comparison keeps the lowest index on ties."""
    selected = [seed_index]
    for _ in range(k - 1):
        best_i, best_d = -1, -1.0
        for i in range(len(points)):
            if i in selected:
                continue
            d = min(np.linalg.norm(points[i] - points[j]) for j in selected)
            if d > best_d:
                best_d, best_i = d, i
        selected.append(best_i)
    return np.array(selected, dtype=np.int64)


def all_fps_impls():
    impls = [kernels._fps_indices_np]
    if kernels.BACKEND == "numba":
        impls.append(kernels._fps_indices_nb)
    return impls


def test_fps_collinear_endpoints():
    pts = np.zeros((10, 3))
    pts[:, 0] = np.arange(10.0)
    for impl in all_fps_impls():
        assert set(impl(pts, 2, 0)) == {0, 9}


def test_fps_equals_brute_force():
    rng = np.random.default_rng(11)
    for trial in range(10):
        n = int(rng.integers(5, 40))
        pts = rng.normal(size=(n, 3))
        k = int(rng.integers(1, n + 1))
        seed = int(rng.integers(0, n))
        ref = brute_force_fps(pts, k, seed)
        for impl in all_fps_impls():
            assert np.array_equal(impl(pts, k, seed), ref)


def test_fps_full_k_is_permutation_with_duplicates():
    # Cyclic padding creates exact duplicates; k = n must still return
    # every index exactly once.
    rng = np.random.default_rng(12)
    base = rng.normal(size=(6, 3))
    pts = np.concatenate([base, base[:4]])
    idx = kernels.fps_indices(pts, len(pts), 0)
    assert sorted(idx.tolist()) == list(range(len(pts)))


def test_fps_backends_agree():
    if kernels.BACKEND != "numba":
        pytest.skip("numba backend not active")
    rng = np.random.default_rng(13)
    pts = rng.normal(size=(700, 3))
    a = kernels._fps_indices_np(pts, 512, 0)
    b = kernels._fps_indices_nb(pts, 512, 0)
    assert np.array_equal(a, b)


def test_fps_validation():
    pts = np.zeros((4, 3))
    with pytest.raises(BadKError):
        kernels.fps_indices(pts, 5, 0)
    with pytest.raises(BadKError):
        kernels.fps_indices(pts, 0, 0)
    with pytest.raises(ValueError):
        kernels.fps_indices(pts, 2, 7)


def test_nn_mean_dist_brute_force():
    rng = np.random.default_rng(14)
    a = rng.normal(size=(30, 3))
    b = rng.normal(size=(50, 3))
    ref = np.mean(
        [min(np.linalg.norm(p - q) for q in b) for p in a]
    )
    assert np.isclose(kernels.nn_mean_dist(a, b), ref, atol=1e-12)
    assert np.isclose(kernels._nn_mean_dist_np(a, b), ref, atol=1e-12)


def test_nn_mean_dist_zero_on_self():
    rng = np.random.default_rng(15)
    a = rng.normal(size=(20, 3))
    assert kernels.nn_mean_dist(a, a) == 0.0


def test_nn_spacing_matches_brute_force():
    rng = np.random.default_rng(16)
    pts = rng.normal(size=(40, 3))
    ref = np.mean(
        [
            min(
                np.linalg.norm(pts[i] - pts[j])
                for j in range(len(pts))
                if j != i
            )
            for i in range(len(pts))
        ]
    )
    assert np.isclose(kernels.nn_spacing(pts), ref, atol=1e-12)


def test_batch_exp_matches_scalar():
    rng = np.random.default_rng(17)
    mags = np.concatenate(
        [np.logspace(-12, 0.49, 80), np.array([0.0, 1e-8, 3.1, 3.141])]
    )
    axes = rng.normal(size=(len(mags), 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    omegas = axes * mags[:, None]
    got = kernels.batch_exp(omegas)
    got_np = kernels._batch_exp_np(omegas)
    for i, w in enumerate(omegas):
        ref = so3.exp_map(w)
        assert np.linalg.norm(got[i] - ref) < 1e-14
        assert np.linalg.norm(got_np[i] - ref) < 1e-14


def test_batch_log_matches_scalar():
    rng = np.random.default_rng(18)
    rs = [so3.sample_uniform(rng) for _ in range(200)]
    # Add branch extremes: identity, tiny, near pi.
    rs.append(np.eye(3))
    rs.append(so3.exp_map([1e-10, 2e-10, -1e-10]))
    rs.append(so3.exp_map(np.array([1.0, 1.0, 1.0]) / np.sqrt(3) * (np.pi - 1e-7)))
    rs = np.array(rs)
    got = kernels.batch_log(rs)
    got_np = kernels._batch_log_np(rs)
    for i in range(len(rs)):
        ref = so3.log_map(rs[i])
        assert np.linalg.norm(got[i] - ref) < 1e-12
        assert np.linalg.norm(got_np[i] - ref) < 1e-12


def test_quats_match_scalar_formula():
    rng = np.random.default_rng(19)
    q = rng.standard_normal((50, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    got = kernels.quats_to_matrices(q)
    for i in range(len(q)):
        ref = so3._quat_to_matrix(q[i])
        assert np.linalg.norm(got[i] - ref) < 1e-15


def test_sample_uniform_batch_valid():
    rng = np.random.default_rng(20)
    rs = kernels.sample_uniform_batch(rng, 100)
    for r in rs:
        assert so3.is_rotation(r, tol=1e-12)


def test_numpy_backend_env_flag():
    import subprocess
    import sys

    code = "import so3flow.kernels as k; print(k.BACKEND)"
    out = subprocess.run(
        [sys.executable, "-c", code],
        env={"PATH": "/usr/bin:/bin", "SO3FLOW_NUMBA": "0"},
        capture_output=True,
        text=True,
    )
    assert out.stdout.strip() == "numpy"
