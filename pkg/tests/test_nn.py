import numpy as np
import pytest

from so3flow import nn, so3
from so3flow.errors import (
    DimMismatchError,
    GraphNotRecordedError,
    UnknownCategoryError,
    WrongPointCountError,
)


def make_batch(rng, b=2, rotation_mode="flow"):
    batch = {
        "points": rng.normal(size=(b, nn.N_POINTS, 3)).astype(np.float32),
        "cats": rng.integers(0, 4, size=b),
        "centroid": rng.normal(size=(b, 3)),
        "gt_center": rng.normal(size=(b, 3)),
        "gt_size": rng.uniform(0.3, 1.0, size=(b, 3)),
    }
    if rotation_mode == "flow":
        batch["r_t"] = np.stack([so3.sample_uniform(rng) for _ in range(b)])
        batch["t"] = rng.uniform(size=b)
        batch["target_v"] = rng.normal(size=(b, 3))
    else:
        batch["gt_r"] = np.stack([so3.sample_uniform(rng) for _ in range(b)])
    return batch


def jitter(model, seed, scale=0.05):
    # Break the zero-init heads so gradients flow everywhere.
    rng = np.random.default_rng(seed)
    for t in model.store.tensors.values():
        t += rng.normal(scale=scale, size=t.shape).astype(t.dtype)


def fd_full(model, batch, weights, name, idx, h=1e-5):
    """Central finite difference of the total loss in a float64 clone."""
    m64 = model.clone(np.float64)
    t = m64.store.tensors[name]
    orig = float(t.flat[idx])
    t.flat[idx] = orig + h
    lp = m64.loss_and_tape(batch, weights)[0]["total"]
    t.flat[idx] = orig - h
    lm = m64.loss_and_tape(batch, weights)[0]["total"]
    t.flat[idx] = orig
    return (lp - lm) / (2.0 * h)


def test_parameter_count_under_budget():
    model = nn.Model(nn.ModelConfig())
    assert model.store.count() == 156681
    assert model.store.count() <= nn.PARAM_BUDGET
    alt = nn.Model(nn.ModelConfig(rotation_mode="matrix"))
    assert alt.store.count() <= nn.PARAM_BUDGET


def test_budget_enforced():
    with pytest.raises(ValueError):
        nn.Model(nn.ModelConfig(d_g=1024, hidden=1024))


def test_init_deterministic():
    a = nn.Model(nn.ModelConfig(seed=3))
    b = nn.Model(nn.ModelConfig(seed=3))
    for name in a.store.tensors:
        assert np.array_equal(a.store.tensors[name], b.store.tensors[name])


def test_velocity_head_zero_at_init():
    model = nn.Model(nn.ModelConfig())
    rng = np.random.default_rng(30)
    pts = rng.normal(size=(nn.N_POINTS, 3)).astype(np.float32)
    z = model.condition(pts, 1)
    v = model.velocity(so3.sample_uniform(rng), 0.3, z)
    assert np.array_equal(v, np.zeros(3))


def test_center_equals_centroid_at_init():
    model = nn.Model(nn.ModelConfig())
    rng = np.random.default_rng(31)
    pts = rng.normal(size=(nn.N_POINTS, 3)).astype(np.float32)
    z = model.condition(pts, 0)
    centroid = np.array([0.1, -0.2, 0.05])
    np.testing.assert_allclose(model.center(z, centroid), centroid, atol=1e-7)


def test_size_positive():
    model = nn.Model(nn.ModelConfig())
    jitter(model, 1, scale=0.5)
    rng = np.random.default_rng(32)
    for _ in range(5):
        pts = rng.normal(size=(nn.N_POINTS, 3)).astype(np.float32)
        z = model.condition(pts, 2)
        assert np.all(model.size(z) > 0)


def test_encoder_permutation_invariant():
    model = nn.Model(nn.ModelConfig())
    jitter(model, 2)
    rng = np.random.default_rng(33)
    pts = rng.normal(size=(nn.N_POINTS, 3)).astype(np.float32)
    perm = rng.permutation(nn.N_POINTS)
    a = model.encode_points(pts)
    b = model.encode_points(pts[perm])
    assert np.array_equal(a, b)


def test_encoder_rotation_sensitive():
    model = nn.Model(nn.ModelConfig())
    jitter(model, 3)
    rng = np.random.default_rng(34)
    pts = rng.normal(size=(nn.N_POINTS, 3)).astype(np.float32)
    r = so3.sample_uniform(rng)
    a = model.encode_points(pts)
    b = model.encode_points((pts @ r.T).astype(np.float32))
    assert np.linalg.norm(a - b) > 1e-4


def test_fusion_uses_category():
    model = nn.Model(nn.ModelConfig())
    rng = np.random.default_rng(35)
    pts = rng.normal(size=(nn.N_POINTS, 3)).astype(np.float32)
    z0 = model.condition(pts, 0)
    z1 = model.condition(pts, 1)
    assert np.linalg.norm(z0 - z1) > 1e-4


def test_geometry_fusion_ignores_category():
    model = nn.Model(nn.ModelConfig(fusion="geometry"))
    rng = np.random.default_rng(36)
    pts = rng.normal(size=(nn.N_POINTS, 3)).astype(np.float32)
    assert np.array_equal(model.condition(pts, 0), model.condition(pts, 3))


def test_film_formula():
    model = nn.Model(nn.ModelConfig())
    rng = np.random.default_rng(37)
    sem = rng.normal(size=32).astype(np.float32)
    g = rng.normal(size=128).astype(np.float32)
    got = model.fuse_single(sem, g)
    t = model.store.tensors
    sc = sem @ t["psi_scale.w"] + t["psi_scale.b"]
    sh = sem @ t["psi_shift.w"] + t["psi_shift.b"]
    ref = np.maximum((sc * g + sh) @ t["phi_z.w"] + t["phi_z.b"], 0.0)
    np.testing.assert_allclose(got, ref, atol=1e-6)


def test_time_embedding_values():
    emb = nn.time_embedding([0.0], 8)
    np.testing.assert_allclose(emb[0, :8], 0.0, atol=1e-7)
    np.testing.assert_allclose(emb[0, 8:], 1.0, atol=1e-7)
    emb2 = nn.time_embedding([0.5, 0.25], 8)
    assert emb2.shape == (2, 16)
    # sin(pi/2) at the base frequency for t = 0.5.
    assert abs(emb2[0, 0] - 1.0) < 1e-6


def test_input_validation():
    model = nn.Model(nn.ModelConfig())
    with pytest.raises(WrongPointCountError):
        model.encode_points(np.zeros((100, 3)))
    with pytest.raises(UnknownCategoryError):
        model.semantic_embed(8)
    with pytest.raises(UnknownCategoryError):
        model.semantic_embed(-1)
    with pytest.raises(DimMismatchError):
        model.enc1(np.zeros((4, 5), dtype=np.float32))


def test_backward_requires_tape():
    model = nn.Model(nn.ModelConfig())
    with pytest.raises(GraphNotRecordedError):
        model.backward(None)
    batch = make_batch(np.random.default_rng(38))
    _, tape = model.loss_and_tape(batch)
    model.backward(tape)
    with pytest.raises(GraphNotRecordedError):
        model.backward(tape)


def test_gradients_accumulate_and_reset():
    model = nn.Model(nn.ModelConfig())
    jitter(model, 4)
    batch = make_batch(np.random.default_rng(39))
    _, tape = model.loss_and_tape(batch)
    model.backward(tape)
    g1 = {n: g.copy() for n, g in model.store.grads.items()}
    _, tape = model.loss_and_tape(batch)
    model.backward(tape)
    for n, g in model.store.grads.items():
        np.testing.assert_allclose(g, 2.0 * g1[n], rtol=1e-4, atol=1e-7)
    model.zero_grads()
    assert all(np.all(g == 0) for g in model.store.grads.values())


def test_dense_layer_gradient_matches_fd():
    # Isolated affine layer: quadratic loss, so the float64 central
    # difference is exact up to rounding.
    store = nn.ParameterStore(np.float32)
    rng = np.random.default_rng(40)
    layer = nn.Dense(store, "probe", 64, 32, rng)
    x = rng.normal(size=(8, 64)).astype(np.float32)
    target = rng.normal(size=(8, 32)).astype(np.float32)
    y = layer(x)
    layer.backward(x, 2.0 * (y - target) / 8.0)

    def loss64(w64, b64):
        y64 = x.astype(np.float64) @ w64 + b64
        return float(np.sum((y64 - target.astype(np.float64)) ** 2)) / 8.0

    h = 1e-3
    w64 = layer.w.astype(np.float64)
    b64 = layer.b.astype(np.float64)
    coords = rng.integers(0, layer.w.size, size=100)
    for idx in coords:
        orig = w64.flat[idx]
        w64.flat[idx] = orig + h
        lp = loss64(w64, b64)
        w64.flat[idx] = orig - h
        lm = loss64(w64, b64)
        w64.flat[idx] = orig
        fd = (lp - lm) / (2.0 * h)
        an = float(layer.gw.flat[idx])
        assert abs(an - fd) / max(abs(an), abs(fd), 1e-3) < 1e-3


@pytest.mark.parametrize("rotation_mode", ["flow", "matrix"])
@pytest.mark.parametrize("fusion", ["film", "pointwise", "geometry"])
def test_full_pipeline_gradient_smoke(fusion, rotation_mode):
    # 20 random coordinates across every tensor; the acceptance suite
    # runs the full 100-coordinate version on the default config.
    cfg = nn.ModelConfig(fusion=fusion, rotation_mode=rotation_mode, seed=1)
    model = nn.Model(cfg)
    jitter(model, 5)
    rng = np.random.default_rng(41)
    batch = make_batch(rng, b=2, rotation_mode=rotation_mode)
    weights = (1.0, 1.0, 1.0)
    model.zero_grads()
    _, tape = model.loss_and_tape(batch, weights)
    model.backward(tape)
    names = list(model.store.tensors)
    for _ in range(20):
        name = names[int(rng.integers(len(names)))]
        idx = int(rng.integers(model.store.tensors[name].size))
        an = float(model.store.grads[name].flat[idx])
        fd = fd_full(model, batch, weights, name, idx)
        assert abs(an - fd) / max(abs(an), abs(fd), 1e-3) < 1e-2, (
            f"{name}[{idx}]: analytic {an}, fd {fd}"
        )


def test_float64_clone_matches_float32():
    model = nn.Model(nn.ModelConfig())
    jitter(model, 6)
    batch = make_batch(np.random.default_rng(42))
    l32 = model.loss_and_tape(batch)[0]["total"]
    l64 = model.clone(np.float64).loss_and_tape(batch)[0]["total"]
    assert abs(l32 - l64) / abs(l64) < 1e-5


def test_pad_cloud_cyclic():
    pts = np.arange(9.0).reshape(3, 3)
    padded = nn.pad_cloud(pts)
    assert padded.shape == (nn.N_POINTS, 3)
    assert np.array_equal(padded[3], pts[0])
    assert np.array_equal(padded[nn.N_POINTS - 1], pts[(nn.N_POINTS - 1) % 3])


def test_prepare_cloud():
    rng = np.random.default_rng(43)
    pts = rng.normal(size=(700, 3))
    sub, centroid = nn.prepare_cloud(pts)
    assert sub.shape == (nn.N_POINTS, 3) and sub.dtype == np.float32
    np.testing.assert_allclose(centroid, pts.mean(axis=0))
    # Short clouds pad cyclically before sampling; centroid stays that of
    # the observed points.
    short = rng.normal(size=(100, 3))
    sub2, c2 = nn.prepare_cloud(short)
    assert sub2.shape == (nn.N_POINTS, 3)
    np.testing.assert_allclose(c2, short.mean(axis=0))
