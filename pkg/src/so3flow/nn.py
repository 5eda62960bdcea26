"""Fixed-architecture network and its hand-written reverse pass.

A per-point MLP with a coordinatewise max pool encodes geometry, a category
embedding provides the semantic side, and the two are fused (FiLM by
default) into a conditioning vector consumed by three heads: body-frame
velocity, center residual, and size. Parameters and activations are float32
in production; per-batch losses accumulate in float64. A float64 clone of
the whole model backs the finite-difference checks in the test-suite.

No autodiff: each forward records the tensors its backward needs into a
Tape, and backward() walks them in reverse. Gradient correctness is pinned
by finite differences, not by construction.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .errors import (
    DimMismatchError,
    GraphNotRecordedError,
    UnknownCategoryError,
    WrongPointCountError,
)

N_POINTS = 512
PARAM_BUDGET = 500_000

FUSION_MODES = ("film", "pointwise", "geometry")
ROTATION_MODES = ("flow", "matrix")


@dataclass
class ModelConfig:
    n_categories: int = 8
    d_s: int = 32
    d_g: int = 128
    d_z: int = 128
    hidden: int = 256
    head_hidden: int = 64
    n_freq: int = 8
    fusion: str = "film"
    rotation_mode: str = "flow"
    seed: int = 0

    def validate(self):
        if self.fusion not in FUSION_MODES:
            raise ValueError(f"fusion must be one of {FUSION_MODES}")
        if self.rotation_mode not in ROTATION_MODES:
            raise ValueError(f"rotation_mode must be one of {ROTATION_MODES}")
        for name in (
            "n_categories",
            "d_s",
            "d_g",
            "d_z",
            "hidden",
            "head_hidden",
            "n_freq",
        ):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        cfg = cls(**d)
        cfg.validate()
        return cfg


class ParameterStore:
    """Ordered named float tensors plus matching gradient buffers."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.tensors = {}
        self.grads = {}

    def add(self, name, value):
        if name in self.tensors:
            raise ValueError(f"duplicate parameter {name}")
        self.tensors[name] = np.asarray(value, dtype=self.dtype)
        self.grads[name] = np.zeros_like(self.tensors[name])
        if self.count() > PARAM_BUDGET:
            raise ValueError(
                f"parameter count {self.count()} exceeds budget {PARAM_BUDGET}"
            )
        return self.tensors[name]

    def count(self):
        return sum(int(t.size) for t in self.tensors.values())

    def zero_grads(self):
        for g in self.grads.values():
            g[...] = 0.0


class Tape:
    """Forward caches for one batch; single-use."""

    def __init__(self):
        self.data = {}
        self.consumed = False

    def __setitem__(self, key, value):
        self.data[key] = value

    def __getitem__(self, key):
        return self.data[key]

    def __contains__(self, key):
        return key in self.data


class Dense:
    """y = x W + b with gradient accumulation into the store."""

    def __init__(self, store, name, n_in, n_out, rng, zero_init=False):
        self.name = name
        self.n_in = n_in
        if zero_init:
            w = np.zeros((n_in, n_out))
        else:
            w = rng.standard_normal((n_in, n_out)) / np.sqrt(n_in)
        self.w = store.add(f"{name}.w", w)
        self.b = store.add(f"{name}.b", np.zeros(n_out))
        self.gw = store.grads[f"{name}.w"]
        self.gb = store.grads[f"{name}.b"]

    def __call__(self, x):
        if x.shape[-1] != self.n_in:
            raise DimMismatchError(
                f"{self.name}: expected last dim {self.n_in}, got {x.shape[-1]}"
            )
        return x @ self.w + self.b

    def backward(self, x, dy):
        self.gw += x.T @ dy
        self.gb += dy.sum(axis=0)
        return dy @ self.w.T


class Embedding:
    """Category id -> learned row of the table.

    Rows start small so the fusion is near-identity at init; the semantic
    signal grows during training instead of drowning the geometry feature.
    """

    def __init__(self, store, name, n_rows, dim, rng, scale=0.1):
        self.name = name
        self.n_rows = n_rows
        table = scale * rng.standard_normal((n_rows, dim))
        self.table = store.add(f"{name}.table", table)
        self.gtable = store.grads[f"{name}.table"]

    def __call__(self, ids):
        return self.table[ids]

    def backward(self, ids, dy):
        np.add.at(self.gtable, ids, dy)


def _relu(x):
    return np.maximum(x, 0.0)


def _relu_backward(y, dy):
    # y is the relu output; y > 0 iff the input was positive.
    return dy * (y > 0)


def _sqrelu(x):
    """Squared relu. Quadratic units give the rotation heads second-order
    capacity: the regression target is bilinear in (state, conditioning) to
    leading order, which piecewise-linear hidden layers are slow to fit."""
    return np.maximum(x, 0.0) ** 2


def _sqrelu_backward(y, dy):
    # d/dx relu(x)^2 = 2 relu(x) = 2 sqrt(y); y >= 0 by construction.
    return dy * (2.0 * np.sqrt(y))


def _softplus(x):
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    # Strict positivity must survive float32 underflow at very negative x.
    return np.maximum(out, np.finfo(out.dtype).tiny)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def time_embedding(t, n_freq, dtype=np.float32):
    """Sinusoidal features of flow time: sin block then cos block.

    Frequencies are pi * (k+1) for k = 0..n_freq-1.  Harmonics of the
    base tone resolve the sign flip of the target field at t = 0.5
    without flooding the head with fast-oscillating features.
    """
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    freqs = np.pi * (1.0 + np.arange(n_freq))
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1).astype(dtype)


class Model:
    """Encoder, semantic embedding, fusion, and the three output heads."""

    def __init__(self, cfg: ModelConfig, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        self.store = ParameterStore(dtype)
        rng = np.random.default_rng(cfg.seed)
        s, c = self.store, cfg
        self.enc1 = Dense(s, "enc1", 3, 64, rng)
        self.enc2 = Dense(s, "enc2", 64, c.d_g, rng)
        # Small bias spread diversifies the per-point kink locations; with
        # zero bias every unit is scale-free and the pooled features of
        # correlated filters pick the same support points.
        self.enc1.b += rng.uniform(-0.1, 0.1, self.enc1.b.shape)
        self.enc2.b += rng.uniform(-0.1, 0.1, self.enc2.b.shape)
        self.embed = Embedding(s, "embed", c.n_categories, c.d_s, rng)
        if c.fusion == "film":
            self.psi_scale = Dense(s, "psi_scale", c.d_s, c.d_g, rng)
            # Identity modulation at init: scale near one, shift near zero,
            # so z starts as a function of geometry alone.
            self.psi_scale.b += 1.0
            self.psi_shift = Dense(s, "psi_shift", c.d_s, c.d_g, rng)
            self.phi_z = Dense(s, "phi_z", c.d_g, c.d_z, rng)
        elif c.fusion == "pointwise":
            self.phi_z = Dense(s, "phi_z", c.d_s + c.d_g, c.d_z, rng)
        else:  # geometry
            self.phi_z = Dense(s, "phi_z", c.d_g, c.d_z, rng)
        if c.rotation_mode == "flow":
            d_in = 9 + 2 * c.n_freq + c.d_z
            self.vel1 = Dense(s, "vel1", d_in, c.hidden, rng)
            self.vel2 = Dense(s, "vel2", c.hidden, c.hidden, rng)
            # Zero-init: the untrained field is exactly zero everywhere.
            self.vel3 = Dense(s, "vel3", c.hidden, 3, rng, zero_init=True)
        else:
            self.mat1 = Dense(s, "mat1", c.d_z, c.hidden, rng)
            self.mat2 = Dense(s, "mat2", c.hidden, c.hidden, rng)
            # Not zero-init: the zero matrix has no rotation projection.
            self.mat3 = Dense(s, "mat3", c.hidden, 9, rng)
        self.cen1 = Dense(s, "cen1", c.d_z, c.head_hidden, rng)
        self.cen2 = Dense(s, "cen2", c.head_hidden, 3, rng, zero_init=True)
        self.siz1 = Dense(s, "siz1", c.d_z, c.head_hidden, rng)
        self.siz2 = Dense(s, "siz2", c.head_hidden, 3, rng)

    @property
    def dtype(self):
        return self.store.dtype

    def clone(self, dtype):
        """Same architecture and parameter values at another precision."""
        other = Model(self.cfg, dtype=dtype)
        for name, t in self.store.tensors.items():
            other.store.tensors[name][...] = t.astype(dtype)
        return other

    def zero_grads(self):
        self.store.zero_grads()

    # -- forward pieces -----------------------------------------------------

    def _encode(self, points, tape=None):
        """points: (b, N_POINTS, 3) -> pooled geometry feature (b, d_g)."""
        b = points.shape[0]
        x0 = np.ascontiguousarray(
            points.reshape(b * N_POINTS, 3), dtype=self.dtype
        )
        h1 = _relu(self.enc1(x0))
        h2 = _relu(self.enc2(h1))
        feat = h2.reshape(b, N_POINTS, self.cfg.d_g)
        amax = feat.argmax(axis=1)
        g = np.take_along_axis(feat, amax[:, None, :], axis=1)[:, 0, :]
        if tape is not None:
            tape["x0"], tape["h1"], tape["h2"] = x0, h1, h2
            tape["amax"], tape["b"] = amax, b
        return g

    def _encode_backward(self, tape, dg):
        b = tape["b"]
        df = np.zeros((b, N_POINTS, self.cfg.d_g), dtype=self.dtype)
        cols = np.arange(self.cfg.d_g)[None, :]
        rows = np.arange(b)[:, None]
        df[rows, tape["amax"], cols] = dg
        da2 = _relu_backward(
            tape["h2"], df.reshape(b * N_POINTS, self.cfg.d_g)
        )
        dh1 = self.enc2.backward(tape["h1"], da2)
        da1 = _relu_backward(tape["h1"], dh1)
        self.enc1.backward(tape["x0"], da1)

    def _fuse(self, cats, g, tape=None):
        """Category ids and geometry feature -> conditioning z (b, d_z)."""
        mode = self.cfg.fusion
        if mode == "geometry":
            z = _relu(self.phi_z(g))
            if tape is not None:
                tape["fuse_in"], tape["z"] = g, z
            return z
        sem = self.embed(cats)
        if mode == "pointwise":
            m = np.concatenate([sem, g], axis=1)
            z = _relu(self.phi_z(m))
            if tape is not None:
                tape["cats"], tape["fuse_in"], tape["z"] = cats, m, z
            return z
        sc = self.psi_scale(sem)
        sh = self.psi_shift(sem)
        m = sc * g + sh
        z = _relu(self.phi_z(m))
        if tape is not None:
            tape["cats"], tape["sem"], tape["sc"] = cats, sem, sc
            tape["g"], tape["fuse_in"], tape["z"] = g, m, z
        return z

    def _fuse_backward(self, tape, dz):
        mode = self.cfg.fusion
        da = _relu_backward(tape["z"], dz)
        dm = self.phi_z.backward(tape["fuse_in"], da)
        if mode == "geometry":
            return dm
        if mode == "pointwise":
            ds, dg = dm[:, : self.cfg.d_s], dm[:, self.cfg.d_s :]
            self.embed.backward(tape["cats"], ds)
            return dg
        dsc = dm * tape["g"]
        dg = dm * tape["sc"]
        ds = self.psi_scale.backward(tape["sem"], dsc)
        ds = ds + self.psi_shift.backward(tape["sem"], dm)
        self.embed.backward(tape["cats"], ds)
        return dg

    def _velocity(self, rt9, temb, z, tape=None):
        xv = np.concatenate([rt9, temb, z], axis=1)
        v1 = _sqrelu(self.vel1(xv))
        v2 = _sqrelu(self.vel2(v1))
        out = self.vel3(v2)
        if tape is not None:
            tape["xv"], tape["v1"], tape["v2"] = xv, v1, v2
        return out

    def _velocity_backward(self, tape, dout):
        dv2 = _sqrelu_backward(tape["v2"], self.vel3.backward(tape["v2"], dout))
        dv1 = _sqrelu_backward(tape["v1"], self.vel2.backward(tape["v1"], dv2))
        dxv = self.vel1.backward(tape["xv"], dv1)
        # Rotation entries and time features are inputs; only the z slice
        # propagates further.
        return dxv[:, 9 + 2 * self.cfg.n_freq :]

    def _matrix(self, z, tape=None):
        m1 = _sqrelu(self.mat1(z))
        m2 = _sqrelu(self.mat2(m1))
        out = self.mat3(m2)
        if tape is not None:
            tape["zm"], tape["m1"], tape["m2"] = z, m1, m2
        return out

    def _matrix_backward(self, tape, dout):
        dm2 = _sqrelu_backward(tape["m2"], self.mat3.backward(tape["m2"], dout))
        dm1 = _sqrelu_backward(tape["m1"], self.mat2.backward(tape["m1"], dm2))
        return self.mat1.backward(tape["zm"], dm1)

    def _center(self, z, centroid, tape=None):
        c1 = _relu(self.cen1(z))
        dc = self.cen2(c1)
        if tape is not None:
            tape["c1"] = c1
        return centroid.astype(self.dtype) + dc

    def _size(self, z, tape=None):
        s1 = _relu(self.siz1(z))
        pre = self.siz2(s1)
        if tape is not None:
            tape["s1"], tape["size_pre"] = s1, pre
        return _softplus(pre)

    # -- single-instance entry points ----------------------------------------

    def _check_points(self, points):
        points = np.asarray(points)
        if points.shape != (N_POINTS, 3):
            raise WrongPointCountError(
                f"expected ({N_POINTS}, 3), got {points.shape}"
            )
        return points

    def _check_category(self, category):
        category = int(category)
        if not 0 <= category < self.cfg.n_categories:
            raise UnknownCategoryError(
                f"category {category} outside [0, {self.cfg.n_categories})"
            )
        return category

    def encode_points(self, points):
        """Permutation-invariant geometry feature of one centered cloud."""
        points = self._check_points(points)
        return self._encode(points[None])[0]

    def semantic_embed(self, category):
        return self.embed(np.array([self._check_category(category)]))[0]

    def condition(self, points, category):
        """Conditioning vector z for one (cloud, category) pair."""
        points = self._check_points(points)
        cats = np.array([self._check_category(category)])
        g = self._encode(points[None])
        return self._fuse(cats, g)[0]

    def fuse_single(self, sem, g):
        """z from explicit semantic and geometry features (film mode)."""
        if self.cfg.fusion != "film":
            raise ValueError("fuse_single is only defined for film fusion")
        sem = np.asarray(sem, dtype=self.dtype)[None]
        g = np.asarray(g, dtype=self.dtype)[None]
        sc = self.psi_scale(sem)
        sh = self.psi_shift(sem)
        return _relu(self.phi_z(sc * g + sh))[0]

    def velocity(self, r, t, z):
        """Body-frame velocity prediction; float64 for the integrator."""
        rt9 = np.asarray(r, dtype=np.float64).reshape(1, 9).astype(self.dtype)
        temb = time_embedding([t], self.cfg.n_freq, self.dtype)
        z = np.asarray(z, dtype=self.dtype)[None]
        return self._velocity(rt9, temb, z)[0].astype(np.float64)

    def regress_matrix(self, z):
        """Raw 3x3 output of the direct-regression head (unprojected)."""
        if self.cfg.rotation_mode != "matrix":
            raise ValueError("regress_matrix requires rotation_mode='matrix'")
        z = np.asarray(z, dtype=self.dtype)[None]
        return self._matrix(z)[0].reshape(3, 3).astype(np.float64)

    def center(self, z, centroid):
        z = np.asarray(z, dtype=self.dtype)[None]
        centroid = np.asarray(centroid, dtype=np.float64)[None]
        return self._center(z, centroid)[0].astype(np.float64)

    def size(self, z):
        z = np.asarray(z, dtype=self.dtype)[None]
        return self._size(z)[0].astype(np.float64)

    # -- batched training entry ----------------------------------------------

    def loss_and_tape(self, batch, weights=(1.0, 1.0, 1.0)):
        """Forward pass over a batch dict; returns (losses, tape).

        Losses are float64 batch means. Batch keys: points (b, 512, 3),
        cats (b,), centroid (b, 3), gt_center (b, 3), gt_size (b, 3), and
        for the flow head r_t (b, 3, 3), t (b,), target_v (b, 3); for the
        matrix head gt_r (b, 3, 3).
        """
        tape = Tape()
        tape["weights"] = weights
        b = batch["points"].shape[0]
        g = self._encode(batch["points"], tape)
        z = self._fuse(np.asarray(batch["cats"]), g, tape)
        if self.cfg.rotation_mode == "flow":
            rt9 = batch["r_t"].reshape(b, 9).astype(self.dtype)
            temb = time_embedding(batch["t"], self.cfg.n_freq, self.dtype)
            pred_v = self._velocity(rt9, temb, z, tape)
            target = batch["target_v"].astype(self.dtype)
            rot_diff = pred_v - target
        else:
            pred9 = self._matrix(z, tape)
            target = batch["gt_r"].reshape(b, 9).astype(self.dtype)
            rot_diff = pred9 - target
        pred_c = self._center(z, batch["centroid"], tape)
        pred_s = self._size(z, tape)
        c_diff = pred_c - batch["gt_center"].astype(self.dtype)
        s_diff = pred_s - batch["gt_size"].astype(self.dtype)
        tape["rot_diff"], tape["c_diff"], tape["s_diff"] = (
            rot_diff,
            c_diff,
            s_diff,
        )
        rot = float(np.sum(rot_diff.astype(np.float64) ** 2)) / b
        cen = float(np.sum(c_diff.astype(np.float64) ** 2)) / b
        siz = float(np.sum(s_diff.astype(np.float64) ** 2)) / b
        wr, wc, ws = weights
        losses = {
            "rot": rot,
            "center": cen,
            "size": siz,
            "total": wr * rot + wc * cen + ws * siz,
        }
        return losses, tape

    def backward(self, tape):
        """Accumulate parameter gradients of the weighted total loss."""
        if tape is None or not isinstance(tape, Tape) or tape.consumed:
            raise GraphNotRecordedError("no live forward tape")
        tape.consumed = True
        b = tape["b"]
        wr, wc, ws = tape["weights"]
        scale = self.dtype.type(2.0 / b)
        if self.cfg.rotation_mode == "flow":
            dz_rot = self._velocity_backward(
                tape, (wr * scale) * tape["rot_diff"]
            )
        else:
            dz_rot = self._matrix_backward(tape, (wr * scale) * tape["rot_diff"])
        dz = dz_rot
        dc1 = _relu_backward(
            tape["c1"], self.cen2.backward(tape["c1"], (wc * scale) * tape["c_diff"])
        )
        dz = dz + self.cen1.backward(tape["z"], dc1)
        dpre = ((ws * scale) * tape["s_diff"]) * _sigmoid(tape["size_pre"])
        ds1 = _relu_backward(tape["s1"], self.siz2.backward(tape["s1"], dpre))
        dz = dz + self.siz1.backward(tape["z"], ds1)
        dg = self._fuse_backward(tape, dz)
        self._encode_backward(tape, dg)


def pad_cloud(points):
    """Cyclically repeat points up to N_POINTS when the cloud is short."""
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if n >= N_POINTS:
        return points
    return points[np.arange(N_POINTS) % n]


def prepare_cloud(points):
    """Observed cloud -> (centered FPS subset as float32, float64 centroid).

    The centroid is taken over the observed points before padding; the
    subset is the farthest-point sample of the padded cloud, seeded at
    index 0.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3 or points.shape[0] == 0:
        raise ValueError(f"expected (n, 3) points, got {points.shape}")
    centroid = points.mean(axis=0)
    padded = pad_cloud(points)
    idx = kernels.fps_indices(padded, N_POINTS, 0)
    sub = padded[idx] - centroid
    return sub.astype(np.float32), centroid
