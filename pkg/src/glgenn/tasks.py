"""Datasets, hull-volume oracles, training loop and equivariance audit."""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, Delaunay, QhullError

from . import autodiff as ad
from .algebra import Signature
from .groups import orthogonal_to_versor, random_restricted_orthogonal, sample_lipschitz, twisted_adjoint_matrix
from .layers import BrokenLayer, ChannelBatch, Sequential, build_stack
from .subspaces import qt_indicator

REG_DIM = 5
_DEGENERATE_NORM = 1e-12


class NonFiniteLoss(RuntimeError):
    pass


# --- O(5) regression ---------------------------------------------------------------

def regression_target(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    n1 = np.linalg.norm(x1, axis=-1)
    n2 = np.linalg.norm(x2, axis=-1)
    return np.sin(n1) - n2**3 / 2.0 + np.sum(x1 * x2, axis=-1) / (n1 * n2)


def _sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(index)])


def gen_regression(n: int, seed: int, offset: int = 0) -> dict[str, np.ndarray]:
    """``n`` samples ``(x1, x2, y)``; sample ``i`` is drawn from a generator seeded by ``(seed, offset + i)``."""
    if n < 1:
        raise ValueError("need at least one sample")
    x1 = np.empty((n, REG_DIM))
    x2 = np.empty((n, REG_DIM))
    for i in range(n):
        rng = _sample_rng(seed, offset + i)
        while True:
            a, b = rng.standard_normal(REG_DIM), rng.standard_normal(REG_DIM)
            if np.linalg.norm(a) >= _DEGENERATE_NORM and np.linalg.norm(b) >= _DEGENERATE_NORM:
                break
        x1[i], x2[i] = a, b
    return {"x1": x1, "x2": x2, "y": regression_target(x1, x2)}


def embed_vectors(sig: Signature, vectors: np.ndarray) -> ChannelBatch:
    """``[B, L, n]`` vectors to ``[B, L, 2**n]`` multivectors with the entries on the grade-1 slots."""
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 3 or vectors.shape[2] != sig.n:
        raise ValueError(f"need [B, L, {sig.n}] vectors, got {vectors.shape}")
    data = np.zeros(vectors.shape[:2] + (sig.dim,))
    data[:, :, 1 << np.arange(sig.n)] = vectors
    return ChannelBatch(sig, data)


def embed_regression(x1: np.ndarray, x2: np.ndarray) -> ChannelBatch:
    x1 = np.atleast_2d(x1)
    x2 = np.atleast_2d(x2)
    return embed_vectors(Signature(REG_DIM), np.stack([x1, x2], axis=1))


# --- convex hull volumes -----------------------------------------------------------

def _orient(a, b, c, d) -> float:
    return float(np.dot(np.cross(b - a, c - a), d - a))


def hull_volume_exact_3d(points: np.ndarray, eps: float = 1e-12) -> tuple[float, bool]:
    """Volume of the convex hull of 3-d points and a degeneracy flag.

    Incremental hull over outward-oriented triangles; the volume is the fan
    of signed tetrahedra from the centroid of the initial simplex. Points are
    sorted first, so the result is bit-identical under any permutation.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 4:
        raise ValueError("need at least four 3-d points")
    pts = _canonical(pts)
    scale = max(float(np.abs(pts - pts.mean(0)).max()), 1.0)
    tol = eps * scale**3
    # initial tetrahedron: two far points, farthest from their line, farthest from that plane
    i0 = int(np.argmin(pts[:, 0]))
    i1 = int(np.argmax(np.linalg.norm(pts - pts[i0], axis=1)))
    line = pts[i1] - pts[i0]
    if np.linalg.norm(line) <= eps * scale:
        return 0.0, True
    i2 = int(np.argmax(np.linalg.norm(np.cross(pts - pts[i0], line), axis=1)))
    normal = np.cross(line, pts[i2] - pts[i0])
    if np.linalg.norm(normal) <= eps * scale**2:
        return 0.0, True
    heights = (pts - pts[i0]) @ normal
    i3 = int(np.argmax(np.abs(heights)))
    if abs(heights[i3]) <= tol:
        return 0.0, True
    if heights[i3] > 0:
        i1, i2 = i2, i1
    faces = {(i0, i1, i2), (i0, i3, i1), (i1, i3, i2), (i2, i3, i0)}
    center = pts[[i0, i1, i2, i3]].mean(axis=0)
    for f in faces:
        assert _orient(pts[f[0]], pts[f[1]], pts[f[2]], center) < 0
    for k in range(len(pts)):
        if k in (i0, i1, i2, i3):
            continue
        visible = [f for f in faces if _orient(pts[f[0]], pts[f[1]], pts[f[2]], pts[k]) > tol]
        if not visible:
            continue
        edges = set()
        for a, b, c in visible:
            for e in ((a, b), (b, c), (c, a)):
                if (e[1], e[0]) in edges:
                    edges.discard((e[1], e[0]))
                else:
                    edges.add(e)
        faces.difference_update(visible)
        for a, b in edges:
            faces.add((a, b, k))
    vol = 0.0
    for a, b, c in faces:
        vol += np.dot(np.cross(pts[a] - center, pts[b] - center), pts[c] - center) / 6.0
    return float(vol), False


def _rank(points: np.ndarray) -> int:
    centered = points - points.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    return int(np.sum(sv > 1e-10 * max(sv[0], 1.0)))


def _canonical(points: np.ndarray) -> np.ndarray:
    return points[np.lexsort(points.T[::-1])]


def hull_volume_qhull(points: np.ndarray) -> float:
    pts = _canonical(np.asarray(points, dtype=np.float64))
    if _rank(pts) < pts.shape[1]:
        return 0.0
    return float(ConvexHull(pts).volume)


def _inside_lp(points: np.ndarray, samples: np.ndarray) -> np.ndarray:
    """Is each sample a convex combination of ``points``? One feasibility LP per sample."""
    k = len(points)
    a_eq = np.vstack([points.T, np.ones((1, k))])
    inside = np.empty(len(samples), dtype=bool)
    for i, s in enumerate(samples):
        res = linprog(np.zeros(k), A_eq=a_eq, b_eq=np.append(s, 1.0), bounds=(0, None), method="highs")
        inside[i] = res.status == 0
    return inside


def hull_volume_mc(points: np.ndarray, n_mc: int, seed, method: str = "delaunay") -> tuple[float, float]:
    """Monte Carlo hull volume by rejection sampling in the bounding box.

    Membership uses a Delaunay triangulation of the points (``"delaunay"``) or
    one convex-combination LP per sample (``"lp"``). Returns the estimate and
    its standard error.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] < 2 or len(pts) < pts.shape[1] + 1:
        raise ValueError("need K >= d + 1 points in d >= 2 dimensions")
    if _rank(pts) < pts.shape[1]:
        return 0.0, 0.0
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    box = float(np.prod(hi - lo))
    samples = rng.uniform(lo, hi, size=(n_mc, pts.shape[1]))
    if method == "delaunay":
        try:
            inside = Delaunay(pts).find_simplex(samples) >= 0
        except QhullError:
            return 0.0, 0.0
    elif method == "lp":
        inside = _inside_lp(pts, samples)
    else:
        raise ValueError(f"unknown membership method {method!r}")
    frac = float(inside.mean())
    return box * frac, box * float(np.sqrt(frac * (1.0 - frac) / n_mc))


def gen_hull(n: int, k: int, dim: int, seed: int, oracle: str = "exact", n_mc: int = 200_000,
             offset: int = 0, membership: str = "delaunay") -> dict[str, np.ndarray]:
    """``n`` point clouds of ``k`` standard normal points in ``dim`` dimensions with hull volumes."""
    if n < 1 or k < dim + 1:
        raise ValueError("need n >= 1 and K >= d + 1")
    points = np.empty((n, k, dim))
    vol = np.empty(n)
    std = np.zeros(n)
    for i in range(n):
        rng = _sample_rng(seed, offset + i)
        points[i] = rng.standard_normal((k, dim))
        if oracle == "exact":
            vol[i] = hull_volume_exact_3d(points[i])[0] if dim == 3 else hull_volume_qhull(points[i])
        elif oracle == "mc":
            vol[i], std[i] = hull_volume_mc(points[i], n_mc, rng, method=membership)
        else:
            raise ValueError(f"unknown oracle {oracle!r}")
    return {"points": points, "y": vol, "y_std": std}


def embed_hull(points: np.ndarray) -> ChannelBatch:
    """One grade-1 channel per point, after subtracting each cloud's centroid."""
    points = np.asarray(points, dtype=np.float64)
    centered = points - points.mean(axis=1, keepdims=True)
    return embed_vectors(Signature(points.shape[2]), centered)


# --- training ----------------------------------------------------------------------

@dataclass
class TrainConfig:
    task: str = "regression"
    model: str = "glgenn"
    family: str = "qt"
    hidden: int = 8
    depth: int = 2
    gate_hidden: int = 32
    mlp_hidden: int = 64
    epochs: int = 100
    batch_size: int = 32
    lr: float = 3e-3
    max_steps: int = 10_000
    seed: int = 0
    n_train: int = 300
    n_test: int = 1000
    hull_k: int = 8
    hull_dim: int = 3
    oracle: str = "exact"
    n_mc: int = 200_000
    standardize: bool = True
    schedule: str = "cosine"
    augment: bool = True
    scalar_channel: bool = True

    def __post_init__(self):
        for name in ("hidden", "depth", "epochs", "batch_size", "max_steps", "n_train", "n_test", "hull_k",
                     "hull_dim", "mlp_hidden", "n_mc"):
            if getattr(self, name) < 0 or (name != "epochs" and getattr(self, name) == 0):
                raise ValueError(f"{name} must be positive")
        if self.gate_hidden < 0:
            raise ValueError("gate_hidden must be non-negative")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.task not in ("regression", "hull"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.model not in ("glgenn", "mlp"):
            raise ValueError(f"unknown model {self.model!r}")
        if self.family not in ("qt", "grade"):
            raise ValueError(f"unknown family {self.family!r}")
        if self.schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.oracle not in ("exact", "mc"):
            raise ValueError(f"unknown oracle {self.oracle!r}")


def make_dataset(cfg: TrainConfig) -> dict[str, dict[str, np.ndarray]]:
    """Train and test splits; test samples use generator indices after the training ones."""
    if cfg.task == "regression":
        return {
            "train": gen_regression(cfg.n_train, cfg.seed),
            "test": gen_regression(cfg.n_test, cfg.seed, offset=cfg.n_train),
        }
    kw = dict(k=cfg.hull_k, dim=cfg.hull_dim, seed=cfg.seed, oracle=cfg.oracle, n_mc=cfg.n_mc)
    return {"train": gen_hull(cfg.n_train, **kw), "test": gen_hull(cfg.n_test, offset=cfg.n_train, **kw)}


def model_inputs(cfg: TrainConfig, split: dict) -> np.ndarray:
    """Multivector channels for the GLGENN model or flat features for the MLP."""
    if cfg.task == "regression":
        if cfg.model == "mlp":
            return np.concatenate([split["x1"], split["x2"]], axis=1)
        data = embed_regression(split["x1"], split["x2"]).data
    elif cfg.model == "mlp":
        return split["points"].reshape(len(split["points"]), -1)
    else:
        data = embed_hull(split["points"]).data
    return with_scalar_channel(data) if cfg.scalar_channel else data


def with_scalar_channel(data: np.ndarray) -> np.ndarray:
    """Append a channel holding the constant scalar ``e``, which every versor action fixes."""
    extra = np.zeros(data.shape[:1] + (1,) + data.shape[2:])
    extra[:, 0, 0] = 1.0
    return np.concatenate([data, extra], axis=1)


class MLP:
    """Plain two-hidden-layer SiLU network on flat features (non-equivariant baseline)."""

    def __init__(self, in_features: int, hidden: int):
        self.in_features, self.hidden = in_features, hidden

    def init(self, seed) -> dict[str, np.ndarray]:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        f, h = self.in_features, self.hidden
        return {
            "w1": rng.normal(scale=1 / np.sqrt(f), size=(h, f)), "b1": np.zeros(h),
            "w2": rng.normal(scale=1 / np.sqrt(h), size=(h, h)), "b2": np.zeros(h),
            "w3": rng.normal(scale=1 / np.sqrt(h), size=(1, h)), "b3": np.zeros(1),
        }

    def __call__(self, x, params):
        h = ad.silu(ad.add(ad.einsum("hf,bf->bh", params["w1"], x), params["b1"]))
        h = ad.silu(ad.add(ad.einsum("gh,bh->bg", params["w2"], h), params["b2"]))
        out = ad.add(ad.einsum("oh,bh->bo", params["w3"], h), params["b3"])
        return ad.einsum("bo->b", out)

    def param_counts(self) -> list[int]:
        f, h = self.in_features, self.hidden
        return [h * f + h, h * h + h, h + 1]

    def param_count(self) -> int:
        return sum(self.param_counts())


def build_model(cfg: TrainConfig):
    if cfg.task == "regression":
        sig, channels, features = Signature(REG_DIM), 2, 2 * REG_DIM
    else:
        sig, channels, features = Signature(cfg.hull_dim), cfg.hull_k, cfg.hull_k * cfg.hull_dim
    if cfg.model == "mlp":
        return MLP(features, cfg.mlp_hidden)
    channels += int(cfg.scalar_channel)
    return build_stack(sig, channels, cfg.hidden, cfg.depth, 1, cfg.family, cfg.gate_hidden, readout=True)


def permute_points(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Independently shuffle the first ``k`` point channels of every sample.

    Flat ``[B, k * d]`` features are grouped per point first. Hull labels are
    permutation invariant, so this is label-preserving augmentation.
    """
    perm = np.argsort(rng.random((len(x), k)), axis=1)
    if x.ndim == 2:
        grouped = x.reshape(len(x), k, -1)
        return np.take_along_axis(grouped, perm[:, :, None], axis=1).reshape(x.shape)
    out = x.copy()
    out[:, :k] = np.take_along_axis(x[:, :k], perm[:, :, None], axis=1)
    return out


def _predict(model, params, x, batch: int = 512) -> np.ndarray:
    return np.concatenate([model(x[i:i + batch], params) for i in range(0, len(x), batch)])


@dataclass
class TrainResult:
    params: dict
    metrics: list = field(default_factory=list)
    param_counts: list = field(default_factory=list)
    wall_time: float = 0.0
    steps: int = 0
    target_shift: float = 0.0
    target_scale: float = 1.0
    adam: ad.AdamState | None = None

    def predict(self, model, x) -> np.ndarray:
        return _predict(model, self.params, x) * self.target_scale + self.target_shift


def train(cfg: TrainConfig, data: dict | None = None, resume: TrainResult | None = None,
          on_epoch=None) -> TrainResult:
    """Adam on MSE. Metrics hold one record per epoch, starting with epoch 0 (before any step).

    Targets are standardized with training-set statistics when ``cfg.standardize``;
    reported errors are always in original units.
    """
    start = time.perf_counter()
    data = make_dataset(cfg) if data is None else data
    model = build_model(cfg)
    xs = {s: model_inputs(cfg, data[s]) for s in ("train", "test")}
    y_train = data["train"]["y"]
    shift, scale_ = (float(y_train.mean()), float(y_train.std()) or 1.0) if cfg.standardize else (0.0, 1.0)
    if resume is None:
        params = model.init(np.random.default_rng([cfg.seed, 0]))
        result = TrainResult(params, [], model.param_counts(), target_shift=shift, target_scale=scale_,
                             adam=ad.AdamState(lr=cfg.lr))
    else:
        result = resume
        result.target_shift, result.target_scale = shift, scale_
    n = len(y_train)
    done_epochs = len(result.metrics) - 1 if result.metrics else 0

    def evaluate(epoch):
        rec = {"epoch": epoch, "step": result.steps}
        for split in ("train", "test"):
            pred = result.predict(model, xs[split])
            mse = float(np.mean((pred - data[split]["y"]) ** 2))
            if not np.isfinite(mse):
                raise NonFiniteLoss(f"non-finite {split} loss at epoch {epoch}, step {result.steps}")
            rec[f"{split}_mse"] = mse
        result.metrics.append(rec)
        if on_epoch is not None:
            on_epoch(rec, result)

    if not result.metrics:
        evaluate(0)
    target = (y_train - shift) / scale_
    total = min(cfg.max_steps, cfg.epochs * -(-n // cfg.batch_size))
    for epoch in range(done_epochs + 1, cfg.epochs + 1):
        if result.steps >= cfg.max_steps:
            break
        # one stream per epoch, so a resumed run sees the same batches
        rng = np.random.default_rng([cfg.seed, 1, epoch])
        order = rng.permutation(n)
        for i in range(0, n, cfg.batch_size):
            if result.steps >= cfg.max_steps:
                break
            idx = order[i:i + cfg.batch_size]
            xb = xs["train"][idx]
            if cfg.augment and cfg.task == "hull":
                xb = permute_points(xb, cfg.hull_k, rng)
            tape = ad.Tape()
            pv = tape.params(result.params)
            loss = ad.mse(model(xb, pv), target[idx])
            if not np.isfinite(ad.value(loss)):
                raise NonFiniteLoss(f"non-finite training loss at step {result.steps}")
            grads = tape.backward(loss).collect(pv)
            result.adam.lr = learning_rate(cfg, result.steps, total)
            result.params, result.adam = ad.adam_step(result.params, grads, result.adam)
            result.steps += 1
        evaluate(epoch)
    result.wall_time += time.perf_counter() - start
    return result


def learning_rate(cfg: TrainConfig, step: int, total: int) -> float:
    if cfg.schedule == "constant" or total <= 0:
        return cfg.lr
    return 0.5 * cfg.lr * (1.0 + np.cos(np.pi * min(step, total) / total))


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)


# --- equivariance audit ------------------------------------------------------------

def _rel(diff: np.ndarray, ref: np.ndarray) -> float:
    return float(np.linalg.norm(diff) / max(np.linalg.norm(ref), 1e-300))


def insert_broken_layer(model: Sequential, params: dict, index: int, seed: int = 0) -> tuple[Sequential, dict]:
    """Copy of ``model`` with a :class:`BrokenLayer` at position ``index`` and matching parameters."""
    if not 0 <= index < len(model.layers):
        raise ValueError(f"break index {index} outside 0..{len(model.layers) - 1}")
    width = model.layers[index].in_channels
    layers = model.layers[:index] + [BrokenLayer(model.sig, width)] + model.layers[index:]
    new = Sequential(layers, readout=model.readout)
    shifted = {}
    for key, val in params.items():
        i, name = key.split(".", 1)
        i = int(i)
        shifted[f"{i + 1 if i >= index else i}.{name}"] = val
    for name, val in layers[index].init(np.random.default_rng(seed)).items():
        shifted[f"{index}.{name}"] = val
    return new, shifted


def equivariance_audit(model: Sequential, params: dict, n_trials: int = 100, seed: int = 0,
                       batch: int = 4) -> dict:
    """Max relative equivariance violation per layer, per quaternion type and end to end.

    Each trial draws random inputs and either a random restricted-orthogonal
    matrix (acting through its versor) or a sampled Lipschitz versor. Layer
    entries test each layer on its own input, so a broken layer is localized.
    """
    sig = model.sig
    rng = np.random.default_rng([seed, 2])
    n_layers = len(model.layers)
    per_layer = np.zeros(n_layers)
    per_type = np.zeros(4)
    end_to_end = 0.0
    invariance = 0.0
    qt = qt_indicator(sig).astype(bool)
    nondeg = sig.p + sig.q
    for trial in range(n_trials):
        if trial % 2 == 0 or nondeg == 0:
            phi = random_restricted_orthogonal(sig, rng)
            mat = twisted_adjoint_matrix(orthogonal_to_versor(phi))
        else:
            T = sample_lipschitz(sig, rng, k_vector_factors=int(rng.integers(1, nondeg + 2)),
                                 k_radical_factors=sig.r)
            mat = twisted_adjoint_matrix(T)
        x = rng.normal(size=(batch, model.in_channels, sig.dim))
        hidden = model.forward_all(x, params)
        inputs = [x] + hidden[:-1]
        for i, layer in enumerate(model.layers):
            lp = model.layer_params(params, i)
            out_t = layer(inputs[i] @ mat.T, lp)
            per_layer[i] = max(per_layer[i], _rel(out_t - hidden[i] @ mat.T, hidden[i]))
        final_t = model.forward_all(x @ mat.T, params)[-1]
        diff = final_t - hidden[-1] @ mat.T
        end_to_end = max(end_to_end, _rel(diff, hidden[-1]))
        for m in range(4):
            if qt[m].any():
                per_type[m] = max(per_type[m], _rel(diff[..., qt[m]], hidden[-1]))
        if model.readout:
            f = model(x, params)
            invariance = max(invariance, _rel(model(x @ mat.T, params) - f, f))
    report = {
        "signature": [sig.p, sig.q, sig.r],
        "n_trials": n_trials,
        "seed": seed,
        "layers": [
            {"index": i, "kind": layer.kind, "max_violation": float(per_layer[i])}
            for i, layer in enumerate(model.layers)
        ],
        "per_quaternion_type": {str(m): float(per_type[m]) for m in range(4)},
        "end_to_end": end_to_end,
    }
    if model.readout:
        report["readout_invariance"] = invariance
    report["max_violation"] = max([end_to_end, invariance] + list(per_layer))
    return report
