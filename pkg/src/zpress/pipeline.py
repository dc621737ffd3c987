"""End-to-end model: encode, select, compress, predict Gaussians, render, loss.

Also holds the training loop, evaluation and checkpoint persistence.
"""

from __future__ import annotations

import copy
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import testbed
from .errors import ConfigError, InvalidInput, TrainingDiverged
from .geometry import overlap_matrix
from .numcore import LinearParams, Tensor, archive, clamp, gelu, linear, matmul, no_grad, sigmoid, softplus, stack, tanh
from .numcore.tensor import getitem
from .objective import ib_loss
from .scene import DEFAULT_BACKGROUND, PSNR_CAP, encode_view, psnr
from .selection import STRATEGIES, partition_views, view_embeddings
from .splat import GaussianSet, render_tensor
from .zpressor import ABLATIONS, MODES, LOGVAR_INIT, ViewFeature, ZPressorParams, compress, init_params

DEPTH_FLOOR = 0.1
DEPTH_CEILING = 10.0
SCALE_FLOOR = 1e-3
PRED_OUTPUTS = 14  # depth 1, offset 2, scale 3, quaternion 4, opacity 1, color 3
OPTIMIZERS = ("sgd", "adam")
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
CSV_HEADER = ("step", "task", "kl", "total", "psnr", "wallclock_ms", "n_primitives")


@dataclass(frozen=True)
class PipelineConfig:
    k_views: int = 12
    n_anchors: int = 6
    strategy: str = "fps"
    mode: str = "default"
    ablation: tuple = ()
    h_blocks: int = 2
    heads: int = 4
    channels: int = 16
    patch: int = 8
    image_size: int = 32
    beta: float = 1e-5
    lr: float = 1e-2
    optimizer: str = "sgd"
    momentum: float = 0.9  # sgd only
    grad_clip: float = 0.0  # global-norm clip; 0 disables
    steps: int = 2000
    batch_scenes: int = 1
    seed: int = 0
    baseline: float = 1.2  # arc extent in radians (line length for "line")
    trajectory: str = "arc"
    radius: float = 3.0
    target_views: int = 8  # held-out targets per evaluation scene
    train_targets: int = 2
    n_blobs: int = 4
    scene_pool: int = 0  # distinct training scenes; 0 draws a fresh one every step
    eval_scenes: int = 8
    input_noise: float = 0.2
    patch_dropout: float = 0.0
    light_jitter: float = 0.0
    pose_embedding: bool = True
    embed_scale: float = testbed.EMBED_SCALE
    cell_embed: float = 1.0  # scale of the per-cell position code; 0 disables
    encoder_seed: int = 0
    first_anchor: int = 0  # fps start view; -1 picks it from the seed
    logvar_init: float = LOGVAR_INIT
    log_every: int = 1

    def __post_init__(self):
        object.__setattr__(self, "ablation", tuple(sorted(self.ablation)))
        self.validate()

    def validate(self):
        def need(ok, msg):
            if not ok:
                raise ConfigError(msg)

        for name in ("k_views", "n_anchors", "h_blocks", "heads", "channels", "patch", "image_size", "batch_scenes",
                     "target_views", "train_targets", "n_blobs", "eval_scenes", "log_every"):
            v = getattr(self, name)
            need(isinstance(v, (int, np.integer)) and not isinstance(v, bool) and v >= 1, f"{name} must be a positive integer, got {v!r}")
        need(self.n_anchors <= self.k_views, f"n_anchors {self.n_anchors} exceeds k_views {self.k_views}")
        need(self.strategy in STRATEGIES, f"unknown strategy {self.strategy!r}")
        need(self.mode in MODES, f"unknown fusion mode {self.mode!r}")
        need(set(self.ablation) <= set(ABLATIONS), f"unknown ablation flags {self.ablation!r}")
        need(self.trajectory in ("arc", "line"), f"unknown trajectory {self.trajectory!r}")
        need(self.channels % self.heads == 0, f"channels {self.channels} not divisible by heads {self.heads}")
        need(self.channels >= 3, "channels must be at least 3")
        need(self.image_size % self.patch == 0, f"patch {self.patch} must divide image_size {self.image_size}")
        need(self.beta >= 0, "beta must be non-negative")
        need(self.lr > 0, "lr must be positive")
        need(self.optimizer in OPTIMIZERS, f"unknown optimizer {self.optimizer!r}")
        need(0 <= self.momentum < 1, "momentum must lie in [0, 1)")
        need(self.grad_clip >= 0, "grad_clip must be non-negative")
        need(isinstance(self.steps, (int, np.integer)) and self.steps >= 0, "steps must be a non-negative integer")
        need(self.baseline > 0, "baseline must be positive")
        need(self.radius > 0, "radius must be positive")
        need(self.scene_pool >= 0, "scene_pool must be non-negative")
        need(self.input_noise >= 0, "input_noise must be non-negative")
        need(0 <= self.patch_dropout < 1, "patch_dropout must lie in [0, 1)")
        need(self.embed_scale >= 0, "embed_scale must be non-negative")
        need(self.cell_embed >= 0, "cell_embed must be non-negative")
        need(self.light_jitter >= 0, "light_jitter must be non-negative")
        need(-1 <= self.first_anchor < self.k_views, f"first_anchor must be -1 or a view index below {self.k_views}")

    # serialization -----------------------------------------------------------
    def to_dict(self):
        d = asdict(self)
        d["ablation"] = list(self.ablation)
        return d

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config fields: {', '.join(unknown)}")
        data = dict(data)
        if "ablation" in data:
            if isinstance(data["ablation"], str):
                data["ablation"] = [data["ablation"]] if data["ablation"] else []
            data["ablation"] = tuple(data["ablation"])
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def replace(self, **changes):
        return replace(self, **changes)

    @property
    def data_spec(self):
        return testbed.DataSpec(self.k_views, self.baseline, self.trajectory, self.radius, self.image_size, self.n_blobs,
                                 self.input_noise, patch_dropout=self.patch_dropout, patch=self.patch,
                                 light_jitter=self.light_jitter)

    @property
    def grid(self):
        return self.image_size // self.patch


# predictor ---------------------------------------------------------------------


def _inv_softplus(y):
    return math.log(math.expm1(y))


@dataclass
class PredictorParams:
    fc1: LinearParams
    fc2: LinearParams

    def named_tensors(self):
        return {
            "fc1.weight": self.fc1.weight,
            "fc1.bias": self.fc1.bias,
            "fc2.weight": self.fc2.weight,
            "fc2.bias": self.fc2.bias,
        }

    def tensors(self):
        return list(self.named_tensors().values())


def init_predictor(c, seed=0, dtype=np.float32, depth=3.0, scale=0.25, out_gain=0.1):
    """Two-layer head C -> 2C -> 14; output biases start at a plausible splat."""
    rng = np.random.default_rng(seed)
    fc1 = LinearParams.init(rng, c, 2 * c, dtype=dtype)
    fc2 = LinearParams.init(rng, 2 * c, PRED_OUTPUTS, dtype=dtype)
    fc2.weight.data *= out_gain
    b = np.zeros(PRED_OUTPUTS)
    b[0] = _inv_softplus(depth - DEPTH_FLOOR)
    b[3:6] = _inv_softplus(scale - SCALE_FLOOR)
    b[6] = 1.0  # quaternion w
    fc2.bias.data = b.astype(dtype)
    return PredictorParams(fc1, fc2)


def _cell_centres(rows, cols, patch):
    r, c = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    return (c.ravel() + 0.5) * patch, (r.ravel() + 0.5) * patch


def predict_gaussians(z, anchor_poses, params: PredictorParams, patch):
    """One pixel-aligned primitive per latent token.

    Each token's head output is decoded into a depth along the ray through
    its (offset) cell centre in its anchor view, plus shape and appearance.
    Returns a GaussianSet with N * rows * cols entries.
    """
    feats = z.sample
    n, L, _ = feats.shape
    if len(anchor_poses) != n:
        raise InvalidInput(f"{len(anchor_poses)} anchor poses for {n} latent anchors")
    if z.rows * z.cols != L:
        raise InvalidInput("latent grid does not match its token count")
    raw = linear(gelu(linear(feats, params.fc1)), params.fc2)  # (N, L, 14)

    def part(lo, hi=None):
        return getitem(raw, (Ellipsis, lo) if hi is None else (Ellipsis, slice(lo, hi)))

    depth = clamp(softplus(part(0)) + DEPTH_FLOOR, None, DEPTH_CEILING)
    offset = tanh(part(1, 3)) * (0.5 * patch)
    scales = softplus(part(3, 6)) + SCALE_FLOOR
    quats = part(6, 10)
    opacity = sigmoid(part(10))
    colors = sigmoid(part(11, 14))

    dt = feats.dtype
    u0, v0 = _cell_centres(z.rows, z.cols, patch)
    fx = np.array([[p.fx] for p in anchor_poses], dt)
    fy = np.array([[p.fy] for p in anchor_poses], dt)
    cx = np.array([[p.cx] for p in anchor_poses], dt)
    cy = np.array([[p.cy] for p in anchor_poses], dt)
    u = getitem(offset, (Ellipsis, 0)) + u0.astype(dt)
    v = getitem(offset, (Ellipsis, 1)) + v0.astype(dt)
    cam = stack([(u - cx) * (1.0 / fx) * depth, (v - cy) * (1.0 / fy) * depth, depth], axis=-1)  # (N, L, 3)
    rot = np.stack([p.rotation for p in anchor_poses]).astype(dt)
    cen = np.stack([p.center for p in anchor_poses]).astype(dt)[:, None, :]
    means = matmul(cam, Tensor(rot)) + cen

    g = n * L
    return GaussianSet(means.reshape(g, 3), scales.reshape(g, 3), quats.reshape(g, 4), opacity.reshape(g), colors.reshape(g, 3))


# checkpoint ----------------------------------------------------------------------


@dataclass
class Checkpoint:
    zpressor: ZPressorParams
    predictor: PredictorParams
    config: PipelineConfig
    step: int = 0
    rng_state: dict = field(default_factory=dict)
    velocity: dict = field(default_factory=dict)

    def named_tensors(self):
        out = {f"zpressor.{k}": t for k, t in self.zpressor.named_tensors().items()}
        out.update({f"predictor.{k}": t for k, t in self.predictor.named_tensors().items()})
        return out

    def tensors(self):
        return list(self.named_tensors().values())

    def arrays(self):
        out = {k: t.data for k, t in self.named_tensors().items()}
        out.update({f"optim.{k}": v for k, v in self.velocity.items()})
        return out

    def load_arrays(self, arrays):
        for name, t in self.named_tensors().items():
            if name not in arrays:
                raise InvalidInput(f"checkpoint is missing tensor {name!r}")
            arr = np.asarray(arrays[name])
            if arr.shape != t.shape:
                raise InvalidInput(f"{name}: stored shape {arr.shape} != expected {t.shape}")
            t.data = arr.astype(t.data.dtype)
        self.velocity = {k[len("optim."):]: np.asarray(v, dtype=np.float32) for k, v in arrays.items() if k.startswith("optim.")}

    def copy(self):
        return copy.deepcopy(self)

    def sidecar(self):
        return {"format": "zpress-checkpoint", "version": 1, "config": self.config.to_dict(), "step": self.step, "rng_state": self.rng_state}

    def save(self, path):
        path = Path(path)
        archive.save(path, self.arrays())
        sidecar_path(path).write_text(json.dumps(self.sidecar(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path):
        path = Path(path)
        side = sidecar_path(path)
        if not side.exists():
            raise InvalidInput(f"checkpoint sidecar {side} not found")
        meta = json.loads(side.read_text())
        cfg = PipelineConfig.from_dict(meta["config"])
        ckpt = init_checkpoint(cfg)
        ckpt.load_arrays(archive.load(path))
        ckpt.step = int(meta.get("step", 0))
        ckpt.rng_state = meta.get("rng_state", {})
        return ckpt


def sidecar_path(path):
    path = Path(path)
    return path.with_name(path.name + ".json")


def init_checkpoint(cfg: PipelineConfig):
    zp = init_params(cfg.channels, cfg.h_blocks, cfg.heads, seed=testbed.derive_seed(10, cfg.seed), logvar_init=cfg.logvar_init)
    pred = init_predictor(cfg.channels, seed=testbed.derive_seed(11, cfg.seed))
    return Checkpoint(zp, pred, cfg, 0, _rng_state(cfg, 0))


def _rng_state(cfg, step):
    # every step's randomness is derived from (seed, step), so the step is the state
    return {"scheme": "seedsequence", "entropy": [12, int(cfg.seed)], "next_step": int(step)}


def step_rng(seed, step):
    return np.random.default_rng(np.random.SeedSequence([12, int(seed), int(step)]))


# forward -----------------------------------------------------------------------------


_OVERLAP_CACHE = {}


def _overlaps_cached(poses):
    key = b"".join(np.concatenate([p.rotation.ravel(), p.center, [p.fx, p.fy, p.cx, p.cy]]).tobytes() for p in poses)
    hit = _OVERLAP_CACHE.get(key)
    if hit is None:
        if len(_OVERLAP_CACHE) > 256:
            _OVERLAP_CACHE.clear()
        hit = _OVERLAP_CACHE[key] = overlap_matrix(list(poses))
    return hit


def encode_views(views, poses, cfg: PipelineConfig):
    feats = []
    for img, pose in zip(views, poses):
        f = encode_view(img, cfg.patch, cfg.channels, cfg.encoder_seed)
        if cfg.pose_embedding:
            emb = testbed.ray_embedding(pose, f.rows, f.cols, cfg.patch, cfg.channels, cfg.encoder_seed, cfg.radius,
                                        cfg.embed_scale)
            f = ViewFeature(f.rows, f.cols, f.channels, f.data + emb)
        if cfg.cell_embed > 0:
            emb = testbed.cell_embedding(f.rows, f.cols, cfg.channels, cfg.cell_embed, cfg.encoder_seed)
            f = ViewFeature(f.rows, f.cols, f.channels, f.data + emb)
        feats.append(f)
    return feats


def select_views(features, poses, cfg: PipelineConfig, distances=None):
    if distances is None:
        from .geometry import pairwise_distances

        distances = pairwise_distances(poses)
    first = None if cfg.first_anchor < 0 else cfg.first_anchor
    kwargs = {}
    if cfg.strategy == "overlap":
        kwargs["overlaps"] = _overlaps_cached(poses)
    elif cfg.strategy == "kmeans_pose":
        kwargs["positions"] = np.stack([p.center for p in poses])
    elif cfg.strategy == "kmeans_feature":
        kwargs["embeddings"] = view_embeddings([f.array() for f in features])
    return partition_views(cfg.strategy, cfg.n_anchors, distances, first=first, seed=cfg.seed, **kwargs)


@dataclass
class ForwardResult:
    rendered: Tensor  # (T, H, W, 3)
    report: object
    latent: object
    gaussians: GaussianSet
    partition: object

    @property
    def n_primitives(self):
        return len(self.gaussians)


def forward(views, poses, targets, cfg: PipelineConfig, ckpt: Checkpoint, train=False, rng=None, partition=None,
            distances=None, background=DEFAULT_BACKGROUND):
    """Render ``targets`` (list of (Image, CameraPose)) from the input views.

    ``partition`` overrides anchor selection (used to pin anchors by view
    identity). In training mode the latent is sampled with ``rng``.
    """
    if len(views) != cfg.k_views or len(poses) != cfg.k_views:
        raise InvalidInput(f"expected {cfg.k_views} views and poses, got {len(views)} and {len(poses)}")
    if not targets:
        raise InvalidInput("forward needs at least one target view")
    feats = encode_views(views, poses, cfg)
    part = partition if partition is not None else select_views(feats, poses, cfg, distances)
    z = compress(feats, part, ckpt.zpressor, mode=cfg.mode, ablation=cfg.ablation, train=train, rng=rng)
    gs = predict_gaussians(z, [poses[a] for a in part.anchors], ckpt.predictor, cfg.patch)
    tposes = [p for _, p in targets]
    h, w = targets[0][0].height, targets[0][0].width
    pred = render_tensor(gs, tposes, h, w, background)
    target = np.stack([img.pixels for img, _ in targets]).astype(pred.dtype)
    report = ib_loss(pred, target, z, beta=cfg.beta)
    return ForwardResult(pred, report, z, gs, part)


def predict_scene(views, poses, cfg: PipelineConfig, ckpt: Checkpoint):
    """Gaussians predicted from the input views (deterministic, no tape)."""
    if len(views) != cfg.k_views or len(poses) != cfg.k_views:
        raise InvalidInput(f"expected {cfg.k_views} views and poses, got {len(views)} and {len(poses)}")
    with no_grad():
        feats = encode_views(views, poses, cfg)
        part = select_views(feats, poses, cfg)
        z = compress(feats, part, ckpt.zpressor, mode=cfg.mode, ablation=cfg.ablation)
        return predict_gaussians(z, [poses[a] for a in part.anchors], ckpt.predictor, cfg.patch)


# training ------------------------------------------------------------------------------


def loss_psnr(mse):
    if not mse > 1e-10:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def _fmt(x):
    return f"{x:.9g}"


@dataclass
class MetricRow:
    step: int
    task: float
    kl: float
    total: float
    psnr: float
    wallclock_ms: float = None
    n_primitives: int = 0

    def csv(self):
        wc = "" if self.wallclock_ms is None else f"{self.wallclock_ms:.3f}"
        return f"{self.step},{_fmt(self.task)},{_fmt(self.kl)},{_fmt(self.total)},{_fmt(self.psnr)},{wc},{self.n_primitives}"


def write_metrics(path, rows):
    lines = [",".join(CSV_HEADER)] + [r.csv() for r in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def _train_batch(cfg, ckpt, step):
    rng = step_rng(cfg.seed, step)
    spec = cfg.data_spec
    totals = []
    reps = []
    n_prim = 0
    for b in range(cfg.batch_scenes):
        index = int(rng.integers(cfg.scene_pool)) if cfg.scene_pool else step * cfg.batch_scenes + b
        group = 0 if cfg.scene_pool else cfg.seed
        sample = testbed.scene_sample(spec, testbed.TRAIN_NAMESPACE, index, group)
        targets = testbed.render_targets(spec, sample, rng.uniform(0.0, 1.0, cfg.train_targets))
        res = forward(list(sample.views), list(sample.poses), targets, cfg, ckpt, train=True, rng=rng, distances=sample.distances)
        totals.append(res.report.tensor)
        reps.append(res.report)
        n_prim = res.n_primitives
    loss = totals[0]
    for t in totals[1:]:
        loss = loss + t
    loss = loss * (1.0 / len(totals))
    task = float(np.mean([r.task for r in reps]))
    kl = float(np.mean([r.kl for r in reps]))
    return loss, MetricRow(step, task, kl, float(loss.data), loss_psnr(task), None, n_prim)


def sgd_update(ckpt: Checkpoint, cfg: PipelineConfig):
    """Apply one optimizer step from .grad (global-norm clip first, if set).

    ``sgd`` uses optional heavy-ball momentum; ``adam`` is the usual
    bias-corrected Adam. Optimizer state lives in ``ckpt.velocity``.
    """
    named = ckpt.named_tensors()
    grads = {k: (np.zeros_like(t.data) if t.grad is None else t.grad) for k, t in named.items()}
    scale = 1.0
    if cfg.grad_clip > 0:
        norm = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values()))
        if norm > cfg.grad_clip:
            scale = cfg.grad_clip / norm
    lr = np.float32(cfg.lr)
    if cfg.optimizer == "adam":
        b1, b2 = ADAM_BETAS
        t = ckpt.step + 1
        step_size = np.float32(cfg.lr * math.sqrt(1.0 - b2**t) / (1.0 - b1**t))
    for k, t in named.items():
        g = grads[k] * np.float32(scale)
        if cfg.optimizer == "adam":
            m = ckpt.velocity.get(f"m.{k}", np.zeros_like(g))
            v = ckpt.velocity.get(f"v.{k}", np.zeros_like(g))
            m = (np.float32(b1) * m + np.float32(1 - b1) * g).astype(np.float32)
            v = (np.float32(b2) * v + np.float32(1 - b2) * g * g).astype(np.float32)
            ckpt.velocity[f"m.{k}"], ckpt.velocity[f"v.{k}"] = m, v
            t.data = (t.data - step_size * m / (np.sqrt(v) + np.float32(ADAM_EPS))).astype(t.data.dtype)
        else:
            if cfg.momentum > 0:
                vel = ckpt.velocity.get(k)
                vel = g if vel is None else np.float32(cfg.momentum) * vel + g
                ckpt.velocity[k] = vel.astype(np.float32)
                g = vel
            t.data = (t.data - lr * g).astype(t.data.dtype)
        t.grad = None


def train(cfg: PipelineConfig, ckpt: Checkpoint = None, on_row=None):
    """Plain SGD on the zpressor and predictor; the encoder stays frozen.

    Returns (checkpoint, rows). A non-finite loss raises TrainingDiverged
    carrying the last checkpoint whose loss was finite.
    """
    if ckpt is None:
        ckpt = init_checkpoint(cfg)
    else:
        ckpt.config = cfg
    rows = []
    params = ckpt.tensors()
    for step in range(ckpt.step, cfg.steps):
        loss, row = _train_batch(cfg, ckpt, step)
        if not np.isfinite(loss.data).all():
            raise TrainingDiverged(f"non-finite loss at step {step}", checkpoint=ckpt, step=step)
        for p in params:
            p.grad = None
        loss.backward()
        grads_ok = all(p.grad is None or np.isfinite(p.grad).all() for p in params)
        if not grads_ok:
            raise TrainingDiverged(f"non-finite gradient at step {step}", checkpoint=ckpt, step=step)
        sgd_update(ckpt, cfg)
        ckpt.step = step + 1
        ckpt.rng_state = _rng_state(cfg, ckpt.step)
        if step % cfg.log_every == 0:
            rows.append(row)
            if on_row is not None:
                on_row(row)
    return ckpt, rows


# evaluation -------------------------------------------------------------------------


@dataclass
class EvalResult:
    psnr_mean: float
    psnr_median: float
    task: float
    kl: float
    total: float
    wallclock_ms: float
    n_primitives: int
    psnrs: list = field(default_factory=list)
    forward_ms: list = field(default_factory=list)

    def summary(self):
        d = asdict(self)
        d.pop("psnrs")
        d.pop("forward_ms")
        return d


def evaluate(ckpt: Checkpoint, eval_cfg: PipelineConfig = None, namespace=testbed.EVAL_NAMESPACE, group=0, timing=True):
    """Held-out PSNR over ``eval_scenes`` seeded scenes.

    ``eval_cfg`` supplies the data and routing settings (it may use a
    different k_views than training); parameters come from ``ckpt``.
    Wall-clock covers the whole forward pass (encode to render).
    """
    cfg = eval_cfg or ckpt.config
    spec = cfg.data_spec
    psnrs, tasks, kls, totals, times = [], [], [], [], []
    n_prim = 0
    with no_grad():
        for i in range(cfg.eval_scenes):
            sample = testbed.scene_sample(spec, namespace, i, group)
            targets = testbed.eval_targets(spec, sample, cfg.target_views)
            t0 = time.perf_counter()
            res = forward(list(sample.views), list(sample.poses), targets, cfg, ckpt, distances=sample.distances)
            times.append((time.perf_counter() - t0) * 1e3)
            pred = np.clip(res.rendered.data.astype(np.float64), 0.0, 1.0)
            for t, (img, _) in enumerate(targets):
                psnrs.append(psnr(pred[t], img.pixels))
            tasks.append(res.report.task)
            kls.append(res.report.kl)
            totals.append(res.report.total)
            n_prim = res.n_primitives
    return EvalResult(
        float(np.mean(psnrs)),
        float(np.median(psnrs)),
        float(np.mean(tasks)),
        float(np.mean(kls)),
        float(np.mean(totals)),
        float(np.median(times)) if timing else float("nan"),
        n_prim,
        psnrs,
        times,
    )


def evaluate_on_training_scenes(ckpt: Checkpoint, eval_cfg: PipelineConfig = None):
    """Same protocol as evaluate(), but on scenes from the training pool."""
    cfg = eval_cfg or ckpt.config
    group = 0 if cfg.scene_pool else cfg.seed
    n = min(cfg.eval_scenes, cfg.scene_pool) if cfg.scene_pool else cfg.eval_scenes
    return evaluate(ckpt, cfg.replace(eval_scenes=n), namespace=testbed.TRAIN_NAMESPACE, group=group)
