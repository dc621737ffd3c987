"""Seeded synthetic data: scenes, noisy input views and held-out targets.

Scenes are identified by (namespace, index). Training draws from a finite
pool in the training namespace; evaluation uses a disjoint namespace, so the
held-out set is shared by every model regardless of its training seed.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .geometry import pairwise_distances
from .scene import Image, default_intrinsics, make_scene, make_trajectory, poses_along, render_scene

TRAIN_NAMESPACE = 1
EVAL_NAMESPACE = 2
_NOISE_STREAM = 3
_TARGET_STREAM = 4
_EMBED_STREAM = 5
_MASK_STREAM = 6
_LIGHT_STREAM = 7
_CELL_STREAM = 8
TARGET_CLEARANCE = 0.25  # min gap to any input view, in units of the input spacing


def derive_seed(*ids):
    return int(np.random.SeedSequence([int(i) for i in ids]).generate_state(1)[0])


@dataclass(frozen=True)
class DataSpec:
    """The subset of a pipeline config that determines the generated data."""

    k_views: int
    baseline: float
    trajectory: str = "arc"
    radius: float = 3.0
    image_size: int = 32
    n_blobs: int = 4
    input_noise: float = 0.0
    extent: float = 0.8
    patch_dropout: float = 0.0  # chance each input patch is blanked out
    light_jitter: float = 0.0  # log-std of per-view, per-channel object colour gain
    patch: int = 8

    @property
    def intrinsics(self):
        return default_intrinsics(self.image_size)


@dataclass(frozen=True)
class SceneSample:
    seed: int
    scene: object
    poses: tuple
    views: tuple  # observed (noisy) input images
    distances: np.ndarray


@lru_cache(maxsize=4096)
def _sample(spec: DataSpec, seed: int):
    scene = make_scene(spec.n_blobs, seed, extent=spec.extent)
    poses = tuple(make_trajectory(spec.trajectory, spec.k_views, spec.baseline, radius=spec.radius, intrinsics=spec.intrinsics))
    rng = np.random.default_rng(derive_seed(_NOISE_STREAM, seed))
    mask_rng = np.random.default_rng(derive_seed(_MASK_STREAM, seed))
    light_rng = np.random.default_rng(derive_seed(_LIGHT_STREAM, seed))
    views = []
    for p in poses:
        lit = scene
        if spec.light_jitter > 0:
            lit = relight(scene, np.exp(spec.light_jitter * light_rng.standard_normal(3)))
        px = render_scene(lit, p).pixels
        if spec.input_noise > 0:
            px = np.clip(px + spec.input_noise * rng.standard_normal(px.shape), 0.0, 1.0)
        if spec.patch_dropout > 0:
            px = blank_patches(px, spec.patch, spec.patch_dropout, mask_rng)
        views.append(Image(px))
    return SceneSample(seed, scene, poses, tuple(views), pairwise_distances(poses))


def relight(scene, gain):
    """The scene under a different light: object colours scaled per channel
    (clipped to [0, 1]); the background is unchanged."""
    blobs = [replace(b, color=np.clip(b.color * gain, 0.0, 1.0)) for b in scene.blobs]
    return replace(scene, blobs=tuple(blobs))


def blank_patches(pixels, patch, rate, rng):
    """Zero a random subset of patch cells, independently per view. This
    stands in for occlusion: what one view misses, a neighbour may show."""
    h, w = pixels.shape[:2]
    keep = rng.uniform(size=(h // patch, w // patch)) >= rate
    mask = np.repeat(np.repeat(keep, patch, axis=0), patch, axis=1)
    return pixels * mask[..., None]


def scene_sample(spec: DataSpec, namespace: int, index: int, group: int = 0) -> SceneSample:
    return _sample(spec, derive_seed(namespace, group, index))


def input_params(k):
    return np.array([0.5]) if k == 1 else np.linspace(0.0, 1.0, k)


def heldout_params(k, count, rng):
    """``count`` path parameters in [0, 1] that keep clear of every input view."""
    inputs = input_params(k)
    gap = TARGET_CLEARANCE * (1.0 if k == 1 else 1.0 / (k - 1))
    out = []
    while len(out) < count:
        t = float(rng.uniform(0.0, 1.0))
        if np.min(np.abs(inputs - t)) >= gap:
            out.append(t)
    return np.array(out)


def render_targets(spec: DataSpec, sample: SceneSample, params):
    poses = poses_along(spec.trajectory, params, spec.baseline, radius=spec.radius, intrinsics=spec.intrinsics)
    return [(render_scene(sample.scene, p), p) for p in poses]


def eval_targets(spec: DataSpec, sample: SceneSample, count):
    rng = np.random.default_rng(derive_seed(_TARGET_STREAM, sample.seed))
    return render_targets(spec, sample, heldout_params(spec.k_views, count, rng))


EMBED_SCALE = 0.5


@lru_cache(maxsize=64)
def _embed_matrix(channels, seed):
    rng = np.random.default_rng(derive_seed(_EMBED_STREAM, seed))
    return rng.normal(size=(6, channels))


def ray_embedding(pose, rows, cols, patch, channels, seed=0, radius=3.0, scale=EMBED_SCALE):
    """Fixed linear code of each patch centre's viewing ray (direction, origin).

    The encoder sees pixels only; this gives tokens the camera geometry that a
    multi-view backbone would otherwise supply.
    """
    key = (pose.rotation.tobytes(), pose.center.tobytes(), pose.fx, pose.fy, pose.cx, pose.cy,
           rows, cols, patch, channels, seed, radius, scale)
    hit = _EMBED_CACHE.get(key)
    if hit is None:
        if len(_EMBED_CACHE) > 4096:
            _EMBED_CACHE.clear()
        hit = _EMBED_CACHE[key] = _ray_embedding(pose, rows, cols, patch, channels, seed, radius, scale)
    return hit


_EMBED_CACHE = {}


def _ray_embedding(pose, rows, cols, patch, channels, seed, radius, scale):
    r, c = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    d = pose.pixel_rays((c.ravel() + 0.5) * patch, (r.ravel() + 0.5) * patch)
    d = d / np.linalg.norm(d, axis=-1, keepdims=True)
    o = np.broadcast_to(pose.center / radius, d.shape)
    out = (np.concatenate([d, o], axis=-1) @ (scale * _embed_matrix(channels, seed))).astype(np.float32)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=64)
def cell_embedding(rows, cols, channels, scale, seed=0, bandwidth=3.0):
    """Fixed random Fourier code of each grid cell, shared by all views.

    Inner products of the codes approximate a Gaussian kernel in cell
    position, so attention can match tokens at the same place in two views.
    """
    rng = np.random.default_rng(derive_seed(_CELL_STREAM, seed))
    freq = rng.normal(scale=bandwidth, size=(2, channels))
    phase = rng.uniform(0.0, 2.0 * np.pi, size=channels)
    r, c = np.meshgrid(np.arange(rows) / max(rows, 1), np.arange(cols) / max(cols, 1), indexing="ij")
    pos = np.stack([r.ravel(), c.ravel()], axis=-1)
    out = (scale * np.sqrt(2.0 / channels) * np.cos(2.0 * np.pi * pos @ freq + phase)).astype(np.float32)
    out.setflags(write=False)
    return out
