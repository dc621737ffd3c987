"""Synthetic scenes of Gaussian blobs, camera paths, a forward splatting
renderer, the frozen patch encoder and PSNR."""

from __future__ import annotations

import re
from functools import lru_cache
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InvalidInput, ShapeError
from .geometry import CameraPose, look_at

PSNR_CAP = 99.0
COV_FLOOR = 1e-8
DEFAULT_BACKGROUND = (0.05, 0.05, 0.05)


def quat_to_matrix(q):
    """Rotation matrices from (..., 4) quaternions (w, x, y, z), normalized first."""
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = np.moveaxis(q, -1, 0)
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
        ],
        -2,
    )


@dataclass(frozen=True)
class GaussianPrimitive:
    mean: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray  # unit quaternion (w, x, y, z)
    opacity: float
    color: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).reshape(3)
        scale = np.asarray(self.scale, dtype=np.float64).reshape(3)
        rot = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        if (scale <= 0).any():
            raise InvalidInput("Gaussian scale must be strictly positive")
        norm = np.linalg.norm(rot)
        if abs(norm - 1.0) > 1e-6:
            raise InvalidInput(f"rotation quaternion norm {norm} is not 1")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "opacity", float(np.clip(self.opacity, 0.0, 1.0)))
        object.__setattr__(self, "color", np.clip(np.asarray(self.color, dtype=np.float64).reshape(3), 0.0, 1.0))

    @property
    def covariance(self):
        r = quat_to_matrix(self.rotation)
        return r @ np.diag(self.scale**2) @ r.T

    def __eq__(self, other):
        return all(np.array_equal(getattr(self, f), getattr(other, f)) for f in ("mean", "scale", "rotation", "opacity", "color"))

    __hash__ = None


@dataclass(frozen=True)
class SceneSpec:
    blobs: tuple
    background: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_BACKGROUND))
    bounds: tuple = ((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))

    def __post_init__(self):
        object.__setattr__(self, "blobs", tuple(self.blobs))
        object.__setattr__(self, "background", np.asarray(self.background, dtype=np.float64).reshape(3))
        if not self.blobs:
            raise InvalidInput("a scene needs at least one blob")
        lo, hi = np.asarray(self.bounds[0]), np.asarray(self.bounds[1])
        for b in self.blobs:
            if (b.mean < lo).any() or (b.mean > hi).any():
                raise InvalidInput("blob mean outside scene bounds")

    def __eq__(self, other):
        return (
            len(self.blobs) == len(other.blobs)
            and all(a == b for a, b in zip(self.blobs, other.blobs))
            and np.array_equal(self.background, other.background)
            and self.bounds == other.bounds
        )

    __hash__ = None


@dataclass(frozen=True)
class Image:
    pixels: np.ndarray  # (H, W, 3) in [0, 1]

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ShapeError(f"image pixels must be HxWx3, got {px.shape}")
        if px.size and (px.min() < 0.0 or px.max() > 1.0):
            raise InvalidInput("image values must lie in [0, 1]")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]


# scenes and trajectories ------------------------------------------------------


def make_scene(n_blobs, seed, *, scale_range=(0.15, 0.4), opacity_range=(0.7, 1.0), extent=0.8):
    """Seeded random blobs inside the [-1, 1]^3 box."""
    if int(n_blobs) != n_blobs or n_blobs < 1:
        raise InvalidInput(f"n_blobs must be >= 1, got {n_blobs}")
    rng = np.random.default_rng(seed)
    blobs = []
    for _ in range(int(n_blobs)):
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        blobs.append(
            GaussianPrimitive(
                mean=rng.uniform(-extent, extent, size=3),
                scale=rng.uniform(*scale_range, size=3),
                rotation=q,
                opacity=rng.uniform(*opacity_range),
                color=rng.uniform(0.0, 1.0, size=3),
            )
        )
    return SceneSpec(tuple(blobs))


def default_intrinsics(size=32, fov_scale=1.0):
    f = float(size) * fov_scale
    return dict(fx=f, fy=f, cx=size / 2.0, cy=size / 2.0, width=int(size), height=int(size))


def trajectory_positions(kind, params, baseline, look_at_pt, radius):
    """Camera centers for normalized path parameters in [0, 1]."""
    params = np.asarray(params, dtype=np.float64)
    target = np.asarray(look_at_pt, dtype=np.float64)
    if kind == "arc":
        theta = (params - 0.5) * baseline
        return target + radius * np.stack([np.sin(theta), np.zeros_like(theta), -np.cos(theta)], axis=-1)
    if kind == "line":
        x = (params - 0.5) * baseline
        return target + np.stack([x, np.zeros_like(x), np.full_like(x, -radius)], axis=-1)
    raise ConfigError(f"unknown trajectory kind {kind!r}")


def poses_along(kind, params, baseline, look_at_pt=(0.0, 0.0, 0.0), radius=3.0, intrinsics=None):
    intrinsics = intrinsics or default_intrinsics()
    centers = trajectory_positions(kind, params, baseline, look_at_pt, radius)
    return [look_at(c, look_at_pt, **intrinsics) for c in centers]


def make_trajectory(kind, k, baseline, look_at_pt=(0.0, 0.0, 0.0), radius=3.0, intrinsics=None):
    """k cameras spread evenly over an arc (angular extent ``baseline``
    radians) or a line (length ``baseline``), all aimed at ``look_at_pt``."""
    if kind not in ("arc", "line"):
        raise ConfigError(f"unknown trajectory kind {kind!r}")
    if int(k) != k or k < 1:
        raise InvalidInput(f"k must be >= 1, got {k}")
    if not baseline > 0:
        raise InvalidInput("baseline must be positive")
    params = np.array([0.5]) if k == 1 else np.linspace(0.0, 1.0, int(k))
    return poses_along(kind, params, baseline, look_at_pt, radius, intrinsics)


# rendering ------------------------------------------------------------------------


def screen_gaussians(means, covs, pose):
    """Project 3D Gaussians: returns (uv (G,2), depth (G,), cov2d (G,2,2)).

    The 2D covariance is J @ Sigma_cam @ J^T with J the Jacobian of the
    perspective projection at the mean; diagonal entries are floored.
    """
    pc = (means - pose.center) @ pose.rotation.T
    z = pc[:, 2]
    zs = np.where(z > 0, z, 1.0)
    uv = np.stack([pose.fx * pc[:, 0] / zs + pose.cx, pose.fy * pc[:, 1] / zs + pose.cy], axis=-1)
    jac = np.zeros((len(z), 2, 3))
    jac[:, 0, 0] = pose.fx / zs
    jac[:, 0, 2] = -pose.fx * pc[:, 0] / zs**2
    jac[:, 1, 1] = pose.fy / zs
    jac[:, 1, 2] = -pose.fy * pc[:, 1] / zs**2
    cov_cam = pose.rotation @ covs @ pose.rotation.T
    cov2 = jac @ cov_cam @ np.swapaxes(jac, 1, 2)
    cov2[:, 0, 0] = np.maximum(cov2[:, 0, 0], COV_FLOOR)
    cov2[:, 1, 1] = np.maximum(cov2[:, 1, 1], COV_FLOOR)
    return uv, z, cov2


def pixel_centers(h, w):
    v, u = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    return np.stack([u.reshape(-1), v.reshape(-1)], axis=-1)


def render(primitives, pose, h, w, background=DEFAULT_BACKGROUND, return_transmittance=False):
    """Front-to-back alpha compositing of depth-sorted splats.

    Each splat contributes alpha_i * g_i(p) with g_i the screen-space Gaussian
    normalized to peak 1. Splats with depth <= 0 are culled.
    """
    if h < 1 or w < 1:
        raise InvalidInput("image size must be positive")
    bg = np.asarray(background, dtype=np.float64)
    pix = pixel_centers(h, w)
    out = np.zeros((h * w, 3))
    trans = np.ones(h * w)
    history = [trans.copy()]
    if primitives:
        means = np.stack([p.mean for p in primitives])
        rot = quat_to_matrix(np.stack([p.rotation for p in primitives]))
        fac = rot * np.stack([p.scale for p in primitives])[:, None, :]
        covs = fac @ np.swapaxes(fac, 1, 2)
        opac = np.array([p.opacity for p in primitives])
        cols = np.stack([p.color for p in primitives])
        uv, z, cov2 = screen_gaussians(means, covs, pose)
        order = np.argsort(z, kind="stable")
        for i in order:
            if z[i] <= 0:
                continue
            a, b, c = cov2[i, 0, 0], cov2[i, 0, 1], cov2[i, 1, 1]
            det = a * c - b * b
            if det <= 0:
                det = COV_FLOOR * COV_FLOOR
            d = pix - uv[i]
            power = (c * d[:, 0] ** 2 - 2 * b * d[:, 0] * d[:, 1] + a * d[:, 1] ** 2) / det
            alpha = opac[i] * np.exp(-0.5 * power)
            out += (trans * alpha)[:, None] * cols[i]
            trans = trans * (1.0 - alpha)
            if return_transmittance:
                history.append(trans.copy())
    out += trans[:, None] * bg
    img = Image(np.clip(out, 0.0, 1.0).reshape(h, w, 3))
    if return_transmittance:
        return img, np.stack(history)
    return img


def render_scene(scene, pose):
    return render(scene.blobs, pose, pose.height, pose.width, scene.background)


# encoder and metric ---------------------------------------------------------------


@lru_cache(maxsize=32)
def _encoder_matrix(patch, channels, encoder_seed):
    rng = np.random.default_rng(encoder_seed)
    fan_in = patch * patch * 3
    mat = (rng.normal(size=(fan_in, channels)) * np.sqrt(1.0 / fan_in) * 2.0).astype(np.float32)
    mat.setflags(write=False)
    return mat


def encoder_matrix(patch, channels, encoder_seed):
    """The frozen (patch*patch*3, channels) projection for ``encoder_seed``."""
    return _encoder_matrix(int(patch), int(channels), int(encoder_seed))


def patchify(pixels, patch):
    h, w, _ = pixels.shape
    rows, cols = h // patch, w // patch
    blocks = pixels.reshape(rows, patch, cols, patch, 3).transpose(0, 2, 1, 3, 4)
    return blocks.reshape(rows * cols, patch * patch * 3)


def encode_view(image, patch, channels, encoder_seed=0):
    """Frozen random projection of non-overlapping patches to ``channels`` dims."""
    from .zpressor import ViewFeature

    px = image.pixels if isinstance(image, Image) else np.asarray(image)
    h, w, _ = px.shape
    if patch < 1 or h % patch or w % patch:
        raise ConfigError(f"patch {patch} must divide image size {h}x{w}")
    if channels < 3:
        raise ConfigError("encoder needs at least 3 channels")
    mat = encoder_matrix(patch, channels, encoder_seed)
    tokens = patchify(px.astype(np.float32), patch) @ mat
    return ViewFeature(h // patch, w // patch, channels, tokens)


def psnr(a, b):
    pa = a.pixels if isinstance(a, Image) else np.asarray(a, dtype=np.float64)
    pb = b.pixels if isinstance(b, Image) else np.asarray(b, dtype=np.float64)
    if pa.shape != pb.shape:
        raise ShapeError(f"psnr shapes differ: {pa.shape} vs {pb.shape}")
    mse = float(np.mean((pa - pb) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def write_ppm(path, image):
    px = image.pixels if isinstance(image, Image) else np.asarray(image)
    data = np.round(np.clip(px, 0, 1) * 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{data.shape[1]} {data.shape[0]}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_ppm(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    m = re.match(rb"P6\s+(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if m is None:
        raise InvalidInput("not a binary PPM")
    w, h, maxval = (int(g) for g in m.groups())
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h * 3, offset=m.end()).reshape(h, w, 3)
    return Image(data / float(maxval))
