"""Differentiable Gaussian rasterization on the tensor engine.

This mirrors :func:`zpress.scene.render` (same projection, covariance floor,
depth sort and front-to-back compositing) but keeps every step on the tape so
that a rendering loss can be backpropagated into predicted primitives. The
per-pixel splat weight is one fused op with a hand-written backward, since it
is by far the largest array in the graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numcore import Tensor, alpha_composite, as_tensor, concat, matmul, sqrt, stack, where
from .numcore.tensor import _make, getitem
from .scene import COV_FLOOR, pixel_centers

POWER_CUTOFF = 60.0  # squared Mahalanobis radius beyond which a splat weighs 0


def _pixel_moments(pixels, dtype):
    """Pixel coordinates (centred) and their quadratic moments, (P, 6)."""
    px = np.asarray(pixels, dtype=np.float64)
    origin = px.mean(axis=0)
    pu, pv = px[:, 0] - origin[0], px[:, 1] - origin[1]
    mom = np.stack([np.ones_like(pu), pu, pv, pu * pu, pv * pv, pu * pv], axis=-1)
    return mom.astype(dtype), origin


def splat_alpha(u, v, a, b, c, opacity, pixels, valid=None):
    """Per-pixel opacity of each splat: opacity * exp(-0.5 * Mahalanobis^2).

    u, v, a, b, c, opacity: (..., G) screen means, 2x2 covariance entries
    [[a, b], [b, c]] and peak opacities. pixels: (P, 2) constant pixel
    centres. valid: optional (..., G) boolean constant; invalid splats get
    zero weight. Returns (..., G, P), layer-major as consumed by
    ``alpha_composite(..., layers_first=True)``.

    The squared distance is a quadratic polynomial in the pixel coordinates,
    so both passes reduce to one product with the (P, 6) moment matrix
    [1, x, y, x^2, y^2, xy] instead of many full-size temporaries.
    """
    u, v, a, b, c, opacity = (as_tensor(t) for t in (u, v, a, b, c, opacity))
    dt = u.dtype
    mom, origin = _pixel_moments(pixels, dt)
    uc, vc = u.data - dt.type(origin[0]), v.data - dt.type(origin[1])
    av, bv, cv = a.data, b.data, c.data
    det = av * cv - bv * bv
    det = np.where(det > 0, det, COV_FLOOR * COV_FLOOR).astype(dt)
    # power = (c dx^2 - 2 b dx dy + a dy^2) / det, dx = x - uc, dy = y - vc
    coef = np.stack(
        [
            cv * uc * uc - 2.0 * bv * uc * vc + av * vc * vc,
            -2.0 * cv * uc + 2.0 * bv * vc,
            -2.0 * av * vc + 2.0 * bv * uc,
            cv,
            av,
            -2.0 * bv,
        ],
        axis=-1,
    ) / det[..., None]
    power = np.maximum(coef @ mom.T, 0.0)
    # tails beyond the cutoff are exactly zero; left alone they underflow to
    # subnormal floats, which are both negligible and very slow to process
    keep = power < POWER_CUTOFF
    if valid is not None:
        keep &= np.asarray(valid, dtype=bool)[..., None]
    gauss = np.exp(-0.5 * np.where(keep, power, 0.0))
    gauss *= keep
    out = opacity.data[..., None] * gauss

    def backward(g):
        go = (g * gauss).sum(axis=-1)
        gp = g * out
        gp *= -0.5
        mp = (gp * power).sum(axis=-1) / det
        m = (gp @ mom) / det[..., None]
        m0, mu, mv, muu, mvv, muv = (m[..., k] for k in range(6))
        sx = mu - uc * m0
        sy = mv - vc * m0
        sxx = muu - 2.0 * uc * mu + uc * uc * m0
        syy = mvv - 2.0 * vc * mv + vc * vc * m0
        sxy = muv - uc * mv - vc * mu + uc * vc * m0
        gu = -(2.0 * cv * sx - 2.0 * bv * sy)
        gv = -(2.0 * av * sy - 2.0 * bv * sx)
        ga = syy - cv * mp
        gc = sxx - av * mp
        gb = 2.0 * bv * mp - 2.0 * sxy
        return gu, gv, ga, gb, gc, go

    return _make(out, (u, v, a, b, c, opacity), backward)


def quat_rotation(q):
    """(..., 4) tensor quaternions (w, x, y, z) -> (..., 3, 3) rotations."""
    q = as_tensor(q)
    q = q / sqrt((q * q).sum(axis=-1, keepdims=True) + 1e-12)
    w, x, y, z = (getitem(q, (Ellipsis, i)) for i in range(4))
    rows = [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
    return stack([stack(r, axis=-1) for r in rows], axis=-2)


@dataclass
class GaussianSet:
    """Batched primitives as tensors; every field has leading size G."""

    means: Tensor  # (G, 3)
    scales: Tensor  # (G, 3)
    quats: Tensor  # (G, 4), not necessarily normalized
    opacity: Tensor  # (G,)
    colors: Tensor  # (G, 3)

    def __len__(self):
        return self.means.shape[0]

    def to_primitives(self):
        from .scene import GaussianPrimitive

        q = self.quats.data.astype(np.float64)
        q = q / np.linalg.norm(q, axis=-1, keepdims=True)
        return [
            GaussianPrimitive(m, s, r, float(o), c)
            for m, s, r, o, c in zip(
                self.means.data.astype(np.float64),
                self.scales.data.astype(np.float64),
                q,
                self.opacity.data,
                self.colors.data.astype(np.float64),
            )
        ]


def project(gs: GaussianSet, poses):
    """Screen-space splats for each pose: returns u, v, a, b, c, depth as (T, G)."""
    dtype = gs.means.dtype
    rot = np.stack([p.rotation for p in poses]).astype(dtype)  # (T, 3, 3)
    cen = np.stack([p.center for p in poses]).astype(dtype)[:, None, :]  # (T, 1, 3)
    fx = np.array([p.fx for p in poses], dtype)[:, None]
    fy = np.array([p.fy for p in poses], dtype)[:, None]
    cx = np.array([p.cx for p in poses], dtype)[:, None]
    cy = np.array([p.cy for p in poses], dtype)[:, None]

    pc = matmul(gs.means[None] - cen, Tensor(np.swapaxes(rot, 1, 2)))  # (T, G, 3)
    x, y, z = (getitem(pc, (Ellipsis, i)) for i in range(3))
    front = z.data > 0
    zs = where(front, z, 1.0)
    inv = 1.0 / zs
    u = fx * x * inv + cx
    v = fy * y * inv + cy

    # covariance factor M = R(q) diag(s), rotated into each camera frame
    m = quat_rotation(gs.quats) * gs.scales[:, None, :]  # (G, 3, 3)
    wm = matmul(Tensor(rot[:, None]), m[None])  # (T, G, 3, 3)
    r0, r1, r2 = (getitem(wm, (Ellipsis, i, slice(None))) for i in range(3))  # (T, G, 3)
    t0 = (fx * inv)[..., None] * r0 - (fx * x * inv * inv)[..., None] * r2
    t1 = (fy * inv)[..., None] * r1 - (fy * y * inv * inv)[..., None] * r2
    a = (t0 * t0).sum(axis=-1)
    b = (t0 * t1).sum(axis=-1)
    c = (t1 * t1).sum(axis=-1)
    a = where(a.data > COV_FLOOR, a, COV_FLOOR)
    c = where(c.data > COV_FLOOR, c, COV_FLOOR)
    return u, v, a, b, c, z


def render_tensor(gs: GaussianSet, poses, h, w, background):
    """Differentiable render of ``gs`` at every pose: (T, h, w, 3) tensor."""
    t = len(poses)
    u, v, a, b, c, z = project(gs, poses)
    order = np.argsort(z.data, axis=-1, kind="stable")
    rows = np.arange(t)[:, None]
    idx = (rows, order)
    u, v, a, b, c = (getitem(q, idx) for q in (u, v, a, b, c))
    opac = getitem(gs.opacity, order)  # (T, G)
    colors = getitem(gs.colors, order)  # (T, G, 3)
    valid = np.take_along_axis(z.data, order, axis=-1) > 0
    alpha = splat_alpha(u, v, a, b, c, opac, pixel_centers(h, w), valid)
    img = alpha_composite(alpha, colors, background, layers_first=True)  # (T, P, 3)
    return img.reshape(t, h, w, 3)


def render_set(gs: GaussianSet, poses, h, w, background):
    """Forward-only convenience: numpy (T, h, w, 3), clipped to [0, 1]."""
    return np.clip(render_tensor(gs, poses, h, w, background).data, 0.0, 1.0)


def gaussian_set(means, scales, quats, opacity, colors, dtype=None):
    """Build a GaussianSet from arrays (leaf tensors, no grad)."""
    conv = (lambda x: Tensor(np.asarray(x, dtype=dtype))) if dtype else Tensor
    return GaussianSet(conv(means), conv(scales), conv(quats), conv(opacity), conv(colors))


def concat_sets(sets):
    return GaussianSet(*(concat([getattr(s, f) for s in sets], axis=0) for f in ("means", "scales", "quats", "opacity", "colors")))
