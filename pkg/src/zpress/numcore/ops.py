"""Neural-network building blocks on top of the autodiff engine."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor, _make, add, as_tensor, gelu, matmul, reshape, transpose

ACTIVATION = "gelu"
DEFAULT_HEADS = 4
MLP_RATIO = 4


@dataclass
class LinearParams:
    weight: Tensor  # (out, in)
    bias: Tensor  # (out,)

    @property
    def in_features(self):
        return self.weight.shape[1]

    @property
    def out_features(self):
        return self.weight.shape[0]

    def tensors(self):
        return [self.weight, self.bias]

    @classmethod
    def init(cls, rng, n_in, n_out, zero=False, dtype=np.float32):
        if zero:
            w = np.zeros((n_out, n_in), dtype=dtype)
        else:
            bound = 1.0 / np.sqrt(n_in)
            w = rng.uniform(-bound, bound, size=(n_out, n_in)).astype(dtype)
        b = np.zeros(n_out, dtype=dtype)
        return cls(Tensor(w, requires_grad=True), Tensor(b, requires_grad=True))


def linear(x, p: LinearParams):
    x = as_tensor(x)
    if x.shape[-1] != p.in_features:
        raise ShapeError(f"linear expects last dim {p.in_features}, got {x.shape}")
    if p.bias.shape != (p.out_features,):
        raise ShapeError(f"bias shape {p.bias.shape} does not match weight {p.weight.shape}")
    return add(matmul(x, p.weight.T), p.bias)


def layer_norm(x, gain, shift, eps=1e-5):
    x, gain, shift = as_tensor(x), as_tensor(gain), as_tensor(shift)
    d = x.shape[-1] if x.ndim else 0
    if d == 0:
        raise ShapeError("layer_norm over an empty last dimension")
    if gain.shape != (d,) or shift.shape != (d,):
        raise ShapeError(f"layer_norm affine shapes {gain.shape}, {shift.shape} vs width {d}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + shift.data
    lead = tuple(range(x.ndim - 1))

    def backward(g):
        dxhat = g * gain.data
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make(out, (x, gain, shift), backward)


def softmax(x, mask=None):
    """Softmax over the last axis.

    ``mask`` is an optional constant boolean array broadcastable to ``x``;
    masked-out entries get probability exactly zero.
    """
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[-1] < 1:
        raise ShapeError("softmax needs a non-empty last dimension")
    z = x.data
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (x,), backward)


def split_heads(x, heads):
    *lead, n, d = x.shape
    x = reshape(x, (*lead, n, heads, d // heads))
    axes = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
    return transpose(x, axes)


def merge_heads(x):
    *lead, h, n, dh = x.shape
    axes = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
    return reshape(transpose(x, axes), (*lead, n, h * dh))


def attention(q, k, v, heads=1, key_mask=None):
    """Multi-head scaled dot-product attention.

    q: (..., Lq, d); k, v: (..., Lk, d). Each head attends with width d/heads
    and the heads are concatenated back to width d. ``key_mask`` (..., Lk)
    marks valid keys; it is only used to pad ragged key sets in a batch.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    d = q.shape[-1]
    if k.shape[-1] != d or v.shape[-1] != d:
        raise ShapeError(f"attention widths differ: {q.shape}, {k.shape}, {v.shape}")
    if k.shape[-2] != v.shape[-2] or k.shape[-2] < 1:
        raise ShapeError(f"keys/values need equal non-zero length: {k.shape}, {v.shape}")
    if heads < 1 or d % heads:
        raise ShapeError(f"width {d} not divisible by {heads} heads")
    dh = d // heads
    qh, kh, vh = split_heads(q, heads), split_heads(k, heads), split_heads(v, heads)
    scores = matmul(qh, kh.T) * (1.0 / np.sqrt(dh))
    mask = None
    if key_mask is not None:
        mask = np.asarray(key_mask, dtype=bool)[..., None, None, :]
    probs = softmax(scores, mask)
    return merge_heads(matmul(probs, vh))


def mlp(x, p1: LinearParams, p2: LinearParams, activation=ACTIVATION):
    if activation != "gelu":
        raise ValueError(f"unsupported activation {activation!r}")
    if p1.out_features != p2.in_features or p2.out_features != p1.in_features:
        raise ShapeError("mlp layers do not chain back to the input width")
    return linear(gelu(linear(x, p1)), p2)


def alpha_composite(alpha, colors, background, layers_first=False):
    """Front-to-back compositing of depth-sorted layers.

    alpha: (..., P, G) per-pixel layer opacity, already in sort order, or
    (..., G, P) with ``layers_first``. colors: (..., G, 3) layer colors.
    background: (3,) constant. Returns (..., P, 3) = sum_i T_i a_i c_i +
    T_G * background where T_i = prod_{j<i} (1 - a_j).
    """
    alpha, colors = as_tensor(alpha), as_tensor(colors)
    bg = np.asarray(background, dtype=alpha.dtype)
    # work layer-major: a Python loop over layers with whole pixel rows per
    # step is much faster than numpy's cumulative product along a short axis
    a = np.ascontiguousarray(alpha.data if layers_first else np.swapaxes(alpha.data, -1, -2))
    keep = 1.0 - a
    n_layers = a.shape[-2]
    trans = np.empty(a.shape[:-2] + (n_layers + 1, a.shape[-1]), dtype=a.dtype)
    trans[..., 0, :] = 1.0
    tiny = np.finfo(a.dtype).tiny
    for i in range(n_layers):
        row = trans[..., i + 1, :]
        np.multiply(trans[..., i, :], keep[..., i, :], out=row)
        # flush subnormal transmittance to zero (it is below any visible
        # contribution, and subnormal arithmetic is very slow)
        row[row < tiny] = 0.0
    final = trans[..., n_layers, :]
    trans = trans[..., :n_layers, :]
    weights = trans * a
    out = np.swapaxes(weights, -1, -2) @ colors.data + final[..., None] * bg

    def backward(g):
        gc = weights @ g if colors.requires_grad else None
        # w_i = g . c_i per pixel; behind_i = what the layers behind i
        # contribute per unit transmittance, projected on g. The reverse scan
        # needs no division, so fully opaque layers are safe.
        w = colors.data @ np.swapaxes(g, -1, -2)
        behind = np.empty_like(a)
        acc = g @ bg
        for i in range(n_layers - 1, -1, -1):
            behind[..., i, :] = acc
            acc = a[..., i, :] * w[..., i, :] + keep[..., i, :] * acc
        ga = trans * (w - behind)
        return (ga if layers_first else np.swapaxes(ga, -1, -2)), gc

    return _make(out, (alpha, colors), backward)
