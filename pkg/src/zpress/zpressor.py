"""The view-compression module.

Anchor features are the queries; the concatenated tokens of the support views
in the same cluster are keys and values. Each block is Pre-LN:

    z = z + CrossAttn(LN(z), supports)
    z = z + SelfAttn(LN(z))
    z = z + MLP(LN(z))

Keys/values are always read from the original support features, never from
an updated state. A diagonal-Gaussian posterior head maps the fused tokens to
(mean, log-variance) per token and channel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InvalidInput, ShapeError
from .numcore import DEFAULT_HEADS, MLP_RATIO, LinearParams, Tensor, attention, layer_norm, linear, mlp
from .numcore.tensor import exp, getitem

MODES = ("default", "fuse_anchors", "no_fusion")
ABLATIONS = ("single_block", "no_self_attention")
DEFAULT_BLOCKS = 6
LOGVAR_INIT = -6.0


@dataclass
class ViewFeature:
    rows: int
    cols: int
    channels: int
    data: np.ndarray  # (rows*cols, channels)

    def __post_init__(self):
        if min(self.rows, self.cols, self.channels) < 1:
            raise ShapeError("feature grid dims must be positive")
        arr = self.data.data if isinstance(self.data, Tensor) else np.asarray(self.data)
        if arr.shape != (self.rows * self.cols, self.channels):
            raise ShapeError(f"feature data {arr.shape} does not match grid {self.rows}x{self.cols}x{self.channels}")
        if not np.isfinite(arr).all():
            raise InvalidInput("feature data must be finite")

    @property
    def tokens(self):
        return self.rows * self.cols

    def array(self):
        return self.data.data if isinstance(self.data, Tensor) else np.asarray(self.data)


@dataclass
class Norm:
    gain: Tensor
    shift: Tensor

    @classmethod
    def init(cls, c, dtype):
        return cls(Tensor(np.ones(c, dtype), requires_grad=True), Tensor(np.zeros(c, dtype), requires_grad=True))

    def __call__(self, x):
        return layer_norm(x, self.gain, self.shift)


@dataclass
class AttnParams:
    norm: Norm
    q: LinearParams
    k: LinearParams
    v: LinearParams
    o: LinearParams

    @classmethod
    def init(cls, rng, c, dtype):
        return cls(
            Norm.init(c, dtype),
            LinearParams.init(rng, c, c, dtype=dtype),
            LinearParams.init(rng, c, c, dtype=dtype),
            LinearParams.init(rng, c, c, dtype=dtype),
            LinearParams.init(rng, c, c, zero=True, dtype=dtype),
        )


@dataclass
class MLPParams:
    norm: Norm
    fc1: LinearParams
    fc2: LinearParams

    @classmethod
    def init(cls, rng, c, dtype, ratio=MLP_RATIO):
        return cls(
            Norm.init(c, dtype),
            LinearParams.init(rng, c, ratio * c, dtype=dtype),
            LinearParams.init(rng, ratio * c, c, zero=True, dtype=dtype),
        )


@dataclass
class BlockParams:
    cross: AttnParams
    self_attn: AttnParams
    mlp: MLPParams


@dataclass
class ZPressorParams:
    blocks: list
    posterior: LinearParams
    heads: int = DEFAULT_HEADS

    @property
    def channels(self):
        return self.posterior.in_features

    def named_tensors(self):
        """Canonical name -> Tensor mapping, in a fixed order."""
        out = {}
        for i, b in enumerate(self.blocks):
            for part, attn in (("cross", b.cross), ("self", b.self_attn)):
                out[f"block{i}.{part}.norm.gain"] = attn.norm.gain
                out[f"block{i}.{part}.norm.shift"] = attn.norm.shift
                for proj in "qkvo":
                    lp = getattr(attn, proj)
                    out[f"block{i}.{part}.{proj}.weight"] = lp.weight
                    out[f"block{i}.{part}.{proj}.bias"] = lp.bias
            out[f"block{i}.mlp.norm.gain"] = b.mlp.norm.gain
            out[f"block{i}.mlp.norm.shift"] = b.mlp.norm.shift
            for name in ("fc1", "fc2"):
                lp = getattr(b.mlp, name)
                out[f"block{i}.mlp.{name}.weight"] = lp.weight
                out[f"block{i}.mlp.{name}.bias"] = lp.bias
        out["posterior.head.weight"] = self.posterior.weight
        out["posterior.head.bias"] = self.posterior.bias
        return out

    def tensors(self):
        return list(self.named_tensors().values())

    def load_arrays(self, arrays):
        for name, t in self.named_tensors().items():
            if name not in arrays:
                raise InvalidInput(f"missing tensor {name!r}")
            arr = np.asarray(arrays[name])
            if arr.shape != t.shape:
                raise ShapeError(f"{name}: stored shape {arr.shape} != {t.shape}")
            t.data = arr.astype(t.data.dtype)


def init_params(c, h=DEFAULT_BLOCKS, heads=DEFAULT_HEADS, seed=0, dtype=np.float32, logvar_init=LOGVAR_INIT):
    """Fresh parameters; residual output projections start at zero so every
    block is the identity map. The posterior mean starts as the identity and
    the log-variance as a constant ``logvar_init``."""
    if heads < 1 or c % heads:
        raise ConfigError(f"channels {c} not divisible by heads {heads}")
    if h < 1:
        raise ConfigError("need at least one block")
    rng = np.random.default_rng(seed)
    blocks = [
        BlockParams(AttnParams.init(rng, c, dtype), AttnParams.init(rng, c, dtype), MLPParams.init(rng, c, dtype))
        for _ in range(h)
    ]
    w = np.zeros((2 * c, c), dtype=dtype)
    w[:c] = np.eye(c, dtype=dtype)
    b = np.zeros(2 * c, dtype=dtype)
    b[c:] = logvar_init
    post = LinearParams(Tensor(w, requires_grad=True), Tensor(b, requires_grad=True))
    return ZPressorParams(blocks, post, heads)


def zero_params(c, h=1, heads=1, dtype=np.float32, posterior_bias=None):
    """All weights zero (layer-norm gains one); posterior output = its bias."""
    params = init_params(c, h, heads, seed=0, dtype=dtype)
    for name, t in params.named_tensors().items():
        t.data = np.ones_like(t.data) if name.endswith("norm.gain") else np.zeros_like(t.data)
    if posterior_bias is not None:
        params.posterior.bias.data = np.asarray(posterior_bias, dtype=dtype).copy()
    return params


@dataclass
class LatentState:
    features: Tensor  # (N, L, C) fused anchor tokens
    posterior_mean: Tensor
    posterior_logvar: Tensor
    sample: Tensor
    anchors: tuple = ()
    rows: int = 0
    cols: int = 0

    def __post_init__(self):
        shape = self.features.shape
        for t in (self.posterior_mean, self.posterior_logvar, self.sample):
            if t.shape != shape:
                raise ShapeError("latent tensors must share one shape")

    @property
    def n_tokens(self):
        return self.features.shape[0] * self.features.shape[1]


# forward --------------------------------------------------------------------------


def _attend(p: AttnParams, x, kv, heads, key_mask=None):
    q = linear(x, p.q)
    return linear(attention(q, linear(kv, p.k), linear(kv, p.v), heads, key_mask), p.o)


def run_block(block: BlockParams, z, support, heads, key_mask=None, self_attention=True):
    """One Pre-LN block over batched anchors z (B, L, C) and keys (B, S, C)."""
    z = z + _attend(block.cross, block.cross.norm(z), support, heads, key_mask)
    if self_attention:
        zn = block.self_attn.norm(z)
        z = z + _attend(block.self_attn, zn, zn, heads)
    return z + mlp(block.mlp.norm(z), block.mlp.fc1, block.mlp.fc2)


def _as_array(f):
    return f.array() if isinstance(f, ViewFeature) else np.asarray(f)


def gather_supports(anchor_arrays, support_lists):
    """Pad per-cluster concatenated support tokens into (B, S_max, C) + mask.

    An empty cluster falls back to its own anchor tokens.
    """
    kv_list = []
    for anc, sup in zip(anchor_arrays, support_lists):
        kv_list.append(np.concatenate(sup, axis=0) if sup else anc)
    s_max = max(x.shape[0] for x in kv_list)
    c = anchor_arrays[0].shape[-1]
    kv = np.zeros((len(kv_list), s_max, c), dtype=anchor_arrays[0].dtype)
    mask = np.zeros((len(kv_list), s_max), dtype=bool)
    for i, x in enumerate(kv_list):
        kv[i, : x.shape[0]] = x
        mask[i, : x.shape[0]] = True
    return kv, (None if mask.all() else mask)


def _check_grid(features):
    f0 = features[0]
    for f in features:
        if f.channels != f0.channels:
            raise ShapeError(f"channel mismatch: {f.channels} vs {f0.channels}")
        if (f.rows, f.cols) != (f0.rows, f0.cols):
            raise ShapeError("all views must share one feature grid")


def fuse_cluster(anchor, supports, block: BlockParams, heads=1, self_attention=True):
    """Apply one block to a single anchor with its cluster's supports."""
    _check_grid([anchor, *supports])
    a = _as_array(anchor)
    kv, mask = gather_supports([a], [[_as_array(s) for s in supports]])
    z = run_block(block, Tensor(a[None]), Tensor(kv), heads, mask, self_attention)
    return z[0]


def compress(features, partition, params: ZPressorParams, mode="default", ablation=(), train=False, rng=None):
    """Fuse every cluster's supports into its anchor and apply the posterior head.

    ``mode``: default fuses the actual supports; fuse_anchors replaces each
    support with a copy of the anchor's own input feature; no_fusion passes
    anchors through unchanged. ``ablation`` may contain single_block and/or
    no_self_attention. In training mode the sample is drawn with ``rng``;
    otherwise it equals the posterior mean.
    """
    if mode not in MODES:
        raise ConfigError(f"unknown fusion mode {mode!r}")
    ablation = set(ablation)
    if not ablation <= set(ABLATIONS):
        raise ConfigError(f"unknown ablation flags {sorted(ablation - set(ABLATIONS))}")
    if len(features) != partition.k:
        raise InvalidInput(f"got {len(features)} feature grids for a partition over {partition.k} views")
    _check_grid(features)
    if features[0].channels != params.channels:
        raise ShapeError(f"features have {features[0].channels} channels, params expect {params.channels}")
    arrays = [_as_array(f).astype(params.posterior.weight.dtype, copy=False) for f in features]
    anchors = [arrays[a] for a in partition.anchors]
    z = Tensor(np.stack(anchors))
    if mode != "no_fusion":
        if mode == "default":
            sup = [[arrays[s] for s in c] for c in partition.clusters]
        else:
            sup = [[arrays[a]] * len(c) for a, c in zip(partition.anchors, partition.clusters)]
        kv, mask = gather_supports(anchors, sup)
        kv = Tensor(kv)
        blocks = params.blocks[:1] if "single_block" in ablation else params.blocks
        for block in blocks:
            z = run_block(block, z, kv, params.heads, mask, "no_self_attention" not in ablation)
    return posterior(z, params, partition.anchors, features[0].rows, features[0].cols, train, rng)


def posterior(z, params, anchors=(), rows=0, cols=0, train=False, rng=None):
    c = params.channels
    stats = linear(z, params.posterior)
    mean = getitem(stats, (Ellipsis, slice(0, c)))
    logvar = getitem(stats, (Ellipsis, slice(c, 2 * c)))
    if train:
        if rng is None:
            raise InvalidInput("training-mode sampling needs an rng")
        eps = rng.standard_normal(mean.shape).astype(mean.dtype)
        sample = mean + exp(logvar * 0.5) * eps
    else:
        sample = mean
    return LatentState(z, mean, logvar, sample, tuple(anchors), rows, cols)
