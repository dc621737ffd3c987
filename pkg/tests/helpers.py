"""Shared builders for tests."""

import numpy as np

from zpress.numcore import Tensor
from zpress.selection import assign_supports
from zpress.zpressor import ViewFeature, compress, init_params


def random_features(rng, k, rows=2, cols=2, c=4, dtype=np.float32):
    return [ViewFeature(rows, cols, c, rng.normal(size=(rows * cols, c)).astype(dtype)) for _ in range(k)]


def random_partition(rng, k, n):
    pts = rng.normal(size=(k, 3))
    d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    anchors = [int(a) for a in rng.permutation(k)[:n]]
    return assign_supports(d, anchors)


def randomize(params, rng, scale=0.5):
    """Give every parameter (including zero-initialized ones) random values."""
    for name, t in params.named_tensors().items():
        base = 1.0 if name.endswith("norm.gain") else 0.0
        t.data = (base + scale * rng.normal(size=t.shape)).astype(t.data.dtype)
    return params


def monte_carlo_kl(mean, logvar, n_samples, seed=0, chunk=100_000):
    """Sample estimate of E_p[log p(z) - log r(z)], r = N(0, I)."""
    mean = np.asarray(mean, dtype=np.float64).reshape(-1)
    logvar = np.asarray(logvar, dtype=np.float64).reshape(-1)
    std = np.exp(0.5 * logvar)
    rng = np.random.default_rng(seed)
    acc = 0.0
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        eps = rng.standard_normal((m, mean.size))
        z = mean + std * eps
        log_p = -0.5 * (eps * eps + logvar + np.log(2 * np.pi)).sum(axis=1)
        log_r = -0.5 * (z * z + np.log(2 * np.pi)).sum(axis=1)
        acc += (log_p - log_r).sum()
        done += m
    return acc / n_samples
