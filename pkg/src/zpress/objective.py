"""Training loss: rendering MSE plus a beta-weighted KL of the latent
posterior against a standard-normal prior."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput, ShapeError
from .numcore import Tensor, as_tensor, exp

DEFAULT_BETA = 1e-5


@dataclass
class LossReport:
    task: float
    kl: float
    beta: float
    total: float
    # graph handle for backpropagation; None once detached
    tensor: Tensor = None

    def as_row(self):
        return {"task": self.task, "kl": self.kl, "total": self.total}


def kl_diag_gaussian(mean, logvar, batch_axis=None):
    """KL(N(mean, exp(logvar)) || N(0, I)), summed over elements.

    With ``batch_axis`` set, the sum runs over every other axis and the result
    is averaged over the batch axis.
    """
    mean, logvar = as_tensor(mean), as_tensor(logvar)
    if mean.shape != logvar.shape:
        raise ShapeError(f"mean {mean.shape} and logvar {logvar.shape} differ")
    per = (mean * mean + exp(logvar) - 1.0 - logvar) * 0.5
    total = per.sum()
    if batch_axis is not None:
        total = total * (1.0 / mean.shape[batch_axis])
    return total


def task_loss(pred, target, kind="mse"):
    if kind != "mse":
        raise InvalidInput(f"unsupported task loss {kind!r}")
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ")
    diff = pred - target
    return (diff * diff).mean()


def combine(task, kl, beta):
    if beta < 0:
        raise InvalidInput("beta must be non-negative")
    total = task + kl * float(beta) if beta else task
    return LossReport(float(task.data), float(kl.data), float(beta), float(total.data), total)


def ib_loss(pred, target, latent, beta=DEFAULT_BETA, batch_axis=None):
    """Task MSE plus beta times the closed-form KL of ``latent``'s posterior."""
    task = task_loss(pred, target)
    kl = kl_diag_gaussian(latent.posterior_mean, latent.posterior_logvar, batch_axis)
    return combine(task, kl, beta)
