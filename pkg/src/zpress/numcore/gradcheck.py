"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import CheckFailed
from .tensor import Tensor, precision

ROUNDOFF_MARGIN = 1e4


@dataclass
class GradReport:
    max_rel_error: float
    max_abs_error: float
    tol: float
    per_param: list = field(default_factory=list)

    @property
    def ok(self):
        return self.max_rel_error <= self.tol


def _rel_err(analytic, numeric, floor):
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def grad_check(f, params, h=1e-5, tol=1e-3, floor=1e-6, analytic=None):
    """Compare analytic gradients of scalar ``f()`` with central differences.

    ``f`` is a zero-argument callable returning a scalar Tensor built from
    ``params`` (float64 leaf tensors with requires_grad). Entries are
    perturbed in place. ``analytic`` may supply precomputed gradients (one
    array per param), which lets callers test the checker itself.

    The relative error denominator is floored at ``floor`` so that entries
    whose true gradient is ~0 are judged on absolute error instead. The floor
    is raised to ``ROUNDOFF_MARGIN`` times the cancellation noise of a central
    difference, eps * |f| / h, since no entry can be resolved below that.
    """
    with precision(np.float64):
        for p in params:
            if p.data.dtype != np.float64:
                raise CheckFailed("grad_check needs float64 parameters")
            p.grad = None
        out = f()
        if not np.isfinite(out.data).all():
            raise CheckFailed("objective is not finite at the base point")
        floor = max(floor, ROUNDOFF_MARGIN * np.finfo(np.float64).eps * max(abs(float(out.data)), 1.0) / h)
        if analytic is None:
            out.backward()
            analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

        worst_rel = 0.0
        worst_abs = 0.0
        per_param = []
        for p, ga in zip(params, analytic):
            flat = p.data.reshape(-1)
            num = np.empty(flat.size)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = float(f().data)
                flat[i] = orig - h
                fm = float(f().data)
                flat[i] = orig
                if not (np.isfinite(fp) and np.isfinite(fm)):
                    raise CheckFailed("objective is not finite under perturbation")
                num[i] = (fp - fm) / (2.0 * h)
            ga = np.asarray(ga, dtype=np.float64).reshape(-1)
            rel = float(_rel_err(ga, num, floor).max()) if num.size else 0.0
            ab = float(np.abs(ga - num).max()) if num.size else 0.0
            per_param.append(rel)
            worst_rel = max(worst_rel, rel)
            worst_abs = max(worst_abs, ab)
    return GradReport(worst_rel, worst_abs, tol, per_param)


def leaf64(array):
    """A float64 leaf tensor that requires grad, for use with grad_check."""
    return Tensor(np.array(array, dtype=np.float64), requires_grad=True)
