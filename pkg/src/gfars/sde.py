"""Variance-exploding SDE schedule and the conditional denoising score-matching loss.

Forward process: dc = sigma^t dw, so the perturbation kernel around c(0) is
Gaussian with variance (sigma^(2t) - 1) / (2 ln sigma).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import ndcore as nd


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class SdeSchedule:
    sigma: float = 25.0
    T: float = 1.0
    t_min: float = 1e-5

    def __post_init__(self):
        if not self.sigma > 1.0:
            raise DomainError(f"sigma must exceed 1, got {self.sigma}")
        if not 0.0 < self.t_min < self.T:
            raise DomainError(f"need 0 < t_min < T, got t_min={self.t_min}, T={self.T}")

    def diffusion_sq(self, t):
        """g(t)^2 = sigma^(2t), the time derivative of the kernel variance."""
        return np.power(self.sigma, 2.0 * np.asarray(t, dtype=float))


def _check_t(t, lo: float, hi: float) -> np.ndarray:
    arr = np.asarray(t, dtype=float)
    if np.any(arr < lo) or np.any(arr > hi) or not np.all(np.isfinite(arr)):
        raise DomainError(f"t={t} outside [{lo}, {hi}]")
    return arr


def marginal_std(t, sched: SdeSchedule = SdeSchedule()):
    """sqrt((sigma^(2t) - 1) / (2 ln sigma)); accepts scalars or arrays."""
    arr = _check_t(t, 0.0, sched.T)
    out = np.sqrt(np.expm1(2.0 * arr * math.log(sched.sigma)) / (2.0 * math.log(sched.sigma)))
    return float(out) if out.ndim == 0 else out


def perturb(c0, t, z, sched: SdeSchedule = SdeSchedule()) -> np.ndarray:
    _check_t(t, sched.t_min, sched.T)
    c0 = np.asarray(c0, dtype=float)
    z = np.asarray(z, dtype=float)
    if c0.shape != z.shape:
        raise nd.DimensionError(f"c0 {c0.shape} vs z {z.shape}")
    return c0 + np.asarray(marginal_std(t, sched)) * z


ScoreFn = Callable[[np.ndarray, np.ndarray], nd.Tensor]


def dsm_loss(score_fn: ScoreFn, c0, t, z, sched: SdeSchedule = SdeSchedule()) -> nd.Tensor:
    """Weighted conditional DSM objective with lambda(t) = sigma_t^2.

    ``score_fn(c_t, t)`` must already be bound to the conditioning features.
    ``t`` is a scalar or a per-entry array (one time per part, constant
    within a set). Returns ``sum ||sigma_t * score + z||^2`` over entries.
    """
    c_t = perturb(c0, t, z, sched)
    std = np.broadcast_to(np.asarray(marginal_std(t, sched)), c_t.shape)
    score = score_fn(c_t, np.broadcast_to(np.asarray(t, dtype=float), c_t.shape))
    resid = nd.add(nd.mul(score, nd.Tensor(std)), nd.Tensor(z))
    return nd.sum(nd.square(resid))


def dsm_loss_explicit(score_fn: ScoreFn, c0, t, z, sched: SdeSchedule = SdeSchedule()) -> nd.Tensor:
    """Same objective written as lambda(t) * ||score - (-z / sigma_t)||^2."""
    c_t = perturb(c0, t, z, sched)
    std = np.broadcast_to(np.asarray(marginal_std(t, sched)), c_t.shape)
    score = score_fn(c_t, np.broadcast_to(np.asarray(t, dtype=float), c_t.shape))
    target = nd.Tensor(-np.asarray(z, dtype=float) / std)
    return nd.sum(nd.mul(nd.Tensor(std**2), nd.square(nd.sub(score, target))))
