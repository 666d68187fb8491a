"""Reverse-time samplers over selection vectors.

A chain state is a float vector. Several independent chains can be advanced
together in one of two layouts:

* dense: an array of shape ``(..., K)``, one generator, norms over the last axis;
* segmented: a flat vector of concatenated chains with sizes ``K_1..K_B``,
  one generator per chain, so a chain's trajectory does not depend on which
  other chains share the batch.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .sde import SdeSchedule, marginal_std


class SamplerDivergence(FloatingPointError):
    def __init__(self, step: int, where: str):
        super().__init__(f"non-finite score at step {step} ({where})")
        self.step = step


@dataclass(frozen=True)
class SamplerConfig:
    kind: str = "pc"
    steps: int = 500
    corrector_steps: int = 1
    snr: float = 0.16
    threshold: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("pc", "em"):
            raise ValueError(f"unknown sampler kind {self.kind!r}")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.corrector_steps < 0:
            raise ValueError("corrector_steps must be >= 0")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")


class _Dense:
    def __init__(self, shape, rng: np.random.Generator):
        self.shape = tuple(np.atleast_1d(shape))
        self.rng = rng

    def normal(self) -> np.ndarray:
        return self.rng.standard_normal(self.shape)

    def norm(self, x: np.ndarray) -> np.ndarray:
        return np.sqrt(np.sum(x * x, axis=-1, keepdims=True))


class _Segmented:
    def __init__(self, sizes: Sequence[int], rngs: Sequence[np.random.Generator]):
        if len(sizes) != len(rngs):
            raise ValueError("one generator per chain is required")
        self.sizes = np.asarray(sizes, dtype=np.intp)
        self.starts = np.concatenate([[0], np.cumsum(self.sizes)[:-1]]).astype(np.intp)
        self.rngs = list(rngs)
        self.shape = (int(self.sizes.sum()),)

    def normal(self) -> np.ndarray:
        return np.concatenate([r.standard_normal(int(k)) for r, k in zip(self.rngs, self.sizes)])

    def norm(self, x: np.ndarray) -> np.ndarray:
        return np.repeat(np.sqrt(np.add.reduceat(x * x, self.starts)), self.sizes)


def _layout(K, rng):
    if isinstance(rng, np.random.Generator):
        return _Dense(K, rng)
    return _Segmented(K, rng)


ScoreFn = Callable[[np.ndarray, float], np.ndarray]


def _checked(score_fn: ScoreFn, c: np.ndarray, t: float, step: int, where: str) -> np.ndarray:
    s = np.asarray(score_fn(c, t), dtype=float)
    if not np.all(np.isfinite(s)):
        raise SamplerDivergence(step, where)
    return s


def pc_sample(score_fn: ScoreFn, K, sched: SdeSchedule, cfg: SamplerConfig, rng, corrector_steps: int | None = None):
    """Predictor-Corrector sampling from t=T down to t=0.

    ``K`` is the chain length (or a shape / list of segment sizes) and ``rng``
    a Generator (or one Generator per segment). Each of the ``steps`` levels
    runs ``corrector_steps`` Langevin updates at t_p = (n+1)T/N and then one
    reverse Euler-Maruyama move to t = nT/N.
    """
    C = cfg.corrector_steps if corrector_steps is None else corrector_steps
    lay = _layout(K, rng)
    N, T = cfg.steps, sched.T
    dt = T / N
    c = marginal_std(T, sched) * lay.normal()
    for n in range(N - 1, -1, -1):
        t_p = (n + 1) * T / N
        t_eval = max(t_p, sched.t_min)
        for _ in range(C):
            z = lay.normal()
            s = _checked(score_fn, c, t_eval, n, "corrector")
            s_norm = lay.norm(s)
            with np.errstate(divide="ignore", invalid="ignore"):
                eps = np.where(s_norm > 0, 2.0 * (cfg.snr * lay.norm(z) / s_norm) ** 2, 0.0)
            c = c + eps * s + np.sqrt(2.0 * eps) * z
        z = lay.normal()
        s = _checked(score_fn, c, t_eval, n, "predictor")
        g2 = float(sched.diffusion_sq(t_p))
        c = c + g2 * s * dt + math.sqrt(g2 * dt) * z
    return c


def em_sample(score_fn: ScoreFn, K, sched: SdeSchedule, cfg: SamplerConfig, rng):
    """Predictor-only reverse Euler-Maruyama."""
    return pc_sample(score_fn, K, sched, cfg, rng, corrector_steps=0)


def sample(score_fn: ScoreFn, K, sched: SdeSchedule, cfg: SamplerConfig, rng):
    if cfg.kind == "em":
        return em_sample(score_fn, K, sched, cfg, rng)
    return pc_sample(score_fn, K, sched, cfg, rng)


def binarize(c, threshold: float = 0.5) -> np.ndarray:
    return np.asarray(c, dtype=float) >= threshold


def chain_rng(seed: int, key: str | int) -> np.random.Generator:
    """Generator for one chain, derived from a master seed and a stable key."""
    k = key if isinstance(key, int) else zlib.crc32(str(key).encode("utf-8"))
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, int(k)])
