"""Per-part point-cloud encoder: shared point MLP followed by max pooling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import ndcore as nd


@dataclass
class PartCloud:
    part_id: int
    points: np.ndarray
    gt_group: Optional[int] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise nd.DimensionError(f"part {self.part_id}: points must be (P, 3), got {self.points.shape}")
        if self.points.shape[0] < 1:
            raise nd.EmptyInputError(f"part {self.part_id} has no points")
        if not np.isfinite(self.points).all():
            raise nd.NonFiniteError(f"part {self.part_id} has non-finite coordinates")


@dataclass
class EncoderConfig:
    hidden: tuple[int, ...] = (64, 128)
    feat_dim: int = 64

    def to_dict(self) -> dict:
        return {"hidden": list(self.hidden), "feat_dim": self.feat_dim}

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(hidden=tuple(d.get("hidden", (64, 128))), feat_dim=int(d.get("feat_dim", 64)))


@dataclass
class PartFeatures:
    features: nd.Tensor

    @property
    def num_parts(self) -> int:
        return self.features.shape[0]


def _linear_init(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))


def init_encoder(cfg: EncoderConfig, rng: np.random.Generator) -> nd.ModelParams:
    params = nd.ModelParams()
    widths = (3, *cfg.hidden, cfg.feat_dim)
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        params.add(f"enc.l{i}.w", _linear_init(rng, a, b))
        params.add(f"enc.l{i}.b", np.zeros(b))
    return params


def _layer_count(params: nd.ModelParams) -> int:
    return sum(1 for k in params if k.startswith("enc.l") and k.endswith(".w"))


def encode_points(points: np.ndarray, starts: np.ndarray, params: nd.ModelParams) -> nd.Tensor:
    """Encode concatenated point clouds; part k owns rows ``starts[k]:starts[k+1]``."""
    if len(points) == 0 or len(starts) == 0:
        raise nd.EmptyInputError("no points to encode")
    h = nd.Tensor(points)
    n_layers = _layer_count(params)
    for i in range(n_layers):
        h = nd.bias_add(nd.matmul(h, params[f"enc.l{i}.w"]), params[f"enc.l{i}.b"])
        if i < n_layers - 1:
            h = nd.relu(h)
    return nd.segment_max(h, starts)


def stack_points(clouds: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    if len(clouds) == 0:
        raise nd.EmptyInputError("no parts")
    sizes = [len(c) for c in clouds]
    if min(sizes) < 1:
        raise nd.EmptyInputError("empty point set")
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.intp)
    return np.concatenate(clouds, axis=0), starts


def encode_part(points, params: nd.ModelParams) -> nd.Tensor:
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] == 0:
        raise nd.EmptyInputError("encode_part needs a non-empty (P, 3) point set")
    feats = encode_points(points, np.zeros(1, dtype=np.intp), params)
    return nd.reshape(feats, (feats.shape[1],))


def encode_set(parts: Sequence[PartCloud], params: nd.ModelParams) -> PartFeatures:
    pts, starts = stack_points([p.points for p in parts])
    return PartFeatures(encode_points(pts, starts, params))
