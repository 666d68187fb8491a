"""Encoder + score network bundle used by training, grouping and the CLI."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import ndcore as nd
from .partenc import EncoderConfig, encode_points, init_encoder, stack_points
from .scorefield import PartGraph, ScoreNetConfig, bce_logits, init_score_net, score
from .sde import SdeSchedule


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    score: ScoreNetConfig = field(default_factory=ScoreNetConfig)

    def to_dict(self) -> dict:
        return {"encoder": self.encoder.to_dict(), "score": self.score.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(EncoderConfig.from_dict(d.get("encoder", {})), ScoreNetConfig.from_dict(d.get("score", {})))


class Batch:
    """Several part sets packed for one encoder + score-network pass."""

    def __init__(self, clouds_per_set: Sequence[Sequence[np.ndarray]]):
        flat = [c for clouds in clouds_per_set for c in clouds]
        self.points, self.point_starts = stack_points(flat)
        self.graph = PartGraph([len(c) for c in clouds_per_set])

    @property
    def sizes(self) -> np.ndarray:
        return self.graph.sizes


class GroupingModel:
    deterministic = False

    def __init__(self, cfg: ModelConfig, params: nd.ModelParams, sched: SdeSchedule = SdeSchedule()):
        self.cfg = cfg
        self.params = params
        self.sched = sched
        self.deterministic = cfg.score.variant == "bce"

    @classmethod
    def init(cls, cfg: ModelConfig, sched: SdeSchedule = SdeSchedule(), seed: int = 0) -> "GroupingModel":
        rng = np.random.default_rng(seed)
        params = init_encoder(cfg.encoder, rng)
        params.merge(init_score_net(cfg.score, cfg.encoder.feat_dim, rng))
        return cls(cfg, params, sched)

    def trainable(self) -> list[str]:
        return [k for k in self.params if k != "score.temb.w"]

    def features(self, batch: Batch) -> nd.Tensor:
        return encode_points(batch.points, batch.point_starts, self.params)

    def score(self, feats: nd.Tensor, batch: Batch, c_t, t) -> nd.Tensor:
        return score(c_t, t, feats, self.params, self.cfg.score, batch.graph, self.sched)

    def logits(self, feats: nd.Tensor, batch: Batch) -> nd.Tensor:
        return bce_logits(feats, self.params, self.cfg.score, batch.graph)

    # inference -----------------------------------------------------------

    def score_fn(self, clouds_per_set: Sequence[Sequence[np.ndarray]], labels=None):
        """Return (score_fn(c, t), sizes) for concatenated chains of the given sets."""
        batch = Batch(clouds_per_set)
        with nd.no_grad():
            feats = self.features(batch)

        def fn(c, t):
            with nd.no_grad():
                return self.score(feats, batch, c, t).data

        return fn, batch.sizes

    def probabilities(self, clouds_per_set: Sequence[Sequence[np.ndarray]], labels=None) -> np.ndarray:
        batch = Batch(clouds_per_set)
        with nd.no_grad():
            return nd.sigmoid(self.logits(self.features(batch), batch)).data

    # persistence -----------------------------------------------------------

    def save(self, path) -> None:
        path = Path(path)
        nd.save_checkpoint(self.params, path)
        meta = {"model": self.cfg.to_dict(), "sde": {"sigma": self.sched.sigma, "T": self.sched.T, "t_min": self.sched.t_min}}
        path.with_name(path.name + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "GroupingModel":
        path = Path(path)
        meta = json.loads(path.with_name(path.name + ".json").read_text())
        params = nd.load_checkpoint(path)
        return cls(ModelConfig.from_dict(meta["model"]), params, SdeSchedule(**meta["sde"]))
