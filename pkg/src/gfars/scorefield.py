"""Selection score networks over a batch of part sets.

Every set in a batch is a complete graph (self-edges included) over its
parts; sets never exchange messages. Node i's input is its part feature,
its (normalized) noisy selection value and a Fourier embedding of t.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from . import ndcore as nd
from .sde import SdeSchedule, marginal_std

VARIANTS = ("gnn", "mlp", "bce")
# nominal spread of binary selection data, used to normalize the c input channel
SELECTION_STD = 0.5


class ConfigError(ValueError):
    pass


@dataclass
class ScoreNetConfig:
    variant: str = "gnn"
    layers: int = 3
    hidden: int = 128
    time_embed_dim: int = 32
    fourier_scale: float = 16.0
    edge_layers: int = 2

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown score network variant {self.variant!r}")
        if self.time_embed_dim % 2:
            raise ConfigError("time_embed_dim must be even")
        if self.layers < 1 or self.hidden < 1:
            raise ConfigError("layers and hidden must be positive")
        if self.edge_layers not in (1, 2):
            raise ConfigError("edge_layers must be 1 or 2")

    def check_loss(self, loss: str) -> None:
        if loss == "dsm" and self.variant == "bce":
            raise ConfigError("variant 'bce' cannot be trained with score matching")
        if loss == "bce" and self.variant != "bce":
            raise ConfigError(f"BCE loss requires variant 'bce', got {self.variant!r}")

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "ScoreNetConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


class PartGraph:
    """Block-diagonal complete graphs for sets of sizes ``sizes``.

    Edges are sorted by destination node, so the incoming edges of node i
    occupy ``edge_starts[i] : edge_starts[i] + K(i)``.
    """

    def __init__(self, sizes: Sequence[int]):
        sizes = np.asarray(sizes, dtype=np.intp)
        if sizes.size == 0 or np.any(sizes < 1):
            raise nd.EmptyInputError("every set needs at least one part")
        self.sizes = sizes
        self.node_starts = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.intp)
        self.num_nodes = int(sizes.sum())
        self.set_of_node = np.repeat(np.arange(len(sizes)), sizes)

    @cached_property
    def _edges(self) -> tuple[np.ndarray, np.ndarray]:
        dst, src = [], []
        for off, k in zip(self.node_starts, self.sizes):
            idx = np.arange(off, off + k)
            dst.append(np.repeat(idx, k))
            src.append(np.tile(idx, k))
        return np.concatenate(dst), np.concatenate(src)

    @property
    def dst(self) -> np.ndarray:
        return self._edges[0]

    @property
    def src(self) -> np.ndarray:
        return self._edges[1]

    @cached_property
    def edge_starts(self) -> np.ndarray:
        per_node = np.repeat(self.sizes, self.sizes)
        return np.concatenate([[0], np.cumsum(per_node)[:-1]]).astype(np.intp)

    @property
    def num_sets(self) -> int:
        return len(self.sizes)

    def split(self, values: np.ndarray) -> list[np.ndarray]:
        return np.split(np.asarray(values), np.cumsum(self.sizes)[:-1])


def init_time_embedding(cfg: ScoreNetConfig, rng: np.random.Generator) -> np.ndarray:
    return rng.normal(0.0, cfg.fourier_scale, size=cfg.time_embed_dim // 2)


def time_embed(t, dim: int | None = None, scale: float | None = None, weights: np.ndarray | None = None,
               rng: np.random.Generator | None = None) -> np.ndarray:
    """Gaussian Fourier features [sin(2 pi w t), cos(2 pi w t)].

    Pass the checkpointed ``weights``; otherwise they are drawn from
    N(0, scale^2) with ``rng``. Scalar t gives shape (dim,), an array of
    n times gives (n, dim).
    """
    if weights is None:
        if dim is None or dim % 2:
            raise ConfigError(f"time embedding dim must be even, got {dim}")
        weights = (rng or np.random.default_rng(0)).normal(0.0, scale, size=dim // 2)
    elif dim is not None and dim != 2 * len(weights):
        raise ConfigError(f"dim {dim} does not match {len(weights)} frequencies")
    t = np.asarray(t, dtype=float)
    ang = 2.0 * np.pi * t[..., None] * weights
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)


def _init_linear(params: nd.ModelParams, name: str, rng, fan_in: int, fan_out: int, zero: bool = False) -> None:
    w = np.zeros((fan_in, fan_out)) if zero else rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
    params.add(f"{name}.w", w)
    params.add(f"{name}.b", np.zeros(fan_out))


def init_score_net(cfg: ScoreNetConfig, feat_dim: int, rng: np.random.Generator) -> nd.ModelParams:
    params = nd.ModelParams()
    params.add("score.temb.w", init_time_embedding(cfg, rng))
    H = cfg.hidden
    _init_linear(params, "score.in", rng, feat_dim + 1 + cfg.time_embed_dim, H)
    for layer in range(cfg.layers):
        if cfg.variant == "mlp":
            _init_linear(params, f"score.mlp{layer}", rng, H, H)
        else:
            # edge MLP over concat(h_i, h_j - h_i), stored as its two row blocks
            params.add(f"score.ec{layer}.w_self", rng.normal(0.0, np.sqrt(1.0 / H), size=(H, H)))
            params.add(f"score.ec{layer}.w_diff", rng.normal(0.0, np.sqrt(1.0 / H), size=(H, H)))
            params.add(f"score.ec{layer}.b", np.zeros(H))
            if cfg.edge_layers == 2:
                _init_linear(params, f"score.ec{layer}.out", rng, H, H)
    _init_linear(params, "score.head", rng, H, 1, zero=cfg.variant == "bce")
    return params


FROZEN = ("score.temb.w",)


def _linear(h: nd.Tensor, params: nd.ModelParams, name: str) -> nd.Tensor:
    return nd.bias_add(nd.matmul(h, params[f"{name}.w"]), params[f"{name}.b"])


def edge_conv(h: nd.Tensor, graph: PartGraph, params: nd.ModelParams, name: str) -> nd.Tensor:
    """h_i <- max_j MLP(concat(h_i, h_j - h_i)) over the complete graph of each set.

    The first edge layer is split as W_self h_i + W_diff (h_j - h_i)
    = a_i + (v_j - v_i), so it is computed per node and only gathered per
    edge. The difference is taken before adding a_i so self-edges see an
    exact zero. With a second layer (``{name}.out``) every edge carries its
    own hidden vector; without one, max_j relu(a_i + v_j - v_i) =
    relu(a_i + (max_j v_j - v_i)) and no edge is materialised at all.
    """
    v = nd.matmul(h, params[f"{name}.w_diff"])
    a = nd.bias_add(nd.matmul(h, params[f"{name}.w_self"]), params[f"{name}.b"])
    if f"{name}.out.w" not in params:
        pooled = nd.segment_max(v, graph.node_starts)
        return nd.relu(nd.add(a, nd.sub(nd.gather_rows(pooled, graph.set_of_node), v)))
    diff = nd.sub(nd.gather_rows(v, graph.src), nd.gather_rows(v, graph.dst))
    hidden = nd.relu(nd.add(nd.gather_rows(a, graph.dst), diff))
    msg = nd.relu(_linear(hidden, params, f"{name}.out"))
    return nd.segment_max(msg, graph.edge_starts)


def edge_conv_reference(h: nd.Tensor, graph: PartGraph, params: nd.ModelParams, name: str) -> nd.Tensor:
    """Literal per-edge form: build every concat(h_i, h_j - h_i), run the edge MLP, max over j."""
    h_i = nd.gather_rows(h, graph.dst)
    h_j = nd.gather_rows(h, graph.src)
    w = nd.concat([params[f"{name}.w_self"], params[f"{name}.w_diff"]], axis=0)
    msg = nd.relu(nd.bias_add(nd.matmul(nd.concat([h_i, nd.sub(h_j, h_i)], axis=1), w), params[f"{name}.b"]))
    if f"{name}.out.w" in params:
        msg = nd.relu(_linear(msg, params, f"{name}.out"))
    return nd.segment_max(msg, graph.edge_starts)


def _node_input(feats: nd.Tensor, c_in: np.ndarray, t_nodes: np.ndarray, params: nd.ModelParams) -> nd.Tensor:
    temb = time_embed(t_nodes, weights=params["score.temb.w"].data)
    const = np.concatenate([np.asarray(c_in, dtype=float)[:, None], temb], axis=1)
    return nd.concat([feats, nd.Tensor(const)], axis=1)


def _check_inputs(c_t: np.ndarray, feats: nd.Tensor, graph: PartGraph | None) -> None:
    if feats.shape[0] == 0:
        raise nd.EmptyInputError("score network needs at least one part")
    if c_t.shape != (feats.shape[0],):
        raise nd.DimensionError(f"selection length {c_t.shape} vs {feats.shape[0]} parts")
    if graph is not None and graph.num_nodes != feats.shape[0]:
        raise nd.DimensionError(f"graph has {graph.num_nodes} nodes, features have {feats.shape[0]} rows")


def _trunk(x: nd.Tensor, graph: PartGraph, params: nd.ModelParams, cfg: ScoreNetConfig) -> nd.Tensor:
    h = nd.relu(_linear(x, params, "score.in"))
    for layer in range(cfg.layers):
        if cfg.variant == "mlp":
            h = nd.relu(_linear(h, params, f"score.mlp{layer}"))
        else:
            h = edge_conv(h, graph, params, f"score.ec{layer}")
    return nd.reshape(_linear(h, params, "score.head"), (h.shape[0],))


def _per_node_t(t, n: int) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    return np.full(n, float(t)) if t.ndim == 0 else t


def _score(c_t, t, feats, params, cfg, graph, sched) -> nd.Tensor:
    c_t = np.asarray(c_t, dtype=float)
    feats = feats.features if hasattr(feats, "features") else feats
    _check_inputs(c_t, feats, graph)
    t_nodes = _per_node_t(t, len(c_t))
    std = marginal_std(t_nodes, sched)
    c_in = c_t / np.sqrt(SELECTION_STD**2 + std**2)
    raw = _trunk(_node_input(feats, c_in, t_nodes, params), graph, params, cfg)
    return nd.mul(raw, nd.Tensor(1.0 / std))


def score_gnn(c_t, t, feats, params: nd.ModelParams, cfg: ScoreNetConfig, graph: PartGraph | None = None,
              sched: SdeSchedule = SdeSchedule()) -> nd.Tensor:
    """Estimate of grad_c log p_t(c | features) for every part (EdgeConv trunk)."""
    if graph is None:
        graph = PartGraph([len(np.atleast_1d(c_t))])
    if cfg.variant != "gnn":
        raise ConfigError(f"score_gnn called with variant {cfg.variant!r}")
    return _score(c_t, t, feats, params, cfg, graph, sched)


def score_mlp(c_t, t, feats, params: nd.ModelParams, cfg: ScoreNetConfig, graph: PartGraph | None = None,
              sched: SdeSchedule = SdeSchedule()) -> nd.Tensor:
    """Per-part score estimate without message passing."""
    if cfg.variant != "mlp":
        raise ConfigError(f"score_mlp called with variant {cfg.variant!r}")
    return _score(c_t, t, feats, params, cfg, graph, sched)


def bce_logits(feats, params: nd.ModelParams, cfg: ScoreNetConfig, graph: PartGraph | None = None) -> nd.Tensor:
    """GNN trunk evaluated at t=0 with an all-zero selection input."""
    feats = feats.features if hasattr(feats, "features") else feats
    n = feats.shape[0]
    if graph is None:
        graph = PartGraph([n])
    _check_inputs(np.zeros(n), feats, graph)
    return _trunk(_node_input(feats, np.zeros(n), np.zeros(n), params), graph, params, cfg)


def bce_head(feats, params: nd.ModelParams, cfg: ScoreNetConfig, graph: PartGraph | None = None) -> nd.Tensor:
    return nd.sigmoid(bce_logits(feats, params, cfg, graph))


def score(c_t, t, feats, params, cfg: ScoreNetConfig, graph=None, sched: SdeSchedule = SdeSchedule()) -> nd.Tensor:
    if cfg.variant == "mlp":
        return score_mlp(c_t, t, feats, params, cfg, graph, sched)
    return score_gnn(c_t, t, feats, params, cfg, graph, sched)
