"""Score-matching training over teacher trajectories, plus the BCE ablation loop."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import ndcore as nd
from .evalkit import evaluate, metrics
from .grouping import DataError, MixedPartSet, group_many
from .model import Batch, GroupingModel, ModelConfig
from .partenc import PartCloud
from .sampler import SamplerConfig
from .sde import SdeSchedule, dsm_loss

log = logging.getLogger(__name__)


class TrainingDivergence(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    loss: str = "dsm"
    eval_every: int = 5
    val_steps: int = 100
    max_iter: int = 8

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if self.loss not in ("dsm", "bce"):
            raise ValueError(f"unknown loss {self.loss!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


class Adam:
    def __init__(self, params: nd.ModelParams, names: Sequence[str], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.names = list(names)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(params[k].data) for k in self.names}
        self.v = {k: np.zeros_like(params[k].data) for k in self.names}
        self.t = 0

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1**self.t
        corr2 = 1.0 - b2**self.t
        for k in self.names:
            g = self.params[k].grad
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            update = self.lr * (self.m[k] / corr1) / (np.sqrt(self.v[k] / corr2) + self.eps)
            self.params[k].data -= update

    def state(self) -> nd.ModelParams:
        out = nd.ModelParams()
        for k in self.names:
            out.add(f"opt.m.{k}", self.m[k])
            out.add(f"opt.v.{k}", self.v[k])
        out.add("opt.step", np.array([float(self.t)]))
        return out

    def load_state(self, state: nd.ModelParams) -> None:
        for k in self.names:
            self.m[k] = state[f"opt.m.{k}"].data.copy()
            self.v[k] = state[f"opt.v.{k}"].data.copy()
        self.t = int(state["opt.step"].data[0])


# ------------------------------------------------------------- teacher pairs


def make_training_pairs(part_set: MixedPartSet, rng: np.random.Generator) -> list[tuple[list[PartCloud], np.ndarray]]:
    """Teacher trajectory: emit gt groups in a uniformly random order.

    Pair n holds the parts not yet emitted and the indicator of the n-th
    emitted group over those parts.
    """
    if not part_set.labelled:
        raise DataError(f"set {part_set.set_id} has no ground-truth labels")
    labels = sorted({p.gt_group for p in part_set.parts})
    order = rng.permutation(len(labels))
    remaining = list(part_set.parts)
    pairs = []
    for j in order:
        label = labels[j]
        target = np.array([1.0 if p.gt_group == label else 0.0 for p in remaining])
        pairs.append((remaining, target))
        remaining = [p for p in remaining if p.gt_group != label]
    return pairs


# ------------------------------------------------------------------- losses


def batch_loss(model: GroupingModel, pairs, rng: np.random.Generator, loss: str = "dsm") -> tuple[nd.Tensor, dict]:
    """Mean per-pair loss over a mini-batch; draws t and z from ``rng``."""
    batch = Batch([[p.points for p in parts] for parts, _ in pairs])
    c0 = np.concatenate([target for _, target in pairs])
    feats = model.features(batch)
    if loss == "bce":
        per_node = nd.bce_with_logits(model.logits(feats, batch), nd.Tensor(c0))
        return nd.scale(nd.sum(per_node), 1.0 / len(pairs)), {}
    sched = model.sched
    t_pairs = rng.uniform(sched.t_min, sched.T, size=len(pairs))
    t_nodes = np.repeat(t_pairs, batch.sizes)
    z = rng.standard_normal(len(c0))
    total = dsm_loss(lambda c, t: model.score(feats, batch, c, t), c0, t_nodes, z, sched)
    return nd.scale(total, 1.0 / len(pairs)), {"t": t_pairs}


# ------------------------------------------------------------------ training


@dataclass
class TrainResult:
    model: GroupingModel
    history: list[dict] = field(default_factory=list)
    best_val_f1: float | None = None
    best_params: nd.ModelParams | None = None


def validation_f1(model: GroupingModel, sets: Sequence[MixedPartSet], steps: int, seed: int, max_iter: int = 8) -> float:
    results = group_many(model, sets, SamplerConfig(steps=steps, seed=seed), max_iter)
    gt = {s.set_id: s.gt_groups() for s in sets}
    return metrics(evaluate(results, gt), "overall").f1


def _save_state(path: Path, model: GroupingModel, opt: Adam, rng: np.random.Generator, epoch: int, history) -> None:
    state = model.params.copy()
    state.merge(opt.state())
    nd.save_checkpoint(state, path)
    meta = {"epoch": epoch, "rng": rng.bit_generator.state, "history": history}
    path.with_name(path.name + ".json").write_text(json.dumps(meta))


def train(
    dataset: Sequence[MixedPartSet],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    sched: SdeSchedule = SdeSchedule(),
    val_sets: Sequence[MixedPartSet] = (),
    out_dir: str | Path | None = None,
    resume_from: str | Path | None = None,
    init_model: GroupingModel | None = None,
    progress: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Adam over shuffled teacher pairs; one optimizer step per mini-batch.

    With ``out_dir`` the run writes ``loss_history.csv``, per-evaluation
    checkpoints, ``best.ckpt`` (highest validation overall F1) and a
    resumable ``state.ckpt``.
    """
    if not dataset:
        raise DataError("training set is empty")
    model_cfg.score.check_loss(train_cfg.loss)
    model = init_model or GroupingModel.init(model_cfg, sched, seed=train_cfg.seed)
    opt = Adam(model.params, model.trainable(), train_cfg.learning_rate, train_cfg.beta1, train_cfg.beta2,
               train_cfg.adam_eps)
    rng = np.random.default_rng(train_cfg.seed + 1)
    history: list[dict] = []
    start_epoch = 0
    if resume_from is not None:
        resume_from = Path(resume_from)
        state = nd.load_checkpoint(resume_from)
        for k in model.params:
            model.params[k].data[...] = state[k].data
        opt.load_state(state)
        meta = json.loads(resume_from.with_name(resume_from.name + ".json").read_text())
        rng.bit_generator.state = meta["rng"]
        start_epoch = meta["epoch"]
        history = meta["history"]

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    result = TrainResult(model, history)
    seen = [row["val_f1"] for row in history if row["val_f1"] is not None]
    if seen:
        # keep comparing against the best evaluation from before the interruption
        result.best_val_f1 = max(seen)
        if out is not None and (out / "best.ckpt").exists():
            result.best_params = nd.load_checkpoint(out / "best.ckpt")
    step = history[-1]["step"] if history else 0
    for epoch in range(start_epoch, train_cfg.epochs):
        t0 = time.time()
        pairs = [pair for s in dataset for pair in make_training_pairs(s, rng)]
        order = rng.permutation(len(pairs))
        losses = []
        for lo in range(0, len(order), train_cfg.batch_size):
            chunk = [pairs[i] for i in order[lo:lo + train_cfg.batch_size]]
            model.params.zero_grad()
            try:
                loss, info = batch_loss(model, chunk, rng, train_cfg.loss)
            except nd.NonFiniteError as exc:
                raise TrainingDivergence(f"step {step}: {exc}") from None
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDivergence(f"step {step}: loss={value} t={info.get('t')}")
            loss.backward()
            opt.step()
            step += 1
            losses.append(value)
            history.append({"step": step, "epoch": epoch, "loss": value, "val_f1": None})
        log.info("epoch %d: mean loss %.4f (%.1fs)", epoch, float(np.mean(losses)), time.time() - t0)

        if (epoch + 1) % train_cfg.eval_every == 0 or epoch + 1 == train_cfg.epochs:
            if val_sets:
                f1 = validation_f1(model, val_sets, train_cfg.val_steps, train_cfg.seed, train_cfg.max_iter)
                history[-1]["val_f1"] = f1
                log.info("epoch %d: validation overall F1 %.3f", epoch, f1)
                if result.best_val_f1 is None or f1 > result.best_val_f1:
                    result.best_val_f1 = f1
                    result.best_params = model.params.copy()
                    if out is not None:
                        model.save(out / "best.ckpt")
            if out is not None:
                model.save(out / f"epoch{epoch + 1:04d}.ckpt")
                _save_state(out / "state.ckpt", model, opt, rng, epoch + 1, history)
        if progress is not None:
            progress({"epoch": epoch, "loss": float(np.mean(losses))})

    if out is not None:
        write_history(history, out / "loss_history.csv")
        if result.best_params is None:
            model.save(out / "best.ckpt")
    return result


def write_history(history: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["step", "epoch", "loss", "val_f1"])
        w.writeheader()
        for row in history:
            w.writerow({**row, "val_f1": "" if row["val_f1"] is None else f"{row['val_f1']:.6f}"})


def read_history(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{"step": int(r["step"]), "epoch": int(r["epoch"]), "loss": float(r["loss"]),
                 "val_f1": float(r["val_f1"]) if r["val_f1"] else None} for r in csv.DictReader(fh)]
