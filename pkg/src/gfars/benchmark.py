"""Synthetic benchmark: train the full model and its ablations, then evaluate.

Trained models are cached under a directory keyed by a hash of everything
that influences training, so repeated runs (tests, CLI ablations) reuse them.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .evalkit import MetricsReport, evaluate, metrics
from .grouping import GroupingResult, MixedPartSet, group_many, read_results, remove_noisy_parts_many, write_results
from .model import GroupingModel, ModelConfig
from .partenc import EncoderConfig
from .sampler import SamplerConfig
from .scorefield import ScoreNetConfig
from .sde import SdeSchedule
from .synthdata import DatasetManifest, generate_sets, make_noisy_set
from .train import TrainConfig, train, write_history

log = logging.getLogger(__name__)

VARIANT_LOSS = {"gnn": "dsm", "mlp": "dsm", "bce": "bce"}
STEP_SWEEP = (100, 200, 300, 400, 500, 600)


def default_model_config(variant: str = "gnn") -> ModelConfig:
    # fourier_scale 1: with t in [0, 1], wider frequencies alias and slow learning markedly
    score = ScoreNetConfig(variant=variant, hidden=64, fourier_scale=1.0)
    return ModelConfig(EncoderConfig(hidden=(32, 64), feat_dim=64), score)


@dataclass
class BenchmarkConfig:
    train_sets: int = 2000
    val_sets: int = 100
    test_sets: int = 300
    mix_probs: dict = field(default_factory=lambda: {2: 0.7, 3: 0.3})
    data_seed: int = 0
    n_points: int = 64
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=24, eval_every=4))
    steps: int = 500
    sampler_seed: int = 0
    noisy_sets: int = 100

    def model_config(self, variant: str) -> ModelConfig:
        return default_model_config(variant)

    def key(self, variant: str) -> str:
        blob = {
            "variant": variant,
            "model": self.model_config(variant).to_dict(),
            "train": replace(self.train, loss=VARIANT_LOSS[variant]).to_dict(),
            "data": [self.train_sets, self.val_sets, {str(k): v for k, v in self.mix_probs.items()}, self.data_seed,
                     self.n_points],
        }
        return hashlib.sha256(json.dumps(blob, sort_keys=True).encode()).hexdigest()[:12]

    def manifest(self, split: str) -> DatasetManifest:
        sets = {"train": self.train_sets, "val": self.val_sets, "test": self.test_sets}[split]
        return DatasetManifest(split, sets, dict(self.mix_probs), self.data_seed, self.n_points)


def load_split(cfg: BenchmarkConfig, split: str) -> list[MixedPartSet]:
    return generate_sets(cfg.manifest(split))


def variant_dir(cfg: BenchmarkConfig, variant: str, cache_dir) -> Path:
    return Path(cache_dir) / f"{variant}-{cfg.key(variant)}"


def is_trained(cfg: BenchmarkConfig, variant: str, cache_dir) -> bool:
    out = variant_dir(cfg, variant, cache_dir)
    return (out / "best.ckpt").exists() and (out / "train_seconds.txt").exists()


def train_variant(cfg: BenchmarkConfig, variant: str, cache_dir, train_sets=None, val_sets=None) -> GroupingModel:
    """Return the best-validation model for ``variant``, training it only if not cached."""
    out = variant_dir(cfg, variant, cache_dir)
    ckpt = out / "best.ckpt"
    if is_trained(cfg, variant, cache_dir):
        return GroupingModel.load(ckpt)
    train_sets = train_sets if train_sets is not None else load_split(cfg, "train")
    val_sets = val_sets if val_sets is not None else load_split(cfg, "val")
    # an interrupted run resumes from its last evaluation; seconds spent before
    # the interruption are carried in train_seconds.partial
    state = out / "state.ckpt"
    resume = state if state.exists() else None
    partial = out / "train_seconds.partial"
    before = float(partial.read_text()) if resume is not None and partial.exists() else 0.0
    t0 = time.time()

    def tick(_info):
        partial.write_text(f"{before + time.time() - t0:.1f}\n")

    tcfg = replace(cfg.train, loss=VARIANT_LOSS[variant])
    result = train(train_sets, cfg.model_config(variant), tcfg, SdeSchedule(), val_sets, out_dir=out,
                   resume_from=resume, progress=tick)
    (out / "train_seconds.txt").write_text(f"{before + time.time() - t0:.1f}\n")
    write_history(result.history, out / "loss_history.csv")
    return GroupingModel.load(ckpt)


def score_sets(model, sets: Sequence[MixedPartSet], sampler: SamplerConfig, max_iter: int = 8):
    results = group_many(model, sets, sampler, max_iter)
    reports = evaluate(results, {s.set_id: s.gt_groups() for s in sets})
    return metrics(reports, "single_set_avg"), metrics(reports, "overall"), results


def grouped_test_split(cfg: BenchmarkConfig, variant: str, cache_dir, model=None,
                       test_sets=None) -> tuple[list[GroupingResult], float]:
    """Grouping results on the test split (PC, ``cfg.steps``) and the seconds they took.

    Results are cached beside the model checkpoint together with the
    wall-clock time of the run that produced them.
    """
    out = variant_dir(cfg, variant, cache_dir)
    tag = f"test{cfg.test_sets}-pc{cfg.steps}-seed{cfg.sampler_seed}"
    path, timing = out / f"{tag}.jsonl", out / f"{tag}.seconds.txt"
    if path.exists() and timing.exists():
        return read_results(path), float(timing.read_text())
    model = model if model is not None else train_variant(cfg, variant, cache_dir)
    sets = test_sets if test_sets is not None else load_split(cfg, "test")
    t0 = time.time()
    results = group_many(model, sets, SamplerConfig(steps=cfg.steps, seed=cfg.sampler_seed))
    seconds = time.time() - t0
    write_results(results, path)
    timing.write_text(f"{seconds:.1f}\n")
    return sorted(results, key=lambda r: r.set_id), seconds


def train_seconds(cfg: BenchmarkConfig, variant: str, cache_dir) -> float:
    return float((variant_dir(cfg, variant, cache_dir) / "train_seconds.txt").read_text())


def run_benchmark(cfg: BenchmarkConfig, cache_dir, variants: Sequence[str] = ("gnn", "mlp", "bce")) -> dict:
    """Train (or load) each variant and score it on the test split.

    Returns per-variant metrics plus training and evaluation seconds.
    """
    test_sets = load_split(cfg, "test")
    gt = {s.set_id: s.gt_groups() for s in test_sets}
    train_sets = val_sets = None
    out = {}
    for v in variants:
        if not is_trained(cfg, v, cache_dir) and train_sets is None:
            train_sets, val_sets = load_split(cfg, "train"), load_split(cfg, "val")
        model = train_variant(cfg, v, cache_dir, train_sets, val_sets)
        results, eval_s = grouped_test_split(cfg, v, cache_dir, model, test_sets)
        reports = evaluate(results, gt)
        out[v] = {"single": metrics(reports, "single_set_avg"), "overall": metrics(reports, "overall"),
                  "train_seconds": train_seconds(cfg, v, cache_dir), "eval_seconds": eval_s, "model": model}
    return out


def step_sweep(model, sets, steps: Sequence[int] = STEP_SWEEP, kind: str = "pc", seed: int = 0) -> list[dict]:
    rows = []
    for n in steps:
        single, overall, _ = score_sets(model, sets, SamplerConfig(kind=kind, steps=n, seed=seed))
        rows.append({"sampler": kind, "steps": n, "seed": seed, "single_f1": single.f1, "overall_f1": overall.f1,
                     "single_precision": single.precision, "overall_precision": overall.precision,
                     "single_recall": single.recall, "overall_recall": overall.recall})
    return rows


def noisy_sets(count: int, seed: int = 0, n_points: int = 64) -> list[MixedPartSet]:
    return [make_noisy_set(np.random.default_rng([seed, 7, i]), f"noisy-{seed}-{i:06d}", n_points)
            for i in range(count)]


def noisy_removal_scores(model, sets: Sequence[MixedPartSet], sampler: SamplerConfig) -> dict:
    """Kept-part recall and precision with label 0 as the shape to keep, pooled over sets."""
    masks = remove_noisy_parts_many(model, sets, sampler)
    tp = fp = fn = 0
    for s, keep in zip(sets, masks):
        main = np.array([p.gt_group == 0 for p in s.parts])
        tp += int(np.sum(keep & main))
        fp += int(np.sum(keep & ~main))
        fn += int(np.sum(~keep & main))
    return {"recall": tp / (tp + fn) if tp + fn else 0.0,
            "precision": tp / (tp + fp) if tp + fp else 0.0, "tp": tp, "fp": fp, "fn": fn}


def summary_row(name: str, single: MetricsReport, overall: MetricsReport, sampler: SamplerConfig | None = None) -> dict:
    row = {"method": name, **{f"{k}_{m}": getattr(r, k) for k in ("precision", "recall", "f1")
                               for m, r in (("single", single), ("overall", overall))}}
    if sampler is not None:
        row.update(sampler=sampler.kind, steps=sampler.steps, seed=sampler.seed)
    return row
