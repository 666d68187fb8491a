"""Auto-regressive group extraction and zero-shot noisy-part removal."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .partenc import PartCloud
from .sampler import SamplerConfig, binarize, chain_rng, sample
from .sde import SdeSchedule

MAX_RETRIES = 3


class DataError(ValueError):
    pass


@dataclass
class MixedPartSet:
    set_id: str
    parts: list[PartCloud]

    def __post_init__(self):
        ids = [p.part_id for p in self.parts]
        if len(set(ids)) != len(ids):
            raise DataError(f"set {self.set_id}: duplicate part ids")
        labels = [p.gt_group for p in self.parts if p.gt_group is not None]
        if labels:
            n = len(set(labels))
            if min(labels) < 0 or max(labels) >= n or len(labels) != len(self.parts):
                raise DataError(f"set {self.set_id}: gt_group labels must cover [0, {n}) for every part")

    @property
    def labelled(self) -> bool:
        return bool(self.parts) and all(p.gt_group is not None for p in self.parts)

    def gt_groups(self) -> list[list[int]]:
        if not self.labelled:
            raise DataError(f"set {self.set_id} has no ground-truth labels")
        n = max(p.gt_group for p in self.parts) + 1
        return [sorted(p.part_id for p in self.parts if p.gt_group == g) for g in range(n)]


@dataclass
class GroupingResult:
    set_id: str
    groups: list[list[int]] = field(default_factory=list)
    residual: list[int] = field(default_factory=list)
    iterations_used: int = 0

    def to_json(self) -> dict:
        return {"set_id": self.set_id, "groups": self.groups, "residual": self.residual,
                "iterations_used": self.iterations_used}

    @classmethod
    def from_json(cls, d: dict) -> "GroupingResult":
        try:
            return cls(str(d["set_id"]), [sorted(int(i) for i in g) for g in d["groups"]],
                       sorted(int(i) for i in d.get("residual", [])), int(d.get("iterations_used", 0)))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed grouping result: {exc}") from None

    def check_partition(self, part_ids: Sequence[int]) -> None:
        seen = [i for g in self.groups for i in g] + list(self.residual)
        if any(len(g) == 0 for g in self.groups):
            raise AssertionError(f"{self.set_id}: empty group emitted")
        if len(seen) != len(set(seen)) or set(seen) != set(part_ids):
            raise AssertionError(f"{self.set_id}: groups and residual do not partition the input")


class SelectionModel(Protocol):
    """What the grouping loop needs from a model."""

    deterministic: bool
    sched: SdeSchedule

    def score_fn(self, parts_per_set: Sequence[Sequence[PartCloud]]): ...

    def probabilities(self, parts_per_set: Sequence[Sequence[PartCloud]]) -> np.ndarray: ...


class TeacherModel:
    """Plug-in score built from ground-truth labels (no learning involved).

    The score is ``+strength`` on parts sharing the target label and
    ``-strength`` elsewhere, constant in t. The target label is the label of
    the lowest part_id still present, unless ``target_label`` is fixed.
    """

    deterministic = False

    def __init__(self, sched: SdeSchedule = SdeSchedule(), strength: float = 5.0, target_label: int | None = None):
        self.sched = sched
        self.strength = strength
        self.target_label = target_label

    def _target(self, parts: Sequence[PartCloud]) -> np.ndarray:
        if self.target_label is not None:
            label = self.target_label
        else:
            label = min(parts, key=lambda p: p.part_id).gt_group
        return np.array([self.strength if p.gt_group == label else -self.strength for p in parts])

    def score_fn(self, parts_per_set):
        s = np.concatenate([self._target(parts) for parts in parts_per_set])
        return (lambda c, t: s), np.array([len(p) for p in parts_per_set])

    def probabilities(self, parts_per_set):
        return (np.concatenate([self._target(parts) for parts in parts_per_set]) > 0).astype(float)


class _ModelAdapter:
    """Wrap a GroupingModel so it takes PartCloud lists."""

    def __init__(self, model):
        self.model = model
        self.deterministic = model.deterministic
        self.sched = model.sched

    def score_fn(self, parts_per_set):
        return self.model.score_fn([[p.points for p in parts] for parts in parts_per_set])

    def probabilities(self, parts_per_set):
        return self.model.probabilities([[p.points for p in parts] for parts in parts_per_set])


def _adapt(model) -> SelectionModel:
    return model if isinstance(model, (TeacherModel, _ModelAdapter)) else _ModelAdapter(model)


def _select(model: SelectionModel, parts_per_set, cfg: SamplerConfig, rngs) -> list[np.ndarray]:
    sizes = [len(p) for p in parts_per_set]
    if model.deterministic:
        probs = model.probabilities(parts_per_set)
        return np.split(binarize(probs, cfg.threshold), np.cumsum(sizes)[:-1])
    fn, sizes = model.score_fn(parts_per_set)
    c = sample(fn, list(sizes), model.sched, cfg, list(rngs))
    return np.split(binarize(c, cfg.threshold), np.cumsum(sizes)[:-1])


def group_many(model, sets: Sequence[MixedPartSet], cfg: SamplerConfig = SamplerConfig(),
               max_iter: int = 8) -> list[GroupingResult]:
    """Run the grouping loop for several sets, batching their samplers together.

    Each set draws noise from its own generator keyed by (cfg.seed, set_id),
    so a set's result does not depend on which other sets share the batch.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    model = _adapt(model)
    results = [GroupingResult(s.set_id) for s in sets]
    remaining = [list(s.parts) for s in sets]
    rngs = [chain_rng(cfg.seed, s.set_id) for s in sets]

    for _ in range(max_iter):
        active = [i for i, rem in enumerate(remaining) if rem]
        if not active:
            break
        chosen: dict[int, np.ndarray] = {}
        pending = active
        attempts = 1 if model.deterministic else 1 + MAX_RETRIES
        for _ in range(attempts):
            sels = _select(model, [remaining[i] for i in pending], cfg, [rngs[i] for i in pending])
            retry = []
            for i, sel in zip(pending, sels):
                if sel.any():
                    chosen[i] = sel
                else:
                    retry.append(i)
            pending = retry
            if not pending:
                break
        for i in active:
            results[i].iterations_used += 1
            if i in chosen:
                sel = chosen[i]
                results[i].groups.append(sorted(p.part_id for p, s in zip(remaining[i], sel) if s))
                remaining[i] = [p for p, s in zip(remaining[i], sel) if not s]
            else:
                results[i].residual.extend(p.part_id for p in remaining[i])
                remaining[i] = []

    for i, s in enumerate(sets):
        results[i].residual = sorted(results[i].residual + [p.part_id for p in remaining[i]])
        results[i].check_partition([p.part_id for p in s.parts])
    return results


def group_parts(model, part_set: MixedPartSet, cfg: SamplerConfig = SamplerConfig(), max_iter: int = 8) -> GroupingResult:
    return group_many(model, [part_set], cfg, max_iter)[0]


def remove_noisy_parts_many(model, sets: Sequence[MixedPartSet], cfg: SamplerConfig = SamplerConfig()) -> list[np.ndarray]:
    model = _adapt(model)
    if any(not s.parts for s in sets):
        raise DataError("noisy-part removal needs a non-empty set")
    rngs = [chain_rng(cfg.seed, s.set_id) for s in sets]
    return _select(model, [s.parts for s in sets], cfg, rngs)


def remove_noisy_parts(model, part_set: MixedPartSet, cfg: SamplerConfig = SamplerConfig()) -> np.ndarray:
    """One encode-sample-threshold pass; True marks parts kept as one shape."""
    return remove_noisy_parts_many(model, [part_set], cfg)[0]


def write_results(results: Sequence[GroupingResult], path) -> None:
    with open(path, "w") as fh:
        for r in sorted(results, key=lambda r: r.set_id):
            fh.write(json.dumps(r.to_json()) + "\n")


def read_results(path) -> list[GroupingResult]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(GroupingResult.from_json(json.loads(line)))
            except (json.JSONDecodeError, DataError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    return out
