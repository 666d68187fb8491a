"""Jaccard matching of predicted to ground-truth groups and P/R/F1 averaging."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

MODES = ("single_set_avg", "overall")


class UndefinedInputError(ValueError):
    pass


def jaccard(P: Iterable[int], G: Iterable[int]) -> float:
    P, G = set(P), set(G)
    union = P | G
    if not union:
        raise UndefinedInputError("Jaccard similarity of two empty sets is undefined")
    return len(P & G) / len(union)


@dataclass
class MatchPair:
    gt_index: int
    pred_index: int | None
    jaccard: float
    tp: int
    fp: int
    fn: int


@dataclass
class MatchReport:
    set_id: str = ""
    pairs: list[MatchPair] = field(default_factory=list)
    unmatched_fp: int = 0

    @property
    def tp(self) -> int:
        return sum(p.tp for p in self.pairs)

    @property
    def fp(self) -> int:
        return sum(p.fp for p in self.pairs) + self.unmatched_fp

    @property
    def fn(self) -> int:
        return sum(p.fn for p in self.pairs)


def match_groups(pred: Sequence[Iterable[int]], gt: Sequence[Iterable[int]], residual: Iterable[int] = (),
                 set_id: str = "") -> MatchReport:
    """Match every gt group to its highest-Jaccard predicted group.

    A non-empty residual takes part as one more candidate after the
    predicted groups. Ties go to the lowest index; one candidate may serve
    several gt groups. Candidates chosen by no gt group count their full
    size as false positives.
    """
    gt = [set(g) for g in gt]
    pred = [set(p) for p in pred]
    residual = set(residual)
    if residual:
        pred.append(residual)
    if not gt:
        raise UndefinedInputError("ground truth needs at least one group")
    report = MatchReport(set_id)
    used: set[int] = set()
    for gi, g in enumerate(gt):
        if not pred:
            report.pairs.append(MatchPair(gi, None, 0.0, 0, 0, len(g)))
            continue
        scores = [jaccard(p, g) for p in pred]
        best = max(range(len(pred)), key=lambda j: (scores[j], -j))
        p = pred[best]
        used.add(best)
        report.pairs.append(MatchPair(gi, best, scores[best], len(p & g), len(p - g), len(g - p)))
    report.unmatched_fp = sum(len(p) for j, p in enumerate(pred) if j not in used)
    return report


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


@dataclass
class MetricsReport:
    mode: str
    precision: float
    recall: float
    f1: float
    per_set: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"mode": self.mode, "precision": self.precision, "recall": self.recall, "f1": self.f1,
                "per_set": self.per_set}


def metrics(reports: Sequence[MatchReport], mode: str = "overall") -> MetricsReport:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if not reports:
        raise UndefinedInputError("metrics need at least one match report")
    rows = []
    for r in reports:
        p, rc, f = _prf(r.tp, r.fp, r.fn)
        rows.append({"set_id": r.set_id, "tp": r.tp, "fp": r.fp, "fn": r.fn, "precision": p, "recall": rc, "f1": f})
    if mode == "single_set_avg":
        n = len(rows)
        P = sum(x["precision"] for x in rows) / n
        R = sum(x["recall"] for x in rows) / n
        F = sum(x["f1"] for x in rows) / n
    else:
        P, R, F = _prf(sum(r.tp for r in reports), sum(r.fp for r in reports), sum(r.fn for r in reports))
    return MetricsReport(mode, P, R, F, rows)


def evaluate(predictions, ground_truth: dict[str, list[list[int]]]) -> list[MatchReport]:
    """Match GroupingResult-like objects against gt groups keyed by set_id."""
    reports = []
    for res in sorted(predictions, key=lambda r: r.set_id):
        if res.set_id not in ground_truth:
            raise KeyError(f"no ground truth for set {res.set_id!r}")
        reports.append(match_groups(res.groups, ground_truth[res.set_id], res.residual, res.set_id))
    return reports


def slash(single: MetricsReport, overall: MetricsReport) -> dict[str, str]:
    """Format 'single / overall' strings for the three metrics."""
    return {k: f"{getattr(single, k):.3f} / {getattr(overall, k):.3f}" for k in ("precision", "recall", "f1")}


def write_report(report: MetricsReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_json(), fh, indent=2)


def write_per_set_csv(report: MetricsReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["set_id", "tp", "fp", "fn", "precision", "recall", "f1"])
        w.writeheader()
        for row in report.per_set:
            w.writerow(row)
