import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gfars.evalkit import (
    UndefinedInputError,
    evaluate,
    jaccard,
    match_groups,
    metrics,
    slash,
    write_per_set_csv,
    write_report,
)
from gfars.grouping import GroupingResult

from oracles import all_partitions, brute_force_match


def test_jaccard_examples():
    assert jaccard({1, 2}, {1, 2}) == 1.0
    assert jaccard({1}, {2}) == 0.0
    assert jaccard({1, 2, 3}, {2, 3, 4}) == 0.5
    with pytest.raises(UndefinedInputError):
        jaccard(set(), set())


def test_worked_example():
    rep = match_groups([[1, 2], [3, 4, 5]], [[1, 2, 3], [4, 5]])
    assert [(p.gt_index, p.pred_index) for p in rep.pairs] == [(0, 0), (1, 1)]
    assert rep.pairs[0].jaccard == pytest.approx(2 / 3) and rep.pairs[1].jaccard == pytest.approx(2 / 3)
    assert (rep.tp, rep.fp, rep.fn) == (4, 1, 1)
    m = metrics([rep], "overall")
    assert (m.precision, m.recall, m.f1) == pytest.approx((0.8, 0.8, 0.8))


def test_perfect_and_empty_predictions():
    rep = match_groups([[0, 1], [2]], [[2], [0, 1]])
    assert (rep.tp, rep.fp, rep.fn) == (3, 0, 0)
    rep = match_groups([], [[0, 1], [2]])
    assert (rep.tp, rep.fp, rep.fn) == (0, 0, 3)
    with pytest.raises(UndefinedInputError):
        match_groups([[0]], [])


def test_pair_invariants():
    rep = match_groups([[0, 1, 2], [3], [4, 5]], [[0, 1], [2, 3, 4], [5]])
    pred = [[0, 1, 2], [3], [4, 5]]
    gt = [[0, 1], [2, 3, 4], [5]]
    for p in rep.pairs:
        assert p.tp + p.fn == len(gt[p.gt_index])
        assert p.tp + p.fp == len(pred[p.pred_index])


def test_unmatched_prediction_and_residual_count_as_fp():
    rep = match_groups([[0, 1], [7, 8]], [[0, 1]], residual=[9])
    assert (rep.tp, rep.fp, rep.fn) == (2, 3, 0)
    # the residual is a matchable candidate, after every predicted group
    rep = match_groups([[0]], [[1, 2]], residual=[1, 2])
    assert rep.pairs[0].pred_index == 1 and (rep.tp, rep.fp, rep.fn) == (2, 1, 0)


def test_tie_goes_to_lowest_index_and_many_to_one():
    rep = match_groups([[0, 9], [1, 8]], [[0, 1]])
    assert rep.pairs[0].pred_index == 0
    rep = match_groups([[0, 1, 2, 3]], [[0, 1], [2, 3]])
    assert [p.pred_index for p in rep.pairs] == [0, 0]
    assert (rep.tp, rep.fp, rep.fn) == (4, 4, 0)


class _Rep:
    def __init__(self, tp, fp, fn):
        self.set_id, self.tp, self.fp, self.fn = "", tp, fp, fn


def test_metric_modes_hand_arithmetic():
    a = metrics([_Rep(4, 1, 1), _Rep(1, 4, 4)], "single_set_avg")
    b = metrics([_Rep(4, 1, 1), _Rep(1, 4, 4)], "overall")
    assert (a.precision, a.recall, a.f1) == pytest.approx((0.5, 0.5, 0.5))
    assert (b.precision, b.recall, b.f1) == pytest.approx((0.5, 0.5, 0.5))
    a = metrics([_Rep(4, 0, 2), _Rep(2, 2, 0)], "single_set_avg")
    b = metrics([_Rep(4, 0, 2), _Rep(2, 2, 0)], "overall")
    assert a.f1 == pytest.approx((0.8 + 2 / 3) / 2) and b.f1 == pytest.approx(0.75)
    one = [_Rep(3, 1, 2)]
    s, o = metrics(one, "single_set_avg"), metrics(one, "overall")
    assert (s.precision, s.recall, s.f1) == (o.precision, o.recall, o.f1)
    with pytest.raises(UndefinedInputError):
        metrics([], "overall")
    with pytest.raises(ValueError):
        metrics(one, "macro")
    z = metrics([_Rep(0, 0, 0)], "overall")
    assert (z.precision, z.recall, z.f1) == (0.0, 0.0, 0.0)


def random_instance(rng):
    n = int(rng.integers(1, 9))
    k = int(rng.integers(1, min(3, n) + 1))
    labels = rng.integers(0, k, size=n)
    gt = [list(np.flatnonzero(labels == g)) for g in range(k) if np.any(labels == g)]
    m = int(rng.integers(0, n + 1))
    pl = rng.integers(-1, m, size=n) if m else -np.ones(n, dtype=int)
    pred = [list(np.flatnonzero(pl == g)) for g in range(m) if np.any(pl == g)]
    residual = list(np.flatnonzero(pl == -1))
    return pred, gt, residual


def test_brute_force_agreement_random(rng):
    for _ in range(10_000):
        pred, gt, residual = random_instance(rng)
        rep = match_groups(pred, gt, residual)
        assert (rep.tp, rep.fp, rep.fn) == brute_force_match(pred, gt, residual)


def test_brute_force_agreement_exhaustive_small():
    items = list(range(5))
    parts = list(all_partitions(items))
    for gt in (p for p in parts if len(p) <= 3):
        for pred in parts:
            rep = match_groups(pred, gt)
            assert (rep.tp, rep.fp, rep.fn) == brute_force_match(pred, gt)


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_permuting_predictions_keeps_totals_when_argmax_unique(data):
    seed = data.draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    pred, gt, _ = random_instance(rng)
    if not pred:
        return
    unique = True
    for g in gt:
        vals = sorted((jaccard(p, g) for p in pred), reverse=True)
        unique &= len(vals) == 1 or vals[0] > vals[1]
    perm = rng.permutation(len(pred))
    a = match_groups(pred, gt)
    b = match_groups([pred[i] for i in perm], gt)
    if unique:
        assert (a.tp, a.fp, a.fn) == (b.tp, b.fp, b.fn)
    m = metrics([a], "overall")
    assert 0.0 <= m.f1 <= 1.0
    if m.precision + m.recall > 0:
        assert m.f1 == pytest.approx(2 * m.precision * m.recall / (m.precision + m.recall))


def test_evaluate_slash_and_exports(tmp_path):
    preds = [GroupingResult("b", [[0, 1], [2]]), GroupingResult("a", [[0], [1]])]
    gt = {"a": [[0, 1]], "b": [[0, 1], [2]]}
    reps = evaluate(preds, gt)
    assert [r.set_id for r in reps] == ["a", "b"]
    s, o = metrics(reps, "single_set_avg"), metrics(reps, "overall")
    text = slash(s, o)
    assert text["precision"] == f"{s.precision:.3f} / {o.precision:.3f}"
    write_report(o, tmp_path / "r.json")
    data = json.loads((tmp_path / "r.json").read_text())
    assert set(data) == {"mode", "precision", "recall", "f1", "per_set"} and len(data["per_set"]) == 2
    write_per_set_csv(o, tmp_path / "r.csv")
    rows = list(csv.DictReader(open(tmp_path / "r.csv")))
    assert [r["set_id"] for r in rows] == ["a", "b"]
    with pytest.raises(KeyError):
        evaluate([GroupingResult("zz", [[0]])], gt)
