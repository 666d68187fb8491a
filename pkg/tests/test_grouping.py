import numpy as np
import pytest

from gfars.evalkit import evaluate, metrics
from gfars.grouping import (
    MAX_RETRIES,
    DataError,
    GroupingResult,
    MixedPartSet,
    TeacherModel,
    group_many,
    group_parts,
    read_results,
    remove_noisy_parts,
    write_results,
)
from gfars.sampler import SamplerConfig
from gfars.sde import SdeSchedule
from gfars.synthdata import DatasetManifest, generate_sets, make_noisy_set

FAST = SamplerConfig(steps=60, seed=0)


class ConstantScore:
    """Model stand-in with a fixed per-part score; counts sampler calls."""

    deterministic = False

    def __init__(self, value):
        self.value = value
        self.sched = SdeSchedule()
        self.calls = 0

    def score_fn(self, clouds_per_set, labels=None):
        self.calls += 1
        sizes = np.array([len(c) for c in clouds_per_set])
        s = np.full(sizes.sum(), self.value)
        return (lambda c, t: s), sizes


class FirstHalf:
    deterministic = True

    def __init__(self):
        self.sched = SdeSchedule()

    def probabilities(self, clouds_per_set, labels=None):
        return np.concatenate([np.arange(len(c)) < max(1, len(c) // 2) for c in clouds_per_set]).astype(float)


@pytest.fixture(scope="module")
def sets():
    return generate_sets(DatasetManifest("test", 100, seed=5, n_points=8))


def test_teacher_oracle_recovers_partition(sets):
    results = group_many(TeacherModel(), sets, FAST)
    for s, r in zip(sets, results):
        assert sorted(r.groups) == sorted(s.gt_groups()) and r.residual == []
        assert r.iterations_used == len(s.gt_groups())
    reps = evaluate(results, {s.set_id: s.gt_groups() for s in sets})
    assert metrics(reps, "single_set_avg").f1 == 1.0 and metrics(reps, "overall").f1 == 1.0


def test_empty_set():
    r = group_parts(TeacherModel(), MixedPartSet("e", []), FAST)
    assert (r.groups, r.residual, r.iterations_used) == ([], [], 0)


def test_max_iter_one(sets):
    s = next(x for x in sets if len(x.gt_groups()) == 2)
    r = group_parts(TeacherModel(), s, FAST, max_iter=1)
    assert len(r.groups) == 1 and r.residual
    assert sorted(r.groups[0] + r.residual) == sorted(p.part_id for p in s.parts)
    with pytest.raises(ValueError):
        group_parts(TeacherModel(), s, FAST, max_iter=0)


def test_all_false_retries_then_residual(sets):
    m = ConstantScore(-5.0)
    r = group_parts(m, sets[0], FAST)
    assert m.calls == 1 + MAX_RETRIES
    assert r.groups == [] and r.residual == sorted(p.part_id for p in sets[0].parts)
    assert r.iterations_used == 1


def test_all_true_is_one_group(sets):
    r = group_parts(ConstantScore(5.0), sets[1], FAST)
    assert r.groups == [sorted(p.part_id for p in sets[1].parts)] and r.residual == []


def test_group_count_bounded_and_partition(sets):
    r = group_parts(FirstHalf(), sets[2], FAST, max_iter=2)
    assert len(r.groups) <= 2
    r.check_partition([p.part_id for p in sets[2].parts])
    full = group_parts(FirstHalf(), sets[2], FAST)
    sizes = [len(g) for g in full.groups]
    n = len(sets[2].parts)
    assert sum(sizes) + len(full.residual) == n


def test_batch_independence(sets):
    both = group_many(TeacherModel(strength=0.5), sets[:6], FAST)
    alone = [group_parts(TeacherModel(strength=0.5), s, FAST) for s in sets[:6]]
    assert [r.to_json() for r in both] == [r.to_json() for r in alone]


def test_noisy_removal_teacher():
    rng = np.random.default_rng(0)
    for i in range(10):
        s = make_noisy_set(rng, f"n{i}", 8)
        keep = remove_noisy_parts(TeacherModel(target_label=0), s, FAST)
        assert len(keep) == len(s.parts)
        assert np.array_equal(keep, np.array([p.gt_group == 0 for p in s.parts]))
    with pytest.raises(DataError):
        remove_noisy_parts(TeacherModel(), MixedPartSet("e", []), FAST)


def test_noisy_removal_determinism():
    s = make_noisy_set(np.random.default_rng(1), "n", 8)
    a = remove_noisy_parts(TeacherModel(strength=0.3, target_label=0), s, FAST)
    b = remove_noisy_parts(TeacherModel(strength=0.3, target_label=0), s, FAST)
    assert np.array_equal(a, b)


def test_result_json_round_trip(tmp_path):
    rs = [GroupingResult("b", [[2, 0], [1]], [3], 3), GroupingResult("a", [[0]], [], 1)]
    write_results(rs, tmp_path / "r.jsonl")
    back = read_results(tmp_path / "r.jsonl")
    assert [r.set_id for r in back] == ["a", "b"]
    assert back[1].groups == [[0, 2], [1]] and back[1].residual == [3] and back[1].iterations_used == 3
    (tmp_path / "bad.jsonl").write_text('{"groups": []}\n')
    with pytest.raises(DataError):
        read_results(tmp_path / "bad.jsonl")


def test_check_partition_rejects_bad_results():
    with pytest.raises(AssertionError):
        GroupingResult("x", [[0], []]).check_partition([0])
    with pytest.raises(AssertionError):
        GroupingResult("x", [[0, 1]], [1]).check_partition([0, 1])
    with pytest.raises(AssertionError):
        GroupingResult("x", [[0]]).check_partition([0, 1])
