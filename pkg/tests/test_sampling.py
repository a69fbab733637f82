import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairsampler.data import GroupKey, GroupSpec, group_counts
from fairsampler.errors import EmptyGroups, InputError, PlanGroupMismatch, TargetBelowOriginal
from fairsampler.sampling import (
    OversamplingWarning,
    SamplingPlan,
    Strategy,
    apply_plan,
    group_seed,
    make_plan,
    plan_cascade,
    plan_equal,
    plan_majority,
    plan_minor,
    plan_within,
    within_main_attribute,
)

from conftest import from_counts, make_dataset

G = GroupSpec.of("g")


def keyed(counts):
    return {GroupKey(G, (k,)): v for k, v in counts.items()}


def plain(targets):
    return {str(k): v for k, v in targets.items()}


def realized(ds, plan):
    res = apply_plan(ds, plan)
    idx = res.indices()
    out = {}
    for key in ds.group_keys(plan.spec):
        out.setdefault(key, 0)
    keys = ds.group_keys(plan.spec)
    for i in idx:
        out[keys[i]] += 1
    return out


# ---------------------------------------------------------------- rules


def test_cascade_golden():
    assert plain(plan_cascade(keyed({"a": 7, "b": 15, "c": 3}))) == {"a": 15, "b": 15, "c": 7}


def test_equal_and_majority():
    counts = keyed({"a": 7, "b": 15, "c": 3})
    assert plain(plan_equal(counts)) == {"a": 15, "b": 15, "c": 15}
    with pytest.warns(OversamplingWarning):
        assert plain(plan_majority(counts)) == {"a": 7, "b": 22, "c": 3}
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert plain(plan_majority(keyed({"a": 9, "b": 3}))) == {"a": 13, "b": 3}


def test_majority_tie_is_canonical_first():
    assert plain(plan_majority(keyed({"b": 10, "a": 10}))) == {"a": 15, "b": 10}


def test_cascade_with_ties():
    counts = keyed({"a": 4, "b": 4, "c": 9, "d": 9, "e": 1})
    assert plain(plan_cascade(counts)) == {"a": 9, "b": 9, "c": 9, "d": 9, "e": 4}


def test_minor_noise_floor():
    counts = keyed({"a": 40, "b": 12, "c": 9})
    assert plain(plan_minor(counts)) == {"a": 40, "b": 40, "c": 9}
    assert plain(plan_minor(counts, noise_floor=5)) == {"a": 40, "b": 40, "c": 40}
    plan = make_plan(from_counts({"a": 40, "b": 12, "c": 9}), G, "minor")
    assert plan.flags and "noise floor" in plan.flags[0]


def test_empty_groups_rejected():
    with pytest.raises(EmptyGroups):
        plan_equal({})


def test_within_golden():
    # clusters A/B, genders t/d: (12, 8, 6, 4)
    rows = ([({"cl": "A", "gen": "t"}, 0)] * 12 + [({"cl": "A", "gen": "d"}, 0)] * 8
            + [({"cl": "B", "gen": "t"}, 0)] * 6 + [({"cl": "B", "gen": "d"}, 0)] * 4)
    ds = make_dataset(rows)
    plan = plan_within(ds, "cl", ["gen"])
    stage1, stage2 = plan.stages
    assert plain(stage1) == {"A|d": 12, "A|t": 12, "B|d": 6, "B|t": 6}
    assert plain(stage2) == {"A|d": 12, "A|t": 12, "B|d": 12, "B|t": 12}
    assert plain(plan.targets) == plain(stage2)
    by_main = {}
    for key, n in realized(ds, plan).items():
        by_main[key.values[0]] = by_main.get(key.values[0], 0) + n
    assert by_main == {"A": 24, "B": 24}


def test_within_uneven_split_and_missing_cell():
    rows = ([({"m": "x", "s": "p"}, 0)] * 5 + [({"m": "x", "s": "q"}, 0)] * 2
            + [({"m": "x", "s": "r"}, 0)] * 1 + [({"m": "y", "s": "p"}, 0)] * 3
            + [({"m": "y", "s": "q"}, 0)] * 4)
    ds = make_dataset(rows)
    with pytest.warns(OversamplingWarning, match="no members"):
        plan = plan_within(ds, "m", ["s"])
    assert plain(plan.targets) == {"x|p": 5, "x|q": 5, "x|r": 5, "y|p": 8, "y|q": 7}
    assert plan.flags


def test_within_main_attribute_priority():
    assert within_main_attribute(GroupSpec.of("gender", "intervention", "cluster")) == "cluster"
    assert within_main_attribute(GroupSpec.of("gender", "intervention")) == "intervention"
    assert within_main_attribute(GroupSpec.of("school", "gender")) == "gender"
    with pytest.raises(InputError):
        within_main_attribute(GroupSpec.of("gender"))


# ---------------------------------------------------------------- realisation


def test_apply_plan_only_duplicates_existing_records():
    ds = from_counts({"a": 7, "b": 15, "c": 3})
    res = apply_plan(ds, make_plan(ds, G, "cascade", seed=3))
    assert len(res) == 37
    np.testing.assert_array_equal(res.indices()[:25], np.arange(25))
    assert set(r.student_id for r in res.records()) == set(ds.student_ids)


def test_plan_errors():
    ds = from_counts({"a": 5, "b": 3})
    plan = make_plan(ds, G, "equal")
    bad = SamplingPlan(G, {**plan.targets, GroupKey(G, ("z",)): 4}, "equal")
    with pytest.raises(PlanGroupMismatch):
        apply_plan(ds, bad)
    low = SamplingPlan(G, {k: 1 for k in plan.targets}, "equal")
    with pytest.raises(TargetBelowOriginal):
        apply_plan(ds, low)
    with pytest.raises(InputError):
        SamplingPlan(G, plan.targets, "equal", seed=-1)


@pytest.mark.filterwarnings("ignore::fairsampler.sampling.OversamplingWarning")
def test_plan_json_round_trip():
    ds = make_dataset([({"g": g, "h": h}, y) for g in "ab" for h in "xyz" for y in (0, 1)] * 3
                      + [({"g": "a", "h": "x"}, 1)] * 4)
    spec = GroupSpec.of("g", "h", "intervention")
    for strategy in Strategy:
        plan = make_plan(ds, spec, strategy, seed=2**63 + 5)
        assert SamplingPlan.from_json(plan.to_json()) == plan


def test_group_streams_are_isolated():
    # adding a group must not change what is drawn for the others
    small = from_counts({"a": 4, "b": 9})
    big = from_counts({"a": 4, "b": 9, "c": 2})
    targets = {"a": 9, "b": 9}
    p1 = SamplingPlan(G, {GroupKey(G, (k,)): v for k, v in targets.items()}, "equal", seed=11)
    p2 = SamplingPlan(G, {**p1.targets, GroupKey(G, ("c",)): 2}, "equal", seed=11)
    ids1 = [r.student_id for r in apply_plan(small, p1).records()[len(small):]]
    ids2 = [r.student_id for r in apply_plan(big, p2).records()[len(big):]]
    assert ids1 == ids2
    assert group_seed(11, GroupKey(G, ("a",))).entropy != group_seed(11, GroupKey(G, ("b",))).entropy


def test_determinism_and_seed_sensitivity():
    ds = from_counts({"a": 30, "b": 5})
    p0 = make_plan(ds, G, "equal", seed=0)
    p1 = make_plan(ds, G, "equal", seed=1)
    np.testing.assert_array_equal(apply_plan(ds, p0).extra_indices,
                                  apply_plan(ds, p0).extra_indices)
    assert not np.array_equal(apply_plan(ds, p0).extra_indices, apply_plan(ds, p1).extra_indices)


# ---------------------------------------------------------------- properties

counts_strategy = st.dictionaries(st.sampled_from("abcdefgh"), st.integers(1, 60),
                                  min_size=1, max_size=8)


@settings(max_examples=200, deadline=None)
@given(counts_strategy, st.sampled_from(["equal", "majority", "cascade", "minor"]),
       st.integers(0, 2**64 - 1))
def test_realized_counts_equal_targets(counts, strategy, seed):
    ds = from_counts(counts)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OversamplingWarning)
        plan = make_plan(ds, G, strategy, seed=seed)
    before = group_counts(ds, G)
    assert all(plan.targets[k] >= before[k] for k in before)
    assert realized(ds, plan) == plan.targets


@settings(max_examples=40, deadline=None)
@given(st.dictionaries(st.tuples(st.sampled_from("xyz"), st.sampled_from("pq")),
                       st.integers(1, 25), min_size=2, max_size=6), st.integers(0, 1000))
def test_within_properties(cells, seed):
    rows = []
    for (m, s), n in cells.items():
        rows += [({"m": m, "s": s}, 0)] * n
    ds = make_dataset(rows)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OversamplingWarning)
        plan = make_plan(ds, GroupSpec.of("m", "s"), "within", seed=seed)
    assert realized(ds, plan) == plan.targets
    totals = {}
    for key, n in plan.targets.items():
        totals.setdefault(key.values[0], []).append(n)
    sums = {m: sum(v) for m, v in totals.items()}
    assert len(set(sums.values())) == 1
    for v in totals.values():
        assert max(v) - min(v) <= 1


def test_identity_plan_adds_nothing():
    ds = from_counts({"a": 6, "b": 6})
    assert len(apply_plan(ds, make_plan(ds, G, "equal", seed=4)).extra_indices) == 0


@settings(max_examples=50, deadline=None)
@given(counts_strategy, st.integers(0, 2**32))
def test_closure_and_cascade_fixed_points(counts, seed):
    ds = from_counts(counts, seed=seed % 7)
    plan = make_plan(ds, G, "cascade", seed=seed)
    top = max(counts.values())
    assert all(plan.targets[GroupKey(G, (k,))] == top for k, c in counts.items() if c == top)
    res = apply_plan(ds, plan)
    # duplicates are original rows, drawn in canonical group order
    keys = ds.group_keys(G)
    drawn = [keys[i] for i in res.extra_indices]
    assert all(0 <= i < len(ds) for i in res.extra_indices)
    assert drawn == sorted(drawn)
    changed = make_plan(ds, G, "cascade", seed=seed + 1)
    assert changed.targets == plan.targets
