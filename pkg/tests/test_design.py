import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ncctrial.design import (ArmSpec, build_schedule, derive_buckets, make_arms,
                             split_controls)


def test_three_arm_example_boundaries():
    s = build_schedule(make_arms(250, [0, 250, 500]), seed=1)
    assert s.period_bounds[0] == (1, 250)
    assert s.active_sets[0] == (0, 1)
    assert np.sum(s.arm[:250] == 0) == 125
    # arm 2 opens at 251; blocks of 3 end at 250 + 3m, first one >= 500 is 502
    assert s.entry[2] == 251
    assert s.period_bounds[1] == (251, 502)
    assert s.entry[3] == 503


def test_two_arm_trial():
    s = build_schedule(make_arms(4, [0]), seed=3)
    assert s.n_patients == 8
    assert s.n_periods == 1
    assert np.sum(s.arm == 0) == 4 and np.sum(s.arm == 1) == 4
    for b in range(4):
        assert sorted(s.arm[2 * b:2 * b + 2]) == [0, 1]


def test_small_staggered_trial():
    s = build_schedule(make_arms(2, [0, 2]), seed=0)
    assert s.entry[2] == 3
    assert s.exit[1] == 5
    assert s.period[s.exit[1] - 1] == 2
    assert np.sum(s.arm == 1) == 2 and np.sum(s.arm == 2) == 2
    assert s.n_patients == 7


def test_rejects_bad_arms():
    with pytest.raises(ValueError):
        build_schedule([ArmSpec(0), ArmSpec(1, 0, 0)])
    with pytest.raises(ValueError):
        build_schedule([ArmSpec(0)])
    with pytest.raises(ValueError, match="would enter after"):
        build_schedule(make_arms(10, [0, 500]))


def test_deterministic_given_seed():
    a = build_schedule(make_arms(50, [0, 30, 60]), seed=11)
    b = build_schedule(make_arms(50, [0, 30, 60]), seed=11)
    c = build_schedule(make_arms(50, [0, 30, 60]), seed=12)
    assert np.array_equal(a.arm, b.arm)
    assert not np.array_equal(a.arm, c.arm)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 30), raw=st.lists(st.integers(0, 40), min_size=0, max_size=4),
       seed=st.integers(0, 2**32 - 1))
def test_schedule_invariants(n, raw, seed):
    entry = [0] + sorted(raw)
    try:
        s = build_schedule(make_arms(n, entry), seed=seed)
    except ValueError:
        return  # gap between arms; covered elsewhere
    K = len(entry)
    counts = np.bincount(s.arm, minlength=K + 1)
    assert all(counts[k] == n for k in range(1, K + 1))
    assert counts.sum() == s.n_patients

    # periods partition 1..N
    lo_prev = 0
    for lo, hi in s.period_bounds:
        assert lo == lo_prev + 1 and hi >= lo
        lo_prev = hi
    assert lo_prev == s.n_patients

    for i, ((lo, hi), act) in enumerate(zip(s.period_bounds, s.active_sets)):
        if i:
            assert act != s.active_sets[i - 1]
        seg = s.arm[lo - 1:hi]
        assert set(seg.tolist()) == set(act)
        size = len(act)
        assert len(seg) % size == 0
        for b in range(0, len(seg), size):
            assert sorted(seg[b:b + size].tolist()) == list(act)


def test_buckets_exact_division():
    c, C = derive_buckets(100, 25)
    assert C == 4 and c[-1] == 1 and c[0] == 4


def test_buckets_remainder_goes_to_oldest():
    c, C = derive_buckets(105, 25)
    assert C == 5
    assert np.all(c[:5] == 5) and c[5] == 4
    assert np.bincount(c)[1:].tolist() == [25, 25, 25, 25, 5]


def test_single_bucket():
    c, C = derive_buckets(40, 40)
    assert C == 1 and np.all(c == 1)


@given(t=st.integers(1, 500), b=st.integers(1, 60))
def test_bucket_surjective_monotone(t, b):
    c, C = derive_buckets(t, b)
    assert set(c.tolist()) == set(range(1, C + 1))
    assert np.all(np.diff(c) <= 0)
    sizes = np.bincount(c)[1:]
    assert np.all(sizes[:-1] == b) and 1 <= sizes[-1] <= b


def test_buckets_errors():
    with pytest.raises(ValueError):
        derive_buckets(10, 0)


def test_first_arm_has_no_nonconcurrent():
    s = build_schedule(make_arms(250, [0, 250, 500]), seed=1)
    split = split_controls(s, 1)
    assert split.nonconcurrent.size == 0
    assert split.last_period_before_entry == 0


def test_split_arm2_uses_period1_controls():
    s = build_schedule(make_arms(250, [0, 250, 500]), seed=1)
    split = split_controls(s, 2)
    assert split.nonconcurrent.size == 125
    assert np.all(s.period[split.nonconcurrent] == 1)


def test_split_arm3_partition():
    s = build_schedule(make_arms(250, [0, 250, 500]), seed=1)
    assert s.n_periods == 5
    split = split_controls(s, 3)
    assert split.last_period_before_entry == 2
    assert set(s.period[split.nonconcurrent].tolist()) == {1, 2}
    assert set(s.period[split.concurrent].tolist()) == set(range(3, split.exit_period + 1))
    assert not set(split.concurrent) & set(split.nonconcurrent)
    allc = np.flatnonzero((s.arm == 0) & (s.period <= split.exit_period))
    assert sorted(np.concatenate([split.concurrent, split.nonconcurrent])) == allc.tolist()
