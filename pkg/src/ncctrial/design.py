"""Platform-trial skeleton: arm entry/exit, block randomisation, periods and buckets.

Patients are indexed 1..N in calendar order (one patient per time unit).
Arrays stored on the schedule are 0-based positions, so ``arm[j - 1]`` is
the arm of patient ``j``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ArmSpec:
    """One arm of the platform.

    ``entry`` is the number of patients recruited before the arm may open
    (``d_k``). The control arm (index 0) has no target size.
    """

    index: int
    n: int | None = None
    entry: int = 0


def make_arms(n: int, entries) -> list[ArmSpec]:
    """Control plus one experimental arm per entry threshold, all of size ``n``."""
    arms = [ArmSpec(0, None, 0)]
    arms += [ArmSpec(k, n, int(d)) for k, d in enumerate(entries, start=1)]
    return arms


@dataclass
class TrialSchedule:
    arm: np.ndarray
    period: np.ndarray
    period_bounds: list[tuple[int, int]]
    active_sets: list[tuple[int, ...]]
    entry: dict[int, int]
    exit: dict[int, int]
    n_arms: int = field(init=False)

    def __post_init__(self):
        self.n_arms = max(self.entry) if self.entry else 0

    @property
    def n_patients(self) -> int:
        return len(self.arm)

    @property
    def n_periods(self) -> int:
        return len(self.period_bounds)

    @property
    def patient(self) -> np.ndarray:
        return np.arange(1, self.n_patients + 1)


@dataclass
class ControlSplit:
    """Control patients relative to one experimental arm (0-based positions)."""

    concurrent: np.ndarray
    nonconcurrent: np.ndarray
    last_period_before_entry: int
    exit_period: int


def _validate_arms(arms: list[ArmSpec]) -> list[ArmSpec]:
    arms = sorted(arms, key=lambda a: a.index)
    if [a.index for a in arms] != list(range(len(arms))):
        raise ValueError("arm indices must be contiguous starting at 0")
    if len(arms) < 2:
        raise ValueError("at least one experimental arm is required")
    prev = 0
    for a in arms[1:]:
        if a.n is None or a.n < 1:
            raise ValueError(f"arm {a.index}: target sample size must be >= 1")
        if a.entry < prev:
            raise ValueError(f"arm {a.index}: entry thresholds must be non-decreasing")
        prev = a.entry
    if arms[1].entry != 0:
        raise ValueError("arm 1 must enter at the start of the trial (d_1 = 0)")
    return arms


def build_schedule(arms: list[ArmSpec], seed=None) -> TrialSchedule:
    """Simulate arm allocation with block randomisation per period.

    Entry and exit happen only at block boundaries: arm ``k`` opens at the
    first boundary where at least ``d_k`` patients have been recruited and
    closes at the boundary where it reaches ``n`` patients. Within every
    block each active arm gets exactly one patient, in random order.
    """
    arms = _validate_arms(arms)
    rng = np.random.default_rng(seed)
    experimental = arms[1:]
    target = {a.index: a.n for a in experimental}
    count = {a.index: 0 for a in experimental}
    waiting = list(experimental)

    chunks = []
    bounds: list[tuple[int, int]] = []
    active_sets: list[tuple[int, ...]] = []
    entry: dict[int, int] = {}
    exit_: dict[int, int] = {}
    active: list[int] = []
    pos = 0

    while True:
        while waiting and waiting[0].entry <= pos:
            a = waiting.pop(0)
            active.append(a.index)
            entry[a.index] = pos + 1
        if not active:
            if waiting:
                raise ValueError(
                    f"arm {waiting[0].index} would enter after all earlier arms "
                    f"finished (d={waiting[0].entry}, trial stops at {pos})"
                )
            break

        current = (0, *active)
        size = len(current)
        blocks = min(target[k] - count[k] for k in active)
        if waiting:
            blocks = min(blocks, -(-(waiting[0].entry - pos) // size))

        block = np.tile(np.array(current), (blocks, 1))
        chunks.append(rng.permuted(block, axis=1).ravel())
        if active_sets and active_sets[-1] == current:
            bounds[-1] = (bounds[-1][0], pos + blocks * size)
        else:
            bounds.append((pos + 1, pos + blocks * size))
            active_sets.append(current)
        pos += blocks * size

        for k in active:
            count[k] += blocks
        for k in [k for k in active if count[k] == target[k]]:
            active.remove(k)
            exit_[k] = pos

    allocation = np.concatenate(chunks)
    period = np.empty(pos, dtype=int)
    for s, (lo, hi) in enumerate(bounds, start=1):
        period[lo - 1:hi] = s
    entry[0] = 1
    exit_[0] = pos
    return TrialSchedule(allocation, period, bounds, active_sets, entry, exit_)


def derive_buckets(exit_index: int, bucket_size: int) -> tuple[np.ndarray, int]:
    """Bucket index for patients ``1..exit_index``, counted back from the exit.

    Bucket 1 holds the most recent ``bucket_size`` patients; the oldest
    bucket absorbs any remainder.
    """
    if bucket_size < 1:
        raise ValueError("bucket_size must be >= 1")
    if exit_index is None or exit_index < 1:
        raise ValueError("arm has no exit index")
    j = np.arange(1, exit_index + 1)
    c = -(-(exit_index - j + 1) // bucket_size)
    return c, int(c[0])


def arm_periods(arm: np.ndarray, period: np.ndarray, k: int) -> tuple[int, int]:
    """``(S̄_k, S_k)``: the period before arm ``k`` enters and its exit period."""
    s = period[arm == k]
    if s.size == 0:
        raise ValueError(f"arm {k} has no patients")
    return int(s.min()) - 1, int(s.max())


def split_controls(schedule, k: int) -> ControlSplit:
    """Concurrent and non-concurrent controls for arm ``k``.

    Works on anything exposing ``arm`` and ``period`` arrays, so datasets
    loaded from disk can be split without their schedule.
    """
    arm, period = np.asarray(schedule.arm), np.asarray(schedule.period)
    before, last = arm_periods(arm, period, k)
    control = arm == 0
    ncc = np.flatnonzero(control & (period <= before))
    cc = np.flatnonzero(control & (period > before) & (period <= last))
    return ControlSplit(cc, ncc, before, last)
