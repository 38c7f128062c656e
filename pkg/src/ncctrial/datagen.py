"""Continuous responses with additive time trends."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .design import TrialSchedule

PATTERNS = ("stepwise", "linear", "inverted_u", "none")


@dataclass
class TimeTrendSpec:
    """Trend pattern with one strength per arm (index 0 is control).

    ``peak`` is the patient index of the inverted-U maximum; ``None`` means
    ``floor(N / 2)``.
    """

    pattern: str = "none"
    lambdas: tuple[float, ...] = ()
    peak: int | None = None

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise ValueError(f"unknown trend pattern {self.pattern!r}")
        self.lambdas = tuple(float(x) for x in self.lambdas)


@dataclass
class ScenarioTruth:
    control_mean: float = 0.0
    effects: tuple[float, ...] = ()
    sd: float = 1.0


@dataclass
class TrialDataset:
    """Per-patient responses; positions are 0-based, patient ``j`` is ``j - 1``."""

    y: np.ndarray
    arm: np.ndarray
    period: np.ndarray

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.arm = np.asarray(self.arm, dtype=int)
        self.period = np.asarray(self.period, dtype=int)
        if not (len(self.y) == len(self.arm) == len(self.period)):
            raise ValueError("y, arm and period must have equal length")

    def __len__(self):
        return len(self.y)

    @property
    def patient(self) -> np.ndarray:
        return np.arange(1, len(self.y) + 1)

    def exit_index(self, k: int) -> int:
        """Patient index of the last patient allocated to arm ``k``."""
        idx = np.flatnonzero(self.arm == k)
        if idx.size == 0:
            raise ValueError(f"arm {k} has no patients")
        return int(idx[-1]) + 1

    def head(self, n: int) -> "TrialDataset":
        return TrialDataset(self.y[:n], self.arm[:n], self.period[:n])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["j", "k", "s", "y"])
            for j, k, s, y in zip(self.patient, self.arm, self.period, self.y):
                w.writerow([j, k, s, repr(float(y))])

    @classmethod
    def from_csv(cls, path) -> "TrialDataset":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        missing = {"j", "k", "s", "y"} - set(rows[0] if rows else {})
        if missing:
            raise ValueError(f"dataset CSV missing columns: {sorted(missing)}")
        rows.sort(key=lambda r: int(r["j"]))
        return cls(
            [float(r["y"]) for r in rows],
            [int(r["k"]) for r in rows],
            [int(r["s"]) for r in rows],
        )


def trend_value(pattern: str, lam: float, j, n_total: int, entered=None, peak=None):
    """Trend contribution for patient(s) ``j`` with strength ``lam``.

    ``entered`` is the number of experimental arms open so far (stepwise
    only). Vectorised over ``j``, ``lam`` and ``entered``.
    """
    j = np.asarray(j, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if pattern == "none":
        return np.zeros(np.broadcast(j, lam).shape)
    if pattern == "stepwise":
        return lam * (np.asarray(entered, dtype=float) - 1.0)
    if n_total < 2:
        raise ValueError("linear and inverted-U trends need N >= 2")
    rise = lam * (j - 1.0) / (n_total - 1.0)
    if pattern == "linear":
        return rise
    if pattern == "inverted_u":
        if peak is None:
            peak = n_total // 2
        fall = -lam * (j - peak) / (n_total - 1.0) + lam * (peak - 1.0) / (n_total - 1.0)
        return np.where(j <= peak, rise, fall)
    raise ValueError(f"unknown trend pattern {pattern!r}")


def entered_count(schedule: TrialSchedule) -> np.ndarray:
    """Experimental arms opened by each patient (including arms that entered at that patient)."""
    j = schedule.patient
    starts = np.array([schedule.entry[k] for k in range(1, schedule.n_arms + 1)])
    return (starts[None, :] <= j[:, None]).sum(axis=1)


def trend_for_schedule(schedule: TrialSchedule, trend: TimeTrendSpec) -> np.ndarray:
    if trend.pattern == "none":
        return np.zeros(schedule.n_patients)
    lambdas = np.asarray(trend.lambdas, dtype=float)
    if len(lambdas) != schedule.n_arms + 1:
        raise ValueError(
            f"need {schedule.n_arms + 1} trend strengths, got {len(lambdas)}"
        )
    entered = entered_count(schedule) if trend.pattern == "stepwise" else None
    return trend_value(
        trend.pattern, lambdas[schedule.arm], schedule.patient,
        schedule.n_patients, entered, trend.peak,
    )


def generate_trial(schedule: TrialSchedule, truth: ScenarioTruth,
                   trend: TimeTrendSpec, seed=None) -> TrialDataset:
    if len(truth.effects) != schedule.n_arms:
        raise ValueError(
            f"need {schedule.n_arms} treatment effects, got {len(truth.effects)}"
        )
    rng = np.random.default_rng(seed)
    effect = np.concatenate([[0.0], np.asarray(truth.effects, dtype=float)])
    mean = truth.control_mean + effect[schedule.arm] + trend_for_schedule(schedule, trend)
    y = mean + truth.sd * rng.standard_normal(schedule.n_patients)
    return TrialDataset(y, schedule.arm.copy(), schedule.period.copy())


def sample_arm_lambdas(lam0: float, sd: float, n_arms: int, fixed=(0,), seed=None) -> np.ndarray:
    """Trend strengths for arms ``0..n_arms``; arms in ``fixed`` get ``lam0``."""
    if sd < 0:
        raise ValueError("sd must be non-negative")
    rng = np.random.default_rng(seed)
    lam = lam0 + sd * rng.standard_normal(n_arms + 1)
    lam[list(fixed)] = lam0
    return lam
