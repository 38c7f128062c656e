"""Replication engine and operating-characteristic summaries."""
from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ScenarioConfig, config_to_dict
from .datagen import ScenarioTruth, TimeTrendSpec, generate_trial, sample_arm_lambdas
from .design import build_schedule, make_arms
from .freq import pooled_ttest, regression_model, separate_ttest
from .mapprior import map_analysis
from .timemachine import fit_time_machine

log = logging.getLogger(__name__)

MAX_ERROR_RATE = 0.01

# stream ids under each replication's seed
_SCHEDULE, _LAMBDA, _DATA, _ANALYSIS = range(4)


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Decision:
    replication: int
    arm: int
    method: str
    reject: bool
    estimate: float

    def row(self):
        return [self.replication, self.arm, self.method, int(self.reject), repr(self.estimate)]


DECISION_HEADER = ["replication", "arm", "method", "reject", "estimate"]


@dataclass
class MetricRow:
    arm: int
    method: str
    rate: float
    mc_se: float
    band_lo: float
    band_hi: float
    mean_estimate: float
    replications: int


@dataclass
class AggregateMetrics:
    rows: list[MetricRow]
    replications: int
    errors: int
    alpha: float
    name: str = "scenario"
    seed: int | None = None

    def get(self, arm: int, method: str) -> MetricRow:
        for r in self.rows:
            if r.arm == arm and r.method == method:
                return r
        raise KeyError((arm, method))


def prediction_band(alpha: float, reps: int) -> tuple[float, float]:
    """Central 95% range of a simulated rejection rate whose true value is ``alpha``."""
    if reps < 1:
        raise ValueError("reps must be >= 1")
    half = 1.96 * math.sqrt(alpha * (1 - alpha) / reps)
    return max(0.0, alpha - half), min(1.0, alpha + half)


def replication_seed(master: int, r: int, stream: int) -> np.random.SeedSequence:
    """Counter-based seed: depends only on ``(master, r, stream)``."""
    return np.random.SeedSequence(master, spawn_key=(r, stream))


def analyse(data, k, method, cfg: ScenarioConfig, seed):
    if method == "separate":
        return separate_ttest(data, k, cfg.alpha)
    if method == "pooled":
        return pooled_ttest(data, k, cfg.alpha)
    if method == "regression":
        return regression_model(data, k, cfg.alpha)
    if method == "timemachine":
        return fit_time_machine(data, k, cfg.tm_prior, cfg.tm_mcmc, cfg.alpha, seed=seed)
    if method == "map":
        return map_analysis(data, k, cfg.map_config, cfg.alpha, seed=seed)
    raise ValueError(f"unknown method {method!r}")


def simulate_trial(cfg: ScenarioConfig, r: int):
    """Schedule and dataset for replication ``r``."""
    schedule = build_schedule(make_arms(cfg.n, cfg.entry), replication_seed(cfg.seed, r, _SCHEDULE))
    t = cfg.trend
    if t.is_random:
        lambdas = sample_arm_lambdas(t.random_lambda0, t.random_sd, cfg.n_arms, t.random_fixed,
                                     replication_seed(cfg.seed, r, _LAMBDA))
    else:
        lambdas = t.lambdas or (0.0,) * (cfg.n_arms + 1)
    trend = TimeTrendSpec(t.pattern, lambdas, t.peak)
    truth = ScenarioTruth(cfg.control_mean, cfg.effects, cfg.sd)
    return schedule, generate_trial(schedule, truth, trend, replication_seed(cfg.seed, r, _DATA))


def run_replication(cfg: ScenarioConfig, r: int) -> list[Decision]:
    _, data = simulate_trial(cfg, r)
    out = []
    for i, k in enumerate(cfg.arms):
        for j, method in enumerate(cfg.methods):
            seed = np.random.SeedSequence(cfg.seed, spawn_key=(r, _ANALYSIS, i, j))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                res = analyse(data, k, method, cfg, seed)
            out.append(Decision(r, k, method, bool(res.reject), float(res.estimate)))
    return out


def _run_chunk(args):
    cfg, reps = args
    results = []
    for r in reps:
        try:
            results.append((r, run_replication(cfg, r), None))
        except Exception as e:  # noqa: BLE001 - tallied, run fails above MAX_ERROR_RATE
            results.append((r, [], f"{type(e).__name__}: {e}"))
    return results


def run_decisions(cfg: ScenarioConfig, workers: int = 1, progress=None):
    """All per-replication decisions, ordered by replication. Returns ``(decisions, errors)``."""
    reps = list(range(cfg.replications))
    if workers <= 1:
        chunks = [_run_chunk((cfg, [r])) for r in reps]
    else:
        size = max(1, math.ceil(len(reps) / (workers * 8)))
        parts = [(cfg, reps[i:i + size]) for i in range(0, len(reps), size)]
        with ProcessPoolExecutor(workers) as pool:
            chunks = list(pool.map(_run_chunk, parts))
    decisions, errors = [], {}
    for chunk in chunks:
        for r, ds, err in chunk:
            if err is not None:
                errors[r] = err
            decisions.extend(ds)
        if progress:
            progress(len(decisions))
    decisions.sort(key=lambda d: (d.replication, cfg.arms.index(d.arm), cfg.methods.index(d.method)))
    return decisions, errors


def aggregate(decisions, alpha: float, errors: int = 0, name="scenario", seed=None) -> AggregateMetrics:
    """Rejection rate per (arm, method) as the mean of the decision indicators."""
    groups: dict[tuple[int, str], list[Decision]] = {}
    for d in decisions:
        groups.setdefault((d.arm, d.method), []).append(d)
    rows = []
    n_reps = 0
    for (arm, method), ds in groups.items():
        n = len(ds)
        n_reps = max(n_reps, n)
        rate = sum(d.reject for d in ds) / n
        lo, hi = prediction_band(alpha, n)
        rows.append(MetricRow(arm, method, rate, math.sqrt(rate * (1 - rate) / n), lo, hi,
                              float(np.mean([d.estimate for d in ds])), n))
    return AggregateMetrics(rows, n_reps, errors, alpha, name, seed)


def run_scenario(cfg: ScenarioConfig, workers: int = 1, return_decisions=False):
    decisions, errors = run_decisions(cfg, workers)
    if errors:
        log.warning("%d replication(s) failed; first: %s", len(errors), next(iter(errors.values())))
    if len(errors) > MAX_ERROR_RATE * cfg.replications:
        raise SimulationError(
            f"{len(errors)} of {cfg.replications} replications failed "
            f"(limit {MAX_ERROR_RATE:.0%}); first error: {next(iter(errors.values()))}"
        )
    metrics = aggregate(decisions, cfg.alpha, len(errors), cfg.name, cfg.seed)
    return (metrics, decisions) if return_decisions else metrics


def write_decisions(decisions, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DECISION_HEADER)
        for d in decisions:
            w.writerow(d.row())


def read_decisions(path) -> list[Decision]:
    with open(path, newline="") as fh:
        return [
            Decision(int(r["replication"]), int(r["arm"]), r["method"], r["reject"] in ("1", "True", "true"),
                     float(r["estimate"]))
            for r in csv.DictReader(fh)
        ]


RESULT_HEADER = ["setting", "arm", "method", "metric", "value", "R", "seed"]


def write_results(metrics: AggregateMetrics, path, cfg: ScenarioConfig | None = None) -> None:
    """Long-format CSV at ``path`` plus a JSON summary next to it."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_HEADER)
        for row in metrics.rows:
            for metric in ("rate", "mc_se", "band_lo", "band_hi", "mean_estimate"):
                w.writerow([metrics.name, row.arm, row.method, metric, repr(getattr(row, metric)),
                            row.replications, metrics.seed])
    summary = {
        "setting": metrics.name,
        "seed": metrics.seed,
        "replications": metrics.replications,
        "errors": metrics.errors,
        "alpha": metrics.alpha,
        "results": [row.__dict__ for row in metrics.rows],
    }
    if cfg is not None:
        summary["config"] = config_to_dict(cfg)
    path.with_suffix(".json").write_text(json.dumps(summary, indent=2) + "\n")
