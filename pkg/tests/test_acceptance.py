"""Acceptance suite. Each test records one pass/fail line shown in the terminal summary."""
import dataclasses
import math
import time

import numpy as np
import pytest

from ncctrial.config import ScenarioConfig, TrendConfig
from ncctrial.datagen import ScenarioTruth, TimeTrendSpec, generate_trial
from ncctrial.design import build_schedule, make_arms
from ncctrial.freq import regression_model, separate_ttest
from ncctrial.harness import prediction_band, run_decisions, run_scenario, simulate_trial, write_decisions
from ncctrial.mapprior import MapConfig, NormalMixture, posterior_update_mixture
from ncctrial.mcmc import McmcSettings, effective_sample_size
from ncctrial.timemachine import TMPrior, build_model, calibrate_drift_prior, conjugate_posterior, fit_time_machine

from test_mapprior import grid_posterior_moments

ALPHA = 0.025
BAND_2000 = prediction_band(ALPHA, 2000)


def setting_one(**kw):
    base = dict(n=250, entry=(0, 250, 500), name="setting-I", arms=(3,), alpha=ALPHA,
                trend=TrendConfig("stepwise", (0.15,) * 4), methods=("regression",), replications=2000)
    base.update(kw)
    return ScenarioConfig(**base)


CALIBRATION_REFERENCE = [
    ((10, 15), (11.562213, 1156.22134)),
    ((5, 10), (4.873556, 121.8389)),
    ((1, 1.5), (11.562217, 11.56222)),
    ((0.01, 0.15), (1.099121, 0.00010991)),
    ((0.001, 0.015), (109.912060, 0.00010991)),
]


def test_01_calibration_reference_values(criterion):
    t0 = time.perf_counter()
    worst, parts = 0.0, []
    for (e, m), (a_ref, b_ref) in CALIBRATION_REFERENCE:
        a, b = calibrate_drift_prior(e, m, 0.01)
        err = max(abs(a / a_ref - 1), abs(b / b_ref - 1))
        worst = max(worst, err)
        parts.append(f"({e},{m})->({a:.6g},{b:.6g}) rel {err:.1e}")
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-3 and elapsed < 1.0
    criterion(1, "drift prior calibration reproduces reference values", ok, f"{'; '.join(parts)}; {elapsed:.3f}s")
    assert ok


@pytest.mark.slow
def test_02_separate_power(criterion):
    cfg = setting_one(trend=TrendConfig("none"), hypothesis="all_alternative", effect=(0.25,) * 3,
                      methods=("separate",), arms=(1, 2, 3), seed=202)
    m = run_scenario(cfg)
    rates = [m.get(k, "separate").rate for k in (1, 2, 3)]
    ok = all(0.77 <= r <= 0.83 for r in rates)
    criterion(2, "separate-analysis power in [0.77, 0.83]", ok, f"rates by arm {rates}, R=2000")
    assert ok


@pytest.fixture(scope="module")
def equal_trend_rates():
    cfg = setting_one(methods=("pooled", "regression"), seed=303)
    return run_scenario(cfg)


@pytest.mark.slow
def test_03_regression_type1(criterion, equal_trend_rates):
    r = equal_trend_rates.get(3, "regression").rate
    ok = BAND_2000[0] <= r <= BAND_2000[1]
    criterion(3, "regression arm-3 type-1 error within band", ok,
              f"rate {r:.4f}, band [{BAND_2000[0]:.4f}, {BAND_2000[1]:.4f}]")
    assert ok


@pytest.mark.slow
def test_04_pooled_inflation(criterion, equal_trend_rates):
    r = equal_trend_rates.get(3, "pooled").rate
    ok = r > BAND_2000[1]
    criterion(4, "pooled arm-3 type-1 error above band", ok, f"rate {r:.4f} vs upper {BAND_2000[1]:.4f}")
    assert ok


@pytest.mark.slow
def test_05_no_overlap_equivalence(criterion):
    cfg = setting_one(entry=(0, 500, 1000), hypothesis="all_alternative", effect=(0.25,) * 3, seed=505)
    R = cfg.replications
    max_diff, rej_reg, rej_sep = 0.0, 0, 0
    for r in range(R):
        _, data = simulate_trial(cfg, r)
        reg = regression_model(data, 3, ALPHA)
        sep = separate_ttest(data, 3, ALPHA)
        max_diff = max(max_diff, abs(reg.estimate - sep.estimate))
        rej_reg += reg.reject
        rej_sep += sep.reject
    p_reg, p_sep = rej_reg / R, rej_sep / R
    p = (p_reg + p_sep) / 2
    tol = 1.96 * math.sqrt(2 * p * (1 - p) / R)
    ok = max_diff <= 1e-10 and abs(p_reg - p_sep) <= tol
    criterion(5, "no-overlap regression equals separate analysis", ok,
              f"max |estimate diff| {max_diff:.1e}; power {p_reg:.4f} vs {p_sep:.4f} (tol {tol:.4f})")
    assert ok


def test_06_gibbs_conjugate_oracle(criterion):
    s = build_schedule(make_arms(12, [0, 6]), seed=61)
    data = generate_trial(s, ScenarioTruth(0.2, (0.5, -0.3)), TimeTrendSpec("linear", (0.4,) * 3), seed=62)
    assert len(data) <= 40
    prior = TMPrior(bucket_size=6)
    tau, tau_y = 3.0, 1.5
    post = fit_time_machine(data, 2, prior, McmcSettings(8000, 500, seed=63),
                            fixed_tau=tau, fixed_tau_y=tau_y, keep_draws=True)
    draws = post.diagnostics["samples"][:, :-2]
    mean, cov = conjugate_posterior(build_model(data, 2, prior), tau, tau_y)
    worst = 0.0
    for i in range(draws.shape[1]):
        x = draws[:, i]
        ess = effective_sample_size(x)
        z_mean = abs(x.mean() - mean[i]) / (math.sqrt(cov[i, i] / ess))
        z_var = abs(x.var() - cov[i, i]) / (cov[i, i] * math.sqrt(2 / ess))
        worst = max(worst, z_mean, z_var)
    ok = worst < 3
    criterion(6, "Gibbs sampler matches conjugate posterior", ok,
              f"{len(data)} obs, {draws.shape[1]} coefficients, worst deviation {worst:.2f} MC SE")
    assert ok


@pytest.mark.slow
def test_07_time_machine_type1(criterion):
    cfg = setting_one(methods=("timemachine",), replications=1000, seed=707,
                      tm_prior=TMPrior.calibrated(1.0, 1.5))
    r = run_scenario(cfg).get(3, "timemachine").rate
    ok = 0.015 <= r <= 0.035
    criterion(7, "Time Machine arm-3 type-1 error within band", ok, f"rate {r:.4f}, band [0.015, 0.035], R=1000")
    assert ok


@pytest.mark.slow
def test_08_unequal_trend_inflation(criterion):
    cfg = setting_one(trend=TrendConfig("stepwise", (0.1, 0.25, 0.1, 0.1)), seed=808)
    row = run_scenario(cfg).get(3, "regression")
    ok = row.rate > BAND_2000[1]
    criterion(8, "regression arm-3 type-1 error inflated by unequal trend", ok,
              f"rate {row.rate:.4f} vs upper {BAND_2000[1]:.4f}; mean estimate {row.mean_estimate:+.4f}")
    assert ok


def noise_free_arm3_estimate(lam1):
    s = build_schedule(make_arms(250, (0, 250, 500)), seed=1)
    d = generate_trial(s, ScenarioTruth(0.0, (0.0,) * 3, sd=0.0),
                       TimeTrendSpec("stepwise", (0.1, lam1, 0.1, 0.1)), seed=1)
    return regression_model(d, 3).estimate


def test_unequal_trend_bias_is_antisymmetric():
    up, down = noise_free_arm3_estimate(0.25), noise_free_arm3_estimate(-0.05)
    assert up < 0 < down
    assert up == pytest.approx(-down, rel=1e-9)


@pytest.mark.slow
def test_unequal_trend_below_control_inflates():
    cfg = setting_one(trend=TrendConfig("stepwise", (0.1, -0.05, 0.1, 0.1)), seed=808)
    assert run_scenario(cfg).get(3, "regression").rate > BAND_2000[1]


def test_09_mixture_update_oracle(criterion):
    rng = np.random.default_rng(909)
    worst = 0.0
    for _ in range(10):
        m = int(rng.integers(1, 4))
        w = rng.dirichlet(np.ones(m))
        prior = NormalMixture(w / w.sum(), rng.normal(0, 1, m), rng.uniform(0.05, 2.0, m))
        ybar, n, sd = rng.normal(0, 1), int(rng.integers(5, 300)), rng.uniform(0.5, 2.0)
        post = posterior_update_mixture(prior, ybar, n, sd)
        gm, gv = grid_posterior_moments(prior, ybar, n, sd)
        worst = max(worst, abs(post.mean() - gm) / max(abs(gm), 1e-12), abs(post.var() / gv - 1))
    ok = worst <= 1e-4
    criterion(9, "mixture update matches grid integration", ok, f"worst relative error {worst:.1e} over 10 cases")
    assert ok


def test_10_determinism_across_workers(criterion, tmp_path):
    cfg = setting_one(n=40, entry=(0, 20, 40), arms=(2, 3), replications=16, seed=1010,
                      methods=("separate", "pooled", "regression", "timemachine", "map"),
                      tm_mcmc=McmcSettings(400, 100), map_config=MapConfig(mcmc=McmcSettings(400, 100)))
    for workers, name in ((1, "one.csv"), (2, "two.csv")):
        decisions, errors = run_decisions(cfg, workers)
        assert not errors
        write_decisions(decisions, tmp_path / name)
    a, b = (tmp_path / "one.csv").read_bytes(), (tmp_path / "two.csv").read_bytes()
    ok = a == b
    rows = a.count(b"\n") - 1
    criterion(10, "decision log identical for 1 and 2 workers", ok, f"{len(a)} bytes, {rows} rows")
    assert ok
