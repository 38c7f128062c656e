"""Meta-analytic predictive (MAP) prior built from non-concurrent controls.

Each non-concurrent period is treated as a separate source with its own
control mean ``η_s = β + ν_s``, ``ν_s ~ N(0, τ²)``. The predictive
distribution of a new period mean is approximated by a normal mixture,
robustified with a unit-information component, and updated with the
concurrent controls in closed form.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .datagen import TrialDataset
from .design import split_controls
from .mcmc import McmcSettings, PosteriorSummary, chain_seeds, decide, effective_sample_size


@dataclass
class NormalMixture:
    weights: np.ndarray
    means: np.ndarray
    sds: np.ndarray

    def __post_init__(self):
        self.weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        self.means = np.atleast_1d(np.asarray(self.means, dtype=float))
        self.sds = np.atleast_1d(np.asarray(self.sds, dtype=float))
        if not (len(self.weights) == len(self.means) == len(self.sds)):
            raise ValueError("weights, means and sds must have equal length")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be non-negative and sum to 1")
        if np.any(self.sds <= 0):
            raise ValueError("component sds must be positive")

    @classmethod
    def single(cls, mean, sd) -> "NormalMixture":
        return cls([1.0], [mean], [sd])

    def mean(self) -> float:
        return float(self.weights @ self.means)

    def var(self) -> float:
        return float(self.weights @ (self.sds ** 2 + self.means ** 2) - self.mean() ** 2)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)[..., None]
        z = (x - self.means) / self.sds
        return (self.weights * np.exp(-0.5 * z * z) / (self.sds * np.sqrt(2 * np.pi))).sum(axis=-1)

    def sample(self, size, rng) -> np.ndarray:
        comp = rng.choice(len(self.weights), size=size, p=self.weights)
        return self.means[comp] + self.sds[comp] * rng.standard_normal(size)

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "means": self.means.tolist(), "sds": self.sds.tolist()}


@dataclass
class MapConfig:
    beta_var: float = 1000.0
    tau_var: float = 500.0
    robust_weight: float = 0.1
    n_components: int = 2
    a_y: float = 0.001
    b_y: float = 0.001
    treatment_var: float = 1000.0
    decision_draws: int = 10000
    em_restarts: int = 5
    mcmc: McmcSettings = field(default_factory=McmcSettings)

    def __post_init__(self):
        if not 0 <= self.robust_weight <= 1:
            raise ValueError("robust_weight must lie in [0, 1]")
        for name in ("beta_var", "tau_var", "a_y", "b_y", "treatment_var"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.n_components < 1 or self.decision_draws < 1:
            raise ValueError("n_components and decision_draws must be >= 1")


@dataclass
class MapDraws:
    beta: np.ndarray
    tau: np.ndarray
    predictive: np.ndarray
    residual_var: float
    acceptance: float


def _group_stats(groups):
    groups = [np.asarray(g, dtype=float) for g in groups if len(g) > 0]
    n = np.array([len(g) for g in groups], dtype=float)
    ybar = np.array([g.mean() for g in groups])
    ss = float(sum(((g - g.mean()) ** 2).sum() for g in groups))
    return n, ybar, ss


def _log_tau_target(log_tau, ybar, n, beta, phi, tau_var):
    # η integrated out: ȳ_s ~ N(β, τ² + 1/(n_s φ)); half-normal prior; log-scale Jacobian
    tau = np.exp(log_tau)
    v = tau * tau + 1.0 / (n * phi)
    return (-0.5 * np.sum(np.log(v) + (ybar - beta) ** 2 / v)
            - 0.5 * tau * tau / tau_var + log_tau)


def sample_hierarchy(groups, config: MapConfig, seed=None) -> MapDraws:
    """Metropolis-within-Gibbs over ``(β, τ, η_s, φ)`` for the period model.

    ``log τ`` moves by random-walk Metropolis with ``η`` integrated out;
    ``(β, η)`` are then drawn jointly and ``φ`` (residual precision) from its
    Gamma conditional. The step size adapts during burn-in.
    """
    n, ybar, ss = _group_stats(groups)
    if len(n) == 0 or n.sum() < 2:
        raise ValueError("need at least 2 non-concurrent observations")
    settings = config.mcmc
    n_total = n.sum()
    pooled_var = ss / (n_total - len(n)) if n_total > len(n) else np.var(np.concatenate([np.asarray(g, float) for g in groups]))

    betas, taus, preds, accepts = [], [], [], []
    for cs in chain_seeds(settings.seed if seed is None else seed, settings.chains):
        rng = np.random.default_rng(cs)
        phi = 1.0 / max(pooled_var, 1e-8)
        beta = float(np.average(ybar, weights=n))
        log_tau = np.log(min(np.sqrt(config.tau_var), max(np.std(ybar), 0.1)))
        step = 1.0
        accepted = 0
        window = 0
        for it in range(settings.iterations):
            prop = log_tau + step * rng.standard_normal()
            logr = (_log_tau_target(prop, ybar, n, beta, phi, config.tau_var)
                    - _log_tau_target(log_tau, ybar, n, beta, phi, config.tau_var))
            if np.log(rng.uniform()) < logr:
                log_tau = prop
                accepted += 1
            window += 1
            if it < settings.burn_in and window == 50:
                rate = accepted / window
                if rate < 0.2:
                    step *= 0.7
                elif rate > 0.5:
                    step *= 1.4
                accepted = window = 0
            elif it == settings.burn_in - 1:
                accepted = window = 0
            tau = np.exp(log_tau)

            # β | τ, φ with η integrated out, then η | β, τ, φ
            v = tau * tau + 1.0 / (n * phi)
            prec_b = np.sum(1.0 / v) + 1.0 / config.beta_var
            beta = np.sum(ybar / v) / prec_b + rng.standard_normal() / np.sqrt(prec_b)
            prec_e = n * phi + 1.0 / (tau * tau)
            eta = (n * phi * ybar + beta / (tau * tau)) / prec_e + rng.standard_normal(len(n)) / np.sqrt(prec_e)

            rss = ss + np.sum(n * (ybar - eta) ** 2)
            phi = rng.gamma(config.a_y + n_total / 2.0) / (config.b_y + rss / 2.0)

            if it >= settings.burn_in and (it - settings.burn_in) % settings.thin == 0:
                betas.append(beta)
                taus.append(tau)
                preds.append(beta + tau * rng.standard_normal())
        accepts.append(accepted / max(window, 1))

    out = MapDraws(np.array(betas), np.array(taus), np.array(preds), float(pooled_var), float(np.mean(accepts)))
    if not (np.all(np.isfinite(out.beta)) and np.all(np.isfinite(out.predictive))):
        raise FloatingPointError("MAP sampler produced non-finite draws")
    return out


def _norm_logpdf(x, mean, sd):
    z = (x - mean) / sd
    return -0.5 * z * z - np.log(sd) - 0.5 * np.log(2 * np.pi)


def _em_once(x, w, mu, sd, max_iter=500, tol=1e-10):
    ll_old = -np.inf
    for _ in range(max_iter):
        logp = np.log(w) + _norm_logpdf(x[:, None], mu, sd)
        ll = special.logsumexp(logp, axis=1)
        resp = np.exp(logp - ll[:, None])
        nk = resp.sum(axis=0)
        if np.any(nk < 1e-8 * len(x)):
            return None, -np.inf
        w = nk / len(x)
        mu = (resp * x[:, None]).sum(axis=0) / nk
        sd = np.sqrt((resp * (x[:, None] - mu) ** 2).sum(axis=0) / nk)
        if np.any(sd < 1e-8 * max(np.std(x), 1e-300)):
            return None, -np.inf
        total = ll.sum()
        if total - ll_old < tol * abs(total):
            break
        ll_old = total
    return (w, mu, sd), float(ll.sum())


def fit_mixture(x, n_components=2, restarts=5, seed=None) -> NormalMixture:
    """Maximum-likelihood normal mixture via EM, best of several starts.

    Falls back to fewer components when every start degenerates.
    """
    x = np.asarray(x, dtype=float)
    sd_all = float(np.std(x))
    if n_components == 1 or sd_all == 0:
        return NormalMixture.single(float(np.mean(x)), max(sd_all, 1e-8))
    rng = np.random.default_rng(seed)
    best, best_ll = None, -np.inf
    for r in range(restarts):
        if r == 0:
            mu = np.quantile(x, (np.arange(n_components) + 0.5) / n_components)
            sd = np.full(n_components, sd_all / n_components)
        else:
            mu = rng.choice(x, n_components, replace=False)
            sd = np.full(n_components, sd_all)
        params, ll = _em_once(x, np.full(n_components, 1.0 / n_components), mu, sd)
        if params is not None and ll > best_ll:
            best, best_ll = params, ll
    if best is None:
        return fit_mixture(x, n_components - 1, restarts, seed)
    w, mu, sd = best
    order = np.argsort(-w)
    w = w[order] / w[order].sum()
    return NormalMixture(w, mu[order], sd[order])


def build_map_prior(groups, config: MapConfig | None = None, seed=None) -> NormalMixture:
    """MAP prior for a new period's control mean from per-period control data."""
    config = config or MapConfig()
    draws = sample_hierarchy(groups, config, seed)
    return fit_mixture(draws.predictive, config.n_components, config.em_restarts, seed)


def robustify(prior: NormalMixture, weight: float, vague: NormalMixture) -> NormalMixture:
    """``(1 - weight) * prior + weight * vague``."""
    if not 0 <= weight <= 1:
        raise ValueError("weight must lie in [0, 1]")
    if weight == 0:
        return prior
    if weight == 1:
        return vague
    w = np.concatenate([(1 - weight) * prior.weights, weight * vague.weights])
    return NormalMixture(w / w.sum(), np.concatenate([prior.means, vague.means]),
                         np.concatenate([prior.sds, vague.sds]))


def unit_information(mean: float, residual_sd: float) -> NormalMixture:
    """Prior carrying the information of a single observation."""
    return NormalMixture.single(mean, residual_sd)


def posterior_update_mixture(prior: NormalMixture, mean: float, n: int, sd: float) -> NormalMixture:
    """Conjugate update of a normal mixture with ``n`` observations of known ``sd``."""
    if n < 1 or sd <= 0:
        raise ValueError("need n >= 1 and sd > 0")
    se2 = sd * sd / n
    v = prior.sds ** 2
    post_var = 1.0 / (1.0 / v + 1.0 / se2)
    post_mean = post_var * (prior.means / v + mean / se2)
    logw = np.log(np.where(prior.weights > 0, prior.weights, 1e-300)) + _norm_logpdf(mean, prior.means, np.sqrt(v + se2))
    logw[prior.weights == 0] = -np.inf
    w = np.exp(logw - special.logsumexp(logw))
    return NormalMixture(w / w.sum(), post_mean, np.sqrt(post_var))


def pooled_sd(*groups) -> float:
    groups = [np.asarray(g, dtype=float) for g in groups if len(g) > 0]
    ss = sum(((g - g.mean()) ** 2).sum() for g in groups)
    df = sum(len(g) for g in groups) - len(groups)
    return float(np.sqrt(ss / df)) if df > 0 else 0.0


def map_analysis(data: TrialDataset, k: int, config: MapConfig | None = None,
                 alpha: float = 0.025, seed=None, keep_draws=False) -> PosteriorSummary:
    """Arm ``k`` against concurrent controls with a robust MAP prior for the control mean."""
    config = config or MapConfig()
    split = split_controls(data, k)
    treat = data.y[data.arm == k]
    cc = data.y[split.concurrent]
    if len(treat) == 0 or len(cc) == 0:
        raise ValueError(f"arm {k} or its concurrent controls are empty")
    sd = pooled_sd(treat, cc)
    if sd == 0:
        sd = 1e-8
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    mcmc_seed, em_seed, draw_seed = ss.spawn(3)

    info = {}
    if len(split.nonconcurrent) < 2:
        warnings.warn(f"arm {k}: no non-concurrent controls, using unit-information prior only", stacklevel=2)
        prior = unit_information(float(cc.mean()), sd)
    else:
        ncc_period = data.period[split.nonconcurrent]
        ncc_y = data.y[split.nonconcurrent]
        groups = [ncc_y[ncc_period == s] for s in np.unique(ncc_period)]
        draws = sample_hierarchy(groups, config, mcmc_seed if seed is not None else None)
        map_prior = fit_mixture(draws.predictive, config.n_components, config.em_restarts, em_seed)
        vague = unit_information(map_prior.mean(), max(np.sqrt(draws.residual_var), 1e-8))
        prior = robustify(map_prior, config.robust_weight, vague)
        info.update(map_prior=map_prior.to_dict(), acceptance=draws.acceptance,
                    ess_beta=effective_sample_size(draws.beta))

    control_post = posterior_update_mixture(prior, float(cc.mean()), len(cc), sd)
    t_var = 1.0 / (1.0 / config.treatment_var + len(treat) / sd ** 2)
    t_mean = t_var * treat.sum() / sd ** 2

    rng = np.random.default_rng(draw_seed)
    diff = t_mean + np.sqrt(t_var) * rng.standard_normal(config.decision_draws) \
        - control_post.sample(config.decision_draws, rng)
    p = float(np.mean(diff > 0))
    info["control_posterior"] = control_post.to_dict()
    return PosteriorSummary(float(diff.mean()), float(diff.std(ddof=1)), p, decide(p, alpha),
                            "map", diff if keep_draws else None, info)
