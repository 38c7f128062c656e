"""Bayesian Time Machine for continuous responses.

The mean model has an intercept, one effect per experimental arm and a
bucket effect ``ω_c`` for every time bucket except the most recent
(``ω_1 = 0``). Bucket effects follow a second-order random walk with
precision ``τ``; ``τ`` and the residual precision ``τ_Y`` get Gamma priors.
All full conditionals are conjugate, so the sampler is plain Gibbs with a
joint draw of the mean parameters.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize, special
from scipy.linalg import lapack

from .datagen import TrialDataset
from .design import derive_buckets
from .freq import design_matrix
from .mcmc import McmcSettings, PosteriorSummary, chain_seeds, decide, effective_sample_size, summarize


class CalibrationError(RuntimeError):
    pass


def calibrate_drift_prior(expected: float, maximum: float, iota: float = 0.01) -> tuple[float, float]:
    """Gamma(shape, rate) prior for the drift precision.

    Solves ``E(τ) = 1/expected²`` and ``P(τ < 1/maximum²) = iota``. With the
    rate tied to the shape by the first equation, the second reduces to a
    one-dimensional root in the shape.
    """
    if not 0 < expected < maximum:
        raise ValueError("need 0 < expected < maximum")
    if not 0 < iota < 1:
        raise ValueError("iota must lie in (0, 1)")
    ratio = (expected / maximum) ** 2

    # P(Gamma(a, rate=a) < ratio) falls from 1 to 0 as the shape grows
    def excess(log_a):
        a = np.exp(log_a)
        return special.gammainc(a, a * ratio) - iota

    lo, hi = np.log(1e-2), np.log(1e2)
    for _ in range(60):
        if excess(lo) > 0:
            break
        lo -= 2.0
    else:
        raise CalibrationError("could not bracket the shape from below")
    for _ in range(60):
        if excess(hi) < 0:
            break
        hi += 2.0
    else:
        raise CalibrationError("could not bracket the shape from above")

    a = float(np.exp(optimize.brentq(excess, lo, hi, xtol=1e-14, rtol=1e-14)))
    b = a * expected ** 2
    residual = abs(special.gammainc(a, b / maximum ** 2) - iota)
    if residual > 1e-6:
        raise CalibrationError(f"calibration residual {residual:.2e} too large")
    return a, b


@dataclass
class TMPrior:
    a_tau: float = 11.562213390789195
    b_tau: float = 11.562213390789195
    a_y: float = 0.001
    b_y: float = 0.001
    eta0_var: float = 1000.0
    theta_var: float = 1000.0
    bucket_size: int = 25

    def __post_init__(self):
        for name in ("a_tau", "b_tau", "a_y", "b_y", "eta0_var", "theta_var"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.bucket_size < 1:
            raise ValueError("bucket_size must be >= 1")

    @classmethod
    def calibrated(cls, expected, maximum, iota=0.01, **kwargs) -> "TMPrior":
        a, b = calibrate_drift_prior(expected, maximum, iota)
        return cls(a_tau=a, b_tau=b, **kwargs)


def drift_difference_matrix(n_free: int) -> np.ndarray:
    """Map ``(ω_2, ..., ω_C)`` to the random-walk innovations.

    Row 0 is ``ω_2 - ω_1`` and row ``i`` is the second difference ending at
    ``ω_{i+2}``, with ``ω_1 = 0`` folded in.
    """
    A = np.eye(n_free)
    for i in range(1, n_free):
        A[i, i - 1] = -2.0
        if i >= 2:
            A[i, i - 2] = 1.0
    return A


@dataclass
class TMModel:
    """Design and prior structure of one Time Machine fit."""

    X: np.ndarray
    y: np.ndarray
    names: list[str]
    drift: slice
    base_precision: np.ndarray
    drift_precision: np.ndarray
    n_buckets: int

    @property
    def n_coef(self) -> int:
        return self.X.shape[1]

    def precision(self, tau, tau_y):
        Q = tau_y * (self.X.T @ self.X) + self.base_precision
        Q[self.drift, self.drift] += tau * self.drift_precision
        return Q


def build_model(data: TrialDataset, k: int, prior: TMPrior) -> TMModel:
    exit_index = data.exit_index(k)
    sub = data.head(exit_index)
    bucket, n_buckets = derive_buckets(exit_index, prior.bucket_size)
    arms = sorted(set(sub.arm[sub.arm > 0].tolist()))
    X, names = design_matrix(sub.arm, bucket, arms, range(2, n_buckets + 1), "bucket")
    n_fixed = 1 + len(arms)
    n_free = n_buckets - 1
    base = np.zeros(X.shape[1])
    base[0] = 1.0 / prior.eta0_var
    base[1:n_fixed] = 1.0 / prior.theta_var
    A = drift_difference_matrix(n_free)
    return TMModel(X, sub.y, names, slice(n_fixed, n_fixed + n_free),
                   np.diag(base), A.T @ A, n_buckets)


def conjugate_posterior(model: TMModel, tau: float, tau_y: float):
    """Exact normal posterior of the mean parameters for fixed precisions."""
    Q = model.precision(tau, tau_y)
    cov = np.linalg.inv(Q)
    return cov @ (tau_y * model.X.T @ model.y), cov


def drift_conditional(prior: TMPrior, omega) -> tuple[float, float]:
    """Shape and rate of ``τ`` given the free bucket effects ``(ω_2, ..., ω_C)``."""
    omega = np.asarray(omega, dtype=float)
    innov = drift_difference_matrix(len(omega)) @ omega
    return prior.a_tau + len(omega) / 2.0, prior.b_tau + 0.5 * float(innov @ innov)


def _cholesky(Q):
    L, info = lapack.dpotrf(Q, lower=1)
    jitter = 1e-10 * np.mean(np.diag(Q))
    tries = 0
    while info != 0:
        tries += 1
        if tries > 5:
            raise np.linalg.LinAlgError("posterior precision is not positive definite")
        L, info = lapack.dpotrf(Q + jitter * np.eye(len(Q)), lower=1)
        jitter *= 100.0
    return L


def gibbs_chain(model: TMModel, prior: TMPrior, settings: McmcSettings, seed,
                fixed_tau=None, fixed_tau_y=None) -> np.ndarray:
    """Run one chain; returns retained draws with columns ``coef..., τ, τ_Y``."""
    rng = np.random.default_rng(seed)
    X, y = model.X, model.y
    m, p = X.shape
    XtX = X.T @ X
    Xty = X.T @ y
    drift = model.drift
    n_free = drift.stop - drift.start
    A = drift_difference_matrix(n_free)
    base = model.base_precision
    R = model.drift_precision

    tau = fixed_tau if fixed_tau is not None else prior.a_tau / prior.b_tau
    tau_y = fixed_tau_y if fixed_tau_y is not None else 1.0 / max(np.var(y), 1e-8)

    n_iter = settings.iterations
    z = rng.standard_normal((n_iter, p))
    g_tau = rng.standard_gamma(drift_conditional(prior, np.zeros(n_free))[0], n_iter)
    g_y = rng.standard_gamma(prior.a_y + m / 2.0, n_iter)

    keep = range(settings.burn_in, n_iter, settings.thin)
    out = np.empty((len(keep), p + 2))
    row = 0
    for it in range(n_iter):
        Q = tau_y * XtX + base
        Q[drift, drift] += tau * R
        L = _cholesky(Q)
        w, _ = lapack.dtrtrs(L, tau_y * Xty, lower=1)
        beta, _ = lapack.dtrtrs(L, w + z[it], lower=1, trans=1)
        if fixed_tau is None:
            innov = A @ beta[drift]
            tau = g_tau[it] / (prior.b_tau + 0.5 * innov @ innov)
        if fixed_tau_y is None:
            resid = y - X @ beta
            tau_y = g_y[it] / (prior.b_y + 0.5 * resid @ resid)
        if it >= settings.burn_in and (it - settings.burn_in) % settings.thin == 0:
            out[row, :p] = beta
            out[row, p] = tau
            out[row, p + 1] = tau_y
            row += 1
    return out


def fit_time_machine(data: TrialDataset, k: int, prior: TMPrior | None = None,
                     settings: McmcSettings | None = None, alpha: float = 0.025,
                     seed=None, fixed_tau=None, fixed_tau_y=None,
                     keep_draws=False) -> PosteriorSummary:
    """Posterior of arm ``k``'s effect using all data up to its exit.

    ``fixed_tau`` / ``fixed_tau_y`` pin the precisions (point-mass priors),
    which makes the coefficient posterior exactly normal. ``seed`` overrides
    ``settings.seed``.
    """
    prior = prior or TMPrior()
    settings = settings or McmcSettings()
    model = build_model(data, k, prior)
    chains = [
        gibbs_chain(model, prior, settings, s, fixed_tau, fixed_tau_y)
        for s in chain_seeds(settings.seed if seed is None else seed, settings.chains)
    ]
    i = model.names.index(f"arm{k}")
    theta = np.concatenate([c[:, i] for c in chains])
    if not np.all(np.isfinite(theta)):
        raise FloatingPointError("non-finite draws in Time Machine sampler")
    summary = summarize(
        theta, alpha, "timemachine", keep_draws,
        n_buckets=model.n_buckets,
        ess=float(sum(effective_sample_size(c[:, i]) for c in chains)),
        tau_mean=float(np.mean([c[:, -2].mean() for c in chains])),
    )
    if keep_draws:
        summary.diagnostics["samples"] = np.concatenate(chains)
        summary.diagnostics["names"] = model.names + ["tau", "tau_y"]
    return summary


def tm_decision(summary: PosteriorSummary, alpha: float = 0.025) -> bool:
    return decide(summary.prob_positive, alpha)
