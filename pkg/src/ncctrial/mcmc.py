"""Sampler settings and posterior summaries shared by the Bayesian analyses."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class McmcSettings:
    iterations: int = 4000
    burn_in: int = 1000
    thin: int = 1
    chains: int = 1
    seed: int | None = None

    def __post_init__(self):
        if self.iterations < 1 or not 0 <= self.burn_in < self.iterations:
            raise ValueError("need 0 <= burn_in < iterations")
        if self.thin < 1 or self.chains < 1:
            raise ValueError("thin and chains must be >= 1")

    @property
    def kept_per_chain(self) -> int:
        return len(range(self.burn_in, self.iterations, self.thin))


@dataclass
class PosteriorSummary:
    """Posterior of a treatment effect plus the one-sided decision."""

    estimate: float
    sd: float
    prob_positive: float
    reject: bool
    method: str
    draws: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)


def decide(prob_positive: float, alpha: float) -> bool:
    """Reject ``θ <= 0`` when the posterior mass above zero exceeds ``1 - alpha``."""
    return bool(prob_positive > 1.0 - alpha)


def summarize(draws, alpha, method, keep_draws=False, **diagnostics) -> PosteriorSummary:
    draws = np.asarray(draws, dtype=float)
    if not np.all(np.isfinite(draws)):
        raise FloatingPointError("non-finite posterior draws")
    p = float(np.mean(draws > 0))
    return PosteriorSummary(
        float(draws.mean()), float(draws.std(ddof=1)) if draws.size > 1 else 0.0,
        p, decide(p, alpha), method, draws if keep_draws else None, diagnostics,
    )


def chain_seeds(seed, chains: int) -> list[np.random.SeedSequence]:
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return seed.spawn(chains)


def effective_sample_size(x) -> float:
    """ESS of a single chain using Geyer's initial monotone sequence."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 4:
        return float(n)
    x = x - x.mean()
    var = x @ x / n
    if var == 0:
        return float(n)
    f = np.fft.rfft(x, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n] / (n * var)
    # pair sums Γ_m = ρ_2m + ρ_2m+1 must stay positive and non-increasing
    pairs = acf[: n - n % 2].reshape(-1, 2).sum(axis=1)
    total = 0.0
    prev = np.inf
    for g in pairs:
        if g <= 0:
            break
        g = min(g, prev)
        total += g
        prev = g
    tau = 2.0 * total - 1.0
    return float(n / max(tau, 1.0 / n))
