"""Scenario configuration: dataclasses plus a validated YAML/JSON loader.

Example (every scenario parameter can be named)::

    name: setting-I
    replications: 1000
    seed: 20240101
    design:
      n: 250
      entry: [0, 250, 500]      # or: {n_arms: 3, spacing: 250}
    hypothesis: all_null        # or all_alternative
    control_mean: 0.0
    effect: 0.25                # scalar or one value per arm
    sd: 1.0
    trend:
      pattern: stepwise         # stepwise | linear | inverted_u | none
      lambda: 0.15              # equal strengths; or lambdas: [l0, l1, ...]
      # random: {lambda0: 0.1, sd: 0.5, fixed: [0, 10]}
    analysis:
      arms: [3]
      alpha: 0.025
      methods: [separate, pooled, regression, timemachine, map]
      timemachine:
        drift: {expected: 1.0, maximum: 1.5, iota: 0.01}   # or a_tau / b_tau
        bucket_size: 25
      map:
        beta_precision: 0.001
        tau_precision: 0.002
        robust_weight: 0.1
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .datagen import PATTERNS
from .mapprior import MapConfig
from .mcmc import McmcSettings
from .timemachine import TMPrior, calibrate_drift_prior

METHODS = ("separate", "pooled", "regression", "timemachine", "map")
HYPOTHESES = ("all_null", "all_alternative")


class ConfigError(ValueError):
    """Schema violation; the message starts with the offending field path."""


@dataclass
class TrendConfig:
    pattern: str = "none"
    lambdas: tuple[float, ...] | None = None
    random_lambda0: float | None = None
    random_sd: float = 0.0
    random_fixed: tuple[int, ...] = (0,)
    peak: int | None = None

    @property
    def is_random(self) -> bool:
        return self.random_lambda0 is not None


@dataclass
class ScenarioConfig:
    n: int
    entry: tuple[int, ...]
    name: str = "scenario"
    hypothesis: str = "all_null"
    control_mean: float = 0.0
    effect: tuple[float, ...] = ()
    sd: float = 1.0
    trend: TrendConfig = field(default_factory=TrendConfig)
    methods: tuple[str, ...] = ("separate", "pooled", "regression")
    alpha: float = 0.025
    arms: tuple[int, ...] = ()
    tm_prior: TMPrior = field(default_factory=TMPrior)
    tm_mcmc: McmcSettings = field(default_factory=McmcSettings)
    map_config: MapConfig = field(default_factory=MapConfig)
    replications: int = 1000
    seed: int = 0

    def __post_init__(self):
        self.entry = tuple(int(d) for d in self.entry)
        if not self.effect:
            self.effect = (0.25,) * self.n_arms
        self.effect = tuple(float(x) for x in self.effect)
        if not self.arms:
            self.arms = (self.n_arms,)
        self.arms = tuple(int(a) for a in self.arms)
        self.methods = tuple(self.methods)
        _check(self)

    @property
    def n_arms(self) -> int:
        return len(self.entry)

    @property
    def effects(self) -> tuple[float, ...]:
        """Treatment effects actually simulated under the configured hypothesis."""
        if self.hypothesis == "all_null":
            return (0.0,) * self.n_arms
        return self.effect


def _check(cfg: ScenarioConfig):
    if cfg.n < 1:
        raise ConfigError("design.n: must be >= 1")
    if cfg.replications < 1:
        raise ConfigError("replications: must be >= 1")
    if not 0 < cfg.alpha < 1:
        raise ConfigError("analysis.alpha: must lie in (0, 1)")
    if cfg.hypothesis not in HYPOTHESES:
        raise ConfigError(f"hypothesis: expected one of {HYPOTHESES}, got {cfg.hypothesis!r}")
    if len(cfg.effect) != cfg.n_arms:
        raise ConfigError(f"effect: need {cfg.n_arms} values, got {len(cfg.effect)}")
    for m in cfg.methods:
        if m not in METHODS:
            raise ConfigError(f"analysis.methods: unknown method {m!r}")
    for a in cfg.arms:
        if not 1 <= a <= cfg.n_arms:
            raise ConfigError(f"analysis.arms: arm {a} outside 1..{cfg.n_arms}")
    t = cfg.trend
    if t.pattern not in PATTERNS:
        raise ConfigError(f"trend.pattern: expected one of {PATTERNS}, got {t.pattern!r}")
    if t.lambdas is not None and len(t.lambdas) != cfg.n_arms + 1:
        raise ConfigError(f"trend.lambdas: need {cfg.n_arms + 1} values, got {len(t.lambdas)}")
    if t.pattern != "none" and t.lambdas is None and not t.is_random:
        raise ConfigError("trend.lambda: required unless pattern is 'none'")


_MISSING = object()


def _get(d, key, path, default=_MISSING, kind=None):
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected a mapping")
    if key not in d:
        if default is _MISSING:
            raise ConfigError(f"{path}.{key}: required field missing".lstrip("."))
        return default
    value = d[key]
    if kind is not None and value is not None:
        try:
            if kind is int and (isinstance(value, bool) or float(value) != int(value)):
                raise ValueError
            value = kind(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{path}.{key}: expected {kind.__name__}, got {value!r}".lstrip(".")) from None
    return value


def _list(value, path, kind, length=None):
    if isinstance(value, (int, float)) and not isinstance(value, bool) and length is not None:
        return (kind(value),) * length
    if not isinstance(value, (list, tuple)):
        raise ConfigError(f"{path}: expected a list")
    try:
        out = tuple(kind(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: expected a list of {kind.__name__}") from None
    return out


def _mcmc(d, path) -> McmcSettings:
    d = d or {}
    try:
        return McmcSettings(
            iterations=_get(d, "iterations", path, 4000, int),
            burn_in=_get(d, "burn_in", path, 1000, int),
            thin=_get(d, "thin", path, 1, int),
            chains=_get(d, "chains", path, 1, int),
        )
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"{path}: {e}") from None


def _tm(d, path) -> TMPrior:
    d = d or {}
    kw = {}
    if "drift" in d:
        dr = d["drift"]
        try:
            a, b = calibrate_drift_prior(
                _get(dr, "expected", f"{path}.drift", kind=float),
                _get(dr, "maximum", f"{path}.drift", kind=float),
                _get(dr, "iota", f"{path}.drift", 0.01, float),
            )
        except ConfigError:
            raise
        except (ValueError, RuntimeError) as e:
            raise ConfigError(f"{path}.drift: {e}") from None
        kw.update(a_tau=a, b_tau=b)
    for key in ("a_tau", "b_tau", "a_y", "b_y"):
        if key in d:
            kw[key] = _get(d, key, path, kind=float)
    if "eta0_precision" in d:
        kw["eta0_var"] = 1.0 / _get(d, "eta0_precision", path, kind=float)
    if "theta_precision" in d:
        kw["theta_var"] = 1.0 / _get(d, "theta_precision", path, kind=float)
    for key in ("eta0_var", "theta_var"):
        if key in d:
            kw[key] = _get(d, key, path, kind=float)
    if "bucket_size" in d:
        kw["bucket_size"] = _get(d, "bucket_size", path, kind=int)
    try:
        return TMPrior(**kw)
    except ValueError as e:
        raise ConfigError(f"{path}: {e}") from None


def _map(d, path) -> MapConfig:
    d = d or {}
    kw = {}
    if "beta_precision" in d:
        kw["beta_var"] = 1.0 / _get(d, "beta_precision", path, kind=float)
    if "tau_precision" in d:
        kw["tau_var"] = 1.0 / _get(d, "tau_precision", path, kind=float)
    for key in ("beta_var", "tau_var", "robust_weight", "a_y", "b_y", "treatment_var"):
        if key in d:
            kw[key] = _get(d, key, path, kind=float)
    for key in ("n_components", "decision_draws", "em_restarts"):
        if key in d:
            kw[key] = _get(d, key, path, kind=int)
    kw["mcmc"] = _mcmc(d.get("mcmc"), f"{path}.mcmc")
    try:
        return MapConfig(**kw)
    except ValueError as e:
        raise ConfigError(f"{path}: {e}") from None


def config_from_dict(d: dict) -> ScenarioConfig:
    if not isinstance(d, dict):
        raise ConfigError("config: expected a mapping at top level")
    design = _get(d, "design", "")
    n = _get(design, "n", "design", kind=int)
    if "entry" in design:
        entry = _list(design["entry"], "design.entry", int)
    else:
        k = _get(design, "n_arms", "design", kind=int)
        spacing = _get(design, "spacing", "design", kind=int)
        entry = tuple(spacing * i for i in range(k))
    n_arms = len(entry)

    td = _get(d, "trend", "", {}) or {}
    trend = TrendConfig(
        pattern=_get(td, "pattern", "trend", "none", str),
        peak=_get(td, "peak", "trend", None, int),
    )
    if "lambdas" in td:
        trend.lambdas = _list(td["lambdas"], "trend.lambdas", float)
    elif "lambda" in td:
        trend.lambdas = _list(_get(td, "lambda", "trend", kind=float), "trend.lambda", float, n_arms + 1)
    elif "random" in td:
        rd = td["random"]
        trend.random_lambda0 = _get(rd, "lambda0", "trend.random", kind=float)
        trend.random_sd = _get(rd, "sd", "trend.random", kind=float)
        trend.random_fixed = _list(_get(rd, "fixed", "trend.random", [0, n_arms]), "trend.random.fixed", int)

    ad = _get(d, "analysis", "", {}) or {}
    effect = _get(d, "effect", "", 0.25)
    return ScenarioConfig(
        n=n,
        entry=entry,
        name=_get(d, "name", "", "scenario", str),
        hypothesis=_get(d, "hypothesis", "", "all_null", str),
        control_mean=_get(d, "control_mean", "", 0.0, float),
        effect=_list(effect, "effect", float, n_arms),
        sd=_get(d, "sd", "", 1.0, float),
        trend=trend,
        methods=_list(_get(ad, "methods", "analysis", list(METHODS[:3])), "analysis.methods", str),
        alpha=_get(ad, "alpha", "analysis", 0.025, float),
        arms=_list(_get(ad, "arms", "analysis", [n_arms]), "analysis.arms", int),
        tm_prior=_tm(ad.get("timemachine"), "analysis.timemachine"),
        tm_mcmc=_mcmc((ad.get("timemachine") or {}).get("mcmc"), "analysis.timemachine.mcmc"),
        map_config=_map(ad.get("map"), "analysis.map"),
        replications=_get(d, "replications", "", 1000, int),
        seed=_get(d, "seed", "", 0, int),
    )


def config_to_dict(cfg: ScenarioConfig) -> dict:
    t = cfg.trend
    trend = {"pattern": t.pattern}
    if t.lambdas is not None:
        trend["lambdas"] = list(t.lambdas)
    if t.is_random:
        trend["random"] = {"lambda0": t.random_lambda0, "sd": t.random_sd, "fixed": list(t.random_fixed)}
    if t.peak is not None:
        trend["peak"] = t.peak

    def mcmc(m):
        return {"iterations": m.iterations, "burn_in": m.burn_in, "thin": m.thin, "chains": m.chains}

    tm = dataclasses.asdict(cfg.tm_prior)
    tm["mcmc"] = mcmc(cfg.tm_mcmc)
    mp = {k: v for k, v in dataclasses.asdict(cfg.map_config).items() if k != "mcmc"}
    mp["mcmc"] = mcmc(cfg.map_config.mcmc)
    return {
        "name": cfg.name,
        "replications": cfg.replications,
        "seed": cfg.seed,
        "design": {"n": cfg.n, "entry": list(cfg.entry)},
        "hypothesis": cfg.hypothesis,
        "control_mean": cfg.control_mean,
        "effect": list(cfg.effect),
        "sd": cfg.sd,
        "trend": trend,
        "analysis": {
            "arms": list(cfg.arms),
            "alpha": cfg.alpha,
            "methods": list(cfg.methods),
            "timemachine": tm,
            "map": mp,
        },
    }


def load_config(path) -> ScenarioConfig:
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"config: cannot parse {path}: {e}") from None
    return config_from_dict(data)


def save_config(cfg: ScenarioConfig, path) -> None:
    path = Path(path)
    d = config_to_dict(cfg)
    if path.suffix == ".json":
        path.write_text(json.dumps(d, indent=2) + "\n")
    else:
        path.write_text(yaml.safe_dump(d, sort_keys=False))
