"""Platform-trial simulation and analysis with non-concurrent controls."""
from .datagen import ScenarioTruth, TimeTrendSpec, TrialDataset, generate_trial, sample_arm_lambdas, trend_value
from .design import ArmSpec, TrialSchedule, build_schedule, derive_buckets, make_arms, split_controls
from .freq import FreqResult, pooled_ttest, regression_model, separate_ttest
from .harness import prediction_band, run_scenario
from .mapprior import MapConfig, NormalMixture, build_map_prior, map_analysis, posterior_update_mixture, robustify
from .mcmc import McmcSettings, PosteriorSummary
from .timemachine import TMPrior, calibrate_drift_prior, fit_time_machine, tm_decision

__version__ = "0.1.0"
