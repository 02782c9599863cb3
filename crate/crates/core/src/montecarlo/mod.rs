//! Batch experiments: moment estimates, rate fits and distribution distances.

mod estimates;

pub use estimates::{
    combined_se, compare_distributions, estimate_covariance, estimate_moments, fit_rate, ks_critical_95,
    ks_statistic, mean, null_limit_check, pairwise_sum, DistanceReport, MomentEstimate, RateFit, MIN_KS_SAMPLES,
    MIN_SAMPLES,
};

mod experiment;

pub use experiment::{
    expected_slope_band, limit_draws, run_error_law, run_rate_experiment, scaled_error_samples, ConfigEcho,
    ErrorLawConfig, ErrorLawOutput, ErrorLawStats, ExperimentReport, LevelStats, LimitDraw, DEFAULT_KS_THRESHOLD, VARIANCE_REL_TOL,
};
