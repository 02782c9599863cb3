use std::sync::Arc;

use ndarray::s;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::estimates::{
    combined_se, compare_distributions, estimate_moments, fit_rate, DistanceReport, MomentEstimate, RateFit,
};
use crate::error::{Error, Result};
use crate::limits::simulate_limit;
use crate::model::SdeProblem;
use crate::paths::{DriverTable, Grid, PathBundle, SeedKey};
use crate::schemes::{reference, run_scheme, SchemeId};
use crate::stats::empirical_qv;

/// Default KS threshold for the error-law comparison at 10⁴ vs 10⁴.
pub const DEFAULT_KS_THRESHOLD: f64 = 0.05;
/// Relative band for the error-law variance against a known target.
pub const VARIANCE_REL_TOL: f64 = 0.10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub model: String,
    pub scheme: SchemeId,
    pub n_list: Vec<usize>,
    pub paths: usize,
    pub fine_factor: usize,
    pub fine_count: usize,
    pub seed: u64,
    pub deterministic: bool,
}

/// Statistics of one level `n` over the coupled paths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub n: usize,
    /// `E[|Uⁿ₁|²]^{1/2}` and its delta-method SE.
    pub rms_error: f64,
    pub rms_se: f64,
    /// Signed error of the first component at `t = 1`.
    pub mean_error: f64,
    pub mean_se: f64,
    pub variance: f64,
    pub variance_se: f64,
    /// RMS of the max over coarse points of `|Xⁿ − X|`.
    pub sup_rms_error: f64,
    pub paths_used: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorLawStats {
    pub n: usize,
    pub draws: usize,
    /// Moments of `n·Uⁿ₁`.
    pub scheme: MomentEstimate,
    /// Moments of the simulated limit `U₁`.
    pub limit: MomentEstimate,
    pub variance_target: Option<f64>,
    pub variance_target_pass: Option<bool>,
    /// `|Var_a − Var_b| ≤ 3·SE` with the two variance SEs combined.
    pub variance_two_sample_pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ConfigEcho,
    pub levels: Vec<LevelStats>,
    pub rate_fit: Option<RateFit>,
    pub slope_band: Option<(f64, f64)>,
    pub error_law: Option<ErrorLawStats>,
    pub distribution_distance: Option<DistanceReport>,
    pub excluded_paths: usize,
    pub pass: bool,
}

/// Slope band expected for a scheme. Deterministic drivers double the order.
pub fn expected_slope_band(scheme: SchemeId, deterministic: bool) -> Option<(f64, f64)> {
    match (scheme, deterministic) {
        (SchemeId::Euler, false) => Some((-0.65, -0.35)),
        (SchemeId::Euler, true) => Some((-1.15, -0.85)),
        (SchemeId::Milstein | SchemeId::MilsteinIto54 | SchemeId::MilsteinReduced, false) => Some((-1.15, -0.85)),
        (SchemeId::MilsteinReduced, true) => Some((-1.15, -0.85)),
        (SchemeId::Milstein | SchemeId::MilsteinIto54, true) => Some((-2.05, -1.95)),
        (SchemeId::Reference, _) => None,
    }
}

/// Per-path errors at every level, or `None` if any level diverged.
struct PathErrors {
    sq: Vec<f64>,
    signed: Vec<f64>,
    sup: Vec<f64>,
}

fn path_errors(
    problem: &SdeProblem<f64>,
    table: &Arc<DriverTable<f64>>,
    scheme: SchemeId,
    n_list: &[usize],
    key: SeedKey,
) -> Result<Option<PathErrors>> {
    let bundle = PathBundle::generate(table, key)?;
    let xref = reference(problem, &bundle)?;
    if xref.is_diverged() {
        return Ok(None);
    }
    let f = bundle.grid().fine_count();
    let mut out = PathErrors {
        sq: Vec::with_capacity(n_list.len()),
        signed: Vec::with_capacity(n_list.len()),
        sup: Vec::with_capacity(n_list.len()),
    };
    for &n in n_list {
        let run = run_scheme(scheme, problem, &bundle, n)?;
        if run.is_diverged() {
            return Ok(None);
        }
        let stride = f / n;
        let end = &run.end() - &xref.values.row(f);
        out.sq.push(end.iter().map(|e| e * e).sum());
        out.signed.push(end[0]);
        let sup = (0..=n)
            .map(|c| {
                let diff = &run.values.row(c) - &xref.values.row(c * stride);
                diff.iter().fold(0.0f64, |m, v| m.max(v.abs()))
            })
            .fold(0.0f64, f64::max);
        out.sup.push(sup);
    }
    Ok(Some(out))
}

fn moments_or_exact(samples: &[f64]) -> Result<MomentEstimate> {
    if samples.len() == 1 {
        return Ok(MomentEstimate {
            count: 1,
            mean: samples[0],
            mean_se: 0.0,
            variance: 0.0,
            variance_se: 0.0,
        });
    }
    estimate_moments(samples)
}

fn build_table(problem: &SdeProblem<f64>, grid: &Grid) -> Result<Arc<DriverTable<f64>>> {
    Ok(Arc::new(problem.driver.table(grid)?))
}

/// Strong errors at `t = 1` on shared path bundles for every `n`, and a log-log rate fit.
///
/// All levels are evaluated on one fine grid of `max(n)·fine_factor` steps.
/// A path that diverges at any level is dropped from every level.
/// Drivers without a martingale part are simulated once.
pub fn run_rate_experiment(
    problem: &SdeProblem<f64>,
    scheme: SchemeId,
    n_list: &[usize],
    paths: usize,
    fine_factor: usize,
    seed: u64,
) -> Result<ExperimentReport> {
    let mut ns = n_list.to_vec();
    ns.sort_unstable();
    ns.dedup();
    let (lo, hi) = (ns.first().copied().unwrap_or(0), ns.last().copied().unwrap_or(0));
    if ns.len() < 3 || lo == 0 || hi < 8 * lo {
        return Err(Error::TooFewLevels(n_list.to_vec()));
    }
    let grid = Grid::new(hi, fine_factor)?;
    for &n in &ns {
        grid.stride_for(n)?;
    }
    let table = build_table(problem, &grid)?;
    let deterministic = table.is_finite_variation();
    let effective = if deterministic { paths.min(1) } else { paths };
    if effective == 0 {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let results: Vec<Option<PathErrors>> = (0..effective as u64)
        .into_par_iter()
        .map(|i| path_errors(problem, &table, scheme, &ns, SeedKey::path(seed, i)))
        .collect::<Result<_>>()?;
    let kept: Vec<&PathErrors> = results.iter().flatten().collect();
    let excluded = effective - kept.len();
    if kept.is_empty() {
        return Err(Error::AllDiverged(effective));
    }
    let mut levels = Vec::with_capacity(ns.len());
    for (l, &n) in ns.iter().enumerate() {
        let sq: Vec<f64> = kept.iter().map(|p| p.sq[l]).collect();
        let signed: Vec<f64> = kept.iter().map(|p| p.signed[l]).collect();
        let sup_sq: Vec<f64> = kept.iter().map(|p| p.sup[l] * p.sup[l]).collect();
        let (rms_error, rms_se) = moments_or_exact(&sq)?.rms_of_squares();
        let m = moments_or_exact(&signed)?;
        let (sup_rms_error, _) = moments_or_exact(&sup_sq)?.rms_of_squares();
        levels.push(LevelStats {
            n,
            rms_error,
            rms_se,
            mean_error: m.mean,
            mean_se: m.mean_se,
            variance: m.variance,
            variance_se: m.variance_se,
            sup_rms_error,
            paths_used: kept.len(),
        });
    }
    let errors: Vec<f64> = levels.iter().map(|l| l.rms_error).collect();
    let fit = fit_rate(&ns, &errors)?;
    let band = expected_slope_band(scheme, deterministic);
    let pass = band.map_or(true, |(a, b)| fit.slope >= a && fit.slope <= b);
    Ok(ExperimentReport {
        config: ConfigEcho {
            model: problem.name.clone(),
            scheme,
            n_list: ns,
            paths,
            fine_factor,
            fine_count: grid.fine_count(),
            seed,
            deterministic,
        },
        levels,
        rate_fit: Some(fit),
        slope_band: band,
        error_law: None,
        distribution_distance: None,
        excluded_paths: excluded,
        pass,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorLawConfig {
    pub scheme: SchemeId,
    pub n: usize,
    pub paths: usize,
    pub draws: usize,
    pub fine_factor: usize,
    pub seed: u64,
    pub ks_threshold: f64,
    pub variance_target: Option<f64>,
}

/// Samples of `n·Uⁿ₁` (first component); `None` marks a diverged path.
pub fn scaled_error_samples(
    problem: &SdeProblem<f64>,
    table: &Arc<DriverTable<f64>>,
    scheme: SchemeId,
    n: usize,
    paths: usize,
    seed: u64,
) -> Result<Vec<Option<f64>>> {
    (0..paths as u64)
        .into_par_iter()
        .map(|i| {
            path_errors(problem, table, scheme, &[n], SeedKey::path(seed, i))
                .map(|p| p.map(|p| n as f64 * p.signed[0]))
        })
        .collect()
}

/// Per-draw summary of one limit realization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitDraw {
    pub draw: u64,
    pub u_end: Vec<f64>,
    /// Empirical brackets of `M¹¹¹`, `N¹¹¹` and `W¹` at `t = 1`:
    /// `[M,M]`, `[N,N]`, `[N,M]`, `[N,W]`, `[M,W]`.
    pub brackets: [f64; 5],
}

/// Independent draws of the limit keyed by `(seed, draw)`.
pub fn limit_draws(problem: &SdeProblem<f64>, fine_count: usize, draws: usize, seed: u64) -> Result<Vec<LimitDraw>> {
    let grid = Grid::new(1, fine_count)?;
    let table = build_table(problem, &grid)?;
    limit_draws_on(problem, &table, draws, seed)
}

fn limit_draws_on(
    problem: &SdeProblem<f64>,
    table: &Arc<DriverTable<f64>>,
    draws: usize,
    seed: u64,
) -> Result<Vec<LimitDraw>> {
    (0..draws as u64)
        .into_par_iter()
        .map(|i| {
            let r = simulate_limit(problem, table, SeedKey::limit(seed, i))?;
            let f = table.grid().fine_count();
            let m = r.m_series.slice(s![.., 0, 0, 0]);
            let n = r.n_series.slice(s![.., 0, 0, 0]);
            let w_all = r.bundle.w();
            let w = w_all.column(0);
            let q = |a, b| empirical_qv(a, b).map(|v| v[f]);
            Ok(LimitDraw {
                draw: i,
                u_end: r.u_end().to_vec(),
                brackets: [q(m, m)?, q(n, n)?, q(n, m)?, q(n, w)?, q(m, w)?],
            })
        })
        .collect()
}

/// Report plus the two samples it was computed from.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorLawOutput {
    pub report: ExperimentReport,
    pub scheme_samples: Vec<f64>,
    pub limit_samples: Vec<f64>,
}

/// Compares the law of `n·Uⁿ₁` with draws of the limit `U₁`.
///
/// The limit draws use the same fine grid as the scheme paths but an
/// independent seed domain.
pub fn run_error_law(problem: &SdeProblem<f64>, cfg: &ErrorLawConfig) -> Result<ErrorLawOutput> {
    let grid = Grid::new(cfg.n, cfg.fine_factor)?;
    let table = build_table(problem, &grid)?;
    let raw = scaled_error_samples(problem, &table, cfg.scheme, cfg.n, cfg.paths, cfg.seed)?;
    let samples: Vec<f64> = raw.iter().flatten().copied().collect();
    let excluded = raw.len() - samples.len();
    if samples.is_empty() {
        return Err(Error::AllDiverged(raw.len()));
    }
    let limit: Vec<f64> = limit_draws_on(problem, &table, cfg.draws, cfg.seed)?
        .into_iter()
        .map(|d| d.u_end[0])
        .collect();
    let a = estimate_moments(&samples)?;
    let b = estimate_moments(&limit)?;
    let distance = compare_distributions(&samples, &limit, cfg.ks_threshold)?;
    let two_sample = (a.variance - b.variance).abs() <= 3.0 * combined_se(a.variance_se, b.variance_se);
    let target_pass = cfg
        .variance_target
        .map(|t| (a.variance - t).abs() <= VARIANCE_REL_TOL * t.abs());
    let pass = two_sample && distance.pass && target_pass.unwrap_or(true);
    let report = ExperimentReport {
        config: ConfigEcho {
            model: problem.name.clone(),
            scheme: cfg.scheme,
            n_list: vec![cfg.n],
            paths: cfg.paths,
            fine_factor: cfg.fine_factor,
            fine_count: grid.fine_count(),
            seed: cfg.seed,
            deterministic: table.is_finite_variation(),
        },
        levels: Vec::new(),
        rate_fit: None,
        slope_band: None,
        error_law: Some(ErrorLawStats {
            n: cfg.n,
            draws: cfg.draws,
            scheme: a,
            limit: b,
            variance_target: cfg.variance_target,
            variance_target_pass: target_pass,
            variance_two_sample_pass: two_sample,
        }),
        distribution_distance: Some(distance),
        excluded_paths: excluded,
        pass,
    };
    Ok(ErrorLawOutput {
        report,
        scheme_samples: samples,
        limit_samples: limit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin_model;

    #[test]
    fn det_exp_rate_is_two() {
        let p = builtin_model::<f64>("det-exp").unwrap();
        let r = run_rate_experiment(&p, SchemeId::Milstein, &[16, 32, 64, 128], 5, 8, 1).unwrap();
        assert!(r.config.deterministic);
        assert_eq!(r.levels[0].paths_used, 1);
        let slope = r.rate_fit.as_ref().unwrap().slope;
        assert!((-2.05..=-1.95).contains(&slope), "{slope}");
        assert!(r.pass);
    }

    #[test]
    fn too_few_levels_rejected() {
        let p = builtin_model::<f64>("gbm").unwrap();
        assert!(matches!(
            run_rate_experiment(&p, SchemeId::Euler, &[16, 32], 40, 4, 1),
            Err(Error::TooFewLevels(_))
        ));
        assert!(matches!(
            run_rate_experiment(&p, SchemeId::Euler, &[16, 32, 64], 40, 4, 1),
            Err(Error::TooFewLevels(_))
        ));
    }

    #[test]
    fn non_dividing_level_rejected() {
        let p = builtin_model::<f64>("gbm").unwrap();
        let e = run_rate_experiment(&p, SchemeId::Euler, &[12, 32, 128], 40, 4, 1).unwrap_err();
        assert!(matches!(e, Error::NotDivisible { .. }), "{e:?}");
    }

    #[test]
    fn report_is_reproducible() {
        let p = builtin_model::<f64>("gbm").unwrap();
        let a = run_rate_experiment(&p, SchemeId::Milstein, &[4, 8, 32], 64, 4, 9).unwrap();
        let b = run_rate_experiment(&p, SchemeId::Milstein, &[4, 8, 32], 64, 4, 9).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.excluded_paths, 0);
        assert!(a.levels.windows(2).all(|w| w[1].rms_error < w[0].rms_error));
    }

    #[test]
    fn limit_draws_have_expected_shape() {
        let p = builtin_model::<f64>("gbm").unwrap();
        let d = limit_draws(&p, 256, 4, 3).unwrap();
        assert_eq!(d.len(), 4);
        assert_eq!(d[2].draw, 2);
        assert_eq!(d[0].u_end.len(), 1);
        assert!(d.iter().all(|x| x.brackets.iter().all(|v| v.is_finite())));
    }
}
