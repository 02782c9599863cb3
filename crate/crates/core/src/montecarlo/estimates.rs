use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum sample size for moment estimates.
pub const MIN_SAMPLES: usize = 30;
/// Minimum sample size per side for distribution comparisons.
pub const MIN_KS_SAMPLES: usize = 1000;

/// Sum by recursive halving; the association order depends only on the length.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub count: usize,
    pub mean: f64,
    pub mean_se: f64,
    pub variance: f64,
    pub variance_se: f64,
}

impl MomentEstimate {
    /// Root mean square and its delta-method standard error.
    pub fn rms_of_squares(&self) -> (f64, f64) {
        // Used when samples are squared errors: mean = E[e²].
        let rms = self.mean.max(0.0).sqrt();
        let se = if rms > 0.0 { self.mean_se / (2.0 * rms) } else { 0.0 };
        (rms, se)
    }
}

fn check(samples: &[f64], needed: usize) -> Result<()> {
    if samples.len() < needed {
        return Err(Error::TooFewSamples {
            needed,
            got: samples.len(),
        });
    }
    if let Some(bad) = samples.iter().find(|v| !v.is_finite()) {
        return Err(Error::Degenerate(format!("non-finite sample {bad}")));
    }
    Ok(())
}

/// Mean, unbiased variance and their standard errors.
///
/// The variance SE uses `Var(s²) ≈ (μ₄ − s⁴ (n−3)/(n−1)) / n`.
pub fn estimate_moments(samples: &[f64]) -> Result<MomentEstimate> {
    check(samples, MIN_SAMPLES)?;
    let n = samples.len() as f64;
    let m = mean(samples);
    let centered: Vec<f64> = samples.iter().map(|x| x - m).collect();
    let sq: Vec<f64> = centered.iter().map(|c| c * c).collect();
    let m2 = pairwise_sum(&sq);
    let quart: Vec<f64> = sq.iter().map(|c| c * c).collect();
    let m4 = pairwise_sum(&quart) / n;
    let variance = m2 / (n - 1.0);
    let var_of_var = ((m4 - variance * variance * (n - 3.0) / (n - 1.0)) / n).max(0.0);
    Ok(MomentEstimate {
        count: samples.len(),
        mean: m,
        mean_se: (variance / n).sqrt(),
        variance,
        variance_se: var_of_var.sqrt(),
    })
}

/// Sample covariance with the standard error of the mean of centered products.
pub fn estimate_covariance(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "covariance inputs",
            expected: a.len(),
            actual: b.len(),
        });
    }
    check(a, MIN_SAMPLES)?;
    check(b, MIN_SAMPLES)?;
    let (ma, mb) = (mean(a), mean(b));
    let prods: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).collect();
    let n = a.len() as f64;
    let cov = pairwise_sum(&prods) / (n - 1.0);
    let est = estimate_moments(&prods)?;
    Ok((cov, est.mean_se))
}

/// Two standard errors combined in quadrature.
pub fn combined_se(a: f64, b: f64) -> f64 {
    (a * a + b * b).sqrt()
}

/// `|estimate| ≤ 3·SE + bias_budget`.
pub fn null_limit_check(estimate: f64, se: f64, bias_budget: f64) -> bool {
    estimate.is_finite() && estimate.abs() <= 3.0 * se.max(0.0) + bias_budget.max(0.0)
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a − F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut xa: Vec<f64> = a.to_vec();
    let mut xb: Vec<f64> = b.to_vec();
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < xa.len() && j < xb.len() {
        let x = if xa[i] <= xb[j] { xa[i] } else { xb[j] };
        while i < xa.len() && xa[i] <= x {
            i += 1;
        }
        while j < xb.len() && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic 95% critical value of the two-sample KS statistic.
pub fn ks_critical_95(na: usize, nb: usize) -> f64 {
    let (na, nb) = (na as f64, nb as f64);
    1.358 * ((na + nb) / (na * nb)).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub statistic: f64,
    pub threshold: f64,
    pub critical_95: f64,
    pub size_a: usize,
    pub size_b: usize,
    pub mean_delta: f64,
    pub variance_delta: f64,
    pub pass: bool,
}

/// KS distance plus mean and variance deltas between two marginal samples.
pub fn compare_distributions(a: &[f64], b: &[f64], threshold: f64) -> Result<DistanceReport> {
    check(a, MIN_KS_SAMPLES)?;
    check(b, MIN_KS_SAMPLES)?;
    let (ea, eb) = (estimate_moments(a)?, estimate_moments(b)?);
    let statistic = ks_statistic(a, b);
    Ok(DistanceReport {
        statistic,
        threshold,
        critical_95: ks_critical_95(a.len(), b.len()),
        size_a: a.len(),
        size_b: b.len(),
        mean_delta: ea.mean - eb.mean,
        variance_delta: ea.variance - eb.variance,
        pass: statistic <= threshold,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub residuals: Vec<f64>,
}

/// Least-squares fit of `log(error)` against `log(n)`.
pub fn fit_rate(ns: &[usize], errors: &[f64]) -> Result<RateFit> {
    let lo = ns.iter().copied().min().unwrap_or(0);
    let hi = ns.iter().copied().max().unwrap_or(0);
    if ns.len() < 3 || lo == 0 || hi < 8 * lo || ns.len() != errors.len() {
        return Err(Error::TooFewLevels(ns.to_vec()));
    }
    if errors.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(Error::Degenerate(format!("rate fit needs positive errors, got {errors:?}")));
    }
    let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let k = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / k, ys.iter().sum::<f64>() / k);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| y - (intercept + slope * x)).collect();
    let ss_res: f64 = residuals.iter().map(|r| r * r).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn constant_samples_have_zero_spread() {
        let e = estimate_moments(&[2.5; 40]).unwrap();
        assert_eq!((e.mean, e.variance, e.variance_se, e.mean_se), (2.5, 0.0, 0.0, 0.0));
    }

    #[test]
    fn standard_normal_variance_within_three_se() {
        let e = estimate_moments(&normals(3, 100_000)).unwrap();
        assert!((e.variance - 1.0).abs() < 3.0 * e.variance_se);
        assert!((e.variance_se - (2.0f64 / 1e5).sqrt()).abs() < 5e-4);
        assert!(e.mean.abs() < 3.0 * e.mean_se);
    }

    #[test]
    fn moment_errors() {
        assert!(matches!(estimate_moments(&[1.0; 10]), Err(Error::TooFewSamples { .. })));
        let mut v = vec![1.0; 40];
        v[3] = f64::NAN;
        assert!(matches!(estimate_moments(&v), Err(Error::Degenerate(_))));
    }

    #[test]
    fn covariance_of_correlated_normals() {
        let a = normals(1, 50_000);
        let z = normals(2, 50_000);
        let b: Vec<f64> = a.iter().zip(&z).map(|(x, y)| 0.5 * x + y).collect();
        let (c, se) = estimate_covariance(&a, &b).unwrap();
        assert!((c - 0.5).abs() < 3.0 * se);
    }

    #[test]
    fn null_check_examples() {
        assert!(null_limit_check(0.001, 0.002, 0.0));
        assert!(!null_limit_check(0.5, 0.01, 0.0));
        assert!(null_limit_check(0.05, 0.01, 0.03));
        assert!(!null_limit_check(f64::NAN, 1.0, 1.0));
    }

    #[test]
    fn ks_extremes() {
        let a = normals(5, 2000);
        assert_eq!(ks_statistic(&a, &a), 0.0);
        let zeros = vec![0.0; 1000];
        let ones = vec![1.0; 1000];
        assert_eq!(ks_statistic(&zeros, &ones), 1.0);
        let r = compare_distributions(&zeros, &ones, 0.05).unwrap();
        assert!(!r.pass && r.mean_delta == -1.0);
        assert!(compare_distributions(&zeros[..10], &ones, 0.05).is_err());
    }

    #[test]
    fn ks_handles_ties_and_known_value() {
        // F_a jumps at 1,2,3; F_b at 2,3,4: sup gap is 1/3.
        let d = ks_statistic(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0]);
        assert!((d - 1.0 / 3.0).abs() < 1e-15);
        let d = ks_statistic(&[1.0, 1.0, 2.0, 2.0], &[1.0, 2.0]);
        assert_eq!(d, 0.0);
    }

    #[test]
    fn ks_self_test_same_law_passes_threshold() {
        // Same-law pairs of 10⁴ stay below 0.05 in at least 95 of 100 repetitions.
        let mut pass = 0;
        for rep in 0..100u64 {
            let a = normals(1000 + 2 * rep, 10_000);
            let b = normals(1001 + 2 * rep, 10_000);
            if ks_statistic(&a, &b) <= 0.05 {
                pass += 1;
            }
        }
        assert!(pass >= 95, "{pass}");
        assert!((ks_critical_95(10_000, 10_000) - 0.0192).abs() < 1e-3);
    }

    #[test]
    fn rate_fit_recovers_power_law() {
        let ns = [16usize, 32, 64, 128];
        let errs: Vec<f64> = ns.iter().map(|&n| 3.0 * (n as f64).powf(-1.5)).collect();
        let fit = fit_rate(&ns, &errs).unwrap();
        assert!((fit.slope + 1.5).abs() < 1e-12);
        assert!((fit.intercept - 3f64.ln()).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!(fit.residuals.iter().all(|r| r.abs() < 1e-12));
    }

    #[test]
    fn rate_fit_needs_span() {
        assert!(fit_rate(&[16, 32], &[1.0, 0.5]).is_err());
        assert!(fit_rate(&[16, 32, 64], &[1.0, 0.5, 0.25]).is_err());
        assert!(fit_rate(&[16, 64, 128], &[1.0, 0.0, 0.25]).is_err());
    }

    proptest! {
        #[test]
        fn pairwise_sum_is_close_to_naive(xs in proptest::collection::vec(-1e3f64..1e3, 0..500)) {
            let naive: f64 = xs.iter().sum();
            prop_assert!((pairwise_sum(&xs) - naive).abs() <= 1e-9 * (1.0 + xs.iter().map(|x| x.abs()).sum::<f64>()));
        }

        #[test]
        fn ks_is_symmetric_and_bounded(a in proptest::collection::vec(-5f64..5.0, 1..60), b in proptest::collection::vec(-5f64..5.0, 1..60)) {
            let d = ks_statistic(&a, &b);
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert_eq!(d, ks_statistic(&b, &a));
        }
    }
}
