use std::f64::consts::E;
use std::sync::Arc;

use milstein_core::limits::{ito_limit_sde, simulate_limit, simulate_mn, AuxiliaryNoise};
use milstein_core::model::builtin_model;
use milstein_core::montecarlo::{combined_se, estimate_covariance, estimate_moments, limit_draws};
use milstein_core::paths::{DriverSpec, Grid, PathBundle, SeedKey};
use milstein_core::schemes::reference;
use rayon::prelude::*;

const DRAWS: u64 = 10_000;

#[test]
fn unit_volatility_limits_have_the_bracket_covariances() {
    let grid = Grid::new(1, 256).unwrap();
    let table = Arc::new(DriverSpec::<f64>::brownian(1).table(&grid).unwrap());
    let draws: Vec<(f64, f64, f64)> = (0..DRAWS)
        .into_par_iter()
        .map(|i| {
            let key = SeedKey::limit(31, i);
            let b = PathBundle::generate(&table, key).unwrap();
            let aux = AuxiliaryNoise::sample(&grid, 1, key);
            let (m, n) = simulate_mn(&table, b.dw(), &aux).unwrap();
            (m[[256, 0, 0, 0]], n[[256, 0, 0, 0]], b.w()[[256, 0]])
        })
        .collect();
    let m: Vec<f64> = draws.iter().map(|d| d.0).collect();
    let n: Vec<f64> = draws.iter().map(|d| d.1).collect();
    let w: Vec<f64> = draws.iter().map(|d| d.2).collect();
    let vm = estimate_moments(&m).unwrap();
    let vn = estimate_moments(&n).unwrap();
    assert!((vm.variance - 1.0 / 6.0).abs() <= 3.0 * vm.variance_se, "{vm:?}");
    assert!((vn.variance - 1.0).abs() <= 3.0 * vn.variance_se, "{vn:?}");
    let (c_nm, se_nm) = estimate_covariance(&n, &m).unwrap();
    assert!((c_nm - 1.0 / 3.0).abs() <= 3.0 * se_nm, "{c_nm} ± {se_nm}");
    let (c_nw, se_nw) = estimate_covariance(&n, &w).unwrap();
    assert!((c_nw - 0.5).abs() <= 3.0 * se_nw, "{c_nw} ± {se_nw}");
}

#[test]
fn simulated_limits_reproduce_bracket_fingerprints() {
    let p = builtin_model::<f64>("gbm").unwrap();
    let draws = limit_draws(&p, 512, DRAWS as usize, 32).unwrap();
    let targets = [1.0 / 6.0, 1.0, 1.0 / 3.0, 0.5, 0.0];
    for (k, t) in targets.iter().enumerate() {
        let xs: Vec<f64> = draws.iter().map(|d| d.brackets[k]).collect();
        let m = estimate_moments(&xs).unwrap();
        // Brackets of simulated increments are unbiased for their targets.
        assert!((m.mean - t).abs() <= 3.0 * m.mean_se + 1e-12, "bracket {k}: {m:?}");
    }
}

#[test]
fn gbm_limit_second_moment_is_e_over_six() {
    let p = builtin_model::<f64>("gbm").unwrap();
    let u: Vec<f64> = limit_draws(&p, 1024, DRAWS as usize, 1)
        .unwrap()
        .into_iter()
        .map(|d| d.u_end[0])
        .collect();
    let second = u.iter().map(|v| v * v).sum::<f64>() / u.len() as f64;
    assert!((second - E / 6.0).abs() <= 0.1 * E / 6.0, "{second}");
}

#[test]
fn explicit_scalar_limit_agrees_in_variance_with_the_general_one() {
    let p = builtin_model::<f64>("gbm-ito").unwrap();
    let grid = Grid::new(1, 512).unwrap();
    let table = Arc::new(p.driver.table(&grid).unwrap());
    let ito = p.ito.clone().unwrap();
    let explicit: Vec<f64> = (0..DRAWS)
        .into_par_iter()
        .map(|i| {
            let key = SeedKey::limit(33, i);
            let b = PathBundle::generate(&table, key).unwrap();
            let x = reference(&p, &b).unwrap();
            let aux = AuxiliaryNoise::<f64>::sample(&grid, 1, key);
            let u = ito_limit_sde(&ito, x.values.column(0), b.dw().column(0), aux.db.column(0), aux.dwbar.column(0))
                .unwrap();
            u[512]
        })
        .collect();
    let general: Vec<f64> = (0..DRAWS)
        .into_par_iter()
        .map(|i| simulate_limit(&p, &table, SeedKey::limit(34, i)).unwrap().u_end()[0])
        .collect();
    let (a, b) = (estimate_moments(&explicit).unwrap(), estimate_moments(&general).unwrap());
    let se = combined_se(a.variance_se, b.variance_se);
    assert!((a.variance - b.variance).abs() <= 3.0 * se, "{a:?} vs {b:?}");
}
