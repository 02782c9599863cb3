use std::sync::Arc;

use milstein_core::model::{builtin_model, known_error_variance, SdeProblem};
use milstein_core::montecarlo::{
    estimate_moments, limit_draws, run_error_law, run_rate_experiment, ErrorLawConfig, MomentEstimate,
};
use milstein_core::paths::{Grid, PathBundle, SeedKey};
use milstein_core::schemes::{reference, run_scheme};
use milstein_core::stats::lemmas::{run_cases, LemmaConfig};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, Verb};
use crate::error::CliError;
use crate::output::{fmt_num, render_table, DataTable};

/// Result of one verb before anything is written.
pub struct Outcome {
    pub pass: bool,
    pub result: Value,
    pub data: DataTable,
    pub table: String,
}

pub fn execute(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    match cfg.verb {
        Verb::Simulate => simulate(cfg),
        Verb::Rate => rate(cfg),
        Verb::ErrorLaw => error_law(cfg),
        Verb::LemmaCheck => lemma_check(cfg),
        Verb::LimitSim => limit_sim(cfg),
    }
}

fn problem(cfg: &ExperimentConfig) -> Result<SdeProblem<f64>, CliError> {
    Ok(builtin_model(cfg.model.as_deref().unwrap_or_default())?)
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("result serializes")
}

fn simulate(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let p = problem(cfg)?;
    let n = cfg.n_list[0];
    let grid = Grid::new(n, cfg.fine_count / n)?;
    let table = Arc::new(p.driver.table(&grid)?);
    let q = p.dim_q();
    let runs: Vec<(Vec<Vec<f64>>, bool, f64)> = (0..cfg.paths as u64)
        .into_par_iter()
        .map(|i| {
            let bundle = PathBundle::generate(&table, SeedKey::path(cfg.seed, i))?;
            let out = run_scheme(cfg.scheme, &p, &bundle, n)?;
            let xref = reference(&p, &bundle)?;
            let err = out.end()[0] - xref.values[[grid.fine_count(), 0]];
            let rows = out.values.outer_iter().map(|r| r.to_vec()).collect();
            Ok((rows, out.is_diverged(), err))
        })
        .collect::<Result<_, milstein_core::Error>>()?;
    let mut cols = vec!["path_index".to_string(), "t".to_string()];
    cols.extend((0..q).map(|i| format!("x_{i}")));
    let mut data = DataTable::new("milstein-simulate/1", &cols.iter().map(String::as_str).collect::<Vec<_>>());
    for (i, (rows, _, _)) in runs.iter().enumerate() {
        for (c, r) in rows.iter().enumerate() {
            let mut row = vec![json!(i), json!(c as f64 / n as f64)];
            row.extend(r.iter().map(|v| if v.is_finite() { json!(v) } else { Value::Null }));
            data.push(row);
        }
    }
    let ok: Vec<&(Vec<Vec<f64>>, bool, f64)> = runs.iter().filter(|r| !r.1).collect();
    let x1: Vec<f64> = ok.iter().map(|r| r.0[n][0]).collect();
    let err: Vec<f64> = ok.iter().map(|r| r.2).collect();
    let summary = |xs: &[f64]| -> Option<MomentEstimate> { estimate_moments(xs).ok() };
    let result = json!({
        "n": n,
        "paths": cfg.paths,
        "diverged": runs.len() - ok.len(),
        "x1": summary(&x1),
        "error_at_1": summary(&err),
    });
    let mut rows = vec![vec!["paths".into(), cfg.paths.to_string()], vec!["diverged".into(), (runs.len() - ok.len()).to_string()]];
    if let Some(m) = summary(&x1) {
        rows.push(vec!["mean X_1".into(), fmt_num(m.mean)]);
        rows.push(vec!["se".into(), fmt_num(m.mean_se)]);
    }
    Ok(Outcome {
        pass: true,
        result,
        data,
        table: render_table(&["quantity", "value"], &rows),
    })
}

fn rate(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let p = problem(cfg)?;
    let r = run_rate_experiment(&p, cfg.scheme, &cfg.n_list, cfg.paths, cfg.fine_factor, cfg.seed)?;
    let mut data = DataTable::new(
        "milstein-rate/1",
        &["n", "rms_error", "rms_se", "mean_error", "mean_se", "variance", "variance_se", "sup_rms_error", "paths_used"],
    );
    let mut rows = Vec::new();
    for l in &r.levels {
        data.push(vec![
            json!(l.n),
            json!(l.rms_error),
            json!(l.rms_se),
            json!(l.mean_error),
            json!(l.mean_se),
            json!(l.variance),
            json!(l.variance_se),
            json!(l.sup_rms_error),
            json!(l.paths_used),
        ]);
        rows.push(vec![
            l.n.to_string(),
            fmt_num(l.rms_error),
            fmt_num(l.rms_se),
            fmt_num(l.sup_rms_error),
            l.paths_used.to_string(),
        ]);
    }
    let mut table = render_table(&["n", "rms_error", "se", "sup_rms", "paths"], &rows);
    if let Some(f) = &r.rate_fit {
        table.push_str(&format!("slope {:.4}  r² {:.4}", f.slope, f.r_squared));
        if let Some((lo, hi)) = r.slope_band {
            table.push_str(&format!("  band [{lo}, {hi}]"));
        }
        table.push_str(if r.pass { "  PASS\n" } else { "  FAIL\n" });
    }
    Ok(Outcome {
        pass: r.pass,
        result: to_value(&r),
        data,
        table,
    })
}

fn error_law(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let p = problem(cfg)?;
    let out = run_error_law(
        &p,
        &ErrorLawConfig {
            scheme: cfg.scheme,
            n: cfg.n_list[0],
            paths: cfg.paths,
            draws: cfg.draws,
            fine_factor: cfg.fine_factor,
            seed: cfg.seed,
            ks_threshold: cfg.ks_threshold,
            variance_target: known_error_variance(&p.name),
        },
    )?;
    let mut data = DataTable::new("milstein-error-law/1", &["index", "scaled_error", "limit_draw"]);
    let len = out.scheme_samples.len().max(out.limit_samples.len());
    for i in 0..len {
        let get = |v: &Vec<f64>| v.get(i).map_or(Value::Null, |x| json!(x));
        data.push(vec![json!(i), get(&out.scheme_samples), get(&out.limit_samples)]);
    }
    let r = &out.report;
    let law = r.error_law.as_ref().expect("error-law report");
    let dist = r.distribution_distance.as_ref().expect("distance");
    let mut rows = vec![
        vec!["var n·U (scheme)".into(), fmt_num(law.scheme.variance), fmt_num(law.scheme.variance_se)],
        vec!["var U (limit)".into(), fmt_num(law.limit.variance), fmt_num(law.limit.variance_se)],
        vec!["mean n·U (scheme)".into(), fmt_num(law.scheme.mean), fmt_num(law.scheme.mean_se)],
        vec!["mean U (limit)".into(), fmt_num(law.limit.mean), fmt_num(law.limit.mean_se)],
        vec!["KS".into(), fmt_num(dist.statistic), format!("≤ {}", dist.threshold)],
    ];
    if let Some(t) = law.variance_target {
        rows.push(vec!["variance target".into(), fmt_num(t), "±10%".into()]);
    }
    let mut table = render_table(&["quantity", "value", "se / band"], &rows);
    table.push_str(if r.pass { "PASS\n" } else { "FAIL\n" });
    Ok(Outcome {
        pass: r.pass,
        result: to_value(r),
        data,
        table,
    })
}

fn lemma_check(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let n = cfg.n_list[0];
    let rows = run_cases(
        &cfg.lemma_cases(),
        &LemmaConfig {
            n,
            paths: cfg.paths,
            fine_factor: cfg.fine_factor,
            seed: cfg.seed,
        },
    )?;
    let mut data = DataTable::new(
        "milstein-lemma/1",
        &["case", "statistic", "n", "estimate", "target", "se", "bias_budget", "criterion", "pass"],
    );
    let mut text = Vec::new();
    for r in &rows {
        data.push(vec![
            json!(r.case),
            json!(r.statistic),
            json!(r.n),
            json!(r.estimate),
            json!(r.target),
            json!(r.se),
            json!(r.bias_budget),
            to_value(&r.criterion),
            json!(r.pass),
        ]);
        text.push(vec![
            r.case.clone(),
            r.statistic.clone(),
            fmt_num(r.estimate),
            fmt_num(r.target),
            fmt_num(r.se),
            if r.pass { "pass".into() } else { "FAIL".into() },
        ]);
    }
    let pass = rows.iter().all(|r| r.pass);
    Ok(Outcome {
        pass,
        result: json!({ "n": n, "rows": rows }),
        data,
        table: render_table(&["case", "statistic", "estimate", "target", "se", "result"], &text),
    })
}

fn limit_sim(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let p = problem(cfg)?;
    let draws = limit_draws(&p, cfg.fine_count, cfg.draws, cfg.seed)?;
    let q = p.dim_q();
    let names = ["mm", "nn", "nm", "nw", "mw"];
    let mut cols = vec!["draw".to_string()];
    cols.extend((0..q).map(|i| format!("u1_{i}")));
    cols.extend(names.iter().map(|s| s.to_string()));
    let mut data = DataTable::new("milstein-limit/1", &cols.iter().map(String::as_str).collect::<Vec<_>>());
    for d in &draws {
        let mut row = vec![json!(d.draw)];
        row.extend(d.u_end.iter().map(|v| json!(v)));
        row.extend(d.brackets.iter().map(|v| json!(v)));
        data.push(row);
    }
    let mut summary = serde_json::Map::new();
    let mut rows = Vec::new();
    let mut add = |name: String, xs: Vec<f64>| {
        if let Ok(m) = estimate_moments(&xs) {
            rows.push(vec![name.clone(), fmt_num(m.mean), fmt_num(m.mean_se), fmt_num(m.variance)]);
            summary.insert(name, to_value(&m));
        }
    };
    for i in 0..q {
        add(format!("u1_{i}"), draws.iter().map(|d| d.u_end[i]).collect());
    }
    for (k, name) in names.iter().enumerate() {
        add(format!("[{}]", name), draws.iter().map(|d| d.brackets[k]).collect());
    }
    Ok(Outcome {
        pass: true,
        result: json!({ "draws": draws.len(), "fine_count": cfg.fine_count, "moments": summary }),
        data,
        table: render_table(&["quantity", "mean", "se", "variance"], &rows),
    })
}
