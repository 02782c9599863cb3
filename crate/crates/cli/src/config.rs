use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use milstein_core::model::builtin_models;
use milstein_core::schemes::SchemeId;
use milstein_core::stats::lemmas::LemmaCase;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const DEFAULT_FINE_FACTOR: usize = 64;
pub const DEFAULT_LIMIT_FINE_COUNT: usize = 4096;
pub const DEFAULT_KS_THRESHOLD: f64 = milstein_core::montecarlo::DEFAULT_KS_THRESHOLD;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Verb {
    Simulate,
    Rate,
    ErrorLaw,
    LemmaCheck,
    LimitSim,
}

impl Verb {
    pub fn as_str(self) -> &'static str {
        match self {
            Verb::Simulate => "simulate",
            Verb::Rate => "rate",
            Verb::ErrorLaw => "error-law",
            Verb::LemmaCheck => "lemma-check",
            Verb::LimitSim => "limit-sim",
        }
    }

    fn needs_model(self) -> bool {
        !matches!(self, Verb::LemmaCheck)
    }
}

impl fmt::Display for Verb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(format!("unknown format `{s}` (expected csv or json)")),
        }
    }
}

/// Flat key-value config as read from a file or assembled from flags.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub verb: Option<Verb>,
    pub model: Option<String>,
    pub scheme: Option<String>,
    pub n_list: Option<Vec<usize>>,
    pub paths: Option<usize>,
    pub fine_factor: Option<usize>,
    pub fine_count: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Option<String>,
    pub case: Option<String>,
    pub draws: Option<usize>,
    pub ks_threshold: Option<f64>,
    pub threads: Option<usize>,
}

impl RawConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(vec![format!("cannot read config {}: {e}", path.display())]))?;
        toml::from_str(&text).map_err(|e| CliError::Config(vec![format!("config {}: {e}", path.display())]))
    }

    /// Values set in `over` replace those in `self`.
    pub fn overlay(self, over: RawConfig) -> RawConfig {
        RawConfig {
            verb: over.verb.or(self.verb),
            model: over.model.or(self.model),
            scheme: over.scheme.or(self.scheme),
            n_list: over.n_list.or(self.n_list),
            paths: over.paths.or(self.paths),
            fine_factor: over.fine_factor.or(self.fine_factor),
            fine_count: over.fine_count.or(self.fine_count),
            seed: over.seed.or(self.seed),
            out: over.out.or(self.out),
            format: over.format.or(self.format),
            case: over.case.or(self.case),
            draws: over.draws.or(self.draws),
            ks_threshold: over.ks_threshold.or(self.ks_threshold),
            threads: over.threads.or(self.threads),
        }
    }
}

/// Validated experiment configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub verb: Verb,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub scheme: SchemeId,
    pub n_list: Vec<usize>,
    pub paths: usize,
    pub fine_factor: usize,
    pub fine_count: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub format: Format,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub case: Option<String>,
    pub draws: usize,
    pub ks_threshold: f64,
    /// Worker count; affects speed only and is excluded from the hash.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the result-determining fields (everything but `out` and `threads`).
    pub fn hash(&self) -> String {
        let mut view = self.clone();
        view.out = None;
        view.threads = None;
        let bytes = serde_json::to_vec(&view).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn hashed_view(&self) -> ExperimentConfig {
        let mut view = self.clone();
        view.out = None;
        view.threads = None;
        view
    }

    pub fn lemma_cases(&self) -> Vec<LemmaCase> {
        self.case
            .as_deref()
            .and_then(|c| LemmaCase::parse_selection(c).ok())
            .unwrap_or_default()
    }
}

/// Resolves defaults and checks every field, reporting all problems at once.
pub fn validate(raw: RawConfig) -> Result<ExperimentConfig, CliError> {
    let mut errs = Vec::new();
    let verb = raw.verb.unwrap_or_else(|| {
        errs.push("verb is required".into());
        Verb::Simulate
    });
    let seed = raw.seed.unwrap_or_else(|| {
        errs.push("seed is required (no default: runs must be reproducible)".into());
        0
    });

    let model = match (&raw.model, verb.needs_model()) {
        (Some(m), true) => {
            let reg = builtin_models::<f64>();
            if !reg.names().contains(&m.as_str()) {
                errs.push(format!("unknown model `{m}` (available: {})", reg.names().join(", ")));
            }
            Some(m.clone())
        }
        (None, true) => {
            errs.push(format!("{verb} needs a model"));
            None
        }
        (_, false) => None,
    };

    let scheme = match raw.scheme.as_deref().unwrap_or("milstein").parse::<SchemeId>() {
        Ok(s) => s,
        Err(e) => {
            errs.push(e.to_string());
            SchemeId::Milstein
        }
    };

    let format = match raw.format.as_deref().unwrap_or("csv").parse::<Format>() {
        Ok(f) => f,
        Err(e) => {
            errs.push(e);
            Format::Csv
        }
    };

    let case = if verb == Verb::LemmaCheck {
        let c = raw.case.clone().unwrap_or_else(|| "all".into());
        if let Err(e) = LemmaCase::parse_selection(&c) {
            errs.push(e.to_string());
        }
        Some(c)
    } else {
        None
    };

    let mut n_list = raw.n_list.clone().unwrap_or_default();
    match verb {
        Verb::Rate => {
            if n_list.len() < 3 {
                errs.push("rate needs an n_list with at least 3 levels".into());
            }
        }
        Verb::Simulate | Verb::ErrorLaw | Verb::LemmaCheck => {
            if n_list.len() != 1 {
                errs.push(format!("{verb} needs exactly one n, got {n_list:?}"));
            }
        }
        Verb::LimitSim => {
            if n_list.is_empty() {
                n_list = vec![1];
            }
        }
    }
    if n_list.contains(&0) {
        errs.push("n must be positive".into());
    }
    let max_n = n_list.iter().copied().max().unwrap_or(1).max(1);

    let (fine_factor, fine_count) = match (raw.fine_factor, raw.fine_count, verb) {
        (None, None, Verb::LimitSim) => (DEFAULT_LIMIT_FINE_COUNT / max_n, DEFAULT_LIMIT_FINE_COUNT),
        (ff, None, _) => {
            let ff = ff.unwrap_or(DEFAULT_FINE_FACTOR);
            (ff, max_n.saturating_mul(ff))
        }
        (None, Some(fc), _) => (fc / max_n, fc),
        (Some(ff), Some(fc), _) => {
            if max_n.saturating_mul(ff) != fc {
                errs.push(format!("fine_count {fc} ≠ max(n) {max_n} × fine_factor {ff}"));
            }
            (ff, fc)
        }
    };
    if fine_count == 0 {
        errs.push("fine grid must be non-empty".into());
    }
    for &n in &n_list {
        if n > 0 && fine_count > 0 && fine_count % n != 0 {
            errs.push(format!("n = {n} does not divide the fine grid of {fine_count} steps"));
        }
    }

    let paths = match (raw.paths, verb) {
        (Some(p), _) => p,
        (None, Verb::LimitSim) => raw.draws.unwrap_or(0),
        (None, _) => {
            errs.push(format!("{verb} needs paths"));
            0
        }
    };
    let draws = raw.draws.unwrap_or(paths);
    match verb {
        Verb::ErrorLaw => {
            let min = milstein_core::montecarlo::MIN_KS_SAMPLES;
            if paths < min || draws < min {
                errs.push(format!("error-law needs at least {min} paths and draws"));
            }
        }
        Verb::LimitSim if draws == 0 => errs.push("limit-sim needs draws".into()),
        _ if paths == 0 => errs.push("paths must be positive".into()),
        _ => {}
    }

    let ks_threshold = raw.ks_threshold.unwrap_or(DEFAULT_KS_THRESHOLD);
    if !(ks_threshold > 0.0 && ks_threshold <= 1.0) {
        errs.push(format!("ks_threshold must lie in (0, 1], got {ks_threshold}"));
    }
    if raw.threads == Some(0) {
        errs.push("threads must be positive".into());
    }

    if !errs.is_empty() {
        return Err(CliError::Config(errs));
    }
    Ok(ExperimentConfig {
        verb,
        model,
        scheme,
        n_list,
        paths,
        fine_factor,
        fine_count,
        seed,
        out: raw.out,
        format,
        case,
        draws,
        ks_threshold,
        threads: raw.threads,
    })
}

/// Reads an archived config back.
#[cfg(test)]
pub fn parse_config_text(text: &str) -> Result<ExperimentConfig, CliError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| CliError::Config(vec![e.to_string()]))?;
    validate(raw)
}

impl From<&ExperimentConfig> for RawConfig {
    fn from(c: &ExperimentConfig) -> Self {
        RawConfig {
            verb: Some(c.verb),
            model: c.model.clone(),
            scheme: Some(c.scheme.as_str().into()),
            n_list: Some(c.n_list.clone()),
            paths: Some(c.paths),
            fine_factor: Some(c.fine_factor),
            fine_count: Some(c.fine_count),
            seed: Some(c.seed),
            out: c.out.clone(),
            format: Some(match c.format {
                Format::Csv => "csv".into(),
                Format::Json => "json".into(),
            }),
            case: c.case.clone(),
            draws: Some(c.draws),
            ks_threshold: Some(c.ks_threshold),
            threads: c.threads,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> RawConfig {
        RawConfig {
            verb: Some(Verb::Simulate),
            model: Some("gbm".into()),
            n_list: Some(vec![16]),
            paths: Some(10),
            seed: Some(3),
            ..Default::default()
        }
    }

    #[test]
    fn minimal_flags_get_defaults() {
        let c = validate(minimal()).unwrap();
        assert_eq!(c.fine_factor, 64);
        assert_eq!(c.fine_count, 16 * 64);
        assert_eq!(c.format, Format::Csv);
        assert_eq!(c.scheme, SchemeId::Milstein);
    }

    #[test]
    fn non_dividing_n_is_rejected() {
        let raw = RawConfig {
            n_list: Some(vec![12]),
            fine_count: Some(4096),
            ..minimal()
        };
        let CliError::Config(errs) = validate(raw).unwrap_err() else { panic!() };
        assert!(errs.iter().any(|e| e.contains("12 does not divide")), "{errs:?}");
    }

    #[test]
    fn all_errors_are_collected() {
        let raw = RawConfig {
            verb: Some(Verb::Rate),
            model: Some("nope".into()),
            scheme: Some("rk4".into()),
            n_list: Some(vec![16]),
            paths: Some(10),
            ..Default::default()
        };
        let CliError::Config(errs) = validate(raw).unwrap_err() else { panic!() };
        assert!(errs.len() >= 4, "{errs:?}");
        assert!(errs.iter().any(|e| e.contains("seed")));
        assert!(errs.iter().any(|e| e.contains("nope")));
        assert!(errs.iter().any(|e| e.contains("rk4")));
    }

    #[test]
    fn flags_override_file() {
        let file: RawConfig = toml::from_str("verb = 'rate'\nmodel = 'gbm'\nn_list = [16, 32, 128]\npaths = 100\nseed = 4\n").unwrap();
        let flags = RawConfig {
            paths: Some(500),
            ..Default::default()
        };
        let c = validate(file.overlay(flags)).unwrap();
        assert_eq!(c.paths, 500);
        assert_eq!(c.seed, 4);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RawConfig>("seeds = 1\n").is_err());
    }

    #[test]
    fn round_trip_through_file_format() {
        for raw in [
            minimal(),
            RawConfig {
                verb: Some(Verb::LemmaCheck),
                model: None,
                case: Some("7.3a".into()),
                out: Some("/tmp/x".into()),
                threads: Some(2),
                ..minimal()
            },
        ] {
            let c = validate(raw).unwrap();
            let back = parse_config_text(&c.to_toml()).unwrap();
            assert_eq!(back, c);
            assert_eq!(validate(RawConfig::from(&c)).unwrap(), c);
        }
    }

    #[test]
    fn hash_ignores_threads_and_out() {
        let a = validate(minimal()).unwrap();
        let b = validate(RawConfig {
            threads: Some(4),
            out: Some("elsewhere".into()),
            ..minimal()
        })
        .unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = validate(RawConfig {
            seed: Some(4),
            ..minimal()
        })
        .unwrap();
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
