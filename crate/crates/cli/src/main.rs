//! `milstein`: experiments on the Milstein scheme and its error limits.

mod config;
mod error;
mod output;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser};

use config::{validate, RawConfig, Verb};
use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "milstein", version, about = "Milstein scheme error experiments")]
struct Cli {
    #[arg(value_enum)]
    verb: Verb,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Args, Debug, Default)]
struct Flags {
    /// Flat TOML config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    /// euler, milstein, milstein54, milstein-reduced or reference.
    #[arg(long)]
    scheme: Option<String>,
    /// Single level n.
    #[arg(long, conflicts_with = "n_list")]
    n: Option<usize>,
    /// Comma-separated levels for `rate`.
    #[arg(long, value_delimiter = ',')]
    n_list: Option<Vec<usize>>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    fine_factor: Option<usize>,
    #[arg(long)]
    fine_count: Option<usize>,
    /// Master seed (required).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to $MILSTEIN_OUT_DIR, then the working directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Data file format: csv or json.
    #[arg(long)]
    format: Option<String>,
    /// Lemma case id or group (7.2, 7.3, 7.4, 7.7, all).
    #[arg(long)]
    case: Option<String>,
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    ks_threshold: Option<f64>,
    /// Worker threads; changes speed only.
    #[arg(long)]
    threads: Option<usize>,
}

impl Flags {
    fn into_raw(self, verb: Verb) -> RawConfig {
        RawConfig {
            verb: Some(verb),
            model: self.model,
            scheme: self.scheme,
            n_list: self.n.map(|n| vec![n]).or(self.n_list),
            paths: self.paths,
            fine_factor: self.fine_factor,
            fine_count: self.fine_count,
            seed: self.seed,
            out: self.out,
            format: self.format,
            case: self.case,
            draws: self.draws,
            ks_threshold: self.ks_threshold,
            threads: self.threads,
        }
    }
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let file = match &cli.flags.config {
        Some(p) => RawConfig::from_file(p)?,
        None => RawConfig::default(),
    };
    let cfg = validate(file.overlay(cli.flags.into_raw(cli.verb)))?;
    let outcome = match cfg.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| CliError::Config(vec![format!("cannot start {t} threads: {e}")]))?
            .install(|| run::execute(&cfg))?,
        None => run::execute(&cfg)?,
    };
    let report = output::report_bytes(&cfg, outcome.pass, outcome.result);
    let artifacts = output::write_artifacts(&cfg, &report, &outcome.data)?;
    print!("{}", outcome.table);
    eprintln!("report: {}", artifacts.report.display());
    eprintln!("data:   {}", artifacts.data.display());
    Ok(outcome.pass)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                return ExitCode::SUCCESS;
            }
            if !e.to_string().contains("Usage:") {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
