//! `hdmean`: mean tests, size simulations and verification suites.
//!
//! Exit codes: 0 on completion, 1 when a verification check fails, 2 on any
//! input or configuration error (one line on standard error).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use hdmean::covariance::ShrinkageTarget;
use hdmean::io::{self, format_real};
use hdmean::montecarlo::density_grid;
use hdmean::par::{with_threads, Exec};
use hdmean::stats::{NormKind, NormalizerKind};
use hdmean::testing::{one_sample_outcome, two_sample_outcome, TestSpec, TwoSampleCenter};
use hdmean::verify::{pvalue_uniformity, run_suite, type1_sweep, SizeConfig, Suite, VerifyConfig};

const DENSITY_POINTS: usize = 512;

#[derive(Parser)]
#[command(name = "hdmean", version, about = "High-dimensional mean tests with missing data")]
struct Cli {
    /// Worker threads; 1 runs sequentially. Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One- or two-sample test of the mean profile.
    Test(TestArgs),
    /// Type-I error sweep over dimensions and norms.
    Simulate(SimulateArgs),
    /// Empirical checks of the concentration bounds, rates and limits.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct TestArgs {
    /// Data file for a one-sample test.
    #[arg(
        long,
        value_name = "CSV",
        conflicts_with = "two_sample",
        required_unless_present = "two_sample"
    )]
    one_sample: Option<PathBuf>,
    /// Null mean profile (one row or one column); zero when omitted.
    #[arg(long, value_name = "CSV", requires = "one_sample")]
    null_mean: Option<PathBuf>,
    /// Two data files for a two-sample test.
    #[arg(long, num_args = 2, value_names = ["CSV_A", "CSV_B"])]
    two_sample: Option<Vec<PathBuf>>,
    /// `sup` or an exponent >= 2.
    #[arg(long, default_value = "sup", value_parser = NormKind::from_str)]
    norm: NormKind,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 2000)]
    mc_draws: usize,
    #[arg(long, default_value_t = 0.7)]
    bandwidth: f64,
    /// identity, diag, cs or hcs.
    #[arg(long, default_value = "cs", value_parser = ShrinkageTarget::from_str)]
    target: ShrinkageTarget,
    /// Fixed shrinkage intensity in [0, 1]; estimated when omitted.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// random-columnwise or sqrt-n.
    #[arg(long, default_value = "random-columnwise", value_parser = parse_normalizer)]
    normalizer: NormalizerKind,
    /// specified or pooled-center (two-sample only).
    #[arg(long, default_value = "specified", value_parser = parse_center)]
    center: TwoSampleCenter,
    /// Kernel density of the calibrated null, as `x,density`.
    #[arg(long, value_name = "CSV")]
    density_out: Option<PathBuf>,
    /// Report destination; standard output when omitted.
    #[arg(long, value_name = "PATH")]
    json_out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML run configuration.
    #[arg(long, value_name = "TOML")]
    config: PathBuf,
    /// Overrides the seed of the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Rejection table.
    #[arg(long, value_name = "CSV")]
    csv_out: Option<PathBuf>,
    /// Full report; standard output when omitted.
    #[arg(long, value_name = "PATH")]
    json_out: Option<PathBuf>,
    /// P-value histogram per cell.
    #[arg(long, value_name = "CSV")]
    histogram_out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// bounds, rates, clt, lemma74 or all.
    #[arg(long, value_parser = Suite::from_str)]
    suite: Suite,
    /// TOML overrides of the default verification configuration.
    #[arg(long, value_name = "TOML")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "PATH")]
    json_out: Option<PathBuf>,
}

/// `simulate` configuration file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateFile {
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_bins")]
    histogram_bins: usize,
    sweep: SizeConfig,
}

fn default_bins() -> usize {
    20
}

fn parse_normalizer(s: &str) -> Result<NormalizerKind, String> {
    serde_json::from_value(json!(s)).map_err(|_| format!("unknown normalizer '{s}'"))
}

fn parse_center(s: &str) -> Result<TwoSampleCenter, String> {
    serde_json::from_value(json!(s)).map_err(|_| format!("unknown center '{s}'"))
}

enum Failure {
    Input(String),
    Verification,
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Input(e.to_string())
    }
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Failure::Input(format!("{}: {}", path.display(), e.message())))
}

fn emit_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<(), Failure> {
    let text = io::to_json(value)?;
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Failure::Input(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_sample(path: &Path) -> Result<hdmean::model::TriangularSample, Failure> {
    io::parse_csv(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn run_test(args: &TestArgs, exec: Exec) -> Result<(), Failure> {
    let spec = TestSpec {
        norm_kind: args.norm,
        normalizer: args.normalizer,
        alpha: args.alpha,
        mc_draws: args.mc_draws,
        bandwidth: args.bandwidth,
        target: args.target.clone(),
        lambda: args.lambda,
        seed: args.seed,
        center: args.center.clone(),
        exec,
    };
    spec.validate()?;
    let outcome = match (&args.one_sample, &args.two_sample) {
        (Some(path), None) => {
            let sample = read_sample(path)?;
            let null_mean = match &args.null_mean {
                Some(p) => io::parse_vector_csv(p).map_err(|e| Failure::Input(format!("{}: {e}", p.display())))?,
                None => vec![0.0; sample.max_dim()],
            };
            if null_mean.len() != sample.max_dim() {
                return Err(Failure::Input(format!(
                    "null mean has {} entries but the data have {} columns",
                    null_mean.len(),
                    sample.max_dim()
                )));
            }
            one_sample_outcome(&sample, &null_mean, &spec)?
        }
        (None, Some(paths)) => {
            let a = read_sample(&paths[0])?;
            let b = read_sample(&paths[1])?;
            two_sample_outcome(&a, &b, (&[], &[]), &spec)?
        }
        _ => return Err(Failure::Input("give either --one-sample or --two-sample".into())),
    };
    if let Some(path) = &args.density_out {
        io::write_density_csv(&density_grid(&outcome.null, DENSITY_POINTS), path)?;
    }
    emit_json(&outcome.report, args.json_out.as_deref())
}

fn run_simulate(args: &SimulateArgs, exec: Exec) -> Result<(), Failure> {
    let mut file: SimulateFile = read_toml(&args.config)?;
    if let Some(seed) = args.seed {
        file.seed = seed;
    }
    let table = type1_sweep(&file.sweep, file.seed, exec)?;
    let uniformity = pvalue_uniformity(&table, file.histogram_bins);

    if let Some(path) = &args.csv_out {
        let rows: Vec<Vec<String>> = table
            .cells
            .iter()
            .map(|c| {
                vec![
                    c.b.to_string(),
                    c.norm.to_string(),
                    c.rejections.to_string(),
                    c.trials.to_string(),
                    format_real(c.rate),
                    format_real(c.std_error),
                ]
            })
            .collect();
        io::write_table(path, &["b", "norm", "rejections", "trials", "rate", "std_error"], &rows)?;
    }
    if let Some(path) = &args.histogram_out {
        let bins = file.histogram_bins.max(1);
        let rows: Vec<Vec<String>> = uniformity
            .iter()
            .flat_map(|u| {
                u.histogram.iter().enumerate().map(move |(i, count)| {
                    vec![
                        u.b.to_string(),
                        u.norm.to_string(),
                        format_real(i as f64 / bins as f64),
                        format_real((i + 1) as f64 / bins as f64),
                        count.to_string(),
                    ]
                })
            })
            .collect();
        io::write_table(path, &["b", "norm", "lower", "upper", "count"], &rows)?;
    }
    let report = json!({
        "seed": file.seed,
        "cells": table.cells,
        "uniformity": uniformity,
        "config": file,
    });
    emit_json(&report, args.json_out.as_deref())
}

fn run_verify(args: &VerifyArgs, exec: Exec) -> Result<(), Failure> {
    let mut cfg: VerifyConfig = match &args.config {
        Some(path) => read_toml(path)?,
        None => VerifyConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let report = run_suite(args.suite, &cfg, exec)?;
    emit_json(&report, args.json_out.as_deref())?;
    for c in report.checks.iter().filter(|c| !c.passed) {
        eprintln!("check failed: {}", c.name);
    }
    if report.passed {
        Ok(())
    } else {
        Err(Failure::Verification)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let rendered = e.to_string();
            let line: Vec<&str> = rendered
                .lines()
                .take_while(|l| !l.starts_with("Usage:"))
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .collect();
            eprintln!("hdmean: {}", line.join(" ").trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    let run = |exec: Exec| match &cli.command {
        Command::Test(a) => run_test(a, exec),
        Command::Simulate(a) => run_simulate(a, exec),
        Command::Verify(a) => run_verify(a, exec),
    };
    let result = match cli.threads {
        Some(t) => with_threads(t, run),
        None => run(Exec::default()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification) => ExitCode::from(1),
        Err(Failure::Input(msg)) => {
            eprintln!("hdmean: {}", msg.replace('\n', " "));
            ExitCode::from(2)
        }
    }
}
