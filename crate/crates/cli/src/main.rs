use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mixfdr::sim::ScenarioId;
use mixfdr::{AnalysisConfig, Method};
use mixfdr_cli::{analyze, simulate, AnalyzeConfig, CliError, ColumnRoles, SimulateConfig};

#[derive(Parser)]
#[command(name = "mixfdr", version, about = "FDR-controlled selection of exposures and interactions in mixture regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the simulation grid and write aggregate.csv and replicates.csv.
    Simulate(SimulateArgs),
    /// Fit one engine to a delimited table and write report.json, response_curves.csv and surfaces.csv.
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
struct Common {
    /// Polynomial degree per exposure.
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// Target FDR level.
    #[arg(long, default_value_t = 0.2)]
    q: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Share of rows used for selection by ksplit.
    #[arg(long, default_value_t = 0.5)]
    split_fraction: f64,
    /// Knockoff threshold offset.
    #[arg(long, default_value_t = 0, value_parser = clap::value_parser!(u8).range(0..=1))]
    offset: u8,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

impl Common {
    fn analysis(&self) -> AnalysisConfig {
        AnalysisConfig { k: self.k, q: self.q, offset: self.offset, split_fraction: self.split_fraction, ..AnalysisConfig::default() }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

fn parse_method(s: &str) -> Result<Method, String> {
    Method::parse(s).ok_or_else(|| format!("unknown method `{s}` (expected dbl, kfull or ksplit)"))
}

fn parse_scenario(s: &str) -> Result<ScenarioId, String> {
    s.parse().map_err(|e: mixfdr::Error| e.to_string())
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Comma separated scenarios among 1, 2, 3, A.
    #[arg(long, value_delimiter = ',', default_values = ["1", "2", "3", "A"], value_parser = parse_scenario)]
    scenario: Vec<ScenarioId>,
    /// Comma separated methods.
    #[arg(long, value_delimiter = ',', default_values = ["dbl", "kfull", "ksplit"], value_parser = parse_method)]
    method: Vec<Method>,
    #[arg(long, default_value_t = 100)]
    replicates: u64,
    /// Comma separated sample sizes; defaults to the standard grid for each p.
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    /// Comma separated exposure counts.
    #[arg(long, value_delimiter = ',', default_values_t = [10])]
    p: Vec<usize>,
    /// Read the repeated x2 term of scenario 2 as x4.
    #[arg(long, value_enum, default_value = "off")]
    scenario2_typo_fix: OnOff,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "kfull", value_parser = parse_method)]
    method: Method,
    /// Comma or tab separated table with a header row.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    outcome_col: String,
    #[arg(long, value_delimiter = ',', required = true)]
    exposure_cols: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    covariate_cols: Vec<String>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(a) => {
            let cfg = SimulateConfig {
                scenarios: a.scenario,
                methods: a.method,
                sample_sizes: a.n,
                dims: a.p,
                replicates: a.replicates,
                seed: a.common.seed,
                typo_fix: matches!(a.scenario2_typo_fix, OnOff::On),
                analysis: a.common.analysis(),
                out_dir: a.common.out_dir,
            };
            simulate(&cfg).map(|_| ())
        }
        Command::Analyze(a) => {
            let cfg = AnalyzeConfig {
                input: a.input,
                roles: ColumnRoles { outcome: a.outcome_col, exposures: a.exposure_cols, covariates: a.covariate_cols },
                method: a.method,
                analysis: a.common.analysis(),
                seed: a.common.seed,
                out_dir: a.common.out_dir,
            };
            analyze(&cfg).map(|_| ())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
