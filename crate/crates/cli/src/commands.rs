//! The `analyze` and `simulate` commands.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use mixfdr::sim::{default_sample_sizes, run_experiment, ExperimentResult, ScenarioId, ScenarioSpec};
use mixfdr::{run_method, AnalysisConfig, Method, SelectionReport};

use crate::error::CliError;
use crate::ingest::{ingest, ColumnRoles};
use crate::output;

pub const REPORT_FILE: &str = "report.json";
pub const CURVES_FILE: &str = "response_curves.csv";
pub const SURFACES_FILE: &str = "surfaces.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const REPLICATES_FILE: &str = "replicates.csv";

#[derive(Debug, Clone)]
pub struct AnalyzeConfig {
    pub input: PathBuf,
    pub roles: ColumnRoles,
    pub method: Method,
    pub analysis: AnalysisConfig,
    pub seed: u64,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone)]
pub struct SimulateConfig {
    pub scenarios: Vec<ScenarioId>,
    pub methods: Vec<Method>,
    /// Empty means the default grid for each `p`.
    pub sample_sizes: Vec<usize>,
    pub dims: Vec<usize>,
    pub replicates: u64,
    /// First replicate seed; replicate `r` uses `seed + r`.
    pub seed: u64,
    pub typo_fix: bool,
    pub analysis: AnalysisConfig,
    pub out_dir: PathBuf,
}

fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))
}

/// Runs one engine on a table and writes the report, response curves and surfaces.
pub fn analyze(cfg: &AnalyzeConfig) -> Result<SelectionReport, CliError> {
    cfg.analysis.validate()?;
    let data = ingest(&cfg.input, &cfg.roles)?;
    info!("analyzing {} rows, {} exposures, {} covariates with {}", data.n(), data.p(), data.q(), cfg.method);
    let report = run_method(cfg.method, &data, &cfg.analysis, cfg.seed)?;
    prepare_dir(&cfg.out_dir)?;
    output::write_report(&cfg.out_dir.join(REPORT_FILE), &report)?;
    output::write_response_curves(&cfg.out_dir.join(CURVES_FILE), &report)?;
    output::write_surfaces(&cfg.out_dir.join(SURFACES_FILE), &report)?;
    info!(
        "selected {} main effects and {} pairs; outputs in {}",
        report.selected_mains.len(),
        report.selected_pairs.len(),
        cfg.out_dir.display()
    );
    Ok(report)
}

pub fn scenario_grid(cfg: &SimulateConfig) -> Vec<ScenarioSpec> {
    let mut specs = Vec::new();
    for &id in &cfg.scenarios {
        for &p in &cfg.dims {
            let sizes = if cfg.sample_sizes.is_empty() { default_sample_sizes(p) } else { cfg.sample_sizes.clone() };
            for n in sizes {
                specs.push(ScenarioSpec { typo_fix: cfg.typo_fix, ..ScenarioSpec::new(id, n, p) });
            }
        }
    }
    specs
}

/// Runs the replicate grid and writes the aggregate and per-replicate tables.
pub fn simulate(cfg: &SimulateConfig) -> Result<ExperimentResult, CliError> {
    cfg.analysis.validate()?;
    if cfg.replicates == 0 {
        return Err(CliError::Usage("--replicates must be at least 1".into()));
    }
    if cfg.scenarios.is_empty() || cfg.methods.is_empty() || cfg.dims.is_empty() {
        return Err(CliError::Usage("need at least one scenario, method and p".into()));
    }
    let specs = scenario_grid(cfg);
    for s in &specs {
        s.validate()?;
    }
    let seeds: Vec<u64> = (0..cfg.replicates).map(|r| cfg.seed.wrapping_add(r)).collect();
    info!("{} designs x {} methods x {} replicates", specs.len(), cfg.methods.len(), seeds.len());
    let result = run_experiment(&specs, &cfg.methods, &seeds, &cfg.analysis)?;
    prepare_dir(&cfg.out_dir)?;
    output::write_aggregate(&cfg.out_dir.join(AGGREGATE_FILE), &result)?;
    output::write_replicates(&cfg.out_dir.join(REPLICATES_FILE), &result)?;
    let failed: usize = result.rows.iter().map(|r| r.failures).sum();
    if failed > 0 {
        log::warn!("{failed} replicate runs failed; see the error column of {REPLICATES_FILE}");
    }
    Ok(result)
}
