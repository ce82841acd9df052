//! Plot-ready tables. Every file is comma separated with a fixed header,
//! written even when it has no data rows.

use std::fs;
use std::path::Path;

use mixfdr::inference::{interaction_surface, response_curve, standard_grid};
use mixfdr::metrics::ReplicateMetrics;
use mixfdr::sim::ExperimentResult;
use mixfdr::SelectionReport;

use crate::error::CliError;

pub const CURVE_HEADER: [&str; 7] = ["exposure", "grid_index", "value", "f_hat", "se", "ci_lo", "ci_hi"];
pub const SURFACE_HEADER: [&str; 8] = ["exposure_1", "exposure_2", "value_1", "value_2", "f_hat", "se", "ci_lo", "ci_hi"];
pub const GRID_POINTS: usize = 41;

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>, CliError> {
    Ok(csv::Writer::from_writer(fs::File::create(path)?))
}

pub fn write_report(path: &Path, report: &SelectionReport) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// One curve per selected main effect over the 41-point `[-2, 2]` grid.
pub fn write_response_curves(path: &Path, report: &SelectionReport) -> Result<(), CliError> {
    let grid = standard_grid(GRID_POINTS);
    let mut w = writer(path)?;
    w.write_record(CURVE_HEADER)?;
    for &j in &report.selected_mains {
        let pred = response_curve(report, j, &grid)?;
        for (i, &g) in grid.iter().enumerate() {
            w.write_record([
                report.exposure_names[j].clone(),
                i.to_string(),
                g.to_string(),
                pred.f_hat[i].to_string(),
                pred.se[i].to_string(),
                pred.ci_lo[i].to_string(),
                pred.ci_hi[i].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One 41 × 41 surface per selected pair, second exposure varying fastest.
pub fn write_surfaces(path: &Path, report: &SelectionReport) -> Result<(), CliError> {
    let grid = standard_grid(GRID_POINTS);
    let mut w = writer(path)?;
    w.write_record(SURFACE_HEADER)?;
    for &(a, b) in &report.selected_pairs {
        let pred = interaction_surface(report, a, b, &grid, &grid)?;
        for (i, &g1) in grid.iter().enumerate() {
            for (l, &g2) in grid.iter().enumerate() {
                let r = i * grid.len() + l;
                w.write_record([
                    report.exposure_names[a].clone(),
                    report.exposure_names[b].clone(),
                    g1.to_string(),
                    g2.to_string(),
                    pred.f_hat[r].to_string(),
                    pred.se[r].to_string(),
                    pred.ci_lo[r].to_string(),
                    pred.ci_hi[r].to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// `scenario,n,p,method,replicates,failures`, then `<metric>_mean,<metric>_se`
/// for every replicate metric, then `fdr_bound_estimate`.
pub fn aggregate_header() -> Vec<String> {
    let mut h: Vec<String> = ["scenario", "n", "p", "method", "replicates", "failures"].map(String::from).to_vec();
    for f in ReplicateMetrics::FIELDS {
        h.push(format!("{f}_mean"));
        h.push(format!("{f}_se"));
    }
    h.push("fdr_bound_estimate".into());
    h
}

/// `scenario,n,p,method,seed`, every replicate metric, then `error`.
pub fn replicate_header() -> Vec<String> {
    let mut h: Vec<String> = ["scenario", "n", "p", "method", "seed"].map(String::from).to_vec();
    h.extend(ReplicateMetrics::FIELDS.iter().map(|f| f.to_string()));
    h.push("error".into());
    h
}

pub fn write_aggregate(path: &Path, result: &ExperimentResult) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(aggregate_header())?;
    for row in &result.rows {
        let mut rec = vec![
            row.scenario.to_string(),
            row.n.to_string(),
            row.p.to_string(),
            row.method.to_string(),
            row.replicates.to_string(),
            row.failures.to_string(),
        ];
        for f in ReplicateMetrics::FIELDS {
            let s = row.metrics.iter().find(|(name, _)| name == f).map(|(_, s)| *s);
            rec.push(fmt_opt(s.and_then(|s| s.mean)));
            rec.push(fmt_opt(s.and_then(|s| s.se)));
        }
        rec.push(fmt_opt(row.fdr_bound_estimate));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_replicates(path: &Path, result: &ExperimentResult) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(replicate_header())?;
    for r in &result.replicates {
        let mut rec = vec![r.scenario.to_string(), r.n.to_string(), r.p.to_string(), r.method.to_string(), r.seed.to_string()];
        match &r.metrics {
            Some(m) => rec.extend(m.values().iter().map(|v| fmt_opt(*v))),
            None => rec.extend(std::iter::repeat_n(String::new(), ReplicateMetrics::FIELDS.len())),
        }
        rec.push(r.error.clone().unwrap_or_default());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
