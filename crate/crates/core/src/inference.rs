//! Pointwise inference on the fitted mixture effect, response curves and
//! interaction surfaces.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report::SelectionReport;

/// Two-sided 95% standard normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Beyond this many training SDs a prediction is flagged as extrapolation.
const EXTRAPOLATION_SD: f64 = 10.0;

/// Fitted mixture values with pointwise 95% intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePrediction {
    pub points: Vec<Vec<f64>>,
    pub f_hat: Vec<f64>,
    pub se: Vec<f64>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Mixture effect (covariates and intercept excluded) at the rows of `xnew`.
pub fn predict_f(report: &SelectionReport, xnew: &DMatrix<f64>) -> Result<MixturePrediction> {
    let model = &report.model;
    let p = model.transform.p();
    if xnew.ncols() != p {
        return Err(Error::ShapeMismatch(format!("expected {p} exposure columns, got {}", xnew.ncols())));
    }
    let m = xnew.nrows();
    let points: Vec<Vec<f64>> = xnew.row_iter().map(|r| r.iter().copied().collect()).collect();
    let mut warnings = Vec::new();
    for (j, dev) in model.transform.max_abs_standardized(xnew).iter().enumerate() {
        if *dev > EXTRAPOLATION_SD {
            let name = report.exposure_names.get(j).cloned().unwrap_or_else(|| format!("x{}", j + 1));
            warnings.push(format!("{name}: prediction point {dev:.1} SD from the training mean (extrapolation)"));
        }
    }
    let (f_hat, se) = if model.is_empty() {
        (vec![0.0; m], vec![0.0; m])
    } else {
        let d = model.transform.expand_mixture(xnew)?.select_columns(&model.mixture_columns());
        let f = &d * &model.coef;
        let dc = &d * &model.cov;
        let se = (0..m)
            .map(|i| dc.row(i).dot(&d.row(i)).max(0.0).sqrt())
            .collect();
        (f.iter().copied().collect(), se)
    };
    let ci_lo = f_hat.iter().zip(&se).map(|(f, s)| f - Z95 * s).collect();
    let ci_hi = f_hat.iter().zip(&se).map(|(f, s)| f + Z95 * s).collect();
    Ok(MixturePrediction { points, f_hat, se, ci_lo, ci_hi, warnings })
}

/// `n` evenly spaced values over `[-2, 2]` (standardized units).
pub fn standard_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| -2.0 + 4.0 * i as f64 / (n - 1) as f64).collect(),
    }
}

/// The 41-point grid over ±2 SD of exposure `j`, in raw units.
pub fn default_grid(report: &SelectionReport, j: usize) -> Result<Vec<f64>> {
    let b = exposure_basis(report, j)?;
    Ok(standard_grid(41).into_iter().map(|z| b.center + b.scale * z).collect())
}

fn exposure_basis(report: &SelectionReport, j: usize) -> Result<&crate::basis::PolyBasis> {
    report
        .model
        .transform
        .exposures
        .get(j)
        .ok_or_else(|| Error::InvalidArgument(format!("exposure index {j} out of range")))
}

fn mean_point(report: &SelectionReport) -> Vec<f64> {
    report.model.transform.exposures.iter().map(|b| b.center).collect()
}

/// Curve over exposure `j` with every other exposure at its training mean.
pub fn response_curve(report: &SelectionReport, j: usize, grid: &[f64]) -> Result<MixturePrediction> {
    exposure_basis(report, j)?;
    let base = mean_point(report);
    let x = DMatrix::from_fn(grid.len(), base.len(), |i, c| if c == j { grid[i] } else { base[c] });
    predict_f(report, &x)
}

/// Surface over `grid1 × grid2` in row-major order (`grid2` varies fastest),
/// other exposures at their training means.
pub fn interaction_surface(
    report: &SelectionReport,
    j1: usize,
    j2: usize,
    grid1: &[f64],
    grid2: &[f64],
) -> Result<MixturePrediction> {
    if j1 == j2 {
        return Err(Error::InvalidArgument("surface needs two distinct exposures".into()));
    }
    exposure_basis(report, j1)?;
    exposure_basis(report, j2)?;
    let base = mean_point(report);
    let m = grid1.len() * grid2.len();
    let x = DMatrix::from_fn(m, base.len(), |i, c| {
        if c == j1 {
            grid1[i / grid2.len()]
        } else if c == j2 {
            grid2[i % grid2.len()]
        } else {
            base[c]
        }
    });
    predict_f(report, &x)
}
