//! One entry point for running any of the three engines on a data set.

use crate::basis::RawData;
use crate::debias::{select_dbl, DblConfig};
use crate::error::{Error, Result};
use crate::grouplasso::CvConfig;
use crate::knockoff::{run_kfull, run_ksplit, KnockoffConfig, KnockoffOptions};
use crate::report::{Method, SelectionReport};

/// Settings common to every engine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisConfig {
    /// Polynomial degree of each main-effect block.
    pub k: usize,
    pub q: f64,
    /// Knockoff threshold offset, 0 or 1.
    pub offset: u8,
    pub split_fraction: f64,
    pub cv: CvConfig,
    pub dbl: DblConfig,
    pub sampling: KnockoffOptions,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            k: 2,
            q: 0.2,
            offset: 0,
            split_fraction: 0.5,
            cv: CvConfig::default(),
            dbl: DblConfig::default(),
            sampling: KnockoffOptions::default(),
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(Error::InvalidArgument(format!("q must lie in (0, 1), got {}", self.q)));
        }
        if self.offset > 1 {
            return Err(Error::InvalidArgument(format!("offset must be 0 or 1, got {}", self.offset)));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "split fraction must lie in (0, 1), got {}",
                self.split_fraction
            )));
        }
        Ok(())
    }

    pub fn knockoff(&self) -> KnockoffConfig {
        KnockoffConfig { offset: self.offset, split_fraction: self.split_fraction, cv: self.cv, sampling: self.sampling }
    }
}

/// Runs `method` with every random choice keyed to `seed`.
pub fn run_method(method: Method, data: &RawData, cfg: &AnalysisConfig, seed: u64) -> Result<SelectionReport> {
    cfg.validate()?;
    match method {
        Method::Dbl => {
            let mut dbl = cfg.dbl;
            dbl.cv = CvConfig { seed: dbl.cv.seed, ..cfg.cv };
            let mut report = select_dbl(data, cfg.k, cfg.q, &dbl.seeded(seed))?;
            report.seed = seed;
            Ok(report)
        }
        Method::KFull => run_kfull(data, cfg.k, cfg.q, seed, &cfg.knockoff()),
        Method::KSplit => run_ksplit(data, cfg.k, cfg.q, seed, &cfg.knockoff()),
    }
}
