//! Simulation scenarios and replicate experiments.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::RawData;
use crate::error::{Error, Result};
use crate::inference::predict_f;
use crate::metrics::{cauchy_schwarz_estimate, replicate_metrics, summarize, ReplicateMetrics, Summary, TruthSpec};
use crate::pipeline::{run_method, AnalysisConfig};
use crate::report::Method;
use crate::rng::{substream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScenarioId {
    /// Sparse nonlinear mains with two interactions.
    S1,
    /// Linear mains only.
    S2,
    /// Dense mains, smooth non-polynomial terms.
    S3,
    /// Quadratic mains, no interactions.
    A,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 4] = [ScenarioId::S1, ScenarioId::S2, ScenarioId::S3, ScenarioId::A];

    /// Highest exposure index (1-based) the truth refers to.
    pub fn min_p(&self) -> usize {
        match self {
            ScenarioId::S1 => 8,
            ScenarioId::S2 => 5,
            ScenarioId::S3 => 9,
            ScenarioId::A => 10,
        }
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioId::S1 => "1",
            ScenarioId::S2 => "2",
            ScenarioId::S3 => "3",
            ScenarioId::A => "A",
        })
    }
}

impl FromStr for ScenarioId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "1" | "S1" => Ok(ScenarioId::S1),
            "2" | "S2" => Ok(ScenarioId::S2),
            "3" | "S3" => Ok(ScenarioId::S3),
            "A" | "SA" => Ok(ScenarioId::A),
            other => Err(Error::InvalidArgument(format!("unknown scenario `{other}`"))),
        }
    }
}

/// One simulation design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: ScenarioId,
    pub n: usize,
    pub p: usize,
    pub beta_c: f64,
    /// AR(1) correlation of the exposures.
    pub rho: f64,
    pub noise_sd: f64,
    /// Reads the repeated `0.2 x₂` term of scenario 2 as `0.2 x₄`.
    pub typo_fix: bool,
}

impl ScenarioSpec {
    pub fn new(id: ScenarioId, n: usize, p: usize) -> Self {
        ScenarioSpec { id, n, p, beta_c: 1.0, rho: 0.5, noise_sd: 1.0, typo_fix: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < self.id.min_p() {
            return Err(Error::InvalidArgument(format!(
                "scenario {} needs p ≥ {}, got {}",
                self.id,
                self.id.min_p(),
                self.p
            )));
        }
        if self.n < 2 {
            return Err(Error::InvalidArgument(format!("n must be at least 2, got {}", self.n)));
        }
        if !(self.rho.abs() < 1.0) {
            return Err(Error::InvalidArgument(format!("|rho| must be below 1, got {}", self.rho)));
        }
        Ok(())
    }

    /// `Σ_jk = ρ^|j−k|`.
    pub fn covariance(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.p, self.p, |a, b| self.rho.powi((a as i32 - b as i32).abs()))
    }

    /// Truth with 0-based exposure indices.
    pub fn truth(&self) -> TruthSpec {
        let x = |j: usize| j - 1;
        let built = match self.id {
            ScenarioId::S1 => TruthSpec::new(
                [1, 2, 3, 4, 5, 7, 8].map(x),
                [(x(1), x(4)), (x(2), x(3))],
                Some(x(7)),
                |v: &[f64]| {
                    0.3 * v[6] + 0.5 * v[7] * v[7] - 0.2 * v[4] + 0.4 * v[4] * v[4]
                        + 2.5 * v[0] * v[3] * v[3]
                        + 1.8 * v[1] * v[2]
                },
            ),
            ScenarioId::S2 if self.typo_fix => TruthSpec::new([1, 2, 3, 4, 5].map(x), [], Some(x(5)), |v: &[f64]| {
                0.5 * v[0] + 0.4 * v[1] + 0.3 * v[2] + 0.2 * v[3] + 0.1 * v[4]
            }),
            ScenarioId::S2 => TruthSpec::new([1, 2, 3, 5].map(x), [], Some(x(5)), |v: &[f64]| {
                0.5 * v[0] + 0.4 * v[1] + 0.3 * v[2] + 0.2 * v[1] + 0.1 * v[4]
            }),
            ScenarioId::S3 => TruthSpec::new([1, 2, 4, 5, 6, 8, 9].map(x), [], Some(x(5)), |v: &[f64]| {
                0.3 * v[0].exp() + 0.5 * (0.7 * v[1]).sin() - 0.2 * v[3] + 0.07 * v[4] + 0.4 * v[5] * v[5] + 0.6 * v[7]
                    - 0.3 * v[8]
            }),
            ScenarioId::A => TruthSpec::new([1, 2, 4, 5, 7, 8, 9, 10].map(x), [], Some(x(5)), |v: &[f64]| {
                2.3 * v[0] + 1.9 * v[0] * v[0] - 0.2 * v[1] + 0.4 * v[1] * v[1] - 1.5 * v[3] - 1.5 * v[3] * v[3]
                    + 0.05 * v[4]
                    + 1.2 * v[6]
                    + 0.8 * v[7]
                    + v[8]
                    + 0.2 * v[9]
                    + 0.1 * v[9] * v[9]
            }),
        };
        built.expect("built-in truths are consistent")
    }
}

/// Default sample-size grid for a given number of exposures.
pub fn default_sample_sizes(p: usize) -> Vec<usize> {
    if p >= 20 {
        vec![200, 500, 850, 1000]
    } else {
        vec![200, 500, 1000]
    }
}

/// Draws `X ~ N(0, Σ)`, a standard normal covariate and
/// `y = f(X) + β_C·C + ε`.
pub fn generate(spec: &ScenarioSpec, seed: u64) -> Result<(RawData, TruthSpec)> {
    spec.validate()?;
    let chol = spec
        .covariance()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { group: "exposure covariance".into() })?;
    let l = chol.l();
    let mut rng = substream(seed, Stream::Data);
    let (n, p) = (spec.n, spec.p);
    let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
    let mut x = DMatrix::zeros(n, p);
    let mut c = DMatrix::zeros(n, 1);
    let mut y = DVector::zeros(n);
    let truth = spec.truth();
    let mut z = vec![0.0; p];
    let mut row = vec![0.0; p];
    for i in 0..n {
        for v in z.iter_mut() {
            *v = draw();
        }
        for a in 0..p {
            row[a] = (0..=a).map(|b| l[(a, b)] * z[b]).sum();
            x[(i, a)] = row[a];
        }
        c[(i, 0)] = draw();
        y[i] = truth.eval(&row) + spec.beta_c * c[(i, 0)] + spec.noise_sd * draw();
    }
    Ok((RawData::unnamed(y, x, c)?, truth))
}

/// One (scenario, method, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub scenario: ScenarioId,
    pub n: usize,
    pub p: usize,
    pub method: Method,
    pub seed: u64,
    pub metrics: Option<ReplicateMetrics>,
    pub error: Option<String>,
}

/// Means and Monte Carlo SEs of every metric for one design cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub scenario: ScenarioId,
    pub n: usize,
    pub p: usize,
    pub method: Method,
    pub replicates: usize,
    pub failures: usize,
    pub metrics: Vec<(String, Summary)>,
    /// Monte Carlo estimate of the Cauchy–Schwarz FDR bound (an estimate, not a guarantee).
    pub fdr_bound_estimate: Option<f64>,
}

impl AggregateRow {
    pub fn mean(&self, field: &str) -> Option<f64> {
        self.metrics.iter().find(|(name, _)| name == field).and_then(|(_, s)| s.mean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub rows: Vec<AggregateRow>,
    pub replicates: Vec<ReplicateRecord>,
}

impl ExperimentResult {
    pub fn row(&self, scenario: ScenarioId, n: usize, p: usize, method: Method) -> Option<&AggregateRow> {
        self.rows
            .iter()
            .find(|r| r.scenario == scenario && r.n == n && r.p == p && r.method == method)
    }
}

fn run_one(spec: &ScenarioSpec, method: Method, data: &RawData, truth: &TruthSpec, cfg: &AnalysisConfig, seed: u64) -> Result<ReplicateMetrics> {
    let report = run_method(method, data, cfg, seed)?;
    let prediction = predict_f(&report, &data.x)?;
    Ok(replicate_metrics(&report, truth, &prediction)).inspect(|_| {
        log::debug!("scenario {} n={} p={} {method} seed {seed} done", spec.id, spec.n, spec.p);
    })
}

/// Runs every method on every scenario for every seed. Each seed's data set
/// is shared by all methods. Replicates run in parallel; output order is
/// fixed by scenario, then seed, then method.
pub fn run_experiment(scenarios: &[ScenarioSpec], methods: &[Method], seeds: &[u64], cfg: &AnalysisConfig) -> Result<ExperimentResult> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("at least one seed is required".into()));
    }
    for s in scenarios {
        s.validate()?;
    }
    let jobs: Vec<(usize, u64)> = (0..scenarios.len()).flat_map(|s| seeds.iter().map(move |&seed| (s, seed))).collect();
    let per_job: Vec<Vec<ReplicateRecord>> = jobs
        .par_iter()
        .map(|&(s, seed)| {
            let spec = &scenarios[s];
            let generated = generate(spec, seed);
            methods
                .iter()
                .map(|&method| {
                    let outcome = generated
                        .as_ref()
                        .map_err(|e| e.clone())
                        .and_then(|(data, truth)| run_one(spec, method, data, truth, cfg, seed));
                    if let Err(e) = &outcome {
                        log::warn!("scenario {} n={} p={} {method} seed {seed} failed: {e}", spec.id, spec.n, spec.p);
                    }
                    ReplicateRecord {
                        scenario: spec.id,
                        n: spec.n,
                        p: spec.p,
                        method,
                        seed,
                        metrics: outcome.as_ref().ok().copied(),
                        error: outcome.err().map(|e| e.to_string()),
                    }
                })
                .collect()
        })
        .collect();
    let mut replicates: Vec<ReplicateRecord> = per_job.into_iter().flatten().collect();
    // merge by seed value so that seed-list order does not matter
    replicates.sort_by_key(|r| {
        let s = scenarios.iter().position(|x| x.id == r.scenario && x.n == r.n && x.p == r.p).unwrap_or(usize::MAX);
        let m = methods.iter().position(|&x| x == r.method).unwrap_or(usize::MAX);
        (s, r.seed, m)
    });

    let mut rows = Vec::new();
    for spec in scenarios {
        for &method in methods {
            let cell: Vec<&ReplicateRecord> = replicates
                .iter()
                .filter(|r| r.scenario == spec.id && r.n == spec.n && r.p == spec.p && r.method == method)
                .collect();
            let ok: Vec<ReplicateMetrics> = cell.iter().filter_map(|r| r.metrics).collect();
            let metrics = ReplicateMetrics::FIELDS
                .iter()
                .enumerate()
                .map(|(i, name)| (name.to_string(), summarize(ok.iter().map(|m| m.values()[i]))))
                .collect();
            rows.push(AggregateRow {
                scenario: spec.id,
                n: spec.n,
                p: spec.p,
                method,
                replicates: cell.len(),
                failures: cell.len() - ok.len(),
                metrics,
                fdr_bound_estimate: cauchy_schwarz_estimate(&ok),
            });
        }
    }
    Ok(ExperimentResult { rows, replicates })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariance_entries() {
        let s = ScenarioSpec::new(ScenarioId::S1, 10, 10).covariance();
        assert_eq!(s[(0, 0)], 1.0);
        assert_eq!(s[(0, 1)], 0.5);
        assert_eq!(s[(0, 2)], 0.25);
        assert!(s.clone().cholesky().is_some());
    }

    #[test]
    fn scenario_one_truth_at_point() {
        let t = ScenarioSpec::new(ScenarioId::S1, 10, 10).truth();
        let mut v = vec![0.0; 10];
        v[0] = 1.0;
        v[3] = 1.0;
        assert_eq!(t.eval(&v), 2.5);
        assert!(t.pairs.contains(&(0, 3)) && t.pairs.contains(&(1, 2)));
        assert_eq!(t.exposures.len(), 7);
    }

    #[test]
    fn scenario_sets() {
        let s2 = ScenarioSpec::new(ScenarioId::S2, 10, 10);
        assert_eq!(s2.truth().weakest, Some(4));
        assert_eq!(s2.truth().exposures.iter().copied().collect::<Vec<_>>(), vec![0, 1, 2, 4]);
        let fixed = ScenarioSpec { typo_fix: true, ..s2 };
        assert!(fixed.truth().exposures.contains(&3));
        let mut v = vec![0.0; 10];
        v[1] = 1.0;
        assert!((s2.truth().eval(&v) - 0.6).abs() < 1e-15);
        let s3 = ScenarioSpec::new(ScenarioId::S3, 10, 10).truth();
        assert_eq!(s3.exposures.iter().copied().collect::<Vec<_>>(), vec![0, 1, 3, 4, 5, 7, 8]);
        assert_eq!(s3.weakest, Some(4));
        let a = ScenarioSpec::new(ScenarioId::A, 10, 10).truth();
        assert_eq!(a.exposures.len(), 8);
        assert!(ScenarioSpec::new(ScenarioId::A, 10, 9).validate().is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = ScenarioSpec::new(ScenarioId::S2, 50, 10);
        let (a, _) = generate(&spec, 3).unwrap();
        let (b, _) = generate(&spec, 3).unwrap();
        let (c, _) = generate(&spec, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.x, c.x);
    }

    #[test]
    fn empirical_covariance_matches() {
        let spec = ScenarioSpec::new(ScenarioId::S1, 100_000, 10);
        let (data, _) = generate(&spec, 1).unwrap();
        let n = data.n() as f64;
        let mean = data.x.row_mean();
        let mut xc = data.x.clone();
        for mut row in xc.row_iter_mut() {
            row -= &mean;
        }
        let emp = xc.tr_mul(&xc) / (n - 1.0);
        assert!((emp - spec.covariance()).abs().max() < 0.02);
    }

    #[test]
    fn default_grids() {
        assert_eq!(default_sample_sizes(10), vec![200, 500, 1000]);
        assert_eq!(default_sample_sizes(20), vec![200, 500, 850, 1000]);
        assert_eq!("a".parse::<ScenarioId>().unwrap(), ScenarioId::A);
        assert!("4".parse::<ScenarioId>().is_err());
    }

    #[test]
    fn one_seed_one_row_per_method_and_order_independent() {
        let spec = ScenarioSpec::new(ScenarioId::S2, 150, 6);
        let cfg = AnalysisConfig::default();
        let methods = [Method::KFull, Method::KSplit];
        let one = run_experiment(&[spec], &methods, &[1], &cfg).unwrap();
        assert_eq!(one.rows.len(), 2);
        let a = run_experiment(&[spec], &methods, &[1, 2, 3], &cfg).unwrap();
        let b = run_experiment(&[spec], &methods, &[3, 1, 2], &cfg).unwrap();
        assert_eq!(a, b);
        let fdp: Vec<f64> = a.replicates.iter().filter(|r| r.method == Method::KFull).map(|r| r.metrics.unwrap().fdp).collect();
        let mean = a.row(ScenarioId::S2, 150, 6, Method::KFull).unwrap().mean("fdp").unwrap();
        assert!((mean - fdp.iter().sum::<f64>() / 3.0).abs() < 1e-15);
    }
}
