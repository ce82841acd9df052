//! Error rates, power, estimation accuracy and the interaction-implied FDP bound.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::MixturePrediction;
use crate::report::{OverlapSummary, SelectionReport};

type TruthFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Ground truth of a simulation: relevant exposures, interacting pairs and
/// the mixture function itself.
#[derive(Clone)]
pub struct TruthSpec {
    pub exposures: BTreeSet<usize>,
    pub pairs: BTreeSet<(usize, usize)>,
    /// Exposure with the weakest signal, tracked separately for power.
    pub weakest: Option<usize>,
    f: TruthFn,
}

impl fmt::Debug for TruthSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TruthSpec")
            .field("exposures", &self.exposures)
            .field("pairs", &self.pairs)
            .field("weakest", &self.weakest)
            .finish_non_exhaustive()
    }
}

impl TruthSpec {
    pub fn new(
        exposures: impl IntoIterator<Item = usize>,
        pairs: impl IntoIterator<Item = (usize, usize)>,
        weakest: Option<usize>,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        let exposures: BTreeSet<usize> = exposures.into_iter().collect();
        let pairs: BTreeSet<(usize, usize)> = pairs.into_iter().map(ordered).collect();
        if let Some(&(a, b)) = pairs.iter().find(|(a, b)| !exposures.contains(a) || !exposures.contains(b)) {
            return Err(Error::InvalidArgument(format!("pair ({a}, {b}) has a member outside the true exposure set")));
        }
        Ok(TruthSpec { exposures, pairs, weakest, f: Arc::new(f) })
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

fn ordered((a, b): (usize, usize)) -> (usize, usize) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

fn proportion(false_count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        false_count as f64 / total as f64
    }
}

/// False discovery proportion over exposures, with `0/0 = 0`.
pub fn fdp(selected: &[usize], truth: &BTreeSet<usize>) -> f64 {
    let sel: BTreeSet<usize> = selected.iter().copied().collect();
    proportion(sel.iter().filter(|j| !truth.contains(j)).count(), sel.len())
}

/// False discovery proportion over unordered pairs, with `0/0 = 0`.
pub fn fdp_int(selected: &[(usize, usize)], truth: &BTreeSet<(usize, usize)>) -> f64 {
    let sel: BTreeSet<(usize, usize)> = selected.iter().copied().map(ordered).collect();
    let truth: BTreeSet<(usize, usize)> = truth.iter().copied().map(ordered).collect();
    proportion(sel.iter().filter(|p| !truth.contains(p)).count(), sel.len())
}

/// Exposures appearing in at least one selected pair.
pub fn pair_members(pairs: &[(usize, usize)]) -> BTreeSet<usize> {
    pairs.iter().flat_map(|&(a, b)| [a, b]).collect()
}

/// Pair count, implied exposure count `D` and overlap `O_d = #pairs − D/2`.
pub fn overlap_summary(pairs: &[(usize, usize)]) -> Option<OverlapSummary> {
    let unique: BTreeSet<(usize, usize)> = pairs.iter().copied().map(ordered).collect();
    if unique.is_empty() {
        return None;
    }
    let discoveries = pair_members(&unique.iter().copied().collect::<Vec<_>>()).len();
    Some(OverlapSummary { pairs: unique.len(), discoveries, o_d: unique.len() as f64 - discoveries as f64 / 2.0 })
}

/// `FDP_int · (1 + 2 O_d / D)`, an upper bound on the FDP of the exposures
/// implied by the selected pairs. Absent without selected pairs.
pub fn fdp_bound(selected: &[(usize, usize)], truth: &BTreeSet<(usize, usize)>) -> Option<(f64, f64)> {
    let ov = overlap_summary(selected)?;
    let bound = fdp_int(selected, truth) * (1.0 + 2.0 * ov.o_d / ov.discoveries as f64);
    Some((ov.o_d, bound))
}

/// Metrics of one simulated replicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicateMetrics {
    /// FDP over the union of main-effect and interaction-implied exposures.
    pub fdp: f64,
    pub fdp_int: f64,
    /// FDP over interaction-implied exposures only (the quantity the bound covers).
    pub fdp_implied: Option<f64>,
    pub power: Option<f64>,
    pub power_int: Option<f64>,
    pub power_weakest: Option<f64>,
    pub mse_f: f64,
    pub coverage95: f64,
    pub o_d: Option<f64>,
    /// `1 + 2 O_d / D`.
    pub inflation: Option<f64>,
    pub fdp_bound: Option<f64>,
}

impl ReplicateMetrics {
    pub const FIELDS: [&'static str; 11] = [
        "fdp",
        "fdp_int",
        "fdp_implied",
        "power",
        "power_int",
        "power_weakest",
        "mse_f",
        "coverage95",
        "o_d",
        "inflation",
        "fdp_bound",
    ];

    /// Values in `FIELDS` order.
    pub fn values(&self) -> [Option<f64>; 11] {
        [
            Some(self.fdp),
            Some(self.fdp_int),
            self.fdp_implied,
            self.power,
            self.power_int,
            self.power_weakest,
            Some(self.mse_f),
            Some(self.coverage95),
            self.o_d,
            self.inflation,
            self.fdp_bound,
        ]
    }
}

/// Scores a report against the truth. `prediction` must be evaluated at the
/// replicate's own exposure rows.
///
/// The mixture effect is identified only up to an additive constant (the
/// intercept absorbs it). The fitted effect averages to zero over the rows
/// the model was fitted on, so the truth is centered over those same rows:
/// the inference half for split reports, every point otherwise.
pub fn replicate_metrics(report: &SelectionReport, truth: &TruthSpec, prediction: &MixturePrediction) -> ReplicateMetrics {
    let exposures = &report.selected_exposures;
    let fdp_all = fdp(exposures, &truth.exposures);
    let fdp_pairs = fdp_int(&report.selected_pairs, &truth.pairs);
    let hits = |sel: &[usize], set: &BTreeSet<usize>| sel.iter().filter(|j| set.contains(j)).count();
    let power = (!truth.exposures.is_empty())
        .then(|| hits(exposures, &truth.exposures) as f64 / truth.exposures.len() as f64);
    let pairs_sel: BTreeSet<(usize, usize)> = report.selected_pairs.iter().copied().map(ordered).collect();
    let power_int = (!truth.pairs.is_empty())
        .then(|| truth.pairs.iter().filter(|p| pairs_sel.contains(p)).count() as f64 / truth.pairs.len() as f64);
    let power_weakest = truth.weakest.map(|w| if exposures.contains(&w) { 1.0 } else { 0.0 });
    let implied: Vec<usize> = pair_members(&report.selected_pairs).into_iter().collect();
    let fdp_implied = (!implied.is_empty()).then(|| fdp(&implied, &truth.exposures));
    let overlap = overlap_summary(&report.selected_pairs);
    let inflation = overlap.map(|ov| 1.0 + 2.0 * ov.o_d / ov.discoveries as f64);

    let m = prediction.f_hat.len();
    let truth_vals: Vec<f64> = prediction.points.iter().map(|x| truth.eval(x)).collect();
    let fit_rows: Vec<usize> = match &report.split {
        Some(plan) if m == report.n => plan.indices_infer.clone(),
        _ => (0..m).collect(),
    };
    let mean_truth = fit_rows.iter().map(|&i| truth_vals[i]).sum::<f64>() / fit_rows.len().max(1) as f64;
    let mut se_sum = 0.0;
    let mut covered = 0usize;
    for i in 0..m {
        let target = truth_vals[i] - mean_truth;
        se_sum += (prediction.f_hat[i] - target).powi(2);
        if prediction.ci_lo[i] <= target && target <= prediction.ci_hi[i] {
            covered += 1;
        }
    }
    ReplicateMetrics {
        fdp: fdp_all,
        fdp_int: fdp_pairs,
        fdp_implied,
        power,
        power_int,
        power_weakest,
        mse_f: se_sum / m.max(1) as f64,
        coverage95: covered as f64 / m.max(1) as f64,
        o_d: overlap.map(|ov| ov.o_d),
        inflation,
        fdp_bound: inflation.map(|f| f * fdp_pairs),
    }
}

/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Mean and Monte Carlo standard error over the present values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: Option<f64>,
    pub se: Option<f64>,
    pub count: usize,
}

pub fn summarize(values: impl IntoIterator<Item = Option<f64>>) -> Summary {
    let v: Vec<f64> = values.into_iter().flatten().collect();
    let count = v.len();
    if count == 0 {
        return Summary { mean: None, se: None, count };
    }
    let mean = compensated_sum(v.iter().copied()) / count as f64;
    let se = (count > 1).then(|| {
        let ss = compensated_sum(v.iter().map(|x| (x - mean).powi(2)));
        (ss / (count - 1) as f64 / count as f64).sqrt()
    });
    Summary { mean: Some(mean), se, count }
}

/// Monte Carlo estimate of `√(E[FDP_int²] · E[(1 + 2O_d/D)²])`, the
/// Cauchy–Schwarz bound on the implied-exposure FDR. Replicates without
/// selected pairs contribute `FDP_int = 0` and an inflation factor of 1.
pub fn cauchy_schwarz_estimate(reps: &[ReplicateMetrics]) -> Option<f64> {
    if reps.is_empty() {
        return None;
    }
    let n = reps.len() as f64;
    let m2 = compensated_sum(reps.iter().map(|r| r.fdp_int * r.fdp_int)) / n;
    let f2 = compensated_sum(reps.iter().map(|r| r.inflation.unwrap_or(1.0).powi(2))) / n;
    Some((m2 * f2).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set<T: Ord + Copy>(v: &[T]) -> BTreeSet<T> {
        v.iter().copied().collect()
    }

    #[test]
    fn fdp_conventions() {
        assert_eq!(fdp(&[], &set(&[1, 2])), 0.0);
        assert_eq!(fdp(&[1, 2], &set(&[1, 2, 3])), 0.0);
        assert_eq!(fdp_int(&[], &set(&[(1, 2)])), 0.0);
        assert_eq!(fdp_int(&[(4, 5), (6, 7)], &set(&[(1, 2)])), 1.0);
    }

    #[test]
    fn worked_example_all_pairs_of_four() {
        // true pairs: all six among exposures 1..4; one false pair (5, 6)
        let truth_pairs: Vec<(usize, usize)> =
            (1..=4).flat_map(|a| (a + 1..=4).map(move |b| (a, b))).collect();
        let mut selected = truth_pairs.clone();
        selected.push((5, 6));
        let truth_exposures = set(&[1, 2, 3, 4]);
        let implied: Vec<usize> = pair_members(&selected).into_iter().collect();
        assert_eq!(implied, vec![1, 2, 3, 4, 5, 6]);
        assert_eq!(fdp_int(&selected, &set(&truth_pairs)), 1.0 / 7.0);
        assert_eq!(fdp(&implied, &truth_exposures), 2.0 / 6.0);
        let (o_d, bound) = fdp_bound(&selected, &set(&truth_pairs)).unwrap();
        assert_eq!(o_d, 7.0 - 3.0);
        assert!((bound - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn overlap_examples() {
        let ov = overlap_summary(&[(1, 2), (2, 3)]).unwrap();
        assert_eq!((ov.pairs, ov.discoveries, ov.o_d), (2, 3, 0.5));
        let ov = overlap_summary(&[(1, 2), (3, 4)]).unwrap();
        assert_eq!((ov.discoveries, ov.o_d), (4, 0.0));
        let truth = set(&[(1, 2)]);
        let (_, bound) = fdp_bound(&[(1, 2), (3, 4)], &truth).unwrap();
        assert_eq!(bound, fdp_int(&[(1, 2), (3, 4)], &truth));
        assert!(overlap_summary(&[]).is_none());
    }

    #[test]
    fn rates_ignore_order_and_duplicates() {
        let truth = set(&[(0, 1), (2, 3)]);
        let a = fdp_int(&[(1, 0), (4, 5), (0, 1)], &truth);
        let b = fdp_int(&[(4, 5), (0, 1)], &truth);
        assert_eq!(a, b);
        assert_eq!(fdp(&[3, 1, 3, 9], &set(&[1, 3])), fdp(&[9, 1, 3], &set(&[1, 3])));
    }

    #[test]
    fn summary_and_sum() {
        let s = summarize([Some(1.0), None, Some(3.0)]);
        assert_eq!(s.count, 2);
        assert_eq!(s.mean, Some(2.0));
        assert!((s.se.unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(summarize([None]).mean, None);
        assert_eq!(compensated_sum([1e16, 1.0, -1e16]), 1.0);
    }

    proptest! {
        #[test]
        fn implied_fdp_never_exceeds_bound(
            pairs in proptest::collection::vec((0usize..10, 0usize..10), 1..20),
            true_pairs in proptest::collection::vec((0usize..10, 0usize..10), 0..8),
        ) {
            let pairs: Vec<(usize, usize)> = pairs.into_iter().filter(|(a, b)| a != b).collect();
            prop_assume!(!pairs.is_empty());
            let truth: BTreeSet<(usize, usize)> =
                true_pairs.into_iter().filter(|(a, b)| a != b).map(ordered).collect();
            let members = pair_members(&truth.iter().copied().collect::<Vec<_>>());
            let implied: Vec<usize> = pair_members(&pairs).into_iter().collect();
            let (_, bound) = fdp_bound(&pairs, &truth).unwrap();
            prop_assert!(fdp(&implied, &members) <= bound + 1e-12);
        }
    }
}
