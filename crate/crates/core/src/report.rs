//! Selection reports shared by all engines.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{BasisTransform, ExpandedDesign, Group, GroupKind};

pub const SCHEMA_VERSION: u32 = 1;

/// Selection engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Debiased group lasso with chi-squared group tests.
    Dbl,
    /// Knockoff selection and least-squares refit on the full sample.
    KFull,
    /// Knockoff selection and least-squares refit on disjoint halves.
    KSplit,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Dbl, Method::KFull, Method::KSplit];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Dbl => "dbl",
            Method::KFull => "kfull",
            Method::KSplit => "ksplit",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "dbl" => Some(Method::Dbl),
            "kfull" => Some(Method::KFull),
            "ksplit" => Some(Method::KSplit),
            _ => None,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// `f64` that serializes `±∞`/NaN as JSON `null` and reads `null` back as `+∞`.
pub mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Per-group selection statistic (debiased χ² statistic or knockoff W).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStatistic {
    pub kind: GroupKind,
    pub label: String,
    pub statistic: f64,
    pub p_value: Option<f64>,
    pub selected: bool,
}

/// Coefficient estimates of one block with 95% normal intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermEstimate {
    pub kind: GroupKind,
    pub label: String,
    pub estimate: Vec<f64>,
    pub se: Vec<f64>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
}

impl TermEstimate {
    pub fn new(kind: GroupKind, label: String, estimate: Vec<f64>, se: Vec<f64>) -> Self {
        let z = crate::inference::Z95;
        let ci_lo = estimate.iter().zip(&se).map(|(b, s)| b - z * s).collect();
        let ci_hi = estimate.iter().zip(&se).map(|(b, s)| b + z * s).collect();
        TermEstimate { kind, label, estimate, se, ci_lo, ci_hi }
    }
}

/// Selected exposure blocks with coefficients and their joint covariance.
///
/// `terms[i].start` indexes into `coef`; the basis columns come from
/// `transform.expand_mixture`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    pub transform: BasisTransform,
    pub terms: Vec<Group>,
    pub coef: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl MixtureModel {
    /// Picks the blocks `kinds` from a full-design coefficient vector and
    /// covariance laid out like `design`.
    pub fn from_design(
        design: &ExpandedDesign,
        kinds: &[GroupKind],
        coef: &DVector<f64>,
        cov: &DMatrix<f64>,
    ) -> Self {
        let mut cols = Vec::new();
        let mut terms = Vec::new();
        for &kind in kinds {
            let g = design.group(kind).expect("selected group exists in design");
            terms.push(Group { kind, start: cols.len(), len: g.len });
            cols.extend(g.range());
        }
        MixtureModel {
            transform: design.transform.clone(),
            terms,
            coef: DVector::from_iterator(cols.len(), cols.iter().map(|&c| coef[c])),
            cov: cov.select_rows(&cols).select_columns(&cols),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Column indices of the selected terms within `transform.expand_mixture`.
    pub fn mixture_columns(&self) -> Vec<usize> {
        let p = self.transform.p();
        let k = self.transform.k;
        let mut cols = Vec::with_capacity(self.coef.len());
        for t in &self.terms {
            let start = match t.kind {
                GroupKind::Main(j) => j * k,
                GroupKind::Interaction(a, b) => {
                    let pos = self
                        .transform
                        .interactions
                        .iter()
                        .position(|pp| pp.pair == (a, b))
                        .expect("pair present in transform");
                    p * k + pos * k * k
                }
                GroupKind::Covariate(_) => panic!("covariates are not mixture terms"),
            };
            cols.extend(start..start + t.len);
        }
        cols
    }
}

/// Inputs to the interaction-implied FDP inflation bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapSummary {
    pub pairs: usize,
    pub discoveries: usize,
    pub o_d: f64,
}

/// Disjoint selection/inference halves for data splitting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub indices_select: Vec<usize>,
    pub indices_infer: Vec<usize>,
    pub fraction_milli: u32,
    pub seed: u64,
}

/// Everything an engine reports about one analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub schema_version: u32,
    pub method: Method,
    pub k: usize,
    pub q: f64,
    /// Knockoff threshold offset (0 = τ, 1 = τ_f); absent for the debiased engine.
    pub offset: Option<u8>,
    pub seed: u64,
    pub n: usize,
    pub exposure_names: Vec<String>,
    pub covariate_names: Vec<String>,
    pub selected_mains: Vec<usize>,
    pub selected_pairs: Vec<(usize, usize)>,
    /// Union of selected mains and members of selected pairs.
    pub selected_exposures: Vec<usize>,
    #[serde(with = "inf_as_null")]
    pub main_threshold: f64,
    #[serde(with = "inf_as_null")]
    pub interaction_threshold: f64,
    pub statistics: Vec<GroupStatistic>,
    pub terms: Vec<TermEstimate>,
    pub lambda: f64,
    pub sigma_hat: f64,
    pub overlap: Option<OverlapSummary>,
    pub split: Option<SplitPlan>,
    /// False when the intervals reuse the selection sample.
    pub intervals_valid: bool,
    pub warnings: Vec<String>,
    pub model: MixtureModel,
}

impl SelectionReport {
    pub fn selected_kinds(&self) -> Vec<GroupKind> {
        self.selected_mains
            .iter()
            .map(|&j| GroupKind::Main(j))
            .chain(self.selected_pairs.iter().map(|&(a, b)| GroupKind::Interaction(a, b)))
            .collect()
    }
}

/// Union of mains and pair members, sorted.
pub fn implied_exposures(mains: &[usize], pairs: &[(usize, usize)]) -> Vec<usize> {
    let mut set: std::collections::BTreeSet<usize> = mains.iter().copied().collect();
    for &(a, b) in pairs {
        set.insert(a);
        set.insert(b);
    }
    set.into_iter().collect()
}
