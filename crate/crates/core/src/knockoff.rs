//! Second-order Gaussian group knockoffs, W statistics, the knockoff
//! threshold and the K-Full / K-Split pipelines with least-squares refits.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::basis::{build_design, ExpandedDesign, GroupKind, RawData};
use crate::error::{Error, Result};
use crate::grouplasso::{center_columns, cv_path, CvConfig, GramProblem, GroupLassoFit, PenaltyGroup};
use crate::metrics::overlap_summary;
use crate::report::{
    implied_exposures, GroupStatistic, Method, MixtureModel, SelectionReport, SplitPlan, TermEstimate, SCHEMA_VERSION,
};
use crate::rng::{derive_seed, substream, Stream};

/// Largest diagonal shrinkage accepted before giving up on the construction.
pub const MAX_SHRINKAGE: f64 = 0.1;

/// A knockoff copy of a design together with the construction parameters.
#[derive(Debug, Clone)]
pub struct KnockoffDraw {
    pub matrix: DMatrix<f64>,
    /// Equicorrelated `s` on the correlation scale.
    pub s_corr: f64,
    /// `s` mapped back to the covariance scale, per column.
    pub s: DVector<f64>,
    /// Estimated covariance `DᵀD/n` of the centered input.
    pub sigma: DMatrix<f64>,
    /// Weight ε of the identity in `(1 − ε)R + εI`.
    pub shrinkage: f64,
}

/// Knockoff sampling settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnockoffOptions {
    /// Smallest eigenvalue allowed in the correlation matrix before shrinking.
    pub eigen_floor: f64,
}

impl Default for KnockoffOptions {
    fn default() -> Self {
        KnockoffOptions { eigen_floor: 1e-3 }
    }
}

/// Model-X knockoffs for the rows of `d` under a Gaussian fit to its first
/// two moments, using the equicorrelated construction.
pub fn gaussian_knockoffs(d: &DMatrix<f64>, seed: u64) -> Result<KnockoffDraw> {
    gaussian_knockoffs_with(d, seed, KnockoffOptions::default())
}

pub fn gaussian_knockoffs_with(d: &DMatrix<f64>, seed: u64, opts: KnockoffOptions) -> Result<KnockoffDraw> {
    let n = d.nrows();
    let p = d.ncols();
    if n < 2 || p == 0 {
        return Err(Error::InvalidArgument(format!("cannot build knockoffs for a {n}x{p} design")));
    }
    let mut z = d.clone();
    center_columns(&mut z);
    let sigma = z.tr_mul(&z) / n as f64;
    let sd: Vec<f64> = (0..p).map(|j| sigma[(j, j)].sqrt()).collect();
    if let Some(j) = sd.iter().position(|&s| !(s > 1e-12)) {
        return Err(Error::DegenerateColumn { column: format!("design column {j}") });
    }
    for (j, mut col) in z.column_iter_mut().enumerate() {
        col /= sd[j];
    }
    let mut corr = DMatrix::from_fn(p, p, |a, b| sigma[(a, b)] / (sd[a] * sd[b]));
    corr = (&corr + corr.transpose()) * 0.5;

    let eig = SymmetricEigen::new(corr);
    let lmin = eig.eigenvalues.min();
    let shrinkage = if lmin < opts.eigen_floor { (opts.eigen_floor - lmin) / (1.0 - lmin) } else { 0.0 };
    if shrinkage > MAX_SHRINKAGE {
        return Err(Error::Conditioning { shrinkage });
    }
    // the shrunk matrix shares eigenvectors with R
    let lambdas: Vec<f64> = eig.eigenvalues.iter().map(|&l| (1.0 - shrinkage) * l + shrinkage).collect();
    let lmin_shrunk = lambdas.iter().copied().fold(f64::INFINITY, f64::min);
    let s_corr = (2.0 * lmin_shrunk).min(1.0);
    let u = &eig.eigenvectors;

    // E[Z̃ | Z] = Z (I − s R⁻¹),  Cov[Z̃ | Z] = 2sI − s²R⁻¹
    let scaled_inv = DMatrix::from_fn(p, p, |a, b| (0..p).map(|i| u[(a, i)] * u[(b, i)] / lambdas[i]).sum::<f64>());
    let mean_map = DMatrix::identity(p, p) - scaled_inv * s_corr;
    let root = DMatrix::from_fn(p, p, |a, b| {
        (0..p)
            .map(|i| {
                let v = (s_corr * (2.0 - s_corr / lambdas[i])).max(0.0).sqrt();
                u[(a, i)] * v * u[(b, i)]
            })
            .sum::<f64>()
    });
    let mut rng = substream(seed, Stream::Knockoff);
    let noise: DMatrix<f64> = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
    let mut ko = &z * mean_map + noise * root;
    for (j, mut col) in ko.column_iter_mut().enumerate() {
        col *= sd[j];
    }
    center_columns(&mut ko);
    let s = DVector::from_iterator(p, sd.iter().map(|v| s_corr * v * v));
    Ok(KnockoffDraw { matrix: ko, s_corr, s, sigma, shrinkage })
}

/// One block of the augmented design `[D, D̃]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentedGroup {
    pub kind: GroupKind,
    pub knockoff: bool,
    pub start: usize,
    pub len: usize,
}

impl AugmentedGroup {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// Group map of `[D, D̃]`: original blocks first, knockoff blocks shifted by
/// `ncols`. Original covariates stay unpenalized; their knockoffs are
/// penalized like any other block.
pub fn augmented_groups(design: &ExpandedDesign) -> Vec<AugmentedGroup> {
    let offset = design.ncols();
    let originals = design.groups.iter().map(|g| AugmentedGroup { kind: g.kind, knockoff: false, start: g.start, len: g.len });
    let copies = design.groups.iter().map(|g| AugmentedGroup { kind: g.kind, knockoff: true, start: g.start + offset, len: g.len });
    originals.chain(copies).collect()
}

fn augmented_penalties(groups: &[AugmentedGroup]) -> Vec<PenaltyGroup> {
    groups
        .iter()
        .map(|g| PenaltyGroup {
            start: g.start,
            len: g.len,
            weight: if g.knockoff || g.kind.is_penalized() { (g.len as f64).sqrt() } else { 0.0 },
        })
        .collect()
}

/// `W_g = ‖β̂_g‖ − ‖β̂_g̃‖` for every penalized original group, in group order.
pub fn w_statistics(beta: &DVector<f64>, groups: &[AugmentedGroup]) -> Result<Vec<(GroupKind, f64)>> {
    let copies: BTreeMap<GroupKind, &AugmentedGroup> =
        groups.iter().filter(|g| g.knockoff).map(|g| (g.kind, g)).collect();
    let norm = |g: &AugmentedGroup| g.range().map(|c| beta[c] * beta[c]).sum::<f64>().sqrt();
    let mut out = Vec::new();
    for g in groups.iter().filter(|g| !g.knockoff && g.kind.is_penalized()) {
        let ko = copies
            .get(&g.kind)
            .filter(|c| c.len == g.len)
            .ok_or_else(|| Error::UnpairedGroup(g.kind.label()))?;
        out.push((g.kind, norm(g) - norm(ko)));
    }
    Ok(out)
}

/// Data-dependent knockoff threshold: the smallest `t` among the nonzero
/// `|W|` with `(offset + #{W ≤ −t}) / max(1, #{W ≥ t}) ≤ q`, else `+∞`.
pub fn knockoff_threshold(w: &[f64], q: f64, offset: u8) -> f64 {
    let mut cand: Vec<f64> = w.iter().map(|v| v.abs()).filter(|&v| v > 0.0).collect();
    cand.sort_by(f64::total_cmp);
    cand.dedup();
    let mut neg: Vec<f64> = w.iter().filter(|&&v| v < 0.0).map(|v| -v).collect();
    let mut pos: Vec<f64> = w.iter().filter(|&&v| v > 0.0).copied().collect();
    neg.sort_by(f64::total_cmp);
    pos.sort_by(f64::total_cmp);
    // pointers into the sorted magnitudes: counts of values ≥ t
    let (mut in_neg, mut in_pos) = (0, 0);
    for t in cand {
        while in_neg < neg.len() && neg[in_neg] < t {
            in_neg += 1;
        }
        while in_pos < pos.len() && pos[in_pos] < t {
            in_pos += 1;
        }
        let fp = offset as f64 + (neg.len() - in_neg) as f64;
        let disc = (pos.len() - in_pos).max(1) as f64;
        if fp / disc <= q {
            return t;
        }
    }
    f64::INFINITY
}

/// Knockoff filter applied to one family of groups.
#[derive(Debug, Clone, PartialEq)]
pub struct KnockoffFilterResult {
    pub w: Vec<(GroupKind, f64)>,
    pub threshold: f64,
    pub offset: u8,
    pub selected: Vec<GroupKind>,
    pub seed: u64,
}

impl KnockoffFilterResult {
    pub fn new(w: Vec<(GroupKind, f64)>, q: f64, offset: u8, seed: u64) -> Self {
        let values: Vec<f64> = w.iter().map(|x| x.1).collect();
        let threshold = knockoff_threshold(&values, q, offset);
        let selected = w.iter().filter(|x| x.1 >= threshold).map(|x| x.0).collect();
        KnockoffFilterResult { w, threshold, offset, selected, seed }
    }
}

impl SplitPlan {
    /// Random partition of `0..n`; the selection half gets `round(fraction·n)`
    /// rows. Both index lists are sorted.
    pub fn new(n: usize, fraction: f64, seed: u64) -> Result<SplitPlan> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::InvalidArgument(format!("split fraction must lie in (0, 1), got {fraction}")));
        }
        if n < 2 {
            return Err(Error::InvalidArgument(format!("cannot split {n} rows")));
        }
        let n_select = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut substream(seed, Stream::Split));
        let mut indices_select = order[..n_select].to_vec();
        let mut indices_infer = order[n_select..].to_vec();
        indices_select.sort_unstable();
        indices_infer.sort_unstable();
        Ok(SplitPlan { indices_select, indices_infer, fraction_milli: (fraction * 1000.0).round() as u32, seed })
    }
}

/// Settings shared by both knockoff pipelines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnockoffConfig {
    /// 0 for the modified-FDR threshold, 1 for the offset threshold.
    pub offset: u8,
    pub split_fraction: f64,
    pub cv: CvConfig,
    pub sampling: KnockoffOptions,
}

impl Default for KnockoffConfig {
    fn default() -> Self {
        KnockoffConfig { offset: 0, split_fraction: 0.5, cv: CvConfig::default(), sampling: KnockoffOptions::default() }
    }
}

/// Result of the selection stage on one sample.
#[derive(Debug, Clone)]
pub struct KnockoffSelection {
    pub design: ExpandedDesign,
    pub draw: KnockoffDraw,
    pub fit: GroupLassoFit,
    pub mains: KnockoffFilterResult,
    pub interactions: KnockoffFilterResult,
}

impl KnockoffSelection {
    pub fn selected_kinds(&self) -> Vec<GroupKind> {
        self.mains.selected.iter().chain(&self.interactions.selected).copied().collect()
    }
}

/// Knockoffs, cross-validated augmented group lasso and separate thresholds
/// for main-effect and interaction groups.
pub fn knockoff_select(data: &RawData, k: usize, q: f64, seed: u64, cfg: &KnockoffConfig) -> Result<KnockoffSelection> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!("q must lie in (0, 1), got {q}")));
    }
    let design = build_design(data, k)?;
    let draw = gaussian_knockoffs_with(&design.matrix, seed, cfg.sampling)?;
    let n = design.n();
    let m = design.ncols();
    let mut aug = DMatrix::zeros(n, 2 * m);
    aug.columns_mut(0, m).copy_from(&design.matrix);
    aug.columns_mut(m, m).copy_from(&draw.matrix);
    let groups = augmented_groups(&design);
    let penalties = augmented_penalties(&groups);
    let mut cv = cfg.cv;
    cv.seed = derive_seed(seed, 21);
    let path = cv_path(&aug, &data.y, &penalties, &cv)?;
    let fit = GramProblem::new(&aug, &data.y, &penalties)?.fit_along(path.path_to_best(), cv.solver);
    let w = w_statistics(&fit.beta, &groups)?;
    let (main_w, pair_w): (Vec<_>, Vec<_>) = w.into_iter().partition(|(g, _)| matches!(g, GroupKind::Main(_)));
    Ok(KnockoffSelection {
        design,
        draw,
        mains: KnockoffFilterResult::new(main_w, q, cfg.offset, seed),
        interactions: KnockoffFilterResult::new(pair_w, q, cfg.offset, seed),
        fit,
    })
}

/// Ordinary least-squares refit of `y` on the covariates and the blocks
/// `kinds`, with coefficients and covariance laid out like `design`.
#[derive(Debug, Clone)]
pub struct Refit {
    pub coef: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub sigma_hat: f64,
    /// Design columns dropped as linearly dependent on earlier ones.
    pub dropped: Vec<usize>,
}

/// Relative residual norm below which a column counts as collinear.
const COLLINEAR_TOL: f64 = 1e-8;

pub fn least_squares_refit(design: &ExpandedDesign, y: &DVector<f64>, kinds: &[GroupKind]) -> Result<Refit> {
    let mut cols: Vec<usize> = design.groups.iter().filter(|g| !g.kind.is_penalized()).flat_map(|g| g.range()).collect();
    for &kind in kinds {
        let g = design.group(kind).ok_or_else(|| Error::InvalidArgument(format!("unknown group {}", kind.label())))?;
        cols.extend(g.range());
    }
    let n = design.n();
    let mut x = design.matrix.select_columns(&cols);
    center_columns(&mut x);
    let ybar = y.mean();
    let yc = y.add_scalar(-ybar);

    // greedy Gram–Schmidt pass (twice, for stability) to find dependent columns
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut keep = Vec::new();
    let mut dropped = Vec::new();
    for (pos, col) in x.column_iter().enumerate() {
        let norm0 = col.norm();
        let mut v = col.into_owned();
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&v);
                v.axpy(-c, b, 1.0);
            }
        }
        let r = v.norm();
        if norm0 > 0.0 && r > COLLINEAR_TOL * norm0 {
            basis.push(v / r);
            keep.push(pos);
        } else {
            dropped.push(cols[pos]);
        }
    }
    let xk = x.select_columns(&keep);
    let resid_df = n as isize - keep.len() as isize - 1;
    if resid_df <= 0 {
        return Err(Error::InvalidArgument(format!(
            "{n} rows cannot support a refit with {} columns",
            keep.len()
        )));
    }
    let gram = xk.tr_mul(&xk);
    let chol = gram.cholesky().ok_or_else(|| Error::Collinear { context: "least-squares refit".into(), columns: dropped.clone() })?;
    let b = chol.solve(&xk.tr_mul(&yc));
    let rss = (&yc - &xk * &b).norm_squared();
    let s2 = rss / resid_df as f64;
    let inv = chol.inverse() * s2;

    let m = design.ncols();
    let mut coef = DVector::zeros(m);
    let mut cov = DMatrix::zeros(m, m);
    for (a, &pa) in keep.iter().enumerate() {
        coef[cols[pa]] = b[a];
        for (c, &pc) in keep.iter().enumerate() {
            cov[(cols[pa], cols[pc])] = inv[(a, c)];
        }
    }
    Ok(Refit { coef, cov, sigma_hat: s2.sqrt(), dropped })
}

fn mains_and_pairs(kinds: &[GroupKind]) -> (Vec<usize>, Vec<(usize, usize)>) {
    let mut mains = Vec::new();
    let mut pairs = Vec::new();
    for kind in kinds {
        match *kind {
            GroupKind::Main(j) => mains.push(j),
            GroupKind::Interaction(a, b) => pairs.push((a, b)),
            GroupKind::Covariate(_) => {}
        }
    }
    (mains, pairs)
}

fn assemble(
    method: Method,
    data: &RawData,
    k: usize,
    q: f64,
    seed: u64,
    sel: &KnockoffSelection,
    infer_design: &ExpandedDesign,
    refit: &Refit,
    split: Option<SplitPlan>,
) -> SelectionReport {
    let kinds = sel.selected_kinds();
    let (selected_mains, selected_pairs) = mains_and_pairs(&kinds);
    let mut warnings = Vec::new();
    if !sel.fit.converged {
        warnings.push("augmented group lasso did not converge".into());
    }
    if sel.draw.shrinkage > 0.0 {
        warnings.push(format!("knockoff covariance shrunk toward identity by {:.3e}", sel.draw.shrinkage));
    }
    if !refit.dropped.is_empty() {
        let msg = format!("refit dropped collinear design columns {:?}", refit.dropped);
        log::warn!("{msg}");
        warnings.push(msg);
    }
    if method == Method::KFull {
        warnings.push("intervals reuse the selection sample and are not valid post-selection".into());
    }
    let statistics = sel
        .mains
        .w
        .iter()
        .map(|x| (x, &sel.mains))
        .chain(sel.interactions.w.iter().map(|x| (x, &sel.interactions)))
        .map(|(&(kind, w), filter)| GroupStatistic {
            kind,
            label: sel.design.group_label(kind),
            statistic: w,
            p_value: None,
            selected: filter.selected.contains(&kind),
        })
        .collect();
    let se = refit.cov.diagonal().map(|v| v.max(0.0).sqrt());
    let terms = infer_design
        .groups
        .iter()
        .filter(|g| !g.kind.is_penalized() || kinds.contains(&g.kind))
        .map(|g| {
            TermEstimate::new(
                g.kind,
                infer_design.group_label(g.kind),
                g.range().map(|c| refit.coef[c]).collect(),
                g.range().map(|c| se[c]).collect(),
            )
        })
        .collect();
    SelectionReport {
        schema_version: SCHEMA_VERSION,
        method,
        k,
        q,
        offset: Some(sel.mains.offset),
        seed,
        n: data.n(),
        exposure_names: data.exposure_names.clone(),
        covariate_names: data.covariate_names.clone(),
        selected_exposures: implied_exposures(&selected_mains, &selected_pairs),
        overlap: overlap_summary(&selected_pairs),
        selected_mains,
        selected_pairs,
        main_threshold: sel.mains.threshold,
        interaction_threshold: sel.interactions.threshold,
        statistics,
        terms,
        lambda: sel.fit.lambda,
        sigma_hat: refit.sigma_hat,
        split,
        intervals_valid: method != Method::KFull,
        warnings,
        model: MixtureModel::from_design(infer_design, &kinds, &refit.coef, &refit.cov),
    }
}

/// Selection and least-squares refit on the same full sample.
pub fn run_kfull(data: &RawData, k: usize, q: f64, seed: u64, cfg: &KnockoffConfig) -> Result<SelectionReport> {
    let sel = knockoff_select(data, k, q, seed, cfg)?;
    let refit = least_squares_refit(&sel.design, &data.y, &sel.selected_kinds())?;
    Ok(assemble(Method::KFull, data, k, q, seed, &sel, &sel.design, &refit, None))
}

/// Selection on one part of a random split, refit on a design built afresh
/// from the other part.
pub fn run_ksplit(data: &RawData, k: usize, q: f64, seed: u64, cfg: &KnockoffConfig) -> Result<SelectionReport> {
    let plan = SplitPlan::new(data.n(), cfg.split_fraction, seed)?;
    let select = data.subset(&plan.indices_select);
    let infer = data.subset(&plan.indices_infer);
    let sel = knockoff_select(&select, k, q, seed, cfg)?;
    let infer_design = build_design(&infer, k)?;
    let refit = least_squares_refit(&infer_design, &infer.y, &sel.selected_kinds())?;
    Ok(assemble(Method::KSplit, data, k, q, seed, &sel, &infer_design, &refit, Some(plan)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    fn cross_cov(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        a.tr_mul(b) / a.nrows() as f64
    }

    /// Direct evaluation of the ratio at every candidate.
    fn brute_threshold(w: &[f64], q: f64, offset: u8) -> f64 {
        let mut best = f64::INFINITY;
        for &c in w {
            let t = c.abs();
            if t == 0.0 {
                continue;
            }
            let fp = offset as f64 + w.iter().filter(|&&v| v <= -t).count() as f64;
            let disc = w.iter().filter(|&&v| v >= t).count().max(1) as f64;
            if fp / disc <= q && t < best {
                best = t;
            }
        }
        best
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(knockoff_threshold(&[0.5, 2.0, 1.0], 0.2, 0), 0.5);
        assert_eq!(knockoff_threshold(&[5.0], 0.2, 1), f64::INFINITY);
        let w = [3.0, 2.0, 1.0, -1.0, -2.0, -3.0];
        assert_eq!(knockoff_threshold(&w, 0.2, 0), brute_threshold(&w, 0.2, 0));
        assert_eq!(knockoff_threshold(&[], 0.2, 0), f64::INFINITY);
        assert_eq!(knockoff_threshold(&[0.0, 0.0], 0.2, 0), f64::INFINITY);
        // ties at the threshold count on both sides
        let w = [1.0, 1.0, 1.0, 1.0, -1.0];
        assert_eq!(knockoff_threshold(&w, 0.2, 0), brute_threshold(&w, 0.2, 0));
        assert_eq!(knockoff_threshold(&w, 0.25, 0), 1.0);
    }

    proptest! {
        #[test]
        fn threshold_matches_brute_force(
            w in proptest::collection::vec(
                prop_oneof![Just(0.0), (-5i32..=5).prop_map(|v| v as f64), -5.0f64..5.0],
                0..30,
            ),
            q in 0.01f64..0.99,
            offset in 0u8..=1,
        ) {
            prop_assert_eq!(knockoff_threshold(&w, q, offset), brute_threshold(&w, q, offset));
        }

        #[test]
        fn offset_one_selects_subset_and_q_monotone(
            w in proptest::collection::vec(-5.0f64..5.0, 0..30),
            q1 in 0.01f64..0.5,
            dq in 0.0f64..0.4,
        ) {
            let t0 = knockoff_threshold(&w, q1, 0);
            let t1 = knockoff_threshold(&w, q1, 1);
            prop_assert!(t1 >= t0);
            prop_assert!(knockoff_threshold(&w, q1 + dq, 0) <= t0);
        }
    }

    #[test]
    fn identity_covariance_gives_independent_copies() {
        let n = 2000;
        let d = gaussian(n, 6, 3);
        let draw = gaussian_knockoffs(&d, 7).unwrap();
        assert!(draw.s_corr > 0.8);
        let z = {
            let mut z = d.clone();
            center_columns(&mut z);
            z
        };
        let cc = cross_cov(&z, &draw.matrix);
        for j in 0..6 {
            let var_ko = draw.matrix.column(j).norm_squared() / n as f64;
            let corr = cc[(j, j)] / (draw.sigma[(j, j)] * var_ko).sqrt();
            assert!(corr.abs() <= 0.1, "{corr}");
        }
    }

    #[test]
    fn equicorrelated_s_from_smallest_eigenvalue() {
        // columns with pairwise correlation 0.8: λ_min = 0.2, so s = 0.4
        let n = 400;
        let base = gaussian(n, 4, 11);
        let shared = gaussian(n, 1, 12);
        let mut d = DMatrix::from_fn(n, 4, |i, j| 0.8f64.sqrt() * shared[(i, 0)] + 0.2f64.sqrt() * base[(i, j)]);
        center_columns(&mut d);
        let sigma = d.tr_mul(&d) / n as f64;
        let sd: Vec<f64> = (0..4).map(|j| sigma[(j, j)].sqrt()).collect();
        let corr = DMatrix::from_fn(4, 4, |a, b| sigma[(a, b)] / (sd[a] * sd[b]));
        let lmin = corr.symmetric_eigenvalues().min();
        let draw = gaussian_knockoffs(&d, 1).unwrap();
        assert!((draw.s_corr - (2.0 * lmin).min(1.0)).abs() < 1e-12);
        assert!((draw.s_corr - 0.4).abs() < 0.1);
        for j in 0..4 {
            assert!((draw.s[j] - draw.s_corr * sigma[(j, j)]).abs() < 1e-12);
        }
    }

    #[test]
    fn moments_match_on_correlated_design() {
        let n = 2000;
        let base = gaussian(n, 5, 21);
        let mut d = base.clone();
        for j in 1..5 {
            let prev = d.column(j - 1).into_owned();
            d.column_mut(j).axpy(0.6, &prev, 0.8);
        }
        let draw = gaussian_knockoffs(&d, 5).unwrap();
        let mut z = d.clone();
        center_columns(&mut z);
        let kk = cross_cov(&draw.matrix, &draw.matrix);
        let dk = cross_cov(&z, &draw.matrix);
        let target = &draw.sigma - DMatrix::from_diagonal(&draw.s);
        assert!((kk - &draw.sigma).abs().max() <= 0.1);
        assert!((dk - target).abs().max() <= 0.1);
    }

    #[test]
    fn deterministic_given_seed() {
        let d = gaussian(50, 4, 1);
        let a = gaussian_knockoffs(&d, 9).unwrap();
        let b = gaussian_knockoffs(&d, 9).unwrap();
        let c = gaussian_knockoffs(&d, 10).unwrap();
        assert_eq!(a.matrix, b.matrix);
        assert_ne!(a.matrix, c.matrix);
    }

    #[test]
    fn rank_deficient_design_is_shrunk() {
        let d = gaussian(20, 30, 4);
        let draw = gaussian_knockoffs(&d, 1).unwrap();
        assert!(draw.shrinkage > 0.0 && draw.shrinkage <= MAX_SHRINKAGE);
        assert!(draw.s_corr > 0.0);
        let mut col = gaussian(20, 3, 4);
        col.set_column(2, &DVector::from_element(20, 1.0));
        assert!(matches!(gaussian_knockoffs(&col, 1), Err(Error::DegenerateColumn { .. })));
    }

    #[test]
    fn w_statistic_cases() {
        let groups = vec![
            AugmentedGroup { kind: GroupKind::Covariate(0), knockoff: false, start: 0, len: 1 },
            AugmentedGroup { kind: GroupKind::Main(0), knockoff: false, start: 1, len: 2 },
            AugmentedGroup { kind: GroupKind::Main(1), knockoff: false, start: 3, len: 2 },
            AugmentedGroup { kind: GroupKind::Covariate(0), knockoff: true, start: 5, len: 1 },
            AugmentedGroup { kind: GroupKind::Main(0), knockoff: true, start: 6, len: 2 },
            AugmentedGroup { kind: GroupKind::Main(1), knockoff: true, start: 8, len: 2 },
        ];
        let beta = DVector::from_vec(vec![9.0, 3.0, 4.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let w = w_statistics(&beta, &groups).unwrap();
        assert_eq!(w, vec![(GroupKind::Main(0), 5.0), (GroupKind::Main(1), 0.0)]);
        let mut broken = groups.clone();
        broken.pop();
        assert!(matches!(w_statistics(&beta, &broken), Err(Error::UnpairedGroup(_))));
    }

    #[test]
    fn split_plan_properties() {
        let a = SplitPlan::new(10, 0.5, 3).unwrap();
        let b = SplitPlan::new(10, 0.5, 3).unwrap();
        assert_eq!(serde_json_like(&a), serde_json_like(&b));
        assert_eq!(a.indices_select.len(), 5);
        let mut all: Vec<usize> = a.indices_select.iter().chain(&a.indices_infer).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        let c = SplitPlan::new(101, 0.3, 1).unwrap();
        assert!((c.indices_select.len() as f64 - 30.3).abs() <= 1.0);
        assert!(SplitPlan::new(10, 1.0, 0).is_err());
    }

    fn serde_json_like(p: &SplitPlan) -> String {
        format!("{:?}", p)
    }

    #[test]
    fn refit_matches_normal_equations_and_drops_duplicates() {
        let n = 80;
        let x = gaussian(n, 3, 5);
        let c = gaussian(n, 1, 6);
        let y = DVector::from_fn(n, |i, _| x[(i, 0)] - 0.5 * x[(i, 1)] * x[(i, 1)] + c[(i, 0)] + 0.1 * ((i % 5) as f64));
        let data = RawData::unnamed(y.clone(), x, c).unwrap();
        let design = build_design(&data, 2).unwrap();
        let kinds = [GroupKind::Main(0), GroupKind::Main(1)];
        let r = least_squares_refit(&design, &y, &kinds).unwrap();
        assert!(r.dropped.is_empty());
        let cols: Vec<usize> = (0..5).collect();
        let xs = design.matrix.select_columns(&cols);
        let ones = DMatrix::from_element(n, 1, 1.0);
        let full = DMatrix::from_fn(n, 6, |i, j| if j == 0 { ones[(i, 0)] } else { xs[(i, j - 1)] });
        let b = (full.tr_mul(&full)).cholesky().unwrap().solve(&full.tr_mul(&y));
        for j in 0..5 {
            assert!((b[j + 1] - r.coef[j]).abs() < 1e-9);
        }
        let rss = (&y - &full * &b).norm_squared();
        assert!((r.sigma_hat - (rss / (n - 6) as f64).sqrt()).abs() < 1e-10);

        let mut dup = design.clone();
        let col = dup.matrix.column(1).into_owned();
        dup.matrix.set_column(2, &(col * 2.0));
        let r = least_squares_refit(&dup, &y, &[GroupKind::Main(0)]).unwrap();
        assert_eq!(r.dropped, vec![2]);
        assert_eq!(r.coef[2], 0.0);
    }

    fn signal_data(n: usize, seed: u64) -> RawData {
        let x = gaussian(n, 5, seed);
        let c = gaussian(n, 1, seed + 1000);
        let e = gaussian(n, 1, seed + 2000);
        let y = DVector::from_fn(n, |i, _| 1.5 * x[(i, 0)] + 1.8 * x[(i, 1)] * x[(i, 2)] + c[(i, 0)] + e[(i, 0)]);
        RawData::unnamed(y, x, c).unwrap()
    }

    #[test]
    fn kfull_finds_strong_signal_and_is_deterministic() {
        let data = signal_data(400, 1);
        let cfg = KnockoffConfig::default();
        let a = run_kfull(&data, 2, 0.2, 42, &cfg).unwrap();
        let b = run_kfull(&data, 2, 0.2, 42, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.selected_exposures.contains(&0));
        assert!(a.selected_pairs.contains(&(1, 2)));
        assert!(!a.intervals_valid);
        assert!(a.split.is_none());
        let cov_term = a.terms.iter().find(|t| t.kind == GroupKind::Covariate(0)).unwrap();
        assert!((cov_term.estimate[0] - 1.0).abs() < 0.3);
    }

    #[test]
    fn ksplit_records_plan() {
        let data = signal_data(400, 2);
        let r = run_ksplit(&data, 2, 0.2, 5, &KnockoffConfig::default()).unwrap();
        let plan = r.split.as_ref().unwrap();
        assert_eq!(plan.indices_select.len() + plan.indices_infer.len(), 400);
        assert!(r.intervals_valid);
        assert_eq!(r.n, 400);
    }
}
