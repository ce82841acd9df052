//! Debiased group lasso: nodewise precision estimate, one-step bias
//! correction, χ² group tests and the FDR threshold over group statistics.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use statrs::function::gamma::gamma_ur;

use crate::basis::{build_design, ExpandedDesign, GroupKind, RawData};
use crate::error::{Error, Result};
use crate::grouplasso::{
    anderson_combine, center_columns, cv_path, fold_assignment, lambda_grid, penalty_groups, CvConfig, GramProblem,
    GroupLassoFit, SolverOptions, ANDERSON_DEPTH,
};
use crate::metrics::overlap_summary;
use crate::report::{implied_exposures, GroupStatistic, Method, MixtureModel, SelectionReport, TermEstimate, SCHEMA_VERSION};
use crate::rng::derive_seed;

/// Penalty choice for the nodewise regressions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodewiseLambda {
    /// Separate cross-validated penalty per column.
    Cv { n_folds: usize, n_lambda: usize },
    /// `λ_j = factor · sd_j`, one factor for every column.
    Shared(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodewiseConfig {
    pub lambda: NodewiseLambda,
    pub seed: u64,
    pub solver: SolverOptions,
}

impl Default for NodewiseConfig {
    fn default() -> Self {
        NodewiseConfig {
            lambda: NodewiseLambda::Cv { n_folds: 5, n_lambda: 20 },
            seed: 0,
            solver: SolverOptions { tol: 1e-7, max_sweeps: 10_000 },
        }
    }
}

/// Approximate inverse of `Σ̂ = DᵀD/n` and per-row diagnostics.
#[derive(Debug, Clone)]
pub struct NodewiseFit {
    pub theta: DMatrix<f64>,
    pub tau2: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub converged: Vec<bool>,
    /// `‖(ΘΣ̂ − I)_j‖_∞` per row.
    pub row_residual: Vec<f64>,
}

/// Lasso of column `j` on the others, on the Gram matrix, warm-started from
/// `gamma`. `r` must hold `G[:, j] − Gγ` on entry and is kept up to date.
/// Converged once no update moves the fit by more than `tol · G_jj` in
/// weighted squared change `G_ll Δ²`.
fn node_solve(
    gram: &DMatrix<f64>,
    j: usize,
    lambda: f64,
    gamma: &mut DVector<f64>,
    r: &mut DVector<f64>,
    opts: SolverOptions,
) -> bool {
    let p = gram.ncols();
    let update = |l: usize, gamma: &mut DVector<f64>, r: &mut DVector<f64>| -> f64 {
        let gll = gram[(l, l)];
        if gll <= 0.0 {
            return 0.0;
        }
        let old = gamma[l];
        let b = r[l] + gll * old;
        let new = if b > lambda {
            (b - lambda) / gll
        } else if b < -lambda {
            (b + lambda) / gll
        } else {
            0.0
        };
        let delta = new - old;
        if delta != 0.0 {
            gamma[l] = new;
            r.axpy(-delta, &gram.column(l), 1.0);
        }
        gll * delta * delta
    };
    let tol = opts.tol * gram[(j, j)];
    let mut sweeps = 0;
    while sweeps < opts.max_sweeps {
        let mut change: f64 = 0.0;
        for l in (0..p).filter(|&l| l != j) {
            change = change.max(update(l, gamma, r));
        }
        sweeps += 1;
        if change <= tol {
            return true;
        }
        let active: Vec<usize> = (0..p).filter(|&l| gamma[l] != 0.0).collect();
        let gather = |g: &DVector<f64>| DVector::from_iterator(active.len(), active.iter().map(|&l| g[l]));
        let mut history = vec![gather(gamma)];
        while sweeps < opts.max_sweeps {
            let mut change: f64 = 0.0;
            for &l in &active {
                change = change.max(update(l, gamma, r));
            }
            sweeps += 1;
            if change <= tol {
                break;
            }
            history.push(gather(gamma));
            if history.len() > ANDERSON_DEPTH {
                if let Some(cand) = anderson_combine(&history) {
                    node_try_extrapolation(gram, j, lambda, &active, &cand, gamma, r);
                }
                history.clear();
                history.push(gather(gamma));
            }
        }
    }
    false
}

/// Moves to the extrapolated active coefficients `cand` if that lowers
/// `½‖d_j − Dγ‖²/n + λ‖γ‖₁`.
fn node_try_extrapolation(
    gram: &DMatrix<f64>,
    j: usize,
    lambda: f64,
    active: &[usize],
    cand: &DVector<f64>,
    gamma: &mut DVector<f64>,
    r: &mut DVector<f64>,
) {
    let mut r_cand = gram.column(j).into_owned();
    for (i, &l) in active.iter().enumerate() {
        if cand[i] != 0.0 {
            r_cand.axpy(-cand[i], &gram.column(l), 1.0);
        }
    }
    // γᵀGγ = γᵀ(G_j − r)
    let objective = |coef: &mut dyn Iterator<Item = (usize, f64)>, res: &DVector<f64>| {
        let (mut quad, mut l1) = (0.0, 0.0);
        for (l, v) in coef {
            quad += v * (gram[(l, j)] + res[l]);
            l1 += v.abs();
        }
        0.5 * (gram[(j, j)] - quad) + lambda * l1
    };
    let new = objective(&mut active.iter().enumerate().map(|(i, &l)| (l, cand[i])), &r_cand);
    let old = objective(&mut active.iter().map(|&l| (l, gamma[l])), r);
    if new < old {
        for (i, &l) in active.iter().enumerate() {
            gamma[l] = cand[i];
        }
        *r = r_cand;
    }
}

fn node_lambda_max(gram: &DMatrix<f64>, j: usize) -> f64 {
    (0..gram.ncols()).filter(|&l| l != j).map(|l| gram[(l, j)].abs()).fold(0.0, f64::max)
}

/// Path fit of column `j` ending at `lambdas.last()`.
fn node_path(gram: &DMatrix<f64>, j: usize, lambdas: &[f64], opts: SolverOptions) -> (DVector<f64>, bool) {
    let mut gamma = DVector::zeros(gram.ncols());
    let mut r = gram.column(j).into_owned();
    let mut ok = true;
    for &lambda in lambdas {
        ok = node_solve(gram, j, lambda, &mut gamma, &mut r, opts);
    }
    (gamma, ok)
}

fn shared_path(lmax: f64, target: f64) -> Vec<f64> {
    if target >= lmax || lmax <= 0.0 {
        return vec![target];
    }
    let steps = 8;
    let ratio = target / lmax;
    (1..=steps).map(|i| lmax * ratio.powf(i as f64 / steps as f64)).collect()
}

/// Nodewise-lasso estimate of `Σ̂⁻¹` for the raw design rows `d`.
pub fn nodewise_from_matrix(d: &DMatrix<f64>, cfg: &NodewiseConfig) -> Result<NodewiseFit> {
    let n = d.nrows();
    let p = d.ncols();
    let mut dc = d.clone();
    center_columns(&mut dc);
    let gram = dc.tr_mul(&dc) / n as f64;

    let lambdas: Vec<f64> = match cfg.lambda {
        NodewiseLambda::Shared(factor) => (0..p).map(|j| factor * gram[(j, j)].sqrt()).collect(),
        NodewiseLambda::Cv { n_folds, n_lambda } => {
            if n_folds < 2 || n < n_folds {
                return Err(Error::InvalidArgument(format!("cannot cross-validate {n} rows in {n_folds} folds")));
            }
            let folds = fold_assignment(n, n_folds, cfg.seed);
            let fold_data: Vec<(DMatrix<f64>, DMatrix<f64>)> = (0..n_folds)
                .map(|f| {
                    let train: Vec<usize> = (0..n).filter(|&i| folds[i] != f).collect();
                    let test: Vec<usize> = (0..n).filter(|&i| folds[i] == f).collect();
                    let mut tr = d.select_rows(&train);
                    let means = center_columns(&mut tr);
                    let mut te = d.select_rows(&test);
                    for (c, mut col) in te.column_iter_mut().enumerate() {
                        col.add_scalar_mut(-means[c]);
                    }
                    // held-out error of any coefficient vector is a quadratic form in this Gram
                    (tr.tr_mul(&tr) / train.len() as f64, te.tr_mul(&te))
                })
                .collect();
            (0..p)
                .into_par_iter()
                .map(|j| {
                    let grid = lambda_grid(node_lambda_max(&gram, j), n_lambda, 1e-3);
                    let mut err = vec![0.0; grid.len()];
                    for (fg, te) in &fold_data {
                        let mut gamma = DVector::zeros(p);
                        let mut r = fg.column(j).into_owned();
                        for (li, &lambda) in grid.iter().enumerate() {
                            node_solve(fg, j, lambda, &mut gamma, &mut r, cfg.solver);
                            // vᵀ T v with v = e_j − γ and T the held-out Gram
                            let mut u = te.column(j).into_owned();
                            for l in (0..p).filter(|&l| gamma[l] != 0.0) {
                                u.axpy(-gamma[l], &te.column(l), 1.0);
                            }
                            err[li] += u[j] - (0..p).filter(|&l| gamma[l] != 0.0).map(|l| gamma[l] * u[l]).sum::<f64>();
                        }
                    }
                    let best = (0..grid.len()).min_by(|&a, &b| err[a].total_cmp(&err[b])).unwrap();
                    grid[best]
                })
                .collect()
        }
    };

    let rows: Vec<(DVector<f64>, f64, bool)> = (0..p)
        .into_par_iter()
        .map(|j| {
            let lmax = node_lambda_max(&gram, j);
            let path = match cfg.lambda {
                NodewiseLambda::Shared(_) => shared_path(lmax, lambdas[j]),
                NodewiseLambda::Cv { n_lambda, .. } => {
                    let grid = lambda_grid(lmax, n_lambda, 1e-3);
                    let stop = grid.iter().position(|&l| l <= lambdas[j] * (1.0 + 1e-12)).unwrap_or(grid.len() - 1);
                    grid[..=stop].to_vec()
                }
            };
            let (gamma, ok) = node_path(&gram, j, &path, cfg.solver);
            let gg = &gram * &gamma;
            let resid2 = gram[(j, j)] - 2.0 * gamma.dot(&gram.column(j)) + gamma.dot(&gg);
            let tau2 = resid2 + lambdas[j] * gamma.abs().sum();
            (gamma, tau2, ok)
        })
        .collect();

    let mut theta = DMatrix::zeros(p, p);
    let mut tau2 = Vec::with_capacity(p);
    let mut converged = Vec::with_capacity(p);
    for (j, (gamma, t2, ok)) in rows.into_iter().enumerate() {
        if !(t2 > 0.0) {
            return Err(Error::NotPositiveDefinite { group: format!("nodewise column {j}") });
        }
        for l in 0..p {
            theta[(j, l)] = if l == j { 1.0 } else { -gamma[l] } / t2;
        }
        tau2.push(t2);
        converged.push(ok);
    }
    let prod = &theta * &gram;
    let row_residual = (0..p)
        .map(|j| (0..p).map(|l| (prod[(j, l)] - if l == j { 1.0 } else { 0.0 }).abs()).fold(0.0, f64::max))
        .collect();
    Ok(NodewiseFit { theta, tau2, lambdas, converged, row_residual })
}

/// Nodewise-lasso precision estimate for a design.
pub fn nodewise_theta(design: &ExpandedDesign, cfg: &NodewiseConfig) -> Result<NodewiseFit> {
    nodewise_from_matrix(&design.matrix, cfg)
}

/// χ² test of one coefficient group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupTest {
    pub kind: GroupKind,
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Bias-corrected coefficients with their covariance and group tests.
#[derive(Debug, Clone)]
pub struct DebiasedFit {
    pub beta_d: DVector<f64>,
    pub theta: DMatrix<f64>,
    pub cov: DMatrix<f64>,
    pub tests: Vec<GroupTest>,
}

impl DebiasedFit {
    pub fn test(&self, kind: GroupKind) -> Option<&GroupTest> {
        self.tests.iter().find(|t| t.kind == kind)
    }
}

/// `β̂ + (1/n)ΘDᵀ(y − Dβ̂)` and `(σ̂²/n)ΘΣ̂Θᵀ` from the centered problem.
fn debias_problem(
    fit: &GroupLassoFit,
    problem: &GramProblem,
    design: &ExpandedDesign,
    theta: &DMatrix<f64>,
) -> Result<DebiasedFit> {
    let r = problem.residual_correlation(&fit.beta);
    let beta_d = &fit.beta + theta * r;
    let scale = fit.sigma_hat * fit.sigma_hat / problem.n() as f64;
    let raw = theta * problem.gram() * theta.transpose() * scale;
    let cov = (&raw + raw.transpose()) * 0.5;
    let mut tests = Vec::new();
    for g in design.groups.iter().filter(|g| g.kind.is_penalized()) {
        let block = beta_d.rows(g.start, g.len).into_owned();
        let omega = cov.view((g.start, g.start), (g.len, g.len)).into_owned();
        let statistic = group_chi2_stat(&block, &omega)
            .map_err(|_| Error::NotPositiveDefinite { group: design.group_label(g.kind) })?;
        tests.push(GroupTest { kind: g.kind, statistic, df: g.len, p_value: chi2_sf(statistic, g.len) });
    }
    Ok(DebiasedFit { beta_d, theta: theta.clone(), cov, tests })
}

/// One-step debiasing of a group-lasso fit on `design`/`y`.
pub fn debias(fit: &GroupLassoFit, design: &ExpandedDesign, y: &DVector<f64>, theta: &DMatrix<f64>) -> Result<DebiasedFit> {
    let problem = GramProblem::new(&design.matrix, y, &penalty_groups(&design.groups))?;
    debias_problem(fit, &problem, design, theta)
}

/// `βᵀΩ⁻¹β` for a positive definite `Ω`.
pub fn group_chi2_stat(beta: &DVector<f64>, omega: &DMatrix<f64>) -> Result<f64> {
    if omega.nrows() != beta.len() || omega.ncols() != beta.len() {
        return Err(Error::ShapeMismatch("covariance block does not match coefficient block".into()));
    }
    let chol = omega
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite { group: "block".into() })?;
    Ok(beta.dot(&chol.solve(beta)).max(0.0))
}

/// Upper tail `P(χ²_df > t)`.
pub fn chi2_sf(t: f64, df: usize) -> f64 {
    if t <= 0.0 {
        1.0
    } else if t.is_infinite() {
        0.0
    } else {
        gamma_ur(df as f64 / 2.0, t / 2.0)
    }
}

/// Smallest `t` with `chi2_sf(t, df) ≤ p`.
pub fn chi2_isf(p: f64, df: usize) -> f64 {
    if p >= 1.0 {
        return 0.0;
    }
    if p <= 0.0 {
        return f64::INFINITY;
    }
    let mut hi = df.max(1) as f64;
    while chi2_sf(hi, df) > p {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if chi2_sf(mid, df) > p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    hi
}

/// Threshold over group statistics and the resulting rejections.
#[derive(Debug, Clone, PartialEq)]
pub struct DblThreshold {
    /// `+∞` when nothing is rejected.
    pub t0: f64,
    /// Indices into the statistic list with `T > t0`.
    pub rejected: Vec<usize>,
}

/// `t₀ = inf{t > 0 : m·P(χ²_df > t) / R(t) ≤ q}` restricted to `R(t) ≥ 1`,
/// where `R(t) = #{T > t}`. `R` is piecewise constant between the observed
/// statistics, so each piece is solved exactly through the χ² quantile.
pub fn fdr_threshold_dbl(stats: &[f64], df: usize, q: f64) -> Result<DblThreshold> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!("FDR level must lie in (0, 1), got {q}")));
    }
    let m = stats.len() as f64;
    let mut cuts: Vec<f64> = stats.iter().copied().filter(|&t| t > 0.0).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut lower = 0.0;
    let mut t0 = f64::INFINITY;
    for &upper in &cuts {
        let rejections = stats.iter().filter(|&&t| t >= upper).count() as f64;
        let target = q * rejections / m;
        let candidate = chi2_isf(target, df).max(lower);
        if candidate < upper {
            t0 = candidate;
            break;
        }
        lower = upper;
    }
    let rejected = if t0.is_finite() {
        (0..stats.len()).filter(|&i| stats[i] > t0).collect()
    } else {
        vec![]
    };
    Ok(DblThreshold { t0, rejected })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DblConfig {
    pub cv: CvConfig,
    pub nodewise: NodewiseConfig,
}


impl DblConfig {
    /// Same settings with every random substream keyed to `seed`.
    pub fn seeded(mut self, seed: u64) -> Self {
        self.cv.seed = derive_seed(seed, 11);
        self.nodewise.seed = derive_seed(seed, 12);
        self
    }
}

/// Full debiased-lasso pipeline with separate FDR thresholds for
/// interaction groups (df = k²) and main-effect groups (df = k).
pub fn select_dbl(data: &RawData, k: usize, q: f64, cfg: &DblConfig) -> Result<SelectionReport> {
    let design = build_design(data, k)?;
    let mut warnings = Vec::new();
    if data.n() < 2 * (k * k + k) {
        let msg = format!("n = {} is small for the asymptotic χ² approximation", data.n());
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let groups = penalty_groups(&design.groups);
    let problem = GramProblem::new(&design.matrix, &data.y, &groups)?;
    let path = cv_path(&design.matrix, &data.y, &groups, &cfg.cv)?;
    let fit = problem.fit_along(path.path_to_best(), cfg.cv.solver);
    if !fit.converged {
        warnings.push("group lasso did not converge".into());
    }
    let nodewise = nodewise_theta(&design, &cfg.nodewise)?;
    let unconverged = nodewise.converged.iter().filter(|&&c| !c).count();
    if unconverged > 0 {
        warnings.push(format!("{unconverged} nodewise regressions did not converge"));
    }
    let deb = debias_problem(&fit, &problem, &design, &nodewise.theta)?;

    let mut statistics = Vec::new();
    let mut choose = |filter: fn(&GroupKind) -> bool, df: usize| -> Result<(Vec<GroupKind>, f64)> {
        let tests: Vec<&GroupTest> = deb.tests.iter().filter(|t| filter(&t.kind)).collect();
        let values: Vec<f64> = tests.iter().map(|t| t.statistic).collect();
        let thr = fdr_threshold_dbl(&values, df, q)?;
        for (i, t) in tests.iter().enumerate() {
            statistics.push(GroupStatistic {
                kind: t.kind,
                label: design.group_label(t.kind),
                statistic: t.statistic,
                p_value: Some(t.p_value),
                selected: thr.rejected.contains(&i),
            });
        }
        Ok((thr.rejected.iter().map(|&i| tests[i].kind).collect(), thr.t0))
    };
    let (mains, main_threshold) = choose(|k| matches!(k, GroupKind::Main(_)), k)?;
    let (pairs, interaction_threshold) = choose(|k| matches!(k, GroupKind::Interaction(..)), k * k)?;

    let selected_mains: Vec<usize> =
        mains.iter().filter_map(|g| if let GroupKind::Main(j) = g { Some(*j) } else { None }).collect();
    let selected_pairs: Vec<(usize, usize)> = pairs
        .iter()
        .filter_map(|g| if let GroupKind::Interaction(a, b) = g { Some((*a, *b)) } else { None })
        .collect();

    let se = deb.cov.diagonal().map(|v| v.max(0.0).sqrt());
    let mut terms = Vec::new();
    for g in design.groups.iter().filter(|g| !g.kind.is_penalized() || mains.contains(&g.kind) || pairs.contains(&g.kind)) {
        terms.push(TermEstimate::new(
            g.kind,
            design.group_label(g.kind),
            g.range().map(|c| deb.beta_d[c]).collect(),
            g.range().map(|c| se[c]).collect(),
        ));
    }
    let kinds: Vec<GroupKind> = mains.iter().chain(pairs.iter()).copied().collect();
    let model = MixtureModel::from_design(&design, &kinds, &deb.beta_d, &deb.cov);

    Ok(SelectionReport {
        schema_version: SCHEMA_VERSION,
        method: Method::Dbl,
        k,
        q,
        offset: None,
        seed: cfg.cv.seed,
        n: data.n(),
        exposure_names: data.exposure_names.clone(),
        covariate_names: data.covariate_names.clone(),
        selected_exposures: implied_exposures(&selected_mains, &selected_pairs),
        overlap: overlap_summary(&selected_pairs),
        selected_mains,
        selected_pairs,
        main_threshold,
        interaction_threshold,
        statistics,
        terms,
        lambda: fit.lambda,
        sigma_hat: fit.sigma_hat,
        split: None,
        intervals_valid: true,
        warnings,
        model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grouplasso::{GramProblem, PenaltyGroup};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    /// Closed-form survival for even df: `e^{-x/2} Σ_{i<df/2} (x/2)^i / i!`.
    fn sf_even(t: f64, df: usize) -> f64 {
        let h = t / 2.0;
        let mut term = 1.0;
        let mut sum = 1.0;
        for i in 1..df / 2 {
            term *= h / i as f64;
            sum += term;
        }
        (-h).exp() * sum
    }

    #[test]
    fn chi2_sf_fixed_points() {
        assert_eq!(chi2_sf(0.0, 3), 1.0);
        assert!((chi2_sf(2.0 * 2f64.ln(), 2) - 0.5).abs() < 1e-15);
        assert!((chi2_sf(9.487729036781154, 4) - 0.05).abs() < 1e-6);
    }

    #[test]
    fn chi2_sf_matches_even_df_closed_form() {
        for df in (2..=64).step_by(2) {
            for i in 0..=400 {
                let t = i as f64 * 0.5;
                assert!((chi2_sf(t, df) - sf_even(t, df)).abs() <= 1e-10, "df {df} t {t}");
            }
        }
    }

    #[test]
    fn chi2_sf_odd_df_recurrence() {
        // Q(a+1, x) = Q(a, x) + x^a e^{-x} / Γ(a+1)
        for df in (1..=61).step_by(2) {
            for i in 1..=200 {
                let t = i as f64;
                let a = df as f64 / 2.0;
                let x = t / 2.0;
                let lhs = chi2_sf(t, df + 2);
                let rhs = chi2_sf(t, df) + (a * x.ln() - x - statrs::function::gamma::ln_gamma(a + 1.0)).exp();
                assert!((lhs - rhs).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn chi2_isf_inverts() {
        for df in [1, 2, 4, 9] {
            for p in [0.5, 0.05, 1e-4] {
                let t = chi2_isf(p, df);
                assert!((chi2_sf(t, df) - p).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn chi2_stat_cases() {
        let omega = DMatrix::from_element(1, 1, 4.0);
        assert_eq!(group_chi2_stat(&DVector::from_element(1, 0.0), &omega).unwrap(), 0.0);
        assert!((group_chi2_stat(&DVector::from_element(1, 3.0), &omega).unwrap() - 2.25).abs() < 1e-15);

        let a = gaussian(4, 4, 1);
        let omega = &a * a.transpose() + DMatrix::identity(4, 4);
        let beta = gaussian(4, 1, 2).column(0).into_owned();
        let oracle = beta.dot(&omega.clone().lu().solve(&beta).unwrap());
        assert!((group_chi2_stat(&beta, &omega).unwrap() - oracle).abs() < 1e-10);

        let not_pd = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(group_chi2_stat(&DVector::from_element(2, 1.0), &not_pd).is_err());
    }

    /// Smallest grid point (step 1e-4) with ratio ≤ q among those with at
    /// least one rejection.
    pub(crate) fn t0_grid(stats: &[f64], df: usize, q: f64, hi: f64) -> f64 {
        let m = stats.len() as f64;
        let steps = (hi / 1e-4).round() as usize;
        for i in 1..=steps {
            let t = i as f64 * 1e-4;
            let r = stats.iter().filter(|&&s| s > t).count();
            if r == 0 {
                break;
            }
            if m * chi2_sf(t, df) / r as f64 <= q {
                return t;
            }
        }
        f64::INFINITY
    }

    #[test]
    fn threshold_all_zero_rejects_nothing() {
        let thr = fdr_threshold_dbl(&[0.0; 10], 4, 0.2).unwrap();
        assert!(thr.t0.is_infinite());
        assert!(thr.rejected.is_empty());
    }

    #[test]
    fn threshold_matches_grid_search() {
        let stats = [25.0, 16.0, 0.01];
        let thr = fdr_threshold_dbl(&stats, 1, 0.2).unwrap();
        let grid = t0_grid(&stats, 1, 0.2, 30.0);
        assert!(grid >= thr.t0 - 1e-12 && grid - thr.t0 <= 1e-4 + 1e-12, "{} vs {grid}", thr.t0);
        assert_eq!(thr.rejected, vec![0, 1]);
        assert!(fdr_threshold_dbl(&stats, 1, 1.0).is_err());
    }

    #[test]
    fn threshold_monotone_in_q() {
        let stats: Vec<f64> = (0..45).map(|i| (i as f64 * 0.37).sin().abs() * 20.0).collect();
        let mut last: Vec<usize> = vec![];
        for q in [0.01, 0.05, 0.1, 0.2, 0.4] {
            let thr = fdr_threshold_dbl(&stats, 4, q).unwrap();
            assert!(last.iter().all(|i| thr.rejected.contains(i)));
            last = thr.rejected;
        }
    }

    #[test]
    fn theta_identity_for_orthonormal_design() {
        // ±1 bit patterns: mean zero, mutually orthogonal, unit (1/n)-norm
        let n = 64;
        let p = 5;
        let mut d = DMatrix::zeros(n, p);
        for j in 0..p {
            for i in 0..n {
                d[(i, j)] = if ((i >> j) & 1) == 0 { 1.0 } else { -1.0 };
            }
        }
        let fit = nodewise_from_matrix(&d, &NodewiseConfig::default()).unwrap();
        assert!((&fit.theta - DMatrix::identity(p, p)).amax() < 1e-6);
    }

    #[test]
    fn theta_approaches_inverse_with_small_penalty() {
        let n = 500;
        let z = gaussian(n, 5, 3);
        let mix = DMatrix::from_fn(5, 5, |i, j| if i == j { 1.0 } else if i.abs_diff(j) == 1 { 0.3 } else { 0.0 });
        let d = z * mix;
        let cfg = NodewiseConfig { lambda: NodewiseLambda::Shared(1e-7), solver: SolverOptions { tol: 1e-12, max_sweeps: 100_000 }, ..Default::default() };
        let fit = nodewise_from_matrix(&d, &cfg).unwrap();
        let mut dc = d.clone();
        center_columns(&mut dc);
        let sigma = dc.tr_mul(&dc) / n as f64;
        let inv = sigma.try_inverse().unwrap();
        assert!((&fit.theta - inv).amax() <= 1e-3);
    }

    #[test]
    fn theta_diagonal_calibrated_on_correlated_design() {
        let n = 500;
        let p = 12;
        let z = gaussian(n, p, 4);
        let rho: f64 = 0.5;
        let sigma = DMatrix::from_fn(p, p, |i, j| rho.powi(i.abs_diff(j) as i32));
        let l = sigma.cholesky().unwrap().l();
        let d = z * l.transpose();
        let fit = nodewise_from_matrix(&d, &NodewiseConfig::default()).unwrap();
        let mut dc = d.clone();
        center_columns(&mut dc);
        let prod = &fit.theta * (dc.tr_mul(&dc) / n as f64);
        for j in 0..p {
            assert!((prod[(j, j)] - 1.0).abs() < 0.1);
            assert!(fit.row_residual[j].is_finite());
        }
    }

    #[test]
    fn zero_residual_leaves_coefficients() {
        let n = 40;
        let d = gaussian(n, 4, 5);
        let groups = vec![PenaltyGroup { start: 0, len: 2, weight: 2f64.sqrt() }, PenaltyGroup { start: 2, len: 2, weight: 2f64.sqrt() }];
        let beta = DVector::from_vec(vec![1.0, -0.5, 0.0, 0.0]);
        let mut dc = d.clone();
        center_columns(&mut dc);
        let y = &dc * &beta;
        let prob = GramProblem::new(&dc, &y, &groups).unwrap();
        let r = prob.residual_correlation(&beta);
        let theta = gaussian(4, 4, 6);
        let corrected = &beta + theta * r;
        assert!((corrected - beta).amax() < 1e-12);
    }

    #[test]
    fn exact_inverse_debiasing_is_ols() {
        let n = 120;
        let x = gaussian(n, 3, 7);
        let c = gaussian(n, 1, 8);
        let y = gaussian(n, 1, 9).column(0).into_owned() + x.column(0) * 0.7;
        let data = RawData::unnamed(y.clone(), x, c).unwrap();
        let design = build_design(&data, 1).unwrap();
        let fit = crate::grouplasso::fit_group_lasso(&design, &y, 0.05).unwrap();
        let mut dc = design.matrix.clone();
        center_columns(&mut dc);
        let sigma = dc.tr_mul(&dc) / n as f64;
        let theta = sigma.clone().try_inverse().unwrap();
        let deb = debias(&fit, &design, &y, &theta).unwrap();
        let yc = y.add_scalar(-y.mean());
        let ols = (dc.transpose() * &dc).cholesky().unwrap().solve(&(dc.transpose() * yc));
        assert!((&deb.beta_d - ols).amax() < 1e-8);
        assert!((&deb.cov - deb.cov.transpose()).amax() < 1e-10);
        assert!(deb.tests.iter().all(|t| t.statistic >= 0.0));
    }

    #[test]
    fn scaling_outcome_leaves_statistics() {
        let n = 200;
        let x = gaussian(n, 3, 10);
        let c = gaussian(n, 1, 11);
        let mut y = gaussian(n, 1, 12).column(0).into_owned();
        for i in 0..n {
            y[i] += x[(i, 0)] + 0.8 * x[(i, 1)] * x[(i, 2)];
        }
        let cfg = DblConfig { nodewise: NodewiseConfig { lambda: NodewiseLambda::Shared(0.02), ..Default::default() }, ..Default::default() }.seeded(3);
        let a = select_dbl(&RawData::unnamed(y.clone(), x.clone(), c.clone()).unwrap(), 2, 0.2, &cfg).unwrap();
        let b = select_dbl(&RawData::unnamed(&y * 3.0, x, c).unwrap(), 2, 0.2, &cfg).unwrap();
        assert_eq!(a.selected_mains, b.selected_mains);
        assert_eq!(a.selected_pairs, b.selected_pairs);
        for (sa, sb) in a.statistics.iter().zip(&b.statistics) {
            assert!((sa.statistic - sb.statistic).abs() <= 1e-6 * sa.statistic.max(1.0));
        }
        assert!((b.model.coef.clone() - a.model.coef.clone() * 3.0).amax() < 1e-6);
    }
}
