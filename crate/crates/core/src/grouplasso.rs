//! Group lasso by exact block coordinate descent on the Gram matrix.
//!
//! Minimizes `(1/2n)‖y − Dβ‖² + λ Σ_g w_g ‖β_g‖₂`. Every block update solves
//! its subproblem exactly through the eigendecomposition of the diagonal Gram
//! block, so the objective never increases between sweeps.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::basis::{ExpandedDesign, Group};
use crate::error::{Error, Result};
use crate::rng::{substream, Stream};

/// Penalty structure of one coefficient block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyGroup {
    pub start: usize,
    pub len: usize,
    pub weight: f64,
}

impl PenaltyGroup {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// Weights `√size` for penalized groups and 0 for covariates.
pub fn penalty_groups(groups: &[Group]) -> Vec<PenaltyGroup> {
    groups
        .iter()
        .map(|g| PenaltyGroup {
            start: g.start,
            len: g.len,
            weight: if g.kind.is_penalized() { (g.len as f64).sqrt() } else { 0.0 },
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Convergence when no coefficient moves more than this in a full sweep.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: 1e-7, max_sweeps: 100_000 }
    }
}

#[derive(Debug, Clone)]
struct BlockEigen {
    values: Vec<f64>,
    vectors: DMatrix<f64>,
}

/// Raw solver output at one penalty level.
#[derive(Debug, Clone)]
pub struct Solution {
    pub beta: DVector<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

/// Iterates combined per Anderson extrapolation.
pub(crate) const ANDERSON_DEPTH: usize = 5;

/// Active-phase sweeps between Newton refinements, and steps per refinement.
const NEWTON_EVERY: usize = 30;
const NEWTON_STEPS: usize = 3;

/// Sufficient statistics of a centered least-squares problem with group
/// structure.
#[derive(Debug, Clone)]
pub struct GramProblem {
    gram: DMatrix<f64>,
    xty: DVector<f64>,
    yy: f64,
    n: usize,
    col_means: DVector<f64>,
    y_mean: f64,
    groups: Vec<PenaltyGroup>,
    blocks: Vec<Option<BlockEigen>>,
}

/// Subtracts column means in place, returning them.
pub(crate) fn center_columns(d: &mut DMatrix<f64>) -> DVector<f64> {
    let means = DVector::from_iterator(d.ncols(), d.column_iter().map(|c| c.mean()));
    for (j, mut col) in d.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    means
}

impl GramProblem {
    /// Builds the problem from raw rows; columns and `y` are centered
    /// internally so the intercept is implicit.
    pub fn new(d: &DMatrix<f64>, y: &DVector<f64>, groups: &[PenaltyGroup]) -> Result<Self> {
        let n = d.nrows();
        if y.len() != n {
            return Err(Error::ShapeMismatch(format!("design has {n} rows, y has {}", y.len())));
        }
        let covered: usize = groups.iter().map(|g| g.len).sum();
        if covered != d.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "groups cover {covered} columns, design has {}",
                d.ncols()
            )));
        }
        let mut dc = d.clone();
        let col_means = center_columns(&mut dc);
        let y_mean = y.mean();
        let yc = y.add_scalar(-y_mean);
        let scale = 1.0 / n as f64;
        let gram = dc.tr_mul(&dc) * scale;
        let xty = dc.tr_mul(&yc) * scale;
        let yy = yc.norm_squared() * scale;
        Ok(Self::from_parts(gram, xty, yy, n, col_means, y_mean, groups.to_vec()))
    }

    fn from_parts(
        gram: DMatrix<f64>,
        xty: DVector<f64>,
        yy: f64,
        n: usize,
        col_means: DVector<f64>,
        y_mean: f64,
        groups: Vec<PenaltyGroup>,
    ) -> Self {
        let blocks = groups
            .iter()
            .map(|g| {
                (g.len > 1).then(|| {
                    let block = gram.view((g.start, g.start), (g.len, g.len)).into_owned();
                    let eig = SymmetricEigen::new(block);
                    BlockEigen { values: eig.eigenvalues.iter().copied().collect(), vectors: eig.eigenvectors }
                })
            })
            .collect();
        GramProblem { gram, xty, yy, n, col_means, y_mean, groups, blocks }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn ncols(&self) -> usize {
        self.xty.len()
    }

    pub fn groups(&self) -> &[PenaltyGroup] {
        &self.groups
    }

    /// `(1/n) DᵀD` of the centered design.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn col_means(&self) -> &DVector<f64> {
        &self.col_means
    }

    pub fn y_mean(&self) -> f64 {
        self.y_mean
    }

    /// `(1/n) Dᵀ(y − Dβ)` on the centered problem.
    pub fn residual_correlation(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.xty - &self.gram * beta
    }

    /// `(1/n)‖y − Dβ‖²`.
    pub fn mean_squared_residual(&self, beta: &DVector<f64>) -> f64 {
        let gb = &self.gram * beta;
        (self.yy - 2.0 * self.xty.dot(beta) + beta.dot(&gb)).max(0.0)
    }

    pub fn penalty(&self, beta: &DVector<f64>) -> f64 {
        self.groups.iter().map(|g| g.weight * beta.rows(g.start, g.len).norm()).sum()
    }

    pub fn objective(&self, beta: &DVector<f64>, lambda: f64) -> f64 {
        0.5 * self.mean_squared_residual(beta) + lambda * self.penalty(beta)
    }

    /// Largest violation of the optimality conditions at `beta`.
    pub fn kkt_violation(&self, beta: &DVector<f64>, lambda: f64) -> f64 {
        let r = self.residual_correlation(beta);
        self.groups
            .iter()
            .map(|g| {
                let rg = r.rows(g.start, g.len);
                let bg = beta.rows(g.start, g.len);
                let norm = bg.norm();
                let a = lambda * g.weight;
                if norm > 0.0 {
                    (-rg.into_owned() + bg * (a / norm)).norm()
                } else {
                    (rg.norm() - a).max(0.0)
                }
            })
            .fold(0.0, f64::max)
    }

    /// Fit of the unpenalized groups alone, and the smallest λ at which every
    /// penalized group is zero.
    pub fn lambda_max(&self) -> (f64, DVector<f64>) {
        let free: Vec<usize> = (0..self.groups.len()).filter(|&g| self.groups[g].weight == 0.0).collect();
        let mut beta = DVector::zeros(self.ncols());
        let mut r = self.xty.clone();
        for _ in 0..10_000 {
            let change = free.iter().map(|&g| self.update_block(g, 0.0, &mut beta, &mut r)).fold(0.0, f64::max);
            if change <= 1e-12 {
                break;
            }
        }
        let lmax = self
            .groups
            .iter()
            .filter(|g| g.weight > 0.0)
            .map(|g| r.rows(g.start, g.len).norm() / g.weight)
            .fold(0.0, f64::max);
        (lmax, beta)
    }

    fn update_block(&self, gi: usize, lambda: f64, beta: &mut DVector<f64>, r: &mut DVector<f64>) -> f64 {
        let g = self.groups[gi];
        let a = lambda * g.weight;
        if g.len == 1 {
            let j = g.start;
            let gjj = self.gram[(j, j)];
            let old = beta[j];
            let b = r[j] + gjj * old;
            let new = if gjj > 0.0 { soft_threshold(b, a) / gjj } else { 0.0 };
            let delta = new - old;
            if delta != 0.0 {
                beta[j] = new;
                r.axpy(-delta, &self.gram.column(j), 1.0);
            }
            return delta.abs();
        }
        let block = self.blocks[gi].as_ref().expect("eigendecomposition for multi-column group");
        let old: Vec<f64> = beta.rows(g.start, g.len).iter().copied().collect();
        let mut b: Vec<f64> = (0..g.len).map(|i| r[g.start + i]).collect();
        for (i, bi) in b.iter_mut().enumerate() {
            for (jj, &oj) in old.iter().enumerate() {
                *bi += self.gram[(g.start + i, g.start + jj)] * oj;
            }
        }
        let new = block_solve(block, &b, a);
        let mut change: f64 = 0.0;
        for i in 0..g.len {
            let delta = new[i] - old[i];
            if delta != 0.0 {
                beta[g.start + i] = new[i];
                r.axpy(-delta, &self.gram.column(g.start + i), 1.0);
                change = change.max(delta.abs());
            }
        }
        change
    }

    fn sweep(&self, which: &[usize], lambda: f64, beta: &mut DVector<f64>, r: &mut DVector<f64>) -> f64 {
        which.iter().map(|&g| self.update_block(g, lambda, beta, r)).fold(0.0, f64::max)
    }

    /// Block coordinate descent from `warm` (or zero).
    ///
    /// Passes over the full group list alternate with passes restricted to
    /// the active groups. Inside the active phase, every few sweeps an
    /// Anderson extrapolation of the recent iterates is tried and kept only
    /// if it lowers the objective.
    pub fn solve(&self, lambda: f64, warm: Option<&DVector<f64>>, opts: SolverOptions) -> Solution {
        let mut beta = warm.cloned().unwrap_or_else(|| DVector::zeros(self.ncols()));
        let mut r = self.residual_correlation(&beta);
        let all: Vec<usize> = (0..self.groups.len()).collect();
        let mut sweeps = 0;
        let mut converged = false;
        while sweeps < opts.max_sweeps {
            let change = self.sweep(&all, lambda, &mut beta, &mut r);
            sweeps += 1;
            if change <= opts.tol {
                converged = true;
                break;
            }
            let active: Vec<usize> = all
                .iter()
                .copied()
                .filter(|&g| {
                    let pg = self.groups[g];
                    beta.rows(pg.start, pg.len).iter().any(|&v| v != 0.0)
                })
                .collect();
            let cols: Vec<usize> = active.iter().flat_map(|&g| self.groups[g].range()).collect();
            let mut history: Vec<DVector<f64>> = vec![self.gather(&beta, &cols)];
            let phase_start = sweeps;
            while sweeps < opts.max_sweeps {
                let change = self.sweep(&active, lambda, &mut beta, &mut r);
                sweeps += 1;
                if change <= opts.tol {
                    break;
                }
                history.push(self.gather(&beta, &cols));
                if history.len() > ANDERSON_DEPTH {
                    if (sweeps - phase_start) % NEWTON_EVERY == ANDERSON_DEPTH {
                        self.newton_refine(&active, lambda, &mut beta, &mut r);
                    } else {
                        self.anderson_step(&history, &cols, lambda, &mut beta, &mut r);
                    }
                    history.clear();
                    history.push(self.gather(&beta, &cols));
                }
            }
        }
        Solution { beta, sweeps, converged }
    }

    /// Damped Newton steps on the smooth problem obtained by fixing the
    /// active set, each kept only if it lowers the objective.
    fn newton_refine(&self, active: &[usize], lambda: f64, beta: &mut DVector<f64>, r: &mut DVector<f64>) {
        let cols: Vec<usize> = active.iter().flat_map(|&g| self.groups[g].range()).collect();
        let a = cols.len();
        if a == 0 {
            return;
        }
        let mut obj = self.objective(beta, lambda);
        let mut moved = false;
        for _ in 0..NEWTON_STEPS {
            let mut h = DMatrix::from_fn(a, a, |i, j| self.gram[(cols[i], cols[j])]);
            let mut grad = DVector::from_fn(a, |i, _| self.gram.row(cols[i]).dot(&beta.transpose()) - self.xty[cols[i]]);
            let mut off = 0;
            for &g in active {
                let pg = self.groups[g];
                let w = lambda * pg.weight;
                if w > 0.0 {
                    let b = beta.rows(pg.start, pg.len).into_owned();
                    let nb = b.norm();
                    if nb == 0.0 {
                        return;
                    }
                    grad.rows_mut(off, pg.len).axpy(w / nb, &b, 1.0);
                    let curv = (DMatrix::identity(pg.len, pg.len) - &b * b.transpose() / (nb * nb)) * (w / nb);
                    let mut view = h.view_mut((off, off), (pg.len, pg.len));
                    view += curv;
                }
                off += pg.len;
            }
            let ridge = 1e-12 * h.trace().max(f64::MIN_POSITIVE);
            for i in 0..a {
                h[(i, i)] += ridge;
            }
            let Some(chol) = h.cholesky() else { break };
            let step = chol.solve(&grad);
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..30 {
                let mut cand = beta.clone();
                for (i, &c) in cols.iter().enumerate() {
                    cand[c] -= t * step[i];
                }
                let oc = self.objective(&cand, lambda);
                if oc < obj {
                    accepted = Some((cand, oc));
                    break;
                }
                t *= 0.5;
            }
            let Some((cand, oc)) = accepted else { break };
            let gain = obj - oc;
            *beta = cand;
            obj = oc;
            moved = true;
            if gain <= 1e-15 * obj.abs().max(1e-300) {
                break;
            }
        }
        if moved {
            *r = self.residual_correlation(beta);
        }
    }

    fn gather(&self, beta: &DVector<f64>, cols: &[usize]) -> DVector<f64> {
        DVector::from_iterator(cols.len(), cols.iter().map(|&c| beta[c]))
    }

    /// Replaces `beta` by the extrapolated point when that lowers the objective.
    fn anderson_step(&self, history: &[DVector<f64>], cols: &[usize], lambda: f64, beta: &mut DVector<f64>, r: &mut DVector<f64>) {
        let Some(cand_active) = anderson_combine(history) else { return };
        let mut cand = beta.clone();
        for (i, &c) in cols.iter().enumerate() {
            cand[c] = cand_active[i];
        }
        let mut r_cand = self.xty.clone();
        for &c in cols {
            if cand[c] != 0.0 {
                r_cand.axpy(-cand[c], &self.gram.column(c), 1.0);
            }
        }
        // ½(yy − xtyᵀβ − rᵀβ) + λ·penalty, using βᵀGβ = βᵀ(xty − r)
        let objective = |b: &DVector<f64>, res: &DVector<f64>| {
            let quad: f64 = cols.iter().map(|&c| b[c] * (2.0 * self.xty[c] - (self.xty[c] - res[c]))).sum();
            0.5 * (self.yy - quad) + lambda * self.penalty(b)
        };
        if objective(&cand, &r_cand) < objective(beta, r) {
            *beta = cand;
            *r = r_cand;
        }
    }

    /// Warm-started fits along a decreasing penalty sequence.
    pub fn solve_path(&self, lambdas: &[f64], opts: SolverOptions) -> Vec<Solution> {
        let mut out: Vec<Solution> = Vec::with_capacity(lambdas.len());
        for &lambda in lambdas {
            let sol = self.solve(lambda, out.last().map(|s| &s.beta), opts);
            out.push(sol);
        }
        out
    }

    fn into_fit(&self, lambda: f64, sol: Solution) -> GroupLassoFit {
        let df = sol.beta.iter().filter(|&&v| v != 0.0).count();
        let rss = self.mean_squared_residual(&sol.beta) * self.n as f64;
        let denom = (self.n.saturating_sub(df)).max(1) as f64;
        let group_norms = self.groups.iter().map(|g| sol.beta.rows(g.start, g.len).norm()).collect();
        GroupLassoFit {
            intercept: self.y_mean - self.col_means.dot(&sol.beta),
            sigma_hat: (rss / denom).sqrt(),
            group_norms,
            lambda,
            iterations: sol.sweeps,
            converged: sol.converged,
            beta: sol.beta,
        }
    }

    pub fn fit(&self, lambda: f64, opts: SolverOptions) -> GroupLassoFit {
        let sol = self.solve(lambda, None, opts);
        self.into_fit(lambda, sol)
    }

    /// Fit at `lambdas.last()`, warm-started along the whole sequence.
    pub fn fit_along(&self, lambdas: &[f64], opts: SolverOptions) -> GroupLassoFit {
        let mut sol: Option<Solution> = None;
        let mut sweeps = 0;
        for &lambda in lambdas {
            let s = self.solve(lambda, sol.as_ref().map(|s| &s.beta), opts);
            sweeps += s.sweeps;
            sol = Some(s);
        }
        let mut sol = sol.expect("non-empty penalty sequence");
        sol.sweeps = sweeps;
        self.into_fit(*lambdas.last().unwrap(), sol)
    }
}

/// Anderson extrapolation `Σ c_i x_{i+1}` of consecutive iterates, with
/// weights `c` minimizing `‖Σ c_i (x_{i+1} − x_i)‖` subject to `Σ c_i = 1`.
pub(crate) fn anderson_combine(history: &[DVector<f64>]) -> Option<DVector<f64>> {
    let k = history.len().checked_sub(1).filter(|&k| k > 0)?;
    let diffs: Vec<DVector<f64>> = (0..k).map(|i| &history[i + 1] - &history[i]).collect();
    let mut utu = DMatrix::from_fn(k, k, |a, b| diffs[a].dot(&diffs[b]));
    let ridge = 1e-10 * utu.trace().max(f64::MIN_POSITIVE);
    for i in 0..k {
        utu[(i, i)] += ridge;
    }
    let z = utu.cholesky()?.solve(&DVector::from_element(k, 1.0));
    let total = z.sum();
    if !total.is_finite() || total == 0.0 {
        return None;
    }
    let mut out = DVector::zeros(history[0].len());
    for i in 0..k {
        out.axpy(z[i] / total, &history[i + 1], 1.0);
    }
    Some(out)
}

fn soft_threshold(z: f64, a: f64) -> f64 {
    if z > a {
        z - a
    } else if z < -a {
        z + a
    } else {
        0.0
    }
}

/// Minimizes `½βᵀGβ − bᵀβ + a‖β‖₂` for a small positive semidefinite block.
fn block_solve(block: &BlockEigen, b: &[f64], a: f64) -> Vec<f64> {
    let m = b.len();
    let v = &block.vectors;
    let lmax = block.values.iter().copied().fold(0.0, f64::max);
    if lmax <= 0.0 {
        return vec![0.0; m];
    }
    let floor = lmax * 1e-12;
    let c: Vec<f64> = (0..m).map(|i| (0..m).map(|r| v[(r, i)] * b[r]).sum()).collect();
    let coords: Vec<f64> = if a == 0.0 {
        c.iter().zip(&block.values).map(|(&ci, &li)| if li > floor { ci / li } else { 0.0 }).collect()
    } else {
        let bnorm = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if bnorm <= a {
            return vec![0.0; m];
        }
        let lam: Vec<f64> = block.values.iter().map(|&l| l.max(floor)).collect();
        let lmin = lam.iter().copied().fold(f64::INFINITY, f64::min);
        let t = secular_root(&c, &lam, a, (bnorm - a) / lmax, (bnorm - a) / lmin);
        c.iter().zip(&lam).map(|(&ci, &li)| ci * t / (li * t + a)).collect()
    };
    (0..m).map(|r| (0..m).map(|i| v[(r, i)] * coords[i]).sum()).collect()
}

/// Root of `Σ c_i² / (λ_i t + a)² = 1` in `[lo, hi]` by safeguarded Newton on
/// `h(t)^{-1/2} - 1`.
fn secular_root(c: &[f64], lam: &[f64], a: f64, mut lo: f64, mut hi: f64) -> f64 {
    let eval = |t: f64| {
        let mut h = 0.0;
        let mut dh = 0.0;
        for (&ci, &li) in c.iter().zip(lam) {
            let den = li * t + a;
            h += ci * ci / (den * den);
            dh -= 2.0 * ci * ci * li / (den * den * den);
        }
        let psi = h.powf(-0.5) - 1.0;
        let dpsi = -0.5 * h.powf(-1.5) * dh;
        (psi, dpsi)
    };
    let mut t = lo;
    for _ in 0..200 {
        let (psi, dpsi) = eval(t);
        if psi == 0.0 {
            return t;
        }
        if psi > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        let mut next = t - psi / dpsi;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - t).abs() <= 1e-15 * t.abs().max(1e-300) {
            return next;
        }
        t = next;
    }
    t
}

/// Fitted group-lasso model on a design.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupLassoFit {
    pub beta: DVector<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub group_norms: Vec<f64>,
    pub sigma_hat: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub fn fit_group_lasso(design: &ExpandedDesign, y: &DVector<f64>, lambda: f64) -> Result<GroupLassoFit> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("penalty must be non-negative, got {lambda}")));
    }
    let problem = GramProblem::new(&design.matrix, y, &penalty_groups(&design.groups))?;
    Ok(problem.fit(lambda, SolverOptions::default()))
}

/// Geometric grid from `lambda_max` down to `min_ratio · lambda_max`.
pub fn lambda_grid(lambda_max: f64, n_lambda: usize, min_ratio: f64) -> Vec<f64> {
    match n_lambda {
        0 => vec![],
        1 => vec![lambda_max],
        _ => {
            let step = min_ratio.ln() / (n_lambda - 1) as f64;
            (0..n_lambda).map(|i| lambda_max * (step * i as f64).exp()).collect()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvRule {
    /// Penalty with the smallest mean held-out error.
    Min,
    /// Largest penalty within one standard error of the minimum.
    OneSe,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvConfig {
    pub n_folds: usize,
    pub n_lambda: usize,
    pub min_ratio: f64,
    pub rule: CvRule,
    pub seed: u64,
    pub solver: SolverOptions,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            n_folds: 5,
            n_lambda: 20,
            min_ratio: 1e-3,
            rule: CvRule::Min,
            seed: 0,
            solver: SolverOptions::default(),
        }
    }
}

/// Cross-validation curve over the penalty grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CvPath {
    pub lambdas: Vec<f64>,
    pub mean_error: Vec<f64>,
    pub se_error: Vec<f64>,
    pub best: usize,
}

impl CvPath {
    pub fn lambda(&self) -> f64 {
        self.lambdas[self.best]
    }

    /// Grid prefix ending at the selected penalty, for warm-started refits.
    pub fn path_to_best(&self) -> &[f64] {
        &self.lambdas[..=self.best]
    }
}

/// Deterministic fold label per row.
pub fn fold_assignment(n: usize, n_folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(seed, Stream::CvFolds));
    let mut folds = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        folds[i] = pos % n_folds;
    }
    folds
}

/// K-fold cross-validation of the penalty for the given grouped design.
pub fn cv_path(d: &DMatrix<f64>, y: &DVector<f64>, groups: &[PenaltyGroup], cfg: &CvConfig) -> Result<CvPath> {
    if cfg.n_folds < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {}", cfg.n_folds)));
    }
    if cfg.n_lambda == 0 {
        return Err(Error::InvalidArgument("empty penalty grid".into()));
    }
    let full = GramProblem::new(d, y, groups)?;
    let (lmax, _) = full.lambda_max();
    let lambdas = lambda_grid(lmax, cfg.n_lambda, cfg.min_ratio);
    if lambdas.len() == 1 {
        return Ok(CvPath { lambdas, mean_error: vec![f64::NAN], se_error: vec![f64::NAN], best: 0 });
    }
    let n = d.nrows();
    if n < cfg.n_folds {
        return Err(Error::InvalidArgument(format!("{n} rows cannot fill {} folds", cfg.n_folds)));
    }
    let folds = fold_assignment(n, cfg.n_folds, cfg.seed);

    let fold_errors: Vec<Result<Vec<f64>>> = (0..cfg.n_folds)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = (0..n).filter(|&i| folds[i] != f).collect();
            let test: Vec<usize> = (0..n).filter(|&i| folds[i] == f).collect();
            let dtr = d.select_rows(&train);
            let ytr = DVector::from_iterator(train.len(), train.iter().map(|&i| y[i]));
            let prob = GramProblem::new(&dtr, &ytr, groups)?;
            let mut dte = d.select_rows(&test);
            for (j, mut col) in dte.column_iter_mut().enumerate() {
                col.add_scalar_mut(-prob.col_means[j]);
            }
            let yte = DVector::from_iterator(test.len(), test.iter().map(|&i| y[i] - prob.y_mean));
            let sols = prob.solve_path(&lambdas, cfg.solver);
            Ok(sols.iter().map(|s| (&yte - &dte * &s.beta).norm_squared() / test.len() as f64).collect())
        })
        .collect();
    let fold_errors = fold_errors.into_iter().collect::<Result<Vec<_>>>()?;

    let nf = cfg.n_folds as f64;
    let mut mean_error = vec![0.0; lambdas.len()];
    let mut se_error = vec![0.0; lambdas.len()];
    for l in 0..lambdas.len() {
        let vals: Vec<f64> = fold_errors.iter().map(|e| e[l]).collect();
        let mean = vals.iter().sum::<f64>() / nf;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
        mean_error[l] = mean;
        se_error[l] = (var / nf).sqrt();
    }
    let argmin = (0..lambdas.len())
        .min_by(|&a, &b| mean_error[a].total_cmp(&mean_error[b]))
        .unwrap();
    let best = match cfg.rule {
        CvRule::Min => argmin,
        CvRule::OneSe => {
            let bound = mean_error[argmin] + se_error[argmin];
            (0..=argmin).find(|&l| mean_error[l] <= bound).unwrap_or(argmin)
        }
    };
    Ok(CvPath { lambdas, mean_error, se_error, best })
}

/// Cross-validated penalty for a design.
pub fn cv_lambda(design: &ExpandedDesign, y: &DVector<f64>, cfg: &CvConfig) -> Result<f64> {
    Ok(cv_path(&design.matrix, y, &penalty_groups(&design.groups), cfg)?.lambda())
}

/// Cross-validates the penalty, then refits on all rows along the grid.
pub fn fit_cv(d: &DMatrix<f64>, y: &DVector<f64>, groups: &[PenaltyGroup], cfg: &CvConfig) -> Result<(GroupLassoFit, CvPath)> {
    let path = cv_path(d, y, groups, cfg)?;
    let problem = GramProblem::new(d, y, groups)?;
    let fit = problem.fit_along(path.path_to_best(), cfg.solver);
    Ok((fit, path))
}
