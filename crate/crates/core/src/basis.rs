//! Basis expansion of the exposure matrix into the grouped design.
//!
//! Each exposure becomes a block of `k` centered polynomial columns. Each pair
//! of exposures becomes a block of `k²` tensor-product columns with the span of
//! the intercept and both parent main-effect blocks projected out, so that an
//! interaction block only carries what the two main effects cannot represent.
//!
//! All constants needed to re-expand new exposure rows are kept in a
//! [`BasisTransform`]. The training design itself is produced by the same
//! row-expansion code, so re-expanding a training row is bitwise identical.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Outcome, exposures and covariates for `n` subjects.
#[derive(Debug, Clone, PartialEq)]
pub struct RawData {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub exposure_names: Vec<String>,
    pub covariate_names: Vec<String>,
}

impl RawData {
    pub fn new(
        y: DVector<f64>,
        x: DMatrix<f64>,
        c: DMatrix<f64>,
        exposure_names: Vec<String>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::InvalidArgument("no observations".into()));
        }
        if x.nrows() != n || c.nrows() != n {
            return Err(Error::ShapeMismatch(format!(
                "y has {n} rows, X has {}, C has {}",
                x.nrows(),
                c.nrows()
            )));
        }
        if x.ncols() < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 exposures, got {}",
                x.ncols()
            )));
        }
        if exposure_names.len() != x.ncols() || covariate_names.len() != c.ncols() {
            return Err(Error::ShapeMismatch("column names do not match column counts".into()));
        }
        let finite = y.iter().chain(x.iter()).chain(c.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidArgument("non-finite entries in data".into()));
        }
        Ok(RawData { y, x, c, exposure_names, covariate_names })
    }

    /// Same data with default column names `x1..xp`, `c1..cq`.
    pub fn unnamed(y: DVector<f64>, x: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let xn = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
        let cn = (1..=c.ncols()).map(|j| format!("c{j}")).collect();
        Self::new(y, x, c, xn, cn)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn q(&self) -> usize {
        self.c.ncols()
    }

    /// Rows `rows` (in the given order) as a new data set.
    pub fn subset(&self, rows: &[usize]) -> RawData {
        RawData {
            y: DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.y[i])),
            x: self.x.select_rows(rows),
            c: self.c.select_rows(rows),
            exposure_names: self.exposure_names.clone(),
            covariate_names: self.covariate_names.clone(),
        }
    }
}

/// Standardization and centering constants for one exposure's polynomial block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyBasis {
    pub center: f64,
    pub scale: f64,
    /// Training mean of each power of the standardized exposure.
    pub column_means: Vec<f64>,
}

impl PolyBasis {
    pub fn degree(&self) -> usize {
        self.column_means.len()
    }

    /// Standardized value of a raw exposure.
    pub fn standardize(&self, v: f64) -> f64 {
        (v - self.center) / self.scale
    }

    fn write_row(&self, v: f64, out: &mut [f64]) {
        let z = self.standardize(v);
        let mut pow = 1.0;
        for (slot, mean) in out.iter_mut().zip(&self.column_means) {
            pow *= z;
            *slot = pow - mean;
        }
    }
}

fn fit_poly(x: &DVector<f64>, k: usize, name: &str) -> Result<PolyBasis> {
    if k == 0 {
        return Err(Error::InvalidArgument("basis degree must be at least 1".into()));
    }
    let n = x.len();
    let center = x.mean();
    let ss: f64 = x.iter().map(|v| (v - center).powi(2)).sum();
    let scale = if n > 1 { (ss / (n - 1) as f64).sqrt() } else { 0.0 };
    if !(scale > 1e-12 * center.abs().max(1.0)) {
        return Err(Error::DegenerateColumn { column: name.to_string() });
    }
    let mut sums = vec![0.0; k];
    for v in x.iter() {
        let z = (v - center) / scale;
        let mut pow = 1.0;
        for s in sums.iter_mut() {
            pow *= z;
            *s += pow;
        }
    }
    let column_means = sums.into_iter().map(|s| s / n as f64).collect();
    Ok(PolyBasis { center, scale, column_means })
}

fn eval_poly(basis: &PolyBasis, x: &DVector<f64>) -> DMatrix<f64> {
    let k = basis.degree();
    let mut out = DMatrix::zeros(x.len(), k);
    let mut row = vec![0.0; k];
    for (i, &v) in x.iter().enumerate() {
        basis.write_row(v, &mut row);
        for m in 0..k {
            out[(i, m)] = row[m];
        }
    }
    out
}

/// Powers 1..=k of the standardized vector, each column centered.
pub fn polynomial_basis(x: &DVector<f64>, k: usize) -> Result<(DMatrix<f64>, PolyBasis)> {
    let basis = fit_poly(x, k, "x")?;
    Ok((eval_poly(&basis, x), basis))
}

/// Column `(a, b)` is the elementwise product of `b1[a]` and `b2[b]`, ordered
/// lexicographically.
pub fn tensor_interaction_basis(b1: &DMatrix<f64>, b2: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if b1.nrows() != b2.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "interaction parents have {} and {} rows",
            b1.nrows(),
            b2.nrows()
        )));
    }
    let (k1, k2) = (b1.ncols(), b2.ncols());
    let mut out = DMatrix::zeros(b1.nrows(), k1 * k2);
    for a in 0..k1 {
        for b in 0..k2 {
            out.set_column(a * k2 + b, &b1.column(a).component_mul(&b2.column(b)));
        }
    }
    Ok(out)
}

/// Least-squares coefficients of `t` on `m`, i.e. `(MᵀM)⁻¹MᵀT`, via QR.
pub fn projection_coefficients(t: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if t.nrows() != m.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "projection target has {} rows, basis has {}",
            t.nrows(),
            m.nrows()
        )));
    }
    if m.ncols() > m.nrows() {
        return Err(Error::Collinear {
            context: "projection basis".into(),
            columns: (m.nrows()..m.ncols()).collect(),
        });
    }
    let qr = m.clone().qr();
    let r = qr.r();
    let offending: Vec<usize> = (0..m.ncols())
        .filter(|&i| r[(i, i)].abs() <= 1e-9 * m.column(i).norm().max(f64::MIN_POSITIVE))
        .collect();
    if !offending.is_empty() {
        return Err(Error::Collinear { context: "projection basis".into(), columns: offending });
    }
    let qt = qr.q().transpose() * t;
    r.solve_upper_triangular(&qt)
        .ok_or_else(|| Error::Collinear { context: "projection basis".into(), columns: vec![] })
}

/// Residual of `t` after projection onto the column span of `m`.
pub fn project_out_main(t: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let coef = projection_coefficients(t, m)?;
    Ok(t - m * coef)
}

/// Kind of a coefficient group; exposure indices are zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GroupKind {
    Covariate(usize),
    Main(usize),
    Interaction(usize, usize),
}

impl GroupKind {
    pub fn is_penalized(&self) -> bool {
        !matches!(self, GroupKind::Covariate(_))
    }

    pub fn label(&self) -> String {
        match *self {
            GroupKind::Covariate(j) => format!("C{}", j + 1),
            GroupKind::Main(j) => format!("x{}", j + 1),
            GroupKind::Interaction(a, b) => format!("x{}:x{}", a + 1, b + 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Group {
    pub kind: GroupKind,
    pub start: usize,
    pub len: usize,
}

impl Group {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// Projection of one interaction block against `[1 | B_j1 | B_j2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairProjection {
    pub pair: (usize, usize),
    /// `(2k+1) × k²` least-squares coefficients.
    pub coef: DMatrix<f64>,
}

/// Everything needed to expand raw rows into design columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisTransform {
    pub k: usize,
    pub exposures: Vec<PolyBasis>,
    pub covariate_means: Vec<f64>,
    pub interactions: Vec<PairProjection>,
}

impl BasisTransform {
    pub fn p(&self) -> usize {
        self.exposures.len()
    }

    /// Column count of the exposure part (main plus interaction blocks).
    pub fn mixture_width(&self) -> usize {
        self.p() * self.k + self.interactions.len() * self.k * self.k
    }

    /// Expanded exposure columns, in design order without covariates.
    pub fn expand_mixture(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let p = self.p();
        if x.ncols() != p {
            return Err(Error::ShapeMismatch(format!("expected {p} exposures, got {}", x.ncols())));
        }
        let k = self.k;
        let kk = k * k;
        let mut out = DMatrix::zeros(x.nrows(), self.mixture_width());
        let mut mains = vec![0.0; p * k];
        let mut m_row = vec![0.0; 2 * k + 1];
        let mut t_row = vec![0.0; kk];
        for i in 0..x.nrows() {
            for (j, basis) in self.exposures.iter().enumerate() {
                basis.write_row(x[(i, j)], &mut mains[j * k..(j + 1) * k]);
            }
            for (c, &v) in mains.iter().enumerate() {
                out[(i, c)] = v;
            }
            for (pi, proj) in self.interactions.iter().enumerate() {
                let (a, b) = proj.pair;
                let ba = &mains[a * k..(a + 1) * k];
                let bb = &mains[b * k..(b + 1) * k];
                m_row[0] = 1.0;
                m_row[1..=k].copy_from_slice(ba);
                m_row[k + 1..].copy_from_slice(bb);
                for u in 0..k {
                    for v in 0..k {
                        t_row[u * k + v] = ba[u] * bb[v];
                    }
                }
                let base = p * k + pi * kk;
                for col in 0..kk {
                    let mut acc = t_row[col];
                    for (r, &mv) in m_row.iter().enumerate() {
                        acc -= mv * proj.coef[(r, col)];
                    }
                    out[(i, base + col)] = acc;
                }
            }
        }
        Ok(out)
    }

    /// Full design rows `[C - mean | mixture]`.
    pub fn expand(&self, x: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let q = self.covariate_means.len();
        if c.ncols() != q || c.nrows() != x.nrows() {
            return Err(Error::ShapeMismatch("covariate block does not match transform".into()));
        }
        let mix = self.expand_mixture(x)?;
        let mut out = DMatrix::zeros(x.nrows(), q + mix.ncols());
        for j in 0..q {
            let mean = self.covariate_means[j];
            for i in 0..x.nrows() {
                out[(i, j)] = c[(i, j)] - mean;
            }
        }
        out.columns_mut(q, mix.ncols()).copy_from(&mix);
        Ok(out)
    }

    /// Maximum absolute standardized value of `x`, per exposure.
    pub fn max_abs_standardized(&self, x: &DMatrix<f64>) -> Vec<f64> {
        self.exposures
            .iter()
            .enumerate()
            .map(|(j, b)| x.column(j).iter().map(|&v| b.standardize(v).abs()).fold(0.0, f64::max))
            .collect()
    }
}

/// The grouped design matrix and its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpandedDesign {
    pub matrix: DMatrix<f64>,
    pub groups: Vec<Group>,
    pub k: usize,
    pub transform: BasisTransform,
    pub exposure_names: Vec<String>,
    pub covariate_names: Vec<String>,
}

impl ExpandedDesign {
    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn p(&self) -> usize {
        self.transform.p()
    }

    pub fn q(&self) -> usize {
        self.transform.covariate_means.len()
    }

    pub fn group(&self, kind: GroupKind) -> Option<&Group> {
        self.groups.iter().find(|g| g.kind == kind)
    }

    pub fn main_groups(&self) -> impl Iterator<Item = &Group> {
        self.groups.iter().filter(|g| matches!(g.kind, GroupKind::Main(_)))
    }

    pub fn interaction_groups(&self) -> impl Iterator<Item = &Group> {
        self.groups.iter().filter(|g| matches!(g.kind, GroupKind::Interaction(..)))
    }

    pub fn group_label(&self, kind: GroupKind) -> String {
        match kind {
            GroupKind::Covariate(j) => self.covariate_names[j].clone(),
            GroupKind::Main(j) => self.exposure_names[j].clone(),
            GroupKind::Interaction(a, b) => {
                format!("{}:{}", self.exposure_names[a], self.exposure_names[b])
            }
        }
    }
}

/// Group layout for `(p, q, k)`: covariates, then mains, then pairs in
/// lexicographic order.
pub fn group_layout(p: usize, q: usize, k: usize) -> Vec<Group> {
    let mut groups = Vec::with_capacity(q + p + p * p.saturating_sub(1) / 2);
    let mut start = 0;
    for j in 0..q {
        groups.push(Group { kind: GroupKind::Covariate(j), start, len: 1 });
        start += 1;
    }
    for j in 0..p {
        groups.push(Group { kind: GroupKind::Main(j), start, len: k });
        start += k;
    }
    for a in 0..p {
        for b in a + 1..p {
            groups.push(Group { kind: GroupKind::Interaction(a, b), start, len: k * k });
            start += k * k;
        }
    }
    groups
}

/// Builds `[C | main blocks | projected interaction blocks]` with every column
/// centered.
pub fn build_design(data: &RawData, k: usize) -> Result<ExpandedDesign> {
    if k == 0 {
        return Err(Error::InvalidArgument("basis degree must be at least 1".into()));
    }
    let n = data.n();
    if n <= 2 * k + 1 {
        return Err(Error::InvalidArgument(format!(
            "need more than {} observations for degree {k}, got {n}",
            2 * k + 1
        )));
    }
    let (p, q) = (data.p(), data.q());

    let mut exposures = Vec::with_capacity(p);
    let mut mains = Vec::with_capacity(p);
    for j in 0..p {
        let col = data.x.column(j).into_owned();
        let basis = fit_poly(&col, k, &data.exposure_names[j])?;
        mains.push(eval_poly(&basis, &col));
        exposures.push(basis);
    }

    let mut interactions = Vec::with_capacity(p * (p - 1) / 2);
    for a in 0..p {
        for b in a + 1..p {
            let t = tensor_interaction_basis(&mains[a], &mains[b])?;
            let mut m = DMatrix::zeros(n, 2 * k + 1);
            m.column_mut(0).fill(1.0);
            m.columns_mut(1, k).copy_from(&mains[a]);
            m.columns_mut(k + 1, k).copy_from(&mains[b]);
            let coef = projection_coefficients(&t, &m).map_err(|e| match e {
                Error::Collinear { columns, .. } => Error::Collinear {
                    context: format!(
                        "parents of {}:{}",
                        data.exposure_names[a], data.exposure_names[b]
                    ),
                    columns,
                },
                other => other,
            })?;
            interactions.push(PairProjection { pair: (a, b), coef });
        }
    }

    let covariate_means = (0..q).map(|j| data.c.column(j).mean()).collect();
    let transform = BasisTransform { k, exposures, covariate_means, interactions };
    let matrix = transform.expand(&data.x, &data.c)?;
    Ok(ExpandedDesign {
        matrix,
        groups: group_layout(p, q, k),
        k,
        transform,
        exposure_names: data.exposure_names.clone(),
        covariate_names: data.covariate_names.clone(),
    })
}
