//! Geometry diagnostics for activation clouds.
//!
//! Everything here reduces to dense symmetric eigendecompositions and SVDs:
//! PCA spectra with cumulative explained variance, cross-validated
//! SVD-pseudoinverse regression, factor-subspace identification (via vary-one
//! datasets or regression coefficient blocks), principal-angle subspace
//! overlap, the Grassmann additivity gap, and a per-factor variance
//! attribution of the token-embedding matrix.

use std::io::Write;
use std::path::Path;

use ndarray::linalg::general_mat_mul;
use ndarray::prelude::*;
use ndarray_linalg::{Eigh, JobSvd, SVDDC, UPLO};

use crate::compose::Codec;
use crate::{Error, Result};

/// Relative threshold grid for the regression pseudoinverse, as swept by
/// cross validation.
pub fn default_rcond_grid() -> Vec<f64> {
    vec![1e-15, 1e-10, 1e-8, 1e-6, 1e-4, 1e-2]
}

/// Default number of cross-validation folds.
pub const DEFAULT_CV_FOLDS: usize = 10;

// ---------------------------------------------------------------------------
// PCA spectrum and effective dimensionality
// ---------------------------------------------------------------------------

/// Eigen-spectrum of a (centered) scatter matrix, sorted descending, with
/// negatives clipped to zero.
#[derive(Debug, Clone)]
pub struct SpectrumReport {
    pub eigenvalues: Vec<f64>,
    pub total: f64,
    pub samples: usize,
    pub centered: bool,
}

impl SpectrumReport {
    fn from_scatter(scatter: &Array2<f64>, samples: usize, centered: bool) -> Result<Self> {
        let (vals, _) = scatter.eigh(UPLO::Lower)?;
        let mut eigenvalues: Vec<f64> = vals.iter().rev().map(|&v| v.max(0.0)).collect();
        // eigh returns ascending; after reversing, enforce descending despite
        // clipping ties at zero
        eigenvalues.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let total = eigenvalues.iter().sum();
        Ok(Self {
            eigenvalues,
            total,
            samples,
            centered,
        })
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Cumulative explained variance of the top `k` components.
    pub fn cev(&self, k: usize) -> Result<f64> {
        if k > self.dim() {
            return Err(Error::InvalidParameter(format!(
                "k = {k} exceeds spectrum dimension {}",
                self.dim()
            )));
        }
        if self.total <= 0.0 {
            return Err(Error::DegenerateSpectrum);
        }
        Ok(self.eigenvalues[..k].iter().sum::<f64>() / self.total)
    }

    /// Smallest component count whose CEV reaches `p`.
    pub fn effective_dim(&self, p: f64) -> Result<usize> {
        if !(0.0 < p && p <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "threshold p = {p} outside (0, 1]"
            )));
        }
        if self.total <= 0.0 {
            return Err(Error::DegenerateSpectrum);
        }
        let target = p * self.total;
        let mut acc = 0.0;
        for (k, &v) in self.eigenvalues.iter().enumerate() {
            acc += v;
            if acc >= target - 1e-12 * self.total {
                return Ok(k + 1);
            }
        }
        Ok(self.dim())
    }
}

/// Streaming scatter accumulation for row sets too large to hold at once.
/// Accumulates the Gram matrix chunk-by-chunk (each chunk through one matrix
/// product) plus column sums; the spectrum subtracts the mean outer product.
pub struct ScatterAccumulator {
    n: usize,
    sum: Array1<f64>,
    gram: Array2<f64>,
}

impl ScatterAccumulator {
    pub fn new(d: usize) -> Self {
        Self {
            n: 0,
            sum: Array1::zeros(d),
            gram: Array2::zeros((d, d)),
        }
    }

    pub fn add_rows(&mut self, rows: ArrayView2<f64>) {
        assert_eq!(rows.ncols(), self.sum.len());
        general_mat_mul(1.0, &rows.t(), &rows, 1.0, &mut self.gram);
        for row in rows.rows() {
            self.sum += &row;
        }
        self.n += rows.nrows();
    }

    pub fn samples(&self) -> usize {
        self.n
    }

    pub fn spectrum(&self, center: bool) -> Result<SpectrumReport> {
        if self.n < 2 {
            return Err(Error::InvalidParameter(
                "need at least 2 rows for a spectrum".into(),
            ));
        }
        let mut scatter = self.gram.clone();
        if center {
            let mean = &self.sum / self.n as f64;
            let n = self.n as f64;
            for i in 0..mean.len() {
                for j in 0..mean.len() {
                    scatter[[i, j]] -= n * mean[i] * mean[j];
                }
            }
        }
        SpectrumReport::from_scatter(&scatter, self.n, center)
    }
}

/// PCA eigen-spectrum of a row matrix.  Centering is the default; the
/// uncentered variant is kept for sensitivity checks.
pub fn pca_spectrum(rows: ArrayView2<f64>, center: bool) -> Result<SpectrumReport> {
    let (m, d) = rows.dim();
    if m < 2 {
        return Err(Error::InvalidParameter(
            "need at least 2 rows for a spectrum".into(),
        ));
    }
    let scatter = if center {
        // two-pass: subtract the column means, then one matrix product
        let mean = rows.mean_axis(Axis(0)).unwrap();
        let centered = &rows - &mean.broadcast((m, d)).unwrap();
        centered.t().dot(&centered)
    } else {
        rows.t().dot(&rows)
    };
    SpectrumReport::from_scatter(&scatter, m, center)
}

// ---------------------------------------------------------------------------
// Cross-validated SVD regression
// ---------------------------------------------------------------------------

/// Per-factor slice of a joint regression fit.
#[derive(Debug, Clone)]
pub struct BlockFit {
    pub cols: std::ops::Range<usize>,
    pub rmse: f64,
    pub r2: f64,
}

/// An affine readout `Y ~ A W + intercept` fit by SVD pseudoinverse with a
/// cross-validated singular-value threshold.
#[derive(Debug, Clone)]
pub struct RegressionFit {
    /// `d x t` activation weights (the intercept is separate).
    pub weights: Array2<f64>,
    pub intercept: Array1<f64>,
    /// The grid value whose mean held-out error was smallest.
    pub rcond: f64,
    /// `(rcond, mean cross-validation MSE)` per grid entry.
    pub cv_errors: Vec<(f64, f64)>,
    pub rmse: f64,
    pub r2: f64,
    pub per_factor: Vec<BlockFit>,
}

impl RegressionFit {
    pub fn predict(&self, a: ArrayView2<f64>) -> Array2<f64> {
        let mut out = a.dot(&self.weights);
        for mut row in out.rows_mut() {
            row += &self.intercept;
        }
        out
    }
}

/// Solve the augmented system `[1 | A] theta ~ Y` through an SVD
/// pseudoinverse, choosing the relative condition threshold by k-fold cross
/// validation over `grid`, then refitting on all rows.  `blocks`, when given,
/// splits the target columns into per-factor spans for block metrics.
pub fn fit_linear_readout(
    a: ArrayView2<f64>,
    y: ArrayView2<f64>,
    grid: &[f64],
    folds: usize,
    blocks: Option<&[usize]>,
) -> Result<RegressionFit> {
    let (m, _) = a.dim();
    let t = y.ncols();
    if y.nrows() != m {
        return Err(Error::ShapeMismatch(format!(
            "activations have {m} rows, targets {}",
            y.nrows()
        )));
    }
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty rcond grid".into()));
    }
    if folds < 2 || m <= folds {
        return Err(Error::InvalidParameter(format!(
            "need 2 <= folds < rows, got folds {folds} with {m} rows"
        )));
    }
    if let Some(blocks) = blocks {
        let total: usize = blocks.iter().sum();
        if total != t {
            return Err(Error::ShapeMismatch(format!(
                "factor blocks sum to {total}, targets have {t} columns"
            )));
        }
    }

    let x = augment(&a);

    // cross validation
    let mut cv = vec![0.0f64; grid.len()];
    for f in 0..folds {
        let lo = f * m / folds;
        let hi = (f + 1) * m / folds;
        let train_rows: Vec<usize> = (0..m).filter(|r| *r < lo || *r >= hi).collect();
        let x_tr = select_rows(&x.view(), &train_rows);
        let y_tr = select_rows(&y, &train_rows);
        let solved = SvdSolver::new(&x_tr, &y_tr)?;
        let x_val = x.slice(s![lo..hi, ..]);
        let y_val = y.slice(s![lo..hi, ..]);
        for (gi, &rc) in grid.iter().enumerate() {
            let theta = solved.theta(rc);
            let pred = x_val.dot(&theta);
            let mut sse = 0.0;
            for (p, yv) in pred.iter().zip(y_val.iter()) {
                sse += (p - yv) * (p - yv);
            }
            cv[gi] += sse / (pred.len() as f64);
        }
    }
    for e in cv.iter_mut() {
        *e /= folds as f64;
    }
    let mut best = 0;
    for gi in 1..grid.len() {
        if cv[gi] < cv[best] {
            best = gi;
        }
    }
    let rcond = grid[best];

    // final fit on all rows
    let solved = SvdSolver::new(&x, &y.to_owned())?;
    let theta = solved.theta(rcond);
    let intercept = theta.row(0).to_owned();
    let weights = theta.slice(s![1.., ..]).to_owned();

    let pred = x.dot(&theta);
    let (rmse, r2) = fit_metrics(&pred.view(), &y, 0..t);
    let mut per_factor = Vec::new();
    if let Some(blocks) = blocks {
        let mut start = 0;
        for &w in blocks {
            let range = start..start + w;
            let (b_rmse, b_r2) = fit_metrics(&pred.view(), &y, range.clone());
            per_factor.push(BlockFit {
                cols: range,
                rmse: b_rmse,
                r2: b_r2,
            });
            start += w;
        }
    }

    Ok(RegressionFit {
        weights,
        intercept,
        rcond,
        cv_errors: grid.iter().copied().zip(cv).collect(),
        rmse,
        r2,
        per_factor,
    })
}

fn augment(a: &ArrayView2<f64>) -> Array2<f64> {
    let (m, d) = a.dim();
    let mut x = Array2::ones((m, d + 1));
    x.slice_mut(s![.., 1..]).assign(a);
    x
}

fn select_rows(a: &ArrayView2<f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), a.ncols()));
    for (i, &r) in rows.iter().enumerate() {
        out.row_mut(i).assign(&a.row(r));
    }
    out
}

/// Economy SVD of the design matrix with the target projection precomputed,
/// so each rcond in the grid costs only a diagonal rescale.
struct SvdSolver {
    vt: Array2<f64>,
    sigma: Array1<f64>,
    /// `U^T Y`
    uty: Array2<f64>,
}

impl SvdSolver {
    fn new(x: &Array2<f64>, y: &Array2<f64>) -> Result<Self> {
        let (u, sigma, vt) = x.svddc(JobSvd::Some)?;
        let u = u.ok_or_else(|| Error::Linalg("SVD without U".into()))?;
        let vt = vt.ok_or_else(|| Error::Linalg("SVD without V^T".into()))?;
        let uty = u.t().dot(y);
        Ok(Self { vt, sigma, uty })
    }

    fn theta(&self, rcond: f64) -> Array2<f64> {
        let smax = self.sigma.iter().cloned().fold(0.0, f64::max);
        let mut scaled = self.uty.clone();
        for (i, row) in scaled.rows_mut().into_iter().enumerate() {
            let s = self.sigma[i];
            let inv = if s > rcond * smax { 1.0 / s } else { 0.0 };
            for v in row {
                *v *= inv;
            }
        }
        self.vt.t().dot(&scaled)
    }
}

fn fit_metrics(
    pred: &ArrayView2<f64>,
    y: &ArrayView2<f64>,
    cols: std::ops::Range<usize>,
) -> (f64, f64) {
    let m = y.nrows();
    let mut sse = 0.0;
    let mut sst = 0.0;
    for c in cols.clone() {
        let mut mean = 0.0;
        for r in 0..m {
            mean += y[[r, c]];
        }
        mean /= m as f64;
        for r in 0..m {
            let e = y[[r, c]] - pred[[r, c]];
            sse += e * e;
            let d = y[[r, c]] - mean;
            sst += d * d;
        }
    }
    let n = (m * cols.len()) as f64;
    let rmse = (sse / n).sqrt();
    let r2 = if sst > 0.0 { 1.0 - sse / sst } else { 1.0 };
    (rmse, r2)
}

// ---------------------------------------------------------------------------
// Factor subspaces
// ---------------------------------------------------------------------------

/// How many principal components a candidate subspace keeps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SubspaceRank {
    TopK(usize),
    /// Components up to this cumulative explained variance.
    Variance(f64),
}

/// Orthonormal basis (columns of `q`) for one factor's candidate activation
/// subspace, with the variance captured by each retained component.
#[derive(Debug, Clone)]
pub struct SubspaceBasis {
    pub factor: usize,
    pub q: Array2<f64>,
    pub variance: Vec<f64>,
}

impl SubspaceBasis {
    pub fn ambient_dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn k(&self) -> usize {
        self.q.ncols()
    }
}

/// PCA of per-cell mean-centered vary-one activations.
///
/// `groups[g]` holds activations shaped `(variants, positions, d)` for one
/// frozen configuration of the other factors.  Centering happens per
/// `(group, position)` cell across variants, which removes both the position
/// signal and the frozen factors' contribution; a single variant per cell
/// would center everything to zero, so at least two are required.
pub fn vary_one_subspaces(
    groups: &[Array3<f64>],
    rank: SubspaceRank,
    factor: usize,
) -> Result<SubspaceBasis> {
    if groups.is_empty() {
        return Err(Error::InvalidParameter("no vary-one groups".into()));
    }
    let d = groups[0].dim().2;
    let mut scatter = Array2::<f64>::zeros((d, d));
    let mut rows = 0usize;
    for g in groups {
        let (v, l, dg) = g.dim();
        if dg != d {
            return Err(Error::ShapeMismatch("inconsistent activation width".into()));
        }
        if v < 2 {
            return Err(Error::InvalidParameter(
                "vary-one groups need at least 2 variants".into(),
            ));
        }
        let mut centered = Array2::<f64>::zeros((v, d));
        for pos in 0..l {
            let mut mean = Array1::<f64>::zeros(d);
            for vi in 0..v {
                mean += &g.slice(s![vi, pos, ..]);
            }
            mean /= v as f64;
            for vi in 0..v {
                let row = &g.slice(s![vi, pos, ..]) - &mean;
                centered.row_mut(vi).assign(&row);
            }
            general_mat_mul(1.0, &centered.t(), &centered, 1.0, &mut scatter);
            rows += v;
        }
    }
    if rows < 2 {
        return Err(Error::InvalidParameter("not enough vary-one rows".into()));
    }

    let (vals, vecs) = scatter.eigh(UPLO::Lower)?;
    let total: f64 = vals.iter().map(|v| v.max(0.0)).sum();
    if total <= 0.0 {
        return Err(Error::DegenerateSpectrum);
    }
    // eigh is ascending: walk from the back
    let k = match rank {
        SubspaceRank::TopK(k) => k.min(d),
        SubspaceRank::Variance(p) => {
            let mut acc = 0.0;
            let mut k = 0;
            for i in (0..d).rev() {
                acc += vals[i].max(0.0);
                k += 1;
                if acc >= p * total {
                    break;
                }
            }
            k
        }
    };
    if k == 0 {
        return Err(Error::InvalidParameter("subspace rank 0".into()));
    }
    let mut q = Array2::zeros((d, k));
    let mut variance = Vec::with_capacity(k);
    for j in 0..k {
        let src = d - 1 - j;
        q.column_mut(j).assign(&vecs.column(src));
        variance.push(vals[src].max(0.0));
    }
    Ok(SubspaceBasis {
        factor,
        q,
        variance,
    })
}

/// Factor subspaces from a joint regression: the span of each per-factor
/// coefficient block, orthonormalized by SVD, keeping singular directions
/// above `tol` relative to the largest.
pub fn regression_subspaces(
    fit: &RegressionFit,
    blocks: &[usize],
    tol: f64,
) -> Result<Vec<SubspaceBasis>> {
    let total: usize = blocks.iter().sum();
    if total != fit.weights.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "blocks sum to {total}, weights have {} columns",
            fit.weights.ncols()
        )));
    }
    let mut out = Vec::with_capacity(blocks.len());
    let mut start = 0;
    for (n, &w) in blocks.iter().enumerate() {
        let block = fit.weights.slice(s![.., start..start + w]).to_owned();
        start += w;
        let (u, sigma, _) = block.svddc(JobSvd::Some)?;
        let u = u.ok_or_else(|| Error::Linalg("SVD without U".into()))?;
        let smax = sigma.iter().cloned().fold(0.0, f64::max);
        let rank = sigma.iter().filter(|&&s| s > tol * smax && s > 0.0).count();
        if rank == 0 {
            return Err(Error::InvalidParameter(format!(
                "factor {n} coefficient block is numerically zero"
            )));
        }
        let q = u.slice(s![.., ..rank]).to_owned();
        out.push(SubspaceBasis {
            factor: n,
            q,
            variance: sigma.iter().take(rank).map(|&s| s * s).collect(),
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Overlap and additivity
// ---------------------------------------------------------------------------

/// Principal-angle overlap between two candidate subspaces.
#[derive(Debug, Clone)]
pub struct OverlapReport {
    pub pair: (usize, usize),
    pub k: (usize, usize),
    /// Singular values of `Q_a^T Q_b`: cosines of the principal angles.
    pub sigmas: Vec<f64>,
    /// `(sum sigma_i^2) / min(k_a, k_b)`, in [0, 1].
    pub score: f64,
}

/// Basis-invariant subspace overlap: 0 for geometrically orthogonal
/// subspaces, 1 when the smaller is contained in the larger.
pub fn subspace_overlap(a: &SubspaceBasis, b: &SubspaceBasis) -> Result<OverlapReport> {
    if a.ambient_dim() != b.ambient_dim() {
        return Err(Error::ShapeMismatch(format!(
            "ambient dimensions differ: {} vs {}",
            a.ambient_dim(),
            b.ambient_dim()
        )));
    }
    let m = a.q.t().dot(&b.q);
    let (_, sigma, _) = m.svddc(JobSvd::None)?;
    let sigmas: Vec<f64> = sigma.to_vec();
    for &s in &sigmas {
        if s > 1.0 + 1e-8 {
            return Err(Error::Linalg(format!(
                "principal cosine {s} above 1: bases not orthonormal"
            )));
        }
    }
    let d_min = a.k().min(b.k());
    let score = sigmas.iter().map(|s| s * s).sum::<f64>() / d_min as f64;
    Ok(OverlapReport {
        pair: (a.factor, b.factor),
        k: (a.k(), b.k()),
        sigmas,
        score,
    })
}

/// Grassmann additivity gap: `sum_n k*_p(factor n) - k*_p(union)`.  Zero for
/// orthogonal factor subspaces; positive values count shared directions.
pub fn dimensionality_additivity(
    per_factor: &[SpectrumReport],
    union: &SpectrumReport,
    p: f64,
) -> Result<i64> {
    let mut total = 0i64;
    for s in per_factor {
        total += s.effective_dim(p)? as i64;
    }
    Ok(total - union.effective_dim(p)? as i64)
}

// ---------------------------------------------------------------------------
// Embedding-matrix factor attribution
// ---------------------------------------------------------------------------

/// Singular spectrum of the token-embedding matrix plus, for each right
/// singular direction, the fraction of projection variance explained by each
/// factor's sub-token grouping.
#[derive(Debug, Clone)]
pub struct AttributionReport {
    pub sigmas: Vec<f64>,
    /// `n_singular x n_factors`; one-way between-group variance fractions.
    pub attributions: Array2<f64>,
}

/// SVD the embedding rows (BOS excluded, rows indexed by token id), project
/// tokens onto each right singular vector, and decompose each projection's
/// variance over every factor's sub-token groups.
pub fn embedding_factor_attribution(
    e: ArrayView2<f64>,
    codec: &Codec,
) -> Result<AttributionReport> {
    let (k_tokens, _d) = e.dim();
    if k_tokens != codec.n_tokens() {
        return Err(Error::ShapeMismatch(format!(
            "embedding has {k_tokens} rows, codec expects {} (BOS excluded)",
            codec.n_tokens()
        )));
    }
    let (_, sigma, vt) = e.svddc(JobSvd::Some)?;
    let vt = vt.ok_or_else(|| Error::Linalg("SVD without V^T".into()))?;
    let n_sv = sigma.len();
    let n_factors = codec.n_factors();
    let mut attributions = Array2::zeros((n_sv, n_factors));

    let mut sub = vec![0usize; n_factors];
    let mut decoded = Vec::with_capacity(k_tokens);
    for t in 0..k_tokens {
        codec.decode_into(t, &mut sub)?;
        decoded.push(sub.clone());
    }

    for j in 0..n_sv {
        let v = vt.row(j);
        let proj = e.dot(&v);
        let mean = proj.sum() / k_tokens as f64;
        let mut var = 0.0;
        for &p in proj.iter() {
            var += (p - mean) * (p - mean);
        }
        var /= k_tokens as f64;
        if var <= 1e-30 {
            continue;
        }
        for n in 0..n_factors {
            let groups = codec.sizes()[n];
            let mut sums = vec![0.0f64; groups];
            let mut counts = vec![0usize; groups];
            for (t, subs) in decoded.iter().enumerate() {
                sums[subs[n]] += proj[t];
                counts[subs[n]] += 1;
            }
            let mut between = 0.0;
            for g in 0..groups {
                if counts[g] == 0 {
                    continue;
                }
                let gm = sums[g] / counts[g] as f64;
                between += counts[g] as f64 / k_tokens as f64 * (gm - mean) * (gm - mean);
            }
            attributions[[j, n]] = between / var;
        }
    }
    Ok(AttributionReport {
        sigmas: sigma.to_vec(),
        attributions,
    })
}

// ---------------------------------------------------------------------------
// Report CSV writers
// ---------------------------------------------------------------------------

/// `j,lambda,cev` rows, one per eigenvalue (1-indexed).
pub fn write_spectrum_csv(path: &Path, report: &SpectrumReport) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "j,lambda,cev")?;
    let mut acc = 0.0;
    for (j, &v) in report.eigenvalues.iter().enumerate() {
        acc += v;
        let cev = if report.total > 0.0 {
            acc / report.total
        } else {
            0.0
        };
        writeln!(f, "{},{},{}", j + 1, v, cev)?;
    }
    Ok(())
}

/// `step,factor_a,factor_b,k,score` rows.
pub fn write_overlap_csv(path: &Path, rows: &[(u64, OverlapReport)]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "step,factor_a,factor_b,k,score")?;
    for (step, r) in rows {
        writeln!(
            f,
            "{},{},{},{},{}",
            step,
            r.pair.0,
            r.pair.1,
            r.k.0.min(r.k.1),
            r.score
        )?;
    }
    Ok(())
}

/// `step,rmse_total,r2_total,rmse_f0..fN,rcond` rows.
pub fn write_regression_csv(path: &Path, rows: &[(u64, RegressionFit)]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let n_factors = rows.first().map_or(0, |(_, fit)| fit.per_factor.len());
    let mut header = String::from("step,rmse_total,r2_total");
    for n in 0..n_factors {
        header.push_str(&format!(",rmse_f{n}"));
    }
    header.push_str(",rcond");
    writeln!(f, "{header}")?;
    for (step, fit) in rows {
        let mut line = format!("{},{},{}", step, fit.rmse, fit.r2);
        for b in &fit.per_factor {
            line.push_str(&format!(",{}", b.rmse));
        }
        line.push_str(&format!(",{}", fit.rcond));
        writeln!(f, "{line}")?;
    }
    Ok(())
}

/// `sv_index,sigma,attr_f0..fN` rows.
pub fn write_attribution_csv(path: &Path, report: &AttributionReport) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let n_factors = report.attributions.ncols();
    let mut header = String::from("sv_index,sigma");
    for n in 0..n_factors {
        header.push_str(&format!(",attr_f{n}"));
    }
    writeln!(f, "{header}")?;
    for (j, &s) in report.sigmas.iter().enumerate() {
        let mut line = format!("{},{}", j, s);
        for n in 0..n_factors {
            line.push_str(&format!(",{}", report.attributions[[j, n]]));
        }
        writeln!(f, "{line}")?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Small linear-algebra helpers shared with tests and the verify suite
// ---------------------------------------------------------------------------

/// Orthonormalize the columns of `m` in place order by Gram-Schmidt,
/// dropping columns that fall below tolerance; returns `d x r`.
pub fn orthonormal_columns(m: &Array2<f64>) -> Array2<f64> {
    let (d, k) = m.dim();
    let mut cols: Vec<Array1<f64>> = Vec::with_capacity(k);
    for j in 0..k {
        let mut v = m.column(j).to_owned();
        for b in &cols {
            let c = v.dot(b);
            v = v - b * c;
        }
        let norm = v.dot(&v).sqrt();
        if norm > 1e-10 {
            cols.push(v / norm);
        }
    }
    let mut out = Array2::zeros((d, cols.len()));
    for (j, c) in cols.iter().enumerate() {
        out.column_mut(j).assign(c);
    }
    out
}
