//! Dense numerics shared by the detectors, mixtures and the multiscale model.
//!
//! Spectra sets are `count × bands` matrices (one spectrum per row). Fitted
//! models are immutable once built.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Linear-interpolation quantile of an ascending slice, `q ∈ [0, 1]`.
///
/// Position `q·(n−1)` is interpolated between its neighbouring order
/// statistics (the "linear" convention of most numerical packages).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    let q = q.clamp(0.0, 1.0);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Percentile (`pct ∈ [0, 100]`) of arbitrary values.
pub fn percentile(values: &[f64], pct: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, pct / 100.0)
}

fn check_finite(m: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Column means and the centred copy of `data`.
pub fn center_rows(data: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = data.nrows().max(1) as f64;
    let mean = DVector::from_iterator(data.ncols(), data.column_iter().map(|c| c.sum() / n));
    let mut centered = data.clone();
    for mut row in centered.row_iter_mut() {
        for (v, m) in row.iter_mut().zip(mean.iter()) {
            *v -= m;
        }
    }
    (mean, centered)
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues descending.
///
/// Each eigenvector is signed so that its largest-magnitude entry is positive.
pub fn sorted_symmetric_eigen(m: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let values = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = eig.eigenvectors.select_columns(order.iter());
    for mut col in vectors.column_iter_mut() {
        let pivot = col
            .iter()
            .copied()
            .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if pivot < 0.0 {
            col.neg_mut();
        }
    }
    (values, vectors)
}

/// Sample covariance (1/(count−1) normalisation; zero for a single spectrum).
fn sample_covariance(centered: &DMatrix<f64>) -> DMatrix<f64> {
    let n = centered.nrows();
    let scatter = centered.tr_mul(centered);
    if n < 2 {
        scatter * 0.0
    } else {
        scatter / (n - 1) as f64
    }
}

// ---------------------------------------------------------------------------
// Regularised Gaussian background
// ---------------------------------------------------------------------------

/// Mean and δ-regularised covariance eigensystem of a background.
///
/// The precision is `Σ_k q_k q_kᵀ / (λ_k + δ)`; terms with `λ_k + δ ≤ 0` are
/// dropped (pseudo-inverse), which only happens for `δ = 0` and a singular
/// covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct CovModel {
    mean: DVector<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    delta: f64,
    whitener: DMatrix<f64>,
    precision: DMatrix<f64>,
}

impl CovModel {
    /// Model from a known mean and covariance with a fixed ridge.
    pub fn from_covariance(
        mean: DVector<f64>,
        covariance: DMatrix<f64>,
        delta: f64,
    ) -> Result<Self> {
        let p = mean.len();
        if covariance.shape() != (p, p) {
            return Err(Error::Dimension {
                what: "covariance",
                expected: p,
                found: covariance.nrows(),
            });
        }
        check_finite(&covariance, "covariance")?;
        let sym = (&covariance + covariance.transpose()) * 0.5;
        let (values, vectors) = sorted_symmetric_eigen(sym);
        Self::from_eigen(mean, values, vectors, delta)
    }

    /// Assembles the model from an eigensystem. Negative round-off
    /// eigenvalues are clamped to zero.
    pub fn from_eigen(
        mean: DVector<f64>,
        eigenvalues: DVector<f64>,
        eigenvectors: DMatrix<f64>,
        delta: f64,
    ) -> Result<Self> {
        let p = mean.len();
        if eigenvalues.len() != p || eigenvectors.shape() != (p, p) {
            return Err(Error::Dimension {
                what: "eigensystem",
                expected: p,
                found: eigenvalues.len(),
            });
        }
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::invalid(format!(
                "ridge δ must be finite and non-negative, got {delta}"
            )));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mean"));
        }
        let eigenvalues = eigenvalues.map(|v| v.max(0.0));
        let kept: Vec<usize> = (0..p).filter(|&k| eigenvalues[k] + delta > 0.0).collect();
        let mut whitener = DMatrix::zeros(kept.len(), p);
        for (r, &k) in kept.iter().enumerate() {
            let scale = 1.0 / (eigenvalues[k] + delta).sqrt();
            for j in 0..p {
                whitener[(r, j)] = eigenvectors[(j, k)] * scale;
            }
        }
        let mut precision = DMatrix::zeros(p, p);
        for &k in &kept {
            let q = eigenvectors.column(k);
            precision += (q * q.transpose()) / (eigenvalues[k] + delta);
        }
        Ok(Self {
            mean,
            eigenvalues,
            eigenvectors,
            delta,
            whitener,
            precision,
        })
    }

    pub fn bands(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    /// `W` with `WᵀW = Σ̂⁻¹`; rows are `q_kᵀ / √(λ_k + δ)`.
    pub fn whitener(&self) -> &DMatrix<f64> {
        &self.whitener
    }

    /// `Σ_k log(λ_k + δ)` over the retained terms.
    pub fn log_det(&self) -> f64 {
        self.eigenvalues
            .iter()
            .filter(|&&l| l + self.delta > 0.0)
            .map(|&l| (l + self.delta).ln())
            .sum()
    }

    /// Regularised covariance `Σ λ_k q_k q_kᵀ + δI`.
    pub fn regularized_covariance(&self) -> DMatrix<f64> {
        let p = self.bands();
        let mut c = DMatrix::identity(p, p) * self.delta;
        for k in 0..p {
            let q = self.eigenvectors.column(k);
            c += (q * q.transpose()) * self.eigenvalues[k];
        }
        c
    }

    /// Squared Mahalanobis distance of `x` under the regularised precision.
    pub fn mahalanobis_sq(&self, x: &[f64]) -> f64 {
        let centered =
            DVector::from_iterator(x.len(), x.iter().zip(self.mean.iter()).map(|(a, m)| a - m));
        (&self.whitener * centered).norm_squared()
    }
}

/// Fits mean and covariance eigensystem; δ is the `delta_percentile`
/// percentile of the eigenvalues (50 = median).
pub fn fit_cov(spectra: &DMatrix<f64>, delta_percentile: f64) -> Result<CovModel> {
    if spectra.nrows() < 2 {
        return Err(Error::invalid(format!(
            "covariance needs at least 2 spectra, got {}",
            spectra.nrows()
        )));
    }
    if !(0.0..=100.0).contains(&delta_percentile) {
        return Err(Error::invalid(format!(
            "δ percentile {delta_percentile} outside [0, 100]"
        )));
    }
    check_finite(spectra, "spectra")?;
    let (mean, centered) = center_rows(spectra);
    let (values, vectors) = sorted_symmetric_eigen(sample_covariance(&centered));
    let clamped: Vec<f64> = values.iter().map(|v| v.max(0.0)).collect();
    let delta = percentile(&clamped, delta_percentile);
    CovModel::from_eigen(mean, values, vectors, delta)
}

// ---------------------------------------------------------------------------
// Affine subspaces
// ---------------------------------------------------------------------------

/// Affine subspace `μ + span(B)` with orthonormal `B`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceModel {
    mean: DVector<f64>,
    basis: DMatrix<f64>,
}

impl SubspaceModel {
    /// `basis` must have orthonormal columns (to 1e-10).
    pub fn new(mean: DVector<f64>, basis: DMatrix<f64>) -> Result<Self> {
        if basis.nrows() != mean.len() {
            return Err(Error::Dimension {
                what: "subspace basis rows",
                expected: mean.len(),
                found: basis.nrows(),
            });
        }
        if basis.ncols() > mean.len() {
            return Err(Error::invalid(
                "subspace dimension exceeds ambient dimension",
            ));
        }
        let gram = basis.tr_mul(&basis);
        let d = basis.ncols();
        if (gram - DMatrix::<f64>::identity(d, d)).amax() > 1e-10 {
            return Err(Error::invalid("subspace basis is not orthonormal"));
        }
        Ok(Self { mean, basis })
    }

    /// Orthonormalises the span of `columns` first.
    pub fn from_span(mean: DVector<f64>, columns: &DMatrix<f64>) -> Result<Self> {
        let basis = orthonormalize(columns, 1e-10)?;
        Self::new(mean, basis)
    }

    pub fn bands(&self) -> usize {
        self.mean.len()
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Coordinates `Bᵀ(x − μ)`.
    pub fn coefficients(&self, x: &[f64]) -> DVector<f64> {
        let c = self.centered(x);
        self.basis.tr_mul(&c)
    }

    /// `‖(I − BBᵀ)(x − μ)‖²`.
    pub fn residual_sq(&self, x: &[f64]) -> f64 {
        let c = self.centered(x);
        let coef = self.basis.tr_mul(&c);
        (c - &self.basis * coef).norm_squared()
    }

    fn centered(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(x.len(), x.iter().zip(self.mean.iter()).map(|(a, m)| a - m))
    }
}

/// Top-`d` principal subspace without the spec-level argument checks; used
/// inside iterative fits where clusters can be tiny or degenerate.
pub(crate) fn principal_subspace(spectra: &DMatrix<f64>, d: usize) -> SubspaceModel {
    let (mean, centered) = center_rows(spectra);
    let d = d.min(spectra.ncols());
    let basis = if d == 0 {
        DMatrix::zeros(spectra.ncols(), 0)
    } else {
        let (_, vectors) = sorted_symmetric_eigen(sample_covariance(&centered));
        vectors.columns(0, d).into_owned()
    };
    SubspaceModel { mean, basis }
}

/// PCA background subspace of dimension `d`.
pub fn fit_pca(spectra: &DMatrix<f64>, d: usize) -> Result<SubspaceModel> {
    let (n, p) = spectra.shape();
    if n == 0 {
        return Err(Error::invalid("PCA needs at least one spectrum"));
    }
    check_finite(spectra, "spectra")?;
    if d > p.min(n.saturating_sub(1)) {
        return Err(Error::invalid(format!(
            "PCA dimension {d} exceeds min(bands, count−1) = {}",
            p.min(n - 1)
        )));
    }
    if d >= 1 {
        let first = spectra.row(0);
        if spectra.row_iter().all(|r| r == first) {
            return Err(Error::invalid(
                "PCA on identical spectra has no principal direction",
            ));
        }
    }
    Ok(principal_subspace(spectra, d))
}

/// Leading covariance eigenpairs of centred data, using the `count × count`
/// Gram matrix when there are fewer rows than columns.
///
/// Returns every eigenvalue above `1e-12 · λ_max` (covariance-normalised,
/// descending) and the eigenvectors of the first `max_vectors` of them.
pub(crate) fn leading_components(
    centered: &DMatrix<f64>,
    max_vectors: usize,
) -> (Vec<f64>, DMatrix<f64>) {
    let (n, p) = centered.shape();
    if n < 2 {
        return (Vec::new(), DMatrix::zeros(p, 0));
    }
    let norm = (n - 1) as f64;
    let (values, vectors) = if n < p {
        let gram = centered * centered.transpose();
        let (vals, u) = sorted_symmetric_eigen(gram);
        let top = vals.get(0).copied().unwrap_or(0.0);
        let keep: Vec<usize> = (0..vals.len())
            .filter(|&i| vals[i] > 1e-12 * top && vals[i] > 0.0)
            .collect();
        let nv = keep.len().min(max_vectors);
        let mut v = DMatrix::zeros(p, nv);
        for (c, &i) in keep.iter().take(nv).enumerate() {
            let col = centered.tr_mul(&u.column(i)) / vals[i].sqrt();
            v.set_column(c, &col);
        }
        // re-orthonormalise against round-off in the Gram route
        let v = orthonormalize_lenient(&v, 1e-8);
        (keep.iter().map(|&i| vals[i] / norm).collect::<Vec<_>>(), v)
    } else {
        let (vals, q) = sorted_symmetric_eigen(centered.tr_mul(centered) / norm);
        let top = vals.get(0).copied().unwrap_or(0.0);
        let keep: Vec<usize> = (0..vals.len())
            .filter(|&i| vals[i] > 1e-12 * top && vals[i] > 0.0)
            .collect();
        let nv = keep.len().min(max_vectors);
        (
            keep.iter().map(|&i| vals[i]).collect::<Vec<_>>(),
            q.columns(0, nv).into_owned(),
        )
    };
    let nv = vectors.ncols();
    (
        values,
        if nv == 0 {
            DMatrix::zeros(p, 0)
        } else {
            vectors
        },
    )
}

/// Orthonormal basis of the column span, in column order (two-pass modified
/// Gram–Schmidt). Fails if a column is dependent on its predecessors, i.e. its
/// residual norm falls below `tol` times its original norm.
pub fn orthonormalize(columns: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    let (p, k) = columns.shape();
    let mut q = DMatrix::zeros(p, k);
    for j in 0..k {
        let original = columns.column(j).norm();
        let mut v = columns.column(j).into_owned();
        for _ in 0..2 {
            for i in 0..j {
                let qi = q.column(i);
                let proj = qi.dot(&v);
                v.axpy(-proj, &qi, 1.0);
            }
        }
        let nv = v.norm();
        if original == 0.0 || nv <= tol * original {
            return Err(Error::RankDeficient(format!(
                "column {j} is linearly dependent on the preceding columns"
            )));
        }
        q.set_column(j, &(v / nv));
    }
    Ok(q)
}

/// Like [`orthonormalize`] but silently drops dependent columns.
pub(crate) fn orthonormalize_lenient(columns: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let p = columns.nrows();
    let mut kept: Vec<DVector<f64>> = Vec::new();
    for j in 0..columns.ncols() {
        let original = columns.column(j).norm();
        let mut v = columns.column(j).into_owned();
        for _ in 0..2 {
            for qi in &kept {
                let proj = qi.dot(&v);
                v.axpy(-proj, qi, 1.0);
            }
        }
        let nv = v.norm();
        if original > 0.0 && nv > tol * original {
            kept.push(v / nv);
        }
    }
    if kept.is_empty() {
        DMatrix::zeros(p, 0)
    } else {
        DMatrix::from_columns(&kept)
    }
}

// ---------------------------------------------------------------------------
// Least squares
// ---------------------------------------------------------------------------

fn svd_tolerance(
    svd: &nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>,
    shape: (usize, usize),
) -> f64 {
    let smax = svd.singular_values.iter().copied().fold(0.0f64, f64::max);
    shape.0.max(shape.1) as f64 * f64::EPSILON * smax
}

/// Minimum-norm least-squares solution of `A β ≈ b`.
pub fn solve_ls(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() != b.len() {
        return Err(Error::Dimension {
            what: "least-squares rhs",
            expected: a.nrows(),
            found: b.len(),
        });
    }
    check_finite(a, "least-squares matrix")?;
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("least-squares rhs"));
    }
    if a.ncols() == 0 {
        return Ok(DVector::zeros(0));
    }
    let svd = a.clone().svd(true, true);
    let eps = svd_tolerance(&svd, a.shape());
    let x = svd
        .solve(b, eps)
        .map_err(|e| Error::invalid(format!("least-squares solve failed: {e}")))?;
    Ok(x)
}

/// Moore–Penrose pseudo-inverse with the default singular-value cutoff.
pub fn pseudo_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_finite(a, "matrix")?;
    let svd = a.clone().svd(true, true);
    let eps = svd_tolerance(&svd, a.shape());
    svd.pseudo_inverse(eps)
        .map_err(|e| Error::invalid(format!("pseudo-inverse failed: {e}")))
}

// ---------------------------------------------------------------------------
// PLS1 regression
// ---------------------------------------------------------------------------

/// Linear predictor `βᵀx + β₀` obtained by PLS1.
#[derive(Debug, Clone, PartialEq)]
pub struct PlsrModel {
    coefficients: DVector<f64>,
    intercept: f64,
    components: usize,
}

impl PlsrModel {
    pub fn new(coefficients: DVector<f64>, intercept: f64, components: usize) -> Result<Self> {
        if coefficients.iter().any(|v| !v.is_finite()) || !intercept.is_finite() {
            return Err(Error::NonFinite("PLS coefficients"));
        }
        Ok(Self {
            coefficients,
            intercept,
            components,
        })
    }

    pub fn coefficients(&self) -> &DVector<f64> {
        &self.coefficients
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    /// Number of latent components actually extracted. Fewer than requested
    /// when the response is already reproduced exactly; zero for a constant
    /// response.
    pub fn components(&self) -> usize {
        self.components
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        predict_plsr(self, x)
    }
}

/// Exactly `βᵀx + β₀`.
pub fn predict_plsr(model: &PlsrModel, x: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), model.coefficients.len());
    model
        .coefficients
        .iter()
        .zip(x)
        .fold(model.intercept, |acc, (b, v)| acc + b * v)
}

/// NIPALS PLS1 with `components` latent factors on raw (uncentred) inputs.
pub fn fit_plsr(x: &DMatrix<f64>, y: &[f64], components: usize) -> Result<PlsrModel> {
    let (q, p) = x.shape();
    if y.len() != q {
        return Err(Error::Dimension {
            what: "PLS responses",
            expected: q,
            found: y.len(),
        });
    }
    if components == 0 || q <= components {
        return Err(Error::invalid(format!(
            "PLS needs samples > components ≥ 1, got {q} samples and {components} components"
        )));
    }
    check_finite(x, "PLS predictors")?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("PLS responses"));
    }

    let (x_mean, mut xr) = center_rows(x);
    let y_mean = y.iter().sum::<f64>() / q as f64;
    let mut yr = DVector::from_iterator(q, y.iter().map(|v| v - y_mean));
    let y_norm0 = yr.norm();

    if y_norm0 <= 1e-14 * (y_mean.abs() + f64::MIN_POSITIVE) || y_norm0 == 0.0 {
        return PlsrModel::new(DVector::zeros(p), y_mean, 0);
    }

    let mut weights: Vec<DVector<f64>> = Vec::with_capacity(components);
    let mut loadings: Vec<DVector<f64>> = Vec::with_capacity(components);
    let mut y_loadings: Vec<f64> = Vec::with_capacity(components);
    let mut first_weight_norm = 0.0;

    for a in 0..components {
        if yr.norm() <= 1e-12 * y_norm0 {
            break;
        }
        let mut w = xr.tr_mul(&yr);
        let wn = w.norm();
        if a == 0 {
            first_weight_norm = wn;
        }
        if wn == 0.0 || wn <= 1e-10 * first_weight_norm {
            return Err(Error::PlsrZeroWeight { component: a + 1 });
        }
        w /= wn;
        let t = &xr * &w;
        let tt = t.norm_squared();
        if tt == 0.0 {
            return Err(Error::PlsrZeroWeight { component: a + 1 });
        }
        let p_load = xr.tr_mul(&t) / tt;
        let c = yr.dot(&t) / tt;
        xr -= &t * p_load.transpose();
        yr.axpy(-c, &t, 1.0);
        weights.push(w);
        loadings.push(p_load);
        y_loadings.push(c);
    }

    let l = weights.len();
    let w = DMatrix::from_columns(&weights);
    let pm = DMatrix::from_columns(&loadings);
    let ptw = pm.tr_mul(&w);
    let c = DVector::from_vec(y_loadings);
    let z = ptw
        .lu()
        .solve(&c)
        .ok_or_else(|| Error::RankDeficient("PLS loading/weight product is singular".into()))?;
    let beta = &w * z;
    let intercept = y_mean - beta.dot(&x_mean);
    PlsrModel::new(beta, intercept, l)
}

// ---------------------------------------------------------------------------
// Univariate KDE
// ---------------------------------------------------------------------------

/// Gaussian-kernel density estimate with Silverman's bandwidth.
#[derive(Debug, Clone, PartialEq)]
pub struct Kde1D {
    samples: Vec<f64>,
    bandwidth: f64,
}

/// Kernel terms beyond this many bandwidths underflow in f64.
const KDE_CUTOFF: f64 = 39.0;

impl Kde1D {
    pub fn with_bandwidth(mut samples: Vec<f64>, bandwidth: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("KDE needs at least one sample"));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::invalid(format!(
                "KDE bandwidth must be positive, got {bandwidth}"
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("KDE samples"));
        }
        samples.sort_by(f64::total_cmp);
        Ok(Self { samples, bandwidth })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    fn norm_const(&self) -> f64 {
        INV_SQRT_2PI / (self.samples.len() as f64 * self.bandwidth)
    }

    /// Density at `t`.
    pub fn eval(&self, t: f64) -> f64 {
        let h = self.bandwidth;
        let lo = self.samples.partition_point(|&s| s < t - KDE_CUTOFF * h);
        let hi = self.samples.partition_point(|&s| s <= t + KDE_CUTOFF * h);
        let sum: f64 = self.samples[lo..hi]
            .iter()
            .map(|&s| {
                let z = (t - s) / h;
                (-0.5 * z * z).exp()
            })
            .sum();
        sum * self.norm_const()
    }

    /// Log-density at `t`, finite even where [`Kde1D::eval`] underflows.
    pub fn ln_eval(&self, t: f64) -> f64 {
        let h = self.bandwidth;
        let idx = self.samples.partition_point(|&s| s < t);
        let mut d0 = f64::INFINITY;
        if idx < self.samples.len() {
            d0 = d0.min((self.samples[idx] - t).abs());
        }
        if idx > 0 {
            d0 = d0.min((t - self.samples[idx - 1]).abs());
        }
        let z0 = d0 / h;
        // terms more than e^-40 below the dominant one are invisible in f64
        let reach = h * (z0 * z0 + 80.0).sqrt();
        let lo = self.samples.partition_point(|&s| s < t - reach);
        let hi = self.samples.partition_point(|&s| s <= t + reach);
        let sum: f64 = self.samples[lo..hi]
            .iter()
            .map(|&s| {
                let z = (t - s) / h;
                (-0.5 * (z * z - z0 * z0)).exp()
            })
            .sum();
        sum.ln() - 0.5 * z0 * z0 + self.norm_const().ln()
    }

    /// One draw from the kernel mixture.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let i = rng.random_range(0..self.samples.len());
        let z: f64 = rng.sample(StandardNormal);
        self.samples[i] + self.bandwidth * z
    }
}

/// Silverman bandwidth `1.06·σ̂·n^(−1/5)`, floored at `1e-6·(1 + σ̂)`.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let n = samples.len();
    let sd = if n < 2 {
        0.0
    } else {
        let mean = samples.iter().sum::<f64>() / n as f64;
        (samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    let h = 1.06 * sd * (n as f64).powf(-0.2);
    h.max(1e-6 * (1.0 + sd.abs()))
}

pub fn fit_kde(samples: &[f64]) -> Result<Kde1D> {
    Kde1D::with_bandwidth(samples.to_vec(), silverman_bandwidth(samples))
}

pub fn eval_kde(model: &Kde1D, t: f64) -> f64 {
    model.eval(t)
}
