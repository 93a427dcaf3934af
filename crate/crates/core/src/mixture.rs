//! K-component background mixtures.
//!
//! Gaussian mixtures are fitted by seeded K-means++ / Lloyd iterations followed
//! by a per-cluster regularised covariance; subspace mixtures by K-subspaces
//! (Lloyd-style alternation of per-cluster PCA and residual reassignment).
//! Assignment is hard: a spectrum belongs to the component maximising
//! `log π_j + log p(x | Θ_j)` (Gaussian) or minimising the orthogonal residual
//! (subspace), and the mixture detectors score it with that component alone.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cube::SignatureSet;
use crate::detectors::{
    DetectorKind, LcDetector, NmfDetector, NssDetector, PlumeSign, SpectrumScorer,
};
use crate::error::{Error, Result};
use crate::numerics::{fit_cov, principal_subspace, CovModel, SubspaceModel};
use crate::par::map_indices;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gaussian,
    Subspace,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "gauss" => Ok(ModelKind::Gaussian),
            "subspace" => Ok(ModelKind::Subspace),
            other => Err(Error::invalid(format!("unknown model kind '{other}'"))),
        }
    }
}

impl ModelKind {
    /// Whether a detector can run on this kind of background.
    pub fn supports(self, detector: DetectorKind) -> bool {
        matches!(
            (self, detector),
            (ModelKind::Gaussian, DetectorKind::Nmf)
                | (ModelKind::Subspace, DetectorKind::Nss)
                | (ModelKind::Subspace, DetectorKind::Lc)
        )
    }
}

/// Everything needed to (re)fit a background model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundSpec {
    pub kind: ModelKind,
    pub components: usize,
    /// Subspace dimension (ignored for Gaussian mixtures).
    pub dim: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Percentile of the eigenvalues used as ridge δ (Gaussian only).
    pub delta_percentile: f64,
}

impl Default for BackgroundSpec {
    fn default() -> Self {
        Self {
            kind: ModelKind::Gaussian,
            components: 3,
            dim: 2,
            seed: 0,
            max_iter: 100,
            delta_percentile: 50.0,
        }
    }
}

impl BackgroundSpec {
    /// Smallest spectra count accepted by [`BackgroundSpec::fit`].
    pub fn min_fit_size(&self) -> usize {
        match self.kind {
            ModelKind::Gaussian => 2 * self.components,
            ModelKind::Subspace => self.components * (self.dim + 2),
        }
    }

    pub fn fit(&self, spectra: &DMatrix<f64>) -> Result<BackgroundModel> {
        Ok(match self.kind {
            ModelKind::Gaussian => BackgroundModel::Gaussian(
                fit_gaussian_mixture(
                    spectra,
                    self.components,
                    self.seed,
                    self.max_iter,
                    self.delta_percentile,
                )?
                .model,
            ),
            ModelKind::Subspace => BackgroundModel::Subspace(
                fit_subspace_mixture(spectra, self.components, self.dim, self.seed, self.max_iter)?
                    .model,
            ),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    weight: f64,
    model: CovModel,
    log_det: f64,
}

impl GaussianComponent {
    pub fn new(weight: f64, model: CovModel) -> Self {
        let log_det = model.log_det();
        Self {
            weight,
            model,
            log_det,
        }
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn model(&self) -> &CovModel {
        &self.model
    }

    /// `log π − ½ (x−μ)ᵀΣ̂⁻¹(x−μ) − ½ Σ log(λ+δ)`.
    pub fn log_score(&self, x: &[f64]) -> f64 {
        self.weight.ln() - 0.5 * self.model.mahalanobis_sq(x) - 0.5 * self.log_det
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    components: Vec<GaussianComponent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceComponent {
    weight: f64,
    model: SubspaceModel,
}

impl SubspaceComponent {
    pub fn new(weight: f64, model: SubspaceModel) -> Self {
        Self { weight, model }
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn model(&self) -> &SubspaceModel {
        &self.model
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceMixture {
    components: Vec<SubspaceComponent>,
    dim: usize,
}

fn check_weights(weights: impl Iterator<Item = f64>) -> Result<()> {
    let mut total = 0.0;
    let mut count = 0;
    for w in weights {
        if !(w > 0.0 && w <= 1.0) {
            return Err(Error::invalid(format!("mixture weight {w} outside (0, 1]")));
        }
        total += w;
        count += 1;
    }
    if count == 0 {
        return Err(Error::invalid("mixture needs at least one component"));
    }
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::invalid(format!(
            "mixture weights sum to {total}, not 1"
        )));
    }
    Ok(())
}

impl GaussianMixture {
    pub fn new(components: Vec<GaussianComponent>) -> Result<Self> {
        check_weights(components.iter().map(|c| c.weight))?;
        let p = components[0].model.bands();
        if components.iter().any(|c| c.model.bands() != p) {
            return Err(Error::invalid("mixture components disagree on band count"));
        }
        Ok(Self { components })
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn bands(&self) -> usize {
        self.components[0].model.bands()
    }

    /// Index maximising `log π_j + log p(x | Θ_j)`; ties go to the lower index.
    pub fn assign(&self, x: &[f64]) -> usize {
        argmax(self.components.iter().map(|c| c.log_score(x)))
    }
}

impl SubspaceMixture {
    pub fn new(components: Vec<SubspaceComponent>) -> Result<Self> {
        check_weights(components.iter().map(|c| c.weight))?;
        let dim = components[0].model.dim();
        let p = components[0].model.bands();
        if components
            .iter()
            .any(|c| c.model.dim() != dim || c.model.bands() != p)
        {
            return Err(Error::invalid(
                "subspace components must share dimension and band count",
            ));
        }
        Ok(Self { components, dim })
    }

    pub fn components(&self) -> &[SubspaceComponent] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bands(&self) -> usize {
        self.components[0].model.bands()
    }

    /// Index of the smallest orthogonal residual; ties go to the lower index.
    /// Weights do not enter: the subspace components carry no density.
    pub fn assign(&self, x: &[f64]) -> usize {
        argmax(self.components.iter().map(|c| -c.model.residual_sq(x)))
    }
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (j, v) in values.enumerate() {
        if v > best_v {
            best = j;
            best_v = v;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackgroundModel {
    Gaussian(GaussianMixture),
    Subspace(SubspaceMixture),
}

impl BackgroundModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            BackgroundModel::Gaussian(_) => ModelKind::Gaussian,
            BackgroundModel::Subspace(_) => ModelKind::Subspace,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            BackgroundModel::Gaussian(m) => m.components.len(),
            BackgroundModel::Subspace(m) => m.components.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bands(&self) -> usize {
        match self {
            BackgroundModel::Gaussian(m) => m.bands(),
            BackgroundModel::Subspace(m) => m.bands(),
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        match self {
            BackgroundModel::Gaussian(m) => m.components.iter().map(|c| c.weight).collect(),
            BackgroundModel::Subspace(m) => m.components.iter().map(|c| c.weight).collect(),
        }
    }

    pub fn assign(&self, x: &[f64]) -> usize {
        match self {
            BackgroundModel::Gaussian(m) => m.assign(x),
            BackgroundModel::Subspace(m) => m.assign(x),
        }
    }
}

/// Component index for `x`.
pub fn assign(x: &[f64], model: &BackgroundModel) -> usize {
    model.assign(x)
}

/// A fitted mixture plus the trace of the clustering run.
#[derive(Debug, Clone)]
pub struct MixtureFit<M> {
    pub model: M,
    pub assignments: Vec<usize>,
    /// Clustering objective after each iteration (within-cluster squared
    /// distance for K-means, total squared residual for K-subspaces).
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

// ---------------------------------------------------------------------------
// Clustering
// ---------------------------------------------------------------------------

/// Row-major copy of the spectra for cache-friendly distance loops.
pub(crate) struct Rows {
    data: Vec<f64>,
    p: usize,
}

impl Rows {
    pub(crate) fn new(m: &DMatrix<f64>) -> Self {
        let t = m.transpose();
        Self {
            data: t.as_slice().to_vec(),
            p: m.ncols(),
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.data.len() / self.p
    }

    pub(crate) fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.p..(i + 1) * self.p]
    }
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_fit_input(spectra: &DMatrix<f64>, k: usize, min_count: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("number of components must be at least 1"));
    }
    if k > spectra.nrows() {
        return Err(Error::invalid(format!(
            "{k} components requested for {} spectra",
            spectra.nrows()
        )));
    }
    if spectra.nrows() < min_count {
        return Err(Error::invalid(format!(
            "mixture fit needs at least {min_count} spectra, got {}",
            spectra.nrows()
        )));
    }
    if spectra.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("spectra"));
    }
    Ok(())
}

/// K-means++ seeding: indices of the initial centres.
fn kmeanspp(rows: &Rows, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = rows.len();
    let mut centers = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n)
        .map(|i| dist_sq(rows.row(i), rows.row(centers[0])))
        .collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc > u && w > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            (0..n).find(|i| !centers.contains(i)).unwrap_or(0)
        };
        centers.push(next);
        let c = rows.row(next).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(dist_sq(rows.row(i), &c));
        }
    }
    centers
}

fn nearest(x: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = dist_sq(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn cluster_means(rows: &Rows, assignments: &[usize], k: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut sums = vec![vec![0.0; rows.p]; k];
    let mut counts = vec![0usize; k];
    for (i, &a) in assignments.iter().enumerate() {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(rows.row(i)) {
            *s += v;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            for v in s.iter_mut() {
                *v /= c as f64;
            }
        }
    }
    (sums, counts)
}

/// Moves, for every empty cluster, the point farthest from its own
/// component into that cluster. `cost[i]` is point `i`'s current cost.
fn reseed_empty(assignments: &mut [usize], cost: &mut [f64], k: usize) -> bool {
    let mut counts = vec![0usize; k];
    for &a in assignments.iter() {
        counts[a] += 1;
    }
    let mut changed = false;
    for j in 0..k {
        if counts[j] > 0 {
            continue;
        }
        let mut best: Option<usize> = None;
        for i in 0..assignments.len() {
            if counts[assignments[i]] < 2 {
                continue;
            }
            if best.is_none_or(|b| cost[i] > cost[b]) {
                best = Some(i);
            }
        }
        if let Some(i) = best {
            counts[assignments[i]] -= 1;
            assignments[i] = j;
            cost[i] = 0.0;
            counts[j] = 1;
            changed = true;
        }
    }
    changed
}

fn rows_of(spectra: &DMatrix<f64>, assignments: &[usize], j: usize) -> Vec<usize> {
    (0..spectra.nrows())
        .filter(|&i| assignments[i] == j)
        .collect()
}

/// Seeded K-means partition shared by both mixture fits (and the GMRA tree).
pub(crate) fn kmeans(
    rows: &Rows,
    k: usize,
    seed: u64,
    max_iter: usize,
) -> (Vec<usize>, Vec<f64>, usize, bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = kmeanspp(rows, k, &mut rng);
    let mut centers: Vec<Vec<f64>> = init.iter().map(|&i| rows.row(i).to_vec()).collect();
    let mut assignments: Vec<usize> = Vec::new();
    let mut objective = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..max_iter.max(1) {
        iterations = it + 1;
        let (new_assign, mut cost): (Vec<usize>, Vec<f64>) =
            map_indices(rows.len(), |i| nearest(rows.row(i), &centers))
                .into_iter()
                .unzip();
        let mut new_assign = new_assign;
        reseed_empty(&mut new_assign, &mut cost, k);
        objective.push(cost.iter().sum());
        if new_assign == assignments {
            converged = true;
            break;
        }
        assignments = new_assign;
        centers = cluster_means(rows, &assignments, k).0;
    }
    (assignments, objective, iterations, converged)
}

/// Gaussian mixture by hard K-means clustering and per-cluster regularised
/// covariances; `π_j` is the cluster fraction.
pub fn fit_gaussian_mixture(
    spectra: &DMatrix<f64>,
    k: usize,
    seed: u64,
    max_iter: usize,
    delta_percentile: f64,
) -> Result<MixtureFit<GaussianMixture>> {
    check_fit_input(spectra, k, 2 * k)?;
    let rows = Rows::new(spectra);
    let (assignments, objective, iterations, converged) = kmeans(&rows, k, seed, max_iter);
    let n = spectra.nrows() as f64;
    let mut components = Vec::with_capacity(k);
    for j in 0..k {
        let idx = rows_of(spectra, &assignments, j);
        if idx.len() < 2 {
            return Err(Error::invalid(format!(
                "cluster {j} ended with {} spectrum(s); a covariance needs 2",
                idx.len()
            )));
        }
        let sub = spectra.select_rows(idx.iter());
        let model = fit_cov(&sub, delta_percentile)?;
        components.push(GaussianComponent::new(idx.len() as f64 / n, model));
    }
    normalize_weights(
        &mut components
            .iter_mut()
            .map(|c| &mut c.weight)
            .collect::<Vec<_>>(),
    );
    Ok(MixtureFit {
        model: GaussianMixture::new(components)?,
        assignments,
        objective,
        iterations,
        converged,
    })
}

fn normalize_weights(weights: &mut [&mut f64]) {
    let total: f64 = weights.iter().map(|w| **w).sum();
    for w in weights.iter_mut() {
        **w /= total;
    }
}

fn fit_subspaces(
    spectra: &DMatrix<f64>,
    assignments: &[usize],
    k: usize,
    d: usize,
) -> Vec<SubspaceModel> {
    (0..k)
        .map(|j| {
            let idx = rows_of(spectra, assignments, j);
            principal_subspace(&spectra.select_rows(idx.iter()), d)
        })
        .collect()
}

fn residual_argmin(models: &[SubspaceModel], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, m) in models.iter().enumerate() {
        let r = m.residual_sq(x);
        if r < best.1 {
            best = (j, r);
        }
    }
    best
}

/// K-subspaces: K-means++ partition, then alternate per-cluster PCA of
/// dimension `d` and reassignment to the smallest orthogonal residual.
pub fn fit_subspace_mixture(
    spectra: &DMatrix<f64>,
    k: usize,
    d: usize,
    seed: u64,
    max_iter: usize,
) -> Result<MixtureFit<SubspaceMixture>> {
    check_fit_input(spectra, k, k * (d + 2))?;
    if d > spectra.ncols() {
        return Err(Error::invalid(format!(
            "subspace dimension {d} exceeds band count {}",
            spectra.ncols()
        )));
    }
    let rows = Rows::new(spectra);
    let n = rows.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = kmeanspp(&rows, k, &mut rng);
    let centers: Vec<Vec<f64>> = init.iter().map(|&i| rows.row(i).to_vec()).collect();
    let (mut assignments, mut cost): (Vec<usize>, Vec<f64>) =
        map_indices(n, |i| nearest(rows.row(i), &centers))
            .into_iter()
            .unzip();
    reseed_empty(&mut assignments, &mut cost, k);

    let mut models = fit_subspaces(spectra, &assignments, k, d);
    let mut objective = vec![(0..n)
        .map(|i| models[assignments[i]].residual_sq(rows.row(i)))
        .sum::<f64>()];
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..max_iter {
        iterations = it + 1;
        let (mut next, mut cost): (Vec<usize>, Vec<f64>) =
            map_indices(n, |i| residual_argmin(&models, rows.row(i)))
                .into_iter()
                .unzip();
        reseed_empty(&mut next, &mut cost, k);
        if next == assignments {
            converged = true;
            break;
        }
        assignments = next;
        models = fit_subspaces(spectra, &assignments, k, d);
        objective.push(
            (0..n)
                .map(|i| models[assignments[i]].residual_sq(rows.row(i)))
                .sum(),
        );
    }

    let mut components: Vec<SubspaceComponent> = models
        .into_iter()
        .enumerate()
        .map(|(j, m)| {
            let count = assignments.iter().filter(|&&a| a == j).count();
            SubspaceComponent::new(count as f64 / n as f64, m)
        })
        .collect();
    normalize_weights(
        &mut components
            .iter_mut()
            .map(|c| &mut c.weight)
            .collect::<Vec<_>>(),
    );
    Ok(MixtureFit {
        model: SubspaceMixture::new(components)?,
        assignments,
        objective,
        iterations,
        converged,
    })
}

// ---------------------------------------------------------------------------
// Mixture detectors
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum ComponentScorer {
    Nmf(NmfDetector),
    Nss(NssDetector),
    Lc(LcDetector),
}

impl ComponentScorer {
    fn score(&self, x: &[f64]) -> f64 {
        match self {
            ComponentScorer::Nmf(d) => d.score(x),
            ComponentScorer::Nss(d) => d.score(x),
            ComponentScorer::Lc(d) => d.score(x),
        }
    }
}

/// Mixture version of a detector: assign, then score with the assigned
/// component's parameters only.
#[derive(Debug, Clone)]
pub struct MixtureDetector {
    model: BackgroundModel,
    kind: DetectorKind,
    scorers: Vec<ComponentScorer>,
}

impl MixtureDetector {
    pub fn new(
        model: &BackgroundModel,
        signatures: &SignatureSet,
        kind: DetectorKind,
        sign: PlumeSign,
    ) -> Result<Self> {
        if !model.kind().supports(kind) {
            return Err(Error::Incompatible(format!(
                "detector {kind} cannot run on a {:?} background",
                model.kind()
            )));
        }
        let scorers = match model {
            BackgroundModel::Gaussian(m) => m
                .components
                .iter()
                .map(|c| NmfDetector::new(&c.model, signatures).map(ComponentScorer::Nmf))
                .collect::<Result<Vec<_>>>()?,
            BackgroundModel::Subspace(m) => m
                .components
                .iter()
                .map(|c| match kind {
                    DetectorKind::Nss => {
                        NssDetector::new(&c.model, signatures).map(ComponentScorer::Nss)
                    }
                    _ => LcDetector::new(&c.model, signatures, sign).map(ComponentScorer::Lc),
                })
                .collect::<Result<Vec<_>>>()?,
        };
        Ok(Self {
            model: model.clone(),
            kind,
            scorers,
        })
    }

    pub fn kind(&self) -> DetectorKind {
        self.kind
    }

    pub fn model(&self) -> &BackgroundModel {
        &self.model
    }
}

impl SpectrumScorer for MixtureDetector {
    fn score(&self, x: &[f64]) -> f64 {
        let j = self.model.assign(x);
        self.scorers[j].score(x)
    }
}

/// Mixture detection statistic of one spectrum.
pub fn mix_score(
    x: &[f64],
    model: &BackgroundModel,
    signatures: &SignatureSet,
    kind: DetectorKind,
    sign: PlumeSign,
) -> Result<f64> {
    if x.len() != model.bands() {
        return Err(Error::Dimension {
            what: "spectrum",
            expected: model.bands(),
            found: x.len(),
        });
    }
    Ok(MixtureDetector::new(model, signatures, kind, sign)?.score(x))
}

// ---------------------------------------------------------------------------
// JSON model files
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct GaussianComponentFile {
    weight: f64,
    mean: Vec<f64>,
    eigenvalues: Vec<f64>,
    /// One inner array per eigenvector.
    eigenvectors: Vec<Vec<f64>>,
    delta: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct SubspaceComponentFile {
    weight: f64,
    mean: Vec<f64>,
    /// One inner array per basis vector.
    basis: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ModelFile {
    Gaussian {
        components: Vec<GaussianComponentFile>,
    },
    Subspace {
        dim: usize,
        components: Vec<SubspaceComponentFile>,
    },
}

fn columns_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.column_iter()
        .map(|c| c.iter().copied().collect())
        .collect()
}

fn matrix_from_columns(p: usize, cols: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if cols.iter().any(|c| c.len() != p) {
        return Err(Error::invalid(
            "matrix column length does not match the mean",
        ));
    }
    Ok(DMatrix::from_fn(p, cols.len(), |i, j| cols[j][i]))
}

impl BackgroundModel {
    pub fn to_json(&self) -> String {
        let file = match self {
            BackgroundModel::Gaussian(m) => ModelFile::Gaussian {
                components: m
                    .components
                    .iter()
                    .map(|c| GaussianComponentFile {
                        weight: c.weight,
                        mean: c.model.mean().iter().copied().collect(),
                        eigenvalues: c.model.eigenvalues().iter().copied().collect(),
                        eigenvectors: columns_of(c.model.eigenvectors()),
                        delta: c.model.delta(),
                    })
                    .collect(),
            },
            BackgroundModel::Subspace(m) => ModelFile::Subspace {
                dim: m.dim,
                components: m
                    .components
                    .iter()
                    .map(|c| SubspaceComponentFile {
                        weight: c.weight,
                        mean: c.model.mean().iter().copied().collect(),
                        basis: columns_of(c.model.basis()),
                    })
                    .collect(),
            },
        };
        serde_json::to_string_pretty(&file).expect("model serialisation cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| Error::invalid(format!("model JSON: {e}")))?;
        match file {
            ModelFile::Gaussian { components } => {
                let comps = components
                    .into_iter()
                    .map(|c| {
                        let p = c.mean.len();
                        let vecs = matrix_from_columns(p, &c.eigenvectors)?;
                        let model = CovModel::from_eigen(
                            DVector::from_vec(c.mean),
                            DVector::from_vec(c.eigenvalues),
                            vecs,
                            c.delta,
                        )?;
                        Ok(GaussianComponent::new(c.weight, model))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(BackgroundModel::Gaussian(GaussianMixture::new(comps)?))
            }
            ModelFile::Subspace { dim, components } => {
                let comps = components
                    .into_iter()
                    .map(|c| {
                        let p = c.mean.len();
                        let basis = matrix_from_columns(p, &c.basis)?;
                        if basis.ncols() != dim {
                            return Err(Error::invalid("subspace basis size disagrees with 'dim'"));
                        }
                        Ok(SubspaceComponent::new(
                            c.weight,
                            SubspaceModel::new(DVector::from_vec(c.mean), basis)?,
                        ))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(BackgroundModel::Subspace(SubspaceMixture::new(comps)?))
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}
