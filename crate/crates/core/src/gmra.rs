//! Multiscale density model for anomaly detection.
//!
//! Training spectra are organised in a binary tree by recursive seeded
//! 2-means. Every node carries a local affine approximation (centre and
//! PCA basis); scale `j` is the partition formed by the depth-`j` nodes
//! together with shallower leaves. At each scale a node's density is a
//! product of 1-D KDEs over the node's scaling coefficients and over the
//! norm of the residual off its plane, weighted by the node's share of the
//! training set. The scale with the best held-out log-likelihood is kept.

use std::collections::VecDeque;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cube::{HyperCube, PlumeMask, ScoreMap};
use crate::error::{Error, Result};
use crate::mixture::{kmeans, Rows};
use crate::numerics::{
    center_rows, leading_components, orthonormalize_lenient, quantile_sorted, silverman_bandwidth,
    Kde1D,
};
use crate::par::{map_indices_with, ExecMode};

/// Log-likelihoods are clamped here so score maps stay finite.
pub const LOG_LIKELIHOOD_FLOOR: f64 = -1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmraConfig {
    /// Nodes with fewer than `2·min_leaf` points are not split.
    pub min_leaf: usize,
    /// Fraction of a node's variance its basis must capture.
    pub dim_rule: f64,
    pub max_dim: usize,
    pub max_depth: usize,
    pub seed: u64,
}

impl Default for GmraConfig {
    fn default() -> Self {
        Self {
            min_leaf: 32,
            dim_rule: 0.95,
            max_dim: 10,
            max_depth: 12,
            seed: 0,
        }
    }
}

impl GmraConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dim_rule > 0.0 && self.dim_rule <= 1.0) {
            return Err(Error::invalid(format!(
                "dim_rule {} outside (0, 1]",
                self.dim_rule
            )));
        }
        if self.min_leaf < self.max_dim + 2 {
            return Err(Error::invalid(format!(
                "min_leaf {} must be at least max_dim + 2 = {}",
                self.min_leaf,
                self.max_dim + 2
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmraNode {
    pub scale: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub center: DVector<f64>,
    /// Orthonormal scaling basis, `p × d`.
    pub basis: DMatrix<f64>,
    /// `(I − ΦΦᵀ)(c − c_parent)`; the centre itself at the root.
    pub translation: DVector<f64>,
    /// Orthonormal basis of the part of this node's plane the parent's plane
    /// misses; the scaling basis itself at the root.
    pub wavelet: DMatrix<f64>,
    /// Training rows in this node (empty for loaded models).
    pub members: Vec<usize>,
}

impl GmraNode {
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// Where a spectrum lands at one scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Transform {
    pub node: usize,
    pub coefficients: Vec<f64>,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmraTree {
    nodes: Vec<GmraNode>,
    bands: usize,
    depth: usize,
    points: usize,
}

fn node_seed(seed: u64, node: usize) -> u64 {
    seed ^ (node as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Centre and basis of a point set; the basis dimension is the smallest one
/// reaching `dim_rule` of the variance, raised to `min_dim` and capped at
/// `max_dim` and the available rank.
fn local_plane(
    data: &DMatrix<f64>,
    dim_rule: f64,
    min_dim: usize,
    max_dim: usize,
) -> (DVector<f64>, DMatrix<f64>) {
    let (mean, centered) = center_rows(data);
    let (values, vectors) = leading_components(&centered, max_dim.max(min_dim));
    let total: f64 = values.iter().sum();
    let mut d = 0;
    if total > 0.0 {
        let mut acc = 0.0;
        while d < values.len() && acc < dim_rule * total {
            acc += values[d];
            d += 1;
        }
    }
    let d = d.max(min_dim).min(max_dim).min(vectors.ncols());
    (mean, vectors.columns(0, d).into_owned())
}

fn project_out(basis: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    if basis.ncols() == 0 {
        return v.clone();
    }
    v - basis * basis.tr_mul(v)
}

/// Recursive seeded 2-means tree with a local PCA plane at every node.
pub fn build_gmra(data: &DMatrix<f64>, cfg: &GmraConfig) -> Result<GmraTree> {
    cfg.validate()?;
    let (n, p) = data.shape();
    if n == 0 || p == 0 {
        return Err(Error::invalid("GMRA needs at least one training spectrum"));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training spectra"));
    }
    let all: Vec<usize> = (0..n).collect();
    let (center, basis) = local_plane(data, cfg.dim_rule, 0, cfg.max_dim);
    let mut nodes = vec![GmraNode {
        scale: 0,
        parent: None,
        children: Vec::new(),
        translation: center.clone(),
        wavelet: basis.clone(),
        center,
        basis,
        members: all,
    }];
    let mut queue = VecDeque::from([0usize]);
    let mut depth = 0;
    while let Some(id) = queue.pop_front() {
        let node = &nodes[id];
        if node.members.len() < 2 * cfg.min_leaf || node.scale >= cfg.max_depth {
            continue;
        }
        let sub = data.select_rows(node.members.iter());
        let rows = Rows::new(&sub);
        let (assign, _, _, _) = kmeans(&rows, 2, node_seed(cfg.seed, id), 100);
        let mut parts: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
        for (local, &a) in assign.iter().enumerate() {
            parts[a].push(node.members[local]);
        }
        if parts.iter().any(|part| part.len() < 2) {
            continue;
        }
        let (parent_center, parent_basis, parent_dim, scale) = (
            node.center.clone(),
            node.basis.clone(),
            node.dim(),
            node.scale + 1,
        );
        for part in parts {
            let sub = data.select_rows(part.iter());
            let (center, basis) = local_plane(&sub, cfg.dim_rule, parent_dim, cfg.max_dim);
            let translation = project_out(&basis, &(&center - &parent_center));
            let wavelet = if basis.ncols() == 0 {
                DMatrix::zeros(p, 0)
            } else {
                let mut residual = basis.clone();
                for mut col in residual.column_iter_mut() {
                    let v = project_out(&parent_basis, &col.clone_owned());
                    col.copy_from(&v);
                }
                orthonormalize_lenient(&residual, 1e-8)
            };
            let child = nodes.len();
            nodes.push(GmraNode {
                scale,
                parent: Some(id),
                children: Vec::new(),
                center,
                basis,
                translation,
                wavelet,
                members: part,
            });
            nodes[id].children.push(child);
            queue.push_back(child);
            depth = depth.max(scale);
        }
    }
    Ok(GmraTree {
        nodes,
        bands: p,
        depth,
        points: n,
    })
}

impl GmraTree {
    pub fn nodes(&self) -> &[GmraNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &GmraNode {
        &self.nodes[id]
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    /// Finest populated scale.
    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Number of training points the tree was built on.
    pub fn points(&self) -> usize {
        self.points
    }

    /// Nodes forming scale `j`: depth-`j` nodes plus shallower leaves.
    pub fn partition(&self, j: usize) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| {
                let node = &self.nodes[i];
                node.scale == j || (node.scale < j && node.is_leaf())
            })
            .collect()
    }

    /// Descends from the root to scale `j`, taking the child with the nearest
    /// centre at every step (ties to the first child).
    pub fn route(&self, x: &[f64], j: usize) -> usize {
        let mut id = 0;
        while self.nodes[id].scale < j && !self.nodes[id].is_leaf() {
            let mut best = (self.nodes[id].children[0], f64::INFINITY);
            for &c in &self.nodes[id].children {
                let d: f64 = self.nodes[c]
                    .center
                    .iter()
                    .zip(x)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d < best.1 {
                    best = (c, d);
                }
            }
            id = best.0;
        }
        id
    }

    /// Scaling coefficients and residual norm of `x` at `node`.
    pub fn coordinates(&self, x: &[f64], node: usize) -> (Vec<f64>, f64) {
        let n = &self.nodes[node];
        let centered =
            DVector::from_iterator(x.len(), x.iter().zip(n.center.iter()).map(|(a, c)| a - c));
        let coef = n.basis.tr_mul(&centered);
        let residual = (&centered - &n.basis * &coef).norm();
        (coef.iter().copied().collect(), residual)
    }

    pub fn transform(&self, x: &[f64], j: usize) -> Transform {
        let node = self.route(x, j);
        let (coefficients, residual) = self.coordinates(x, node);
        Transform {
            node,
            coefficients,
            residual,
        }
    }

    /// Mean squared residual of the training rows at scale `j`, each row
    /// measured at the node that holds it.
    pub fn reconstruction_error(&self, data: &DMatrix<f64>, j: usize) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for id in self.partition(j) {
            for &i in &self.nodes[id].members {
                let x: Vec<f64> = data.row(i).iter().copied().collect();
                let (_, r) = self.coordinates(&x, id);
                total += r * r;
                count += 1;
            }
        }
        if count == 0 {
            0.0
        } else {
            total / count as f64
        }
    }
}

/// Free-function form of [`GmraTree::transform`].
pub fn gmra_transform(x: &[f64], tree: &GmraTree, j: usize) -> Transform {
    tree.transform(x, j)
}

// ---------------------------------------------------------------------------
// Densities
// ---------------------------------------------------------------------------

/// Below this many samples the KDE is evaluated exactly.
const TABLE_MIN_SAMPLES: usize = 256;
const TABLE_STEPS_PER_BANDWIDTH: f64 = 8.0;
const TABLE_KERNEL_REACH: f64 = 7.0;
const TABLE_MAX_POINTS: usize = 1 << 18;
/// Table entries below this fraction of the peak defer to the exact KDE.
const TABLE_RELATIVE_FLOOR: f64 = 1e-6;

/// A [`Kde1D`] with a precomputed log-density grid (kernel truncated at
/// `7h`) for large sample sets. Off-grid points and the far
/// tails fall back to the exact evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedKde {
    kde: Kde1D,
    lo: f64,
    step: f64,
    ln: Vec<f64>,
    ln_floor: f64,
}

impl TabulatedKde {
    pub fn new(kde: Kde1D) -> Self {
        let mut out = Self {
            kde,
            lo: 0.0,
            step: 0.0,
            ln: Vec::new(),
            ln_floor: f64::INFINITY,
        };
        let samples = out.kde.samples();
        let n = samples.len();
        if n < TABLE_MIN_SAMPLES {
            return out;
        }
        let h = out.kde.bandwidth();
        let step = h / TABLE_STEPS_PER_BANDWIDTH;
        let lo = samples[0] - 2.0 * h;
        let hi = samples[n - 1] + 2.0 * h;
        let points = ((hi - lo) / step).ceil() as usize + 2;
        if points > TABLE_MAX_POINTS {
            return out;
        }
        let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * n as f64 * h);
        let reach = TABLE_KERNEL_REACH * h;
        let mut density = vec![0.0; points];
        for &s in samples {
            let a = (((s - reach - lo) / step).ceil().max(0.0)) as usize;
            let b = ((((s + reach - lo) / step).floor()) as usize).min(points - 1);
            for (g, d) in density.iter_mut().enumerate().take(b + 1).skip(a) {
                let z = (lo + g as f64 * step - s) / h;
                *d += (-0.5 * z * z).exp();
            }
        }
        let peak = density.iter().copied().fold(0.0, f64::max) * norm;
        out.ln = density.iter().map(|d| (d * norm).ln()).collect();
        out.ln_floor = (peak * TABLE_RELATIVE_FLOOR).ln();
        out.lo = lo;
        out.step = step;
        out
    }

    pub fn kde(&self) -> &Kde1D {
        &self.kde
    }

    pub fn ln_eval(&self, t: f64) -> f64 {
        if !self.ln.is_empty() {
            let pos = (t - self.lo) / self.step;
            if pos >= 0.0 && pos < (self.ln.len() - 1) as f64 {
                let i = pos as usize;
                let (a, b) = (self.ln[i], self.ln[i + 1]);
                if a > self.ln_floor && b > self.ln_floor {
                    let f = pos - i as f64;
                    return a + f * (b - a);
                }
            }
        }
        self.kde.ln_eval(t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeDensity {
    pub node: usize,
    /// Share of training points in the node.
    pub weight: f64,
    pub coefficients: Vec<TabulatedKde>,
    pub residual: TabulatedKde,
}

impl NodeDensity {
    fn fit(tree: &GmraTree, data: &DMatrix<f64>, node: usize) -> Result<Self> {
        let members = &tree.node(node).members;
        let d = tree.node(node).dim();
        let mut coefs: Vec<Vec<f64>> = vec![Vec::with_capacity(members.len()); d];
        let mut residuals = Vec::with_capacity(members.len());
        for &i in members {
            let x: Vec<f64> = data.row(i).iter().copied().collect();
            let (c, r) = tree.coordinates(&x, node);
            for (k, v) in c.into_iter().enumerate() {
                coefs[k].push(v);
            }
            residuals.push(r);
        }
        let kde = |v: Vec<f64>| -> Result<TabulatedKde> {
            let h = silverman_bandwidth(&v);
            Ok(TabulatedKde::new(Kde1D::with_bandwidth(v, h)?))
        };
        Ok(Self {
            node,
            weight: members.len() as f64 / tree.points() as f64,
            coefficients: coefs.into_iter().map(kde).collect::<Result<_>>()?,
            residual: kde(residuals)?,
        })
    }

    fn ln_density(&self, coefficients: &[f64], residual: f64) -> f64 {
        let mut total = self.weight.ln() + self.residual.ln_eval(residual);
        for (k, c) in self.coefficients.iter().zip(coefficients) {
            total += k.ln_eval(*c);
        }
        total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleScore {
    pub scale: usize,
    /// `None` when some node at this scale has fewer than 2 members.
    pub mean_log_likelihood: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmraDensityModel {
    tree: GmraTree,
    scale: usize,
    densities: Vec<NodeDensity>,
    /// `slot[node]` indexes `densities` for nodes of the selected partition.
    slot: Vec<Option<usize>>,
    scale_scores: Vec<ScaleScore>,
    /// Sorted log-likelihoods of the training points.
    training_scores: Vec<f64>,
}

/// Densities at one scale plus, for each partition cell, its index into them.
type ScaleFit = (Vec<NodeDensity>, Vec<Option<usize>>);

fn fit_scale(tree: &GmraTree, data: &DMatrix<f64>, j: usize) -> Result<Option<ScaleFit>> {
    let part = tree.partition(j);
    if part.iter().any(|&id| tree.node(id).members.len() < 2) {
        return Ok(None);
    }
    let mut slot = vec![None; tree.nodes().len()];
    let mut densities = Vec::with_capacity(part.len());
    for id in part {
        slot[id] = Some(densities.len());
        densities.push(NodeDensity::fit(tree, data, id)?);
    }
    Ok(Some((densities, slot)))
}

fn score_with(
    tree: &GmraTree,
    scale: usize,
    densities: &[NodeDensity],
    slot: &[Option<usize>],
    x: &[f64],
) -> f64 {
    let t = tree.transform(x, scale);
    let density = &densities[slot[t.node].expect("routing ends inside the selected partition")];
    let ll = density.ln_density(&t.coefficients, t.residual);
    if ll.is_nan() {
        LOG_LIKELIHOOD_FLOOR
    } else {
        ll.max(LOG_LIKELIHOOD_FLOOR)
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Fits node densities at every populated scale, keeps the scale with the
/// best mean log-likelihood on `validation` (ties to the coarser scale).
/// `training` must be the matrix the tree was built on.
pub fn fit_density(
    tree: &GmraTree,
    training: &DMatrix<f64>,
    validation: &DMatrix<f64>,
) -> Result<GmraDensityModel> {
    if training.nrows() != tree.points() || training.ncols() != tree.bands() {
        return Err(Error::invalid("training matrix does not match the tree"));
    }
    if validation.nrows() == 0 {
        return Err(Error::invalid(
            "density fit needs at least one validation spectrum",
        ));
    }
    if validation.ncols() != tree.bands() {
        return Err(Error::Dimension {
            what: "validation bands",
            expected: tree.bands(),
            found: validation.ncols(),
        });
    }
    let val_rows = matrix_rows(validation);
    let mut best: Option<(usize, f64, ScaleFit)> = None;
    let mut scale_scores = Vec::new();
    for j in 0..=tree.depth() {
        let Some((densities, slot)) = fit_scale(tree, training, j)? else {
            scale_scores.push(ScaleScore {
                scale: j,
                mean_log_likelihood: None,
            });
            continue;
        };
        let lls = map_indices_with(ExecMode::default(), val_rows.len(), |i| {
            score_with(tree, j, &densities, &slot, &val_rows[i])
        });
        let mean = lls.iter().sum::<f64>() / lls.len() as f64;
        scale_scores.push(ScaleScore {
            scale: j,
            mean_log_likelihood: Some(mean),
        });
        if best.as_ref().is_none_or(|b| mean > b.1) {
            best = Some((j, mean, (densities, slot)));
        }
    }
    let (scale, _, (densities, slot)) = best
        .ok_or_else(|| Error::invalid("no scale has at least 2 training points in every node"))?;
    let train_rows = matrix_rows(training);
    let mut training_scores = map_indices_with(ExecMode::default(), train_rows.len(), |i| {
        score_with(tree, scale, &densities, &slot, &train_rows[i])
    });
    training_scores.sort_by(f64::total_cmp);
    Ok(GmraDensityModel {
        tree: tree.clone(),
        scale,
        densities,
        slot,
        scale_scores,
        training_scores,
    })
}

/// Seeded hold-out split: returns (training rows, validation rows).
pub fn holdout_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    let hold =
        ((fraction * n as f64).round() as usize).clamp(usize::from(n > 1), n.saturating_sub(1));
    let mut val = idx[..hold].to_vec();
    let mut train = idx[hold..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

/// Builds the tree on a seeded 90 % of `spectra` and selects the scale on
/// the remaining 10 %.
pub fn fit_gmra(spectra: &DMatrix<f64>, cfg: &GmraConfig) -> Result<GmraDensityModel> {
    let (train, val) = holdout_split(spectra.nrows(), 0.1, cfg.seed);
    if val.is_empty() {
        return Err(Error::invalid("GMRA fit needs at least 2 spectra"));
    }
    let training = spectra.select_rows(train.iter());
    let validation = spectra.select_rows(val.iter());
    let tree = build_gmra(&training, cfg)?;
    fit_density(&tree, &training, &validation)
}

impl GmraDensityModel {
    pub fn tree(&self) -> &GmraTree {
        &self.tree
    }

    /// Selected scale `j*`.
    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn bands(&self) -> usize {
        self.tree.bands()
    }

    pub fn densities(&self) -> &[NodeDensity] {
        &self.densities
    }

    pub fn scale_scores(&self) -> &[ScaleScore] {
        &self.scale_scores
    }

    pub fn training_scores(&self) -> &[f64] {
        &self.training_scores
    }

    pub fn log_likelihood(&self, x: &[f64]) -> f64 {
        score_with(&self.tree, self.scale, &self.densities, &self.slot, x)
    }

    pub fn score_cube(&self, cube: &HyperCube, mode: ExecMode) -> Result<ScoreMap> {
        self.check_bands(cube.bands())?;
        let values = map_indices_with(mode, cube.pixels(), |i| {
            self.log_likelihood(&cube.spectrum_f64(i))
        });
        ScoreMap::new(cube.rows(), cube.cols(), values)
    }

    fn check_bands(&self, bands: usize) -> Result<()> {
        if bands != self.bands() {
            return Err(Error::Dimension {
                what: "frame bands",
                expected: self.bands(),
                found: bands,
            });
        }
        Ok(())
    }
}

pub fn log_likelihood(x: &[f64], model: &GmraDensityModel) -> f64 {
    model.log_likelihood(x)
}

// ---------------------------------------------------------------------------
// Ball probability
// ---------------------------------------------------------------------------

/// A fixed Monte Carlo sample from the fitted density, reusable across
/// query points.
#[derive(Debug, Clone)]
pub struct BallSampler {
    points: Vec<Vec<f64>>,
}

impl BallSampler {
    pub fn new(model: &GmraDensityModel, samples: usize, seed: u64) -> Result<Self> {
        if samples == 0 {
            return Err(Error::invalid(
                "ball probability needs at least one Monte Carlo sample",
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = model.bands();
        let mut cumulative = Vec::with_capacity(model.densities.len());
        let mut acc = 0.0;
        for d in &model.densities {
            acc += d.weight;
            cumulative.push(acc);
        }
        let mut points = Vec::with_capacity(samples);
        for _ in 0..samples {
            let u = rng.random::<f64>() * acc;
            let k = cumulative
                .partition_point(|&c| c <= u)
                .min(cumulative.len() - 1);
            let density = &model.densities[k];
            let node = model.tree.node(density.node);
            let coef = DVector::from_iterator(
                density.coefficients.len(),
                density
                    .coefficients
                    .iter()
                    .map(|kde| kde.kde().sample(&mut rng)),
            );
            let rho = density.residual.kde().sample(&mut rng).abs();
            let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
            let off = project_out(&node.basis, &z);
            let mut x = &node.center + &node.basis * coef;
            let norm = off.norm();
            if norm > 0.0 {
                x += off * (rho / norm);
            }
            points.push(x.iter().copied().collect());
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Fraction of the sample strictly within distance `r` of `x`.
    pub fn probability(&self, x: &[f64], r: f64) -> f64 {
        let r2 = r * r;
        let inside = self
            .points
            .iter()
            .filter(|pt| {
                pt.iter()
                    .zip(x)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    < r2
            })
            .count();
        inside as f64 / self.points.len() as f64
    }
}

pub fn ball_probability(
    x: &[f64],
    r: f64,
    model: &GmraDensityModel,
    mc_samples: usize,
    seed: u64,
) -> Result<f64> {
    Ok(BallSampler::new(model, mc_samples, seed)?.probability(x, r))
}

// ---------------------------------------------------------------------------
// Anomaly rules
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cutoff {
    /// η-quantile of the training log-likelihoods.
    Quantile(f64),
    /// Absolute log-likelihood.
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum AnomalyConfig {
    /// Anomaly when the log-likelihood is below the cutoff.
    LogLikelihood { cutoff: Cutoff },
    /// Anomaly when the model mass within `radius` is below `eta`.
    Ball {
        radius: f64,
        eta: f64,
        mc_samples: usize,
        seed: u64,
    },
}

impl AnomalyConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AnomalyConfig::LogLikelihood {
                cutoff: Cutoff::Quantile(q),
            } if !(0.0..=1.0).contains(&q) => Err(Error::invalid(format!(
                "quantile cutoff {q} outside [0, 1]"
            ))),
            AnomalyConfig::LogLikelihood {
                cutoff: Cutoff::Value(v),
            } if !v.is_finite() => Err(Error::invalid("log-likelihood cutoff must be finite")),
            AnomalyConfig::Ball {
                radius,
                eta,
                mc_samples,
                ..
            } => {
                if !(radius > 0.0 && radius.is_finite()) {
                    Err(Error::invalid(format!(
                        "ball radius must be positive, got {radius}"
                    )))
                } else if !(eta > 0.0 && eta < 1.0) {
                    Err(Error::invalid(format!("eta {eta} outside (0, 1)")))
                } else if mc_samples == 0 {
                    Err(Error::invalid(
                        "ball rule needs at least one Monte Carlo sample",
                    ))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Scores every pixel (log-likelihood, or ball probability under the ball
/// rule) and flags those below the cutoff.
pub fn detect_anomalies(
    frame: &HyperCube,
    model: &GmraDensityModel,
    cfg: &AnomalyConfig,
    mode: ExecMode,
) -> Result<(ScoreMap, PlumeMask)> {
    cfg.validate()?;
    model.check_bands(frame.bands())?;
    let (scores, cutoff) = match *cfg {
        AnomalyConfig::LogLikelihood { cutoff } => {
            let scores = model.score_cube(frame, mode)?;
            let c = match cutoff {
                Cutoff::Quantile(q) => quantile_sorted(model.training_scores(), q),
                Cutoff::Value(v) => v,
            };
            (scores, c)
        }
        AnomalyConfig::Ball {
            radius,
            eta,
            mc_samples,
            seed,
        } => {
            let sampler = BallSampler::new(model, mc_samples, seed)?;
            let values = map_indices_with(mode, frame.pixels(), |i| {
                sampler.probability(&frame.spectrum_f64(i), radius)
            });
            (ScoreMap::new(frame.rows(), frame.cols(), values)?, eta)
        }
    };
    let mask = scores.values().iter().map(|&s| s < cutoff).collect();
    let mask = PlumeMask::new(frame.rows(), frame.cols(), mask)?;
    Ok((scores, mask))
}

// ---------------------------------------------------------------------------
// Files: JSON manifest + little-endian f64 payload
// ---------------------------------------------------------------------------

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct NodeEntry {
    scale: usize,
    parent: Option<usize>,
    children: Vec<usize>,
    dim: usize,
    wavelet_dim: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct DensityEntry {
    node: usize,
    weight: f64,
    /// One (bandwidth, sample count) per scaling coordinate.
    coefficients: Vec<(f64, usize)>,
    residual: (f64, usize),
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    bands: usize,
    points: usize,
    scale: usize,
    nodes: Vec<NodeEntry>,
    densities: Vec<DensityEntry>,
    scale_scores: Vec<ScaleScore>,
    training_scores: usize,
    payload_values: usize,
}

/// `<base>.gmra.json` and `<base>.gmra.f64`.
pub fn model_paths(path: &Path) -> (PathBuf, PathBuf) {
    let s = path.to_string_lossy();
    let base = s
        .strip_suffix(".gmra.json")
        .or_else(|| s.strip_suffix(".gmra.f64"))
        .unwrap_or(&s)
        .to_string();
    (
        PathBuf::from(format!("{base}.gmra.json")),
        PathBuf::from(format!("{base}.gmra.f64")),
    )
}

impl GmraDensityModel {
    /// Writes the nodes down to the selected scale and its densities.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let (json_path, data_path) = model_paths(path.as_ref());
        let kept = self
            .tree
            .nodes
            .iter()
            .take_while(|n| n.scale <= self.scale)
            .count();
        let mut payload: Vec<f64> = Vec::new();
        let mut nodes = Vec::with_capacity(kept);
        for n in &self.tree.nodes[..kept] {
            payload.extend(n.center.iter());
            payload.extend(n.basis.iter());
            payload.extend(n.translation.iter());
            payload.extend(n.wavelet.iter());
            nodes.push(NodeEntry {
                scale: n.scale,
                parent: n.parent,
                children: if n.scale < self.scale {
                    n.children.clone()
                } else {
                    Vec::new()
                },
                dim: n.dim(),
                wavelet_dim: n.wavelet.ncols(),
            });
        }
        let mut densities = Vec::with_capacity(self.densities.len());
        for d in &self.densities {
            let mut coefficients = Vec::new();
            for k in &d.coefficients {
                payload.extend(k.kde().samples());
                coefficients.push((k.kde().bandwidth(), k.kde().samples().len()));
            }
            payload.extend(d.residual.kde().samples());
            densities.push(DensityEntry {
                node: d.node,
                weight: d.weight,
                coefficients,
                residual: (
                    d.residual.kde().bandwidth(),
                    d.residual.kde().samples().len(),
                ),
            });
        }
        payload.extend(&self.training_scores);
        let manifest = Manifest {
            version: FORMAT_VERSION,
            bands: self.tree.bands,
            points: self.tree.points,
            scale: self.scale,
            nodes,
            densities,
            scale_scores: self.scale_scores.clone(),
            training_scores: self.training_scores.len(),
            payload_values: payload.len(),
        };
        let text =
            serde_json::to_string_pretty(&manifest).expect("manifest serialisation cannot fail");
        std::fs::write(&json_path, text + "\n").map_err(|e| Error::io(&json_path, e))?;
        let mut bytes = Vec::with_capacity(payload.len() * 8);
        for v in payload {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = std::fs::File::create(&data_path).map_err(|e| Error::io(&data_path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&data_path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (json_path, data_path) = model_paths(path.as_ref());
        let text = std::fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let bad = |reason: String| Error::format(&json_path, reason);
        let m: Manifest = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        if m.version != FORMAT_VERSION {
            return Err(bad(format!("unsupported model version {}", m.version)));
        }
        let mut bytes = Vec::new();
        std::fs::File::open(&data_path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(&data_path, e))?;
        if bytes.len() != m.payload_values * 8 {
            return Err(Error::format(
                &data_path,
                format!(
                    "payload has {} bytes, manifest expects {}",
                    bytes.len(),
                    m.payload_values * 8
                ),
            ));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let mut cursor = 0usize;
        let mut take = |count: usize| -> Result<Vec<f64>> {
            let end = cursor + count;
            if end > values.len() {
                return Err(Error::format(
                    &data_path,
                    "payload shorter than the manifest describes",
                ));
            }
            let out = values[cursor..end].to_vec();
            cursor = end;
            Ok(out)
        };
        let p = m.bands;
        let mut nodes = Vec::with_capacity(m.nodes.len());
        for e in &m.nodes {
            nodes.push(GmraNode {
                scale: e.scale,
                parent: e.parent,
                children: e.children.clone(),
                center: DVector::from_vec(take(p)?),
                basis: DMatrix::from_vec(p, e.dim, take(p * e.dim)?),
                translation: DVector::from_vec(take(p)?),
                wavelet: DMatrix::from_vec(p, e.wavelet_dim, take(p * e.wavelet_dim)?),
                members: Vec::new(),
            });
        }
        if nodes.is_empty()
            || nodes
                .iter()
                .flat_map(|n| &n.children)
                .any(|&c| c >= nodes.len())
        {
            return Err(bad("node table is empty or refers to missing nodes".into()));
        }
        let mut densities = Vec::with_capacity(m.densities.len());
        let mut slot = vec![None; nodes.len()];
        for e in &m.densities {
            if e.node >= nodes.len() || e.coefficients.len() != nodes[e.node].dim() {
                return Err(bad(format!(
                    "density for node {} does not match the node table",
                    e.node
                )));
            }
            let mut coefficients = Vec::with_capacity(e.coefficients.len());
            for &(h, n) in &e.coefficients {
                coefficients.push(TabulatedKde::new(Kde1D::with_bandwidth(take(n)?, h)?));
            }
            let residual =
                TabulatedKde::new(Kde1D::with_bandwidth(take(e.residual.1)?, e.residual.0)?);
            slot[e.node] = Some(densities.len());
            densities.push(NodeDensity {
                node: e.node,
                weight: e.weight,
                coefficients,
                residual,
            });
        }
        let training_scores = take(m.training_scores)?;
        let tree = GmraTree {
            depth: nodes.iter().map(|n| n.scale).max().unwrap_or(0),
            nodes,
            bands: p,
            points: m.points,
        };
        let routed_ok = (0..tree.nodes.len())
            .filter(|&i| {
                tree.nodes[i].scale == m.scale
                    || (tree.nodes[i].scale < m.scale && tree.nodes[i].is_leaf())
            })
            .all(|i| slot[i].is_some());
        if !routed_ok {
            return Err(bad("selected scale has nodes without densities".into()));
        }
        Ok(Self {
            tree,
            scale: m.scale,
            densities,
            slot,
            scale_scores: m.scale_scores,
            training_scores,
        })
    }
}
