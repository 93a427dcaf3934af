//! Score enhancement: magnitude outlier removal, background resampling and
//! PLS regression of scores on spectra.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cube::{HyperCube, ScoreMap, SignatureSet};
use crate::detectors::{score_cube, DetectorKind, PlumeSign};
use crate::error::{Error, Result};
use crate::mixture::{BackgroundModel, BackgroundSpec, MixtureDetector};
use crate::numerics::{fit_plsr, PlsrModel};
use crate::par::{map_indices_with, ExecMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnhanceConfig {
    pub outlier_fraction: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub tau3: f64,
    pub resample_rounds: usize,
    /// `None` disables the PLS stage.
    pub plsr_components: Option<usize>,
}

impl Default for EnhanceConfig {
    fn default() -> Self {
        Self {
            outlier_fraction: 0.01,
            tau1: 0.2,
            tau2: 0.15,
            tau3: 0.15,
            resample_rounds: 0,
            plsr_components: None,
        }
    }
}

impl EnhanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(Error::invalid(format!(
                "outlier fraction {} outside [0, 1)",
                self.outlier_fraction
            )));
        }
        for (name, t) in [
            ("tau1", self.tau1),
            ("tau2", self.tau2),
            ("tau3", self.tau3),
        ] {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::invalid(format!("{name} = {t} outside (0, 1)")));
            }
        }
        if self.tau2 + self.tau3 >= 1.0 {
            return Err(Error::invalid("tau2 + tau3 must be below 1"));
        }
        if self.plsr_components == Some(0) {
            return Err(Error::invalid("PLS needs at least one component"));
        }
        Ok(())
    }
}

/// Background model plus the detector run against it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSpec {
    pub background: BackgroundSpec,
    pub detector: DetectorKind,
    #[serde(default)]
    pub sign: PlumeSign,
}

impl DetectionSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.background.kind.supports(self.detector) {
            return Err(Error::Incompatible(format!(
                "detector {} cannot run on a {:?} background",
                self.detector, self.background.kind
            )));
        }
        Ok(())
    }

    /// Fits the background on `pixels` of `cube`.
    pub fn fit(&self, cube: &HyperCube, pixels: &[usize]) -> Result<BackgroundModel> {
        self.check_count(pixels.len())?;
        self.fit_spectra(&cube.matrix_of(pixels))
    }

    /// Fits the background on the rows of `spectra`.
    pub fn fit_spectra(&self, spectra: &DMatrix<f64>) -> Result<BackgroundModel> {
        self.validate()?;
        self.check_count(spectra.nrows())?;
        self.background.fit(spectra)
    }

    fn check_count(&self, n: usize) -> Result<()> {
        let min = self.background.min_fit_size();
        if n < min {
            return Err(Error::invalid(format!(
                "background fit needs at least {min} spectra, selection has {n}"
            )));
        }
        Ok(())
    }

    pub fn detector(
        &self,
        model: &BackgroundModel,
        signatures: &SignatureSet,
    ) -> Result<MixtureDetector> {
        MixtureDetector::new(model, signatures, self.detector, self.sign)
    }

    pub fn score(
        &self,
        cube: &HyperCube,
        model: &BackgroundModel,
        signatures: &SignatureSet,
        mode: ExecMode,
    ) -> Result<ScoreMap> {
        check_signatures(cube, signatures)?;
        score_cube(&self.detector(model, signatures)?, cube, mode)
    }

    /// Fit on `pixels`, then score every pixel.
    pub fn fit_and_score(
        &self,
        cube: &HyperCube,
        pixels: &[usize],
        signatures: &SignatureSet,
        mode: ExecMode,
    ) -> Result<(BackgroundModel, ScoreMap)> {
        let model = self.fit(cube, pixels)?;
        let scores = self.score(cube, &model, signatures, mode)?;
        Ok((model, scores))
    }
}

fn check_signatures(cube: &HyperCube, signatures: &SignatureSet) -> Result<()> {
    if signatures.bands() != cube.bands() {
        return Err(Error::Dimension {
            what: "signature bands",
            expected: cube.bands(),
            found: signatures.bands(),
        });
    }
    Ok(())
}

fn check_scores(cube: &HyperCube, scores: &ScoreMap) -> Result<()> {
    if scores.rows() != cube.rows() || scores.cols() != cube.cols() {
        return Err(Error::invalid(format!(
            "score map {}x{} does not match cube {}x{}",
            scores.rows(),
            scores.cols(),
            cube.rows(),
            cube.cols()
        )));
    }
    Ok(())
}

/// 1-based rank `⌈τ·n⌉`, clamped to `[1, n]`.
pub fn order_rank(tau: f64, n: usize) -> usize {
    let r = (tau * n as f64 - 1e-9).ceil();
    (r.max(1.0) as usize).min(n.max(1))
}

/// The `⌈τ·n⌉`-th smallest value.
pub fn order_statistic(values: &[f64], tau: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted[order_rank(tau, sorted.len()) - 1]
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutlierSplit {
    /// Ascending pixel indices.
    pub kept: Vec<usize>,
    /// Ascending pixel indices.
    pub removed: Vec<usize>,
}

impl OutlierSplit {
    /// `true` for kept pixels.
    pub fn kept_mask(&self, pixels: usize) -> Vec<bool> {
        let mut mask = vec![false; pixels];
        for &i in &self.kept {
            mask[i] = true;
        }
        mask
    }
}

/// Drops the `⌈fraction·mn⌉` spectra of largest squared norm. Among equal
/// magnitudes the lower pixel index is kept.
pub fn remove_outliers(cube: &HyperCube, fraction: f64) -> Result<OutlierSplit> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::invalid(format!(
            "outlier fraction {fraction} outside [0, 1)"
        )));
    }
    let n = cube.pixels();
    let count = if fraction == 0.0 {
        0
    } else {
        ((fraction * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n - 1)
    };
    let magnitude: Vec<f64> = (0..n).map(|i| cube.magnitude(i)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| magnitude[b].total_cmp(&magnitude[a]).then(b.cmp(&a)));
    let mut removed = order[..count].to_vec();
    removed.sort_unstable();
    let mut is_removed = vec![false; n];
    for &i in &removed {
        is_removed[i] = true;
    }
    let kept = (0..n).filter(|&i| !is_removed[i]).collect();
    Ok(OutlierSplit { kept, removed })
}

/// Pixels with score ≤ `T_(⌈τ1·mn⌉)` and their 4-neighbours, restricted to
/// `allowed` when given. Ascending indices.
pub fn resample_selection(scores: &ScoreMap, tau1: f64, allowed: Option<&[bool]>) -> Vec<usize> {
    let (rows, cols) = (scores.rows(), scores.cols());
    let values = scores.values();
    let delta1 = order_statistic(values, tau1);
    let mut selected = vec![false; values.len()];
    for r in 0..rows {
        for c in 0..cols {
            if values[r * cols + c] > delta1 {
                continue;
            }
            selected[r * cols + c] = true;
            if r > 0 {
                selected[(r - 1) * cols + c] = true;
            }
            if r + 1 < rows {
                selected[(r + 1) * cols + c] = true;
            }
            if c > 0 {
                selected[r * cols + c - 1] = true;
            }
            if c + 1 < cols {
                selected[r * cols + c + 1] = true;
            }
        }
    }
    (0..values.len())
        .filter(|&i| selected[i] && allowed.is_none_or(|a| a[i]))
        .collect()
}

/// One resampling round: refit the background on the confident-background
/// selection and rescore the whole cube.
pub fn resample_enhance(
    cube: &HyperCube,
    scores: &ScoreMap,
    signatures: &SignatureSet,
    tau1: f64,
    spec: &DetectionSpec,
    allowed: Option<&[bool]>,
    mode: ExecMode,
) -> Result<(BackgroundModel, ScoreMap)> {
    check_scores(cube, scores)?;
    if !(tau1 > 0.0 && tau1 <= 1.0) {
        return Err(Error::invalid(format!("tau1 = {tau1} outside (0, 1]")));
    }
    let selection = resample_selection(scores, tau1, allowed);
    spec.fit_and_score(cube, &selection, signatures, mode)
}

/// Pixels scoring in the lowest `τ2` or highest `τ3` fraction, restricted to
/// `allowed` when given.
pub fn plsr_selection(
    scores: &ScoreMap,
    tau2: f64,
    tau3: f64,
    allowed: Option<&[bool]>,
) -> Vec<usize> {
    let values = scores.values();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let delta2 = sorted[order_rank(tau2, n) - 1];
    let delta3 = sorted[order_rank(1.0 - tau3, n) - 1];
    (0..n)
        .filter(|&i| (values[i] <= delta2 || values[i] >= delta3) && allowed.is_none_or(|a| a[i]))
        .collect()
}

/// Fits the score-on-spectrum regression. `None` when the selected scores are
/// constant (the enhanced map is then the input map).
pub fn plsr_fit(
    cube: &HyperCube,
    scores: &ScoreMap,
    tau2: f64,
    tau3: f64,
    components: usize,
    allowed: Option<&[bool]>,
) -> Result<Option<PlsrModel>> {
    check_scores(cube, scores)?;
    for (name, t) in [("tau2", tau2), ("tau3", tau3)] {
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::invalid(format!("{name} = {t} outside (0, 1)")));
        }
    }
    let selection = plsr_selection(scores, tau2, tau3, allowed);
    if selection.len() < components + 2 {
        return Err(Error::invalid(format!(
            "PLS selection has {} pixels, {} components need at least {}",
            selection.len(),
            components,
            components + 2
        )));
    }
    let y: Vec<f64> = selection.iter().map(|&i| scores.values()[i]).collect();
    if y.iter().all(|&v| v == y[0]) {
        return Ok(None);
    }
    fit_plsr(&cube.matrix_of(&selection), &y, components).map(Some)
}

/// Replaces every score by the PLS prediction `βᵀx + β0`.
pub fn plsr_enhance(
    cube: &HyperCube,
    scores: &ScoreMap,
    tau2: f64,
    tau3: f64,
    components: usize,
    allowed: Option<&[bool]>,
    mode: ExecMode,
) -> Result<ScoreMap> {
    match plsr_fit(cube, scores, tau2, tau3, components, allowed)? {
        None => Ok(scores.clone()),
        Some(model) => {
            let values = map_indices_with(mode, cube.pixels(), |i| {
                model.predict(&cube.spectrum_f64(i))
            });
            ScoreMap::new(cube.rows(), cube.cols(), values)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::ModelKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cube_with_magnitudes(mags: &[f64]) -> HyperCube {
        let spectra: Vec<Vec<f64>> = mags.iter().map(|m| vec![m.sqrt()]).collect();
        HyperCube::from_spectra(1, mags.len(), vec![1.0], &spectra).unwrap()
    }

    fn random_cube(rows: usize, cols: usize, p: usize, seed: u64) -> HyperCube {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spectra: Vec<Vec<f64>> = (0..rows * cols)
            .map(|_| {
                (0..p)
                    .map(|j| 1.0 + j as f64 * 0.1 + rng.random_range(-0.2..0.2))
                    .collect()
            })
            .collect();
        HyperCube::from_spectra(rows, cols, (0..p).map(|j| j as f64).collect(), &spectra).unwrap()
    }

    #[test]
    fn outlier_removal_examples() {
        let cube = cube_with_magnitudes(&[1.0, 2.0, 3.0, 100.0]);
        let none = remove_outliers(&cube, 0.0).unwrap();
        assert!(none.removed.is_empty());
        assert_eq!(none.kept, vec![0, 1, 2, 3]);

        let quarter = remove_outliers(&cube, 0.25).unwrap();
        assert_eq!(quarter.removed, vec![3]);
        assert_eq!(quarter.kept, vec![0, 1, 2]);

        let flat = cube_with_magnitudes(&[4.0; 4]);
        let half = remove_outliers(&flat, 0.5).unwrap();
        assert_eq!(half.removed, vec![2, 3]);
        assert_eq!(half.kept, vec![0, 1]);

        assert!(remove_outliers(&cube, 1.0).is_err());
    }

    #[test]
    fn outlier_split_is_a_partition() {
        let cube = random_cube(7, 9, 3, 1);
        for f in [0.01, 0.1, 0.33, 0.9] {
            let split = remove_outliers(&cube, f).unwrap();
            assert_eq!(split.removed.len(), (f * 63.0_f64).ceil() as usize);
            let mut all: Vec<usize> = split.kept.iter().chain(&split.removed).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..63).collect::<Vec<_>>());
        }
    }

    #[test]
    fn order_rank_rounds_up() {
        assert_eq!(order_rank(0.2, 10), 2);
        assert_eq!(order_rank(0.21, 10), 3);
        assert_eq!(order_rank(0.0001, 10), 1);
        assert_eq!(order_rank(1.0, 10), 10);
        assert_eq!(order_statistic(&[5.0, 1.0, 3.0, 2.0, 4.0], 0.4), 2.0);
    }

    #[test]
    fn neighbourhood_of_single_pixel() {
        let mut values = vec![1.0; 25];
        values[12] = 0.0;
        let scores = ScoreMap::new(5, 5, values).unwrap();
        assert_eq!(
            resample_selection(&scores, 1.0 / 25.0, None),
            vec![7, 11, 12, 13, 17]
        );

        let mut values = vec![1.0; 25];
        values[0] = 0.0;
        let scores = ScoreMap::new(5, 5, values).unwrap();
        assert_eq!(resample_selection(&scores, 0.04, None), vec![0, 1, 5]);

        let mut allowed = vec![true; 25];
        allowed[1] = false;
        assert_eq!(
            resample_selection(&scores, 0.04, Some(&allowed)),
            vec![0, 5]
        );
    }

    #[test]
    fn full_selection_equals_fresh_fit() {
        let cube = random_cube(10, 12, 4, 2);
        let sig = SignatureSet::single(vec![1.0, 0.5, 0.0, -0.5]).unwrap();
        let spec = DetectionSpec {
            background: BackgroundSpec {
                kind: ModelKind::Gaussian,
                components: 2,
                seed: 5,
                ..BackgroundSpec::default()
            },
            detector: DetectorKind::Nmf,
            sign: PlumeSign::Positive,
        };
        let all: Vec<usize> = (0..cube.pixels()).collect();
        let (model, fresh) = spec
            .fit_and_score(&cube, &all, &sig, ExecMode::default())
            .unwrap();
        let (model2, again) =
            resample_enhance(&cube, &fresh, &sig, 1.0, &spec, None, ExecMode::default()).unwrap();
        assert_eq!(model, model2);
        assert_eq!(fresh, again);
    }

    #[test]
    fn resample_rejects_tiny_selection() {
        let cube = random_cube(5, 5, 3, 3);
        let mut values = vec![1.0; 25];
        values[12] = 0.0;
        let scores = ScoreMap::new(5, 5, values).unwrap();
        let sig = SignatureSet::single(vec![1.0, 0.0, 0.0]).unwrap();
        let spec = DetectionSpec {
            background: BackgroundSpec {
                kind: ModelKind::Gaussian,
                components: 3,
                ..BackgroundSpec::default()
            },
            detector: DetectorKind::Nmf,
            sign: PlumeSign::Positive,
        };
        assert!(
            resample_enhance(&cube, &scores, &sig, 0.04, &spec, None, ExecMode::default()).is_err()
        );
    }

    #[test]
    fn linear_scores_are_a_fixed_point() {
        let cube = random_cube(8, 10, 3, 4);
        let beta = [0.7, -1.3, 2.0];
        let values: Vec<f64> = (0..cube.pixels())
            .map(|i| {
                0.25 + cube
                    .spectrum_f64(i)
                    .iter()
                    .zip(&beta)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            })
            .collect();
        let scores = ScoreMap::new(8, 10, values.clone()).unwrap();
        let out = plsr_enhance(&cube, &scores, 0.2, 0.2, 3, None, ExecMode::default()).unwrap();
        for (a, b) in out.values().iter().zip(&values) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn plsr_output_is_affine_in_spectra() {
        let cube = random_cube(9, 11, 5, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let scores = ScoreMap::new(9, 11, (0..99).map(|_| rng.random::<f64>()).collect()).unwrap();
        let model = plsr_fit(&cube, &scores, 0.15, 0.15, 2, None)
            .unwrap()
            .unwrap();
        let out = plsr_enhance(&cube, &scores, 0.15, 0.15, 2, None, ExecMode::Sequential).unwrap();
        for i in 0..cube.pixels() {
            let x = cube.spectrum_f64(i);
            let direct = model.intercept()
                + model
                    .coefficients()
                    .iter()
                    .zip(&x)
                    .map(|(b, v)| b * v)
                    .sum::<f64>();
            assert!((out.values()[i] - direct).abs() <= 1e-12);
        }
    }

    #[test]
    fn constant_scores_pass_through() {
        let cube = random_cube(4, 4, 3, 7);
        let scores = ScoreMap::new(4, 4, vec![0.3; 16]).unwrap();
        let out = plsr_enhance(&cube, &scores, 0.2, 0.2, 2, None, ExecMode::default()).unwrap();
        assert_eq!(out, scores);
    }

    #[test]
    fn plsr_selection_too_small() {
        let cube = random_cube(2, 2, 3, 8);
        let scores = ScoreMap::new(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert!(plsr_enhance(&cube, &scores, 0.25, 0.25, 2, None, ExecMode::default()).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(EnhanceConfig::default().validate().is_ok());
        let bad = EnhanceConfig {
            tau2: 0.6,
            tau3: 0.5,
            ..EnhanceConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = EnhanceConfig {
            outlier_fraction: 1.0,
            ..EnhanceConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
