//! End-to-end detection runs.
//!
//! A single cube is modelled from its own spectra and may be enhanced
//! (outlier removal, resampling rounds, PLS). A movie is modelled from a
//! few leading clean frames and every frame is then scored against that
//! fixed background.

use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cube::{HyperCube, ScoreMap, SignatureSet};
use crate::enhance::{
    plsr_enhance, remove_outliers, resample_enhance, DetectionSpec, EnhanceConfig,
};
use crate::error::{Error, Result};
use crate::mixture::BackgroundModel;
use crate::par::ExecMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// One cube, modelled from itself.
    Single,
    /// A movie, modelled from its leading clean frames.
    Movie,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub scenario: Scenario,
    /// Frame indices used for training in the movie scenario.
    pub training_frames: Vec<usize>,
    pub detection: DetectionSpec,
    pub enhance: EnhanceConfig,
    #[serde(skip)]
    pub mode: ExecMode,
}

impl PipelineConfig {
    pub fn single(detection: DetectionSpec, enhance: EnhanceConfig) -> Self {
        Self {
            scenario: Scenario::Single,
            training_frames: Vec::new(),
            detection,
            enhance,
            mode: ExecMode::default(),
        }
    }

    /// Movie run trained on the first `clean_frames` frames.
    pub fn movie(detection: DetectionSpec, clean_frames: usize, outlier_fraction: f64) -> Self {
        Self {
            scenario: Scenario::Movie,
            training_frames: (0..clean_frames).collect(),
            detection,
            enhance: EnhanceConfig {
                outlier_fraction,
                ..EnhanceConfig::default()
            },
            mode: ExecMode::default(),
        }
    }

    pub fn validate(&self, frames: usize) -> Result<()> {
        self.detection.validate()?;
        self.enhance.validate()?;
        match self.scenario {
            Scenario::Single => {
                if frames != 1 {
                    return Err(Error::invalid(format!(
                        "single-cube run needs exactly 1 frame, got {frames}"
                    )));
                }
            }
            Scenario::Movie => {
                if self.training_frames.is_empty() {
                    return Err(Error::invalid("movie run needs at least one clean frame"));
                }
                if frames <= self.training_frames.len() {
                    return Err(Error::invalid(format!(
                        "movie run with {} clean frames needs more than that many frames, got {frames}",
                        self.training_frames.len()
                    )));
                }
                if let Some(&bad) = self.training_frames.iter().find(|&&f| f >= frames) {
                    return Err(Error::invalid(format!(
                        "training frame {bad} out of range (0..{frames})"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    /// One map per input frame.
    pub maps: Vec<ScoreMap>,
    /// Single-cube runs: the map after each stage, in order
    /// (`detect`, `rs1`, `rs2`, …, `plsr`).
    pub stages: Vec<(String, ScoreMap)>,
    /// Background used for the final detection pass.
    pub model: BackgroundModel,
    pub removed_outliers: usize,
    pub timings: Vec<StageTiming>,
}

struct Clock {
    timings: Vec<StageTiming>,
    last: Instant,
}

impl Clock {
    fn new() -> Self {
        Self {
            timings: Vec::new(),
            last: Instant::now(),
        }
    }

    fn lap(&mut self, stage: impl Into<String>) {
        let now = Instant::now();
        self.timings.push(StageTiming {
            stage: stage.into(),
            seconds: (now - self.last).as_secs_f64(),
        });
        self.last = now;
    }
}

fn check_frames(frames: &[HyperCube], signatures: &SignatureSet) -> Result<()> {
    let first = frames
        .first()
        .ok_or_else(|| Error::invalid("no frames given"))?;
    for (l, f) in frames.iter().enumerate().skip(1) {
        if !first.same_shape(f) {
            return Err(Error::invalid(format!(
                "frame {l} is {}x{}x{}, frame 0 is {}x{}x{}",
                f.rows(),
                f.cols(),
                f.bands(),
                first.rows(),
                first.cols(),
                first.bands()
            )));
        }
    }
    if signatures.bands() != first.bands() {
        return Err(Error::Dimension {
            what: "signature bands",
            expected: first.bands(),
            found: signatures.bands(),
        });
    }
    Ok(())
}

/// Runs detection over `frames` per `cfg`.
pub fn run_pipeline(
    frames: &[HyperCube],
    signatures: &SignatureSet,
    cfg: &PipelineConfig,
) -> Result<PipelineOutput> {
    check_frames(frames, signatures)?;
    cfg.validate(frames.len())?;
    match cfg.scenario {
        Scenario::Single => run_single(&frames[0], signatures, cfg),
        Scenario::Movie => run_movie(frames, signatures, cfg),
    }
}

fn run_single(
    cube: &HyperCube,
    signatures: &SignatureSet,
    cfg: &PipelineConfig,
) -> Result<PipelineOutput> {
    let mut clock = Clock::new();
    let spec = &cfg.detection;
    let enh = &cfg.enhance;

    let split = remove_outliers(cube, enh.outlier_fraction)?;
    let kept = split.kept_mask(cube.pixels());
    clock.lap("outliers");

    let (mut model, mut scores) = spec.fit_and_score(cube, &split.kept, signatures, cfg.mode)?;
    clock.lap("detect");
    let mut stages = vec![("detect".to_string(), scores.clone())];

    for round in 1..=enh.resample_rounds {
        let (m, s) = resample_enhance(
            cube,
            &scores,
            signatures,
            enh.tau1,
            spec,
            Some(&kept),
            cfg.mode,
        )?;
        model = m;
        scores = s;
        let name = format!("rs{round}");
        clock.lap(name.clone());
        stages.push((name, scores.clone()));
    }

    if let Some(l) = enh.plsr_components {
        scores = plsr_enhance(cube, &scores, enh.tau2, enh.tau3, l, Some(&kept), cfg.mode)?;
        clock.lap("plsr");
        stages.push(("plsr".to_string(), scores.clone()));
    }

    Ok(PipelineOutput {
        maps: vec![scores],
        stages,
        model,
        removed_outliers: split.removed.len(),
        timings: clock.timings,
    })
}

fn run_movie(
    frames: &[HyperCube],
    signatures: &SignatureSet,
    cfg: &PipelineConfig,
) -> Result<PipelineOutput> {
    let mut clock = Clock::new();
    let p = frames[0].bands();

    let mut rows: Vec<f64> = Vec::new();
    let mut removed = 0;
    for &f in &cfg.training_frames {
        let frame = &frames[f];
        let split = remove_outliers(frame, cfg.enhance.outlier_fraction)?;
        removed += split.removed.len();
        for &i in &split.kept {
            rows.extend(frame.spectrum(i).iter().map(|&v| v as f64));
        }
    }
    let training = DMatrix::from_row_slice(rows.len() / p, p, &rows);
    drop(rows);
    clock.lap("outliers");

    let model = cfg.detection.fit_spectra(&training)?;
    drop(training);
    clock.lap("fit");

    let mut maps = Vec::with_capacity(frames.len());
    for (l, frame) in frames.iter().enumerate() {
        maps.push(cfg.detection.score(frame, &model, signatures, cfg.mode)?);
        clock.lap(format!("score{l}"));
    }

    Ok(PipelineOutput {
        maps,
        stages: Vec::new(),
        model,
        removed_outliers: removed,
        timings: clock.timings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detectors::{nmf_score, DetectorKind, PlumeSign};
    use crate::mixture::{BackgroundSpec, ModelKind};
    use crate::numerics::fit_cov;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    const P: usize = 6;

    fn frame(rows: usize, cols: usize, seed: u64) -> HyperCube {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spectra: Vec<Vec<f64>> = (0..rows * cols)
            .map(|i| {
                let base = if i % 3 == 0 { 10.0 } else { 20.0 };
                (0..P)
                    .map(|j| base + j as f64 + 0.5 * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        HyperCube::from_spectra(
            rows,
            cols,
            (0..P).map(|j| 800.0 + j as f64).collect(),
            &spectra,
        )
        .unwrap()
    }

    fn signature() -> SignatureSet {
        SignatureSet::single(vec![0.0, 1.0, 2.0, 1.0, 0.0, -1.0]).unwrap()
    }

    fn nmf_spec(k: usize) -> DetectionSpec {
        DetectionSpec {
            background: BackgroundSpec {
                kind: ModelKind::Gaussian,
                components: k,
                seed: 11,
                ..BackgroundSpec::default()
            },
            detector: DetectorKind::Nmf,
            sign: PlumeSign::Positive,
        }
    }

    #[test]
    fn single_component_collapses_to_plain_nmf() {
        let cube = frame(12, 15, 1);
        let sig = signature();
        let enhance = EnhanceConfig::default();
        let out = run_pipeline(
            std::slice::from_ref(&cube),
            &sig,
            &PipelineConfig::single(nmf_spec(1), enhance.clone()),
        )
        .unwrap();
        let split = remove_outliers(&cube, enhance.outlier_fraction).unwrap();
        let cov = fit_cov(&cube.matrix_of(&split.kept), 50.0).unwrap();
        for i in 0..cube.pixels() {
            let expected = nmf_score(&cube.spectrum_f64(i), &cov, &sig).unwrap();
            assert!((out.maps[0].values()[i] - expected).abs() <= 1e-12);
        }
        assert_eq!(out.removed_outliers, 2);
    }

    #[test]
    fn enhancement_stages_are_recorded_and_deterministic() {
        let cube = frame(20, 20, 2);
        let sig = signature();
        let enhance = EnhanceConfig {
            resample_rounds: 2,
            plsr_components: Some(3),
            ..EnhanceConfig::default()
        };
        let cfg = PipelineConfig::single(nmf_spec(2), enhance);
        let a = run_pipeline(std::slice::from_ref(&cube), &sig, &cfg).unwrap();
        let names: Vec<&str> = a.stages.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["detect", "rs1", "rs2", "plsr"]);
        let b = run_pipeline(std::slice::from_ref(&cube), &sig, &cfg).unwrap();
        assert_eq!(a.maps, b.maps);
        assert!(a.maps[0].values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn sequential_and_parallel_runs_agree() {
        let cube = frame(10, 10, 3);
        let sig = signature();
        let mut cfg = PipelineConfig::single(nmf_spec(2), EnhanceConfig::default());
        cfg.mode = ExecMode::Sequential;
        let a = run_pipeline(std::slice::from_ref(&cube), &sig, &cfg).unwrap();
        cfg.mode = ExecMode::Parallel;
        let b = run_pipeline(std::slice::from_ref(&cube), &sig, &cfg).unwrap();
        assert_eq!(a.maps, b.maps);
    }

    #[test]
    fn movie_model_ignores_later_frames() {
        let sig = signature();
        let clean = frame(10, 10, 4);
        let cfg = PipelineConfig::movie(nmf_spec(2), 2, 0.01);
        let a = run_pipeline(
            &[clean.clone(), clean.clone(), frame(10, 10, 5)],
            &sig,
            &cfg,
        )
        .unwrap();
        let b = run_pipeline(
            &[clean.clone(), clean.clone(), frame(10, 10, 6)],
            &sig,
            &cfg,
        )
        .unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.maps[0], b.maps[0]);
        assert_eq!(a.maps.len(), 3);
    }

    #[test]
    fn movie_injection_ranks_in_top_decile() {
        let sig = signature();
        let clean = frame(20, 20, 7);
        let mut test = frame(20, 20, 8);
        let plume: Vec<usize> = (0..20).map(|i| i * 20 + 7).collect();
        let mut spectra: Vec<Vec<f64>> = (0..test.pixels()).map(|i| test.spectrum_f64(i)).collect();
        for &i in &plume {
            for (v, s) in spectra[i].iter_mut().zip(sig.column(0)) {
                *v += 3.0 * s;
            }
        }
        test = HyperCube::from_spectra(20, 20, test.wavenumbers().to_vec(), &spectra).unwrap();
        let cfg = PipelineConfig::movie(nmf_spec(2), 2, 0.01);
        let out = run_pipeline(&[clean.clone(), clean, test], &sig, &cfg).unwrap();
        let values = out.maps[2].values();
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let cutoff = sorted[values.len() / 10 - 1];
        for &i in &plume {
            assert!(values[i] >= cutoff);
        }
    }

    #[test]
    fn invalid_runs_rejected() {
        let sig = signature();
        let a = frame(4, 5, 1);
        let b = frame(5, 4, 1);
        let cfg = PipelineConfig::movie(nmf_spec(1), 1, 0.0);
        assert!(run_pipeline(&[a.clone(), b], &sig, &cfg).is_err());
        assert!(run_pipeline(std::slice::from_ref(&a), &sig, &cfg).is_err());
        let single = PipelineConfig::single(nmf_spec(1), EnhanceConfig::default());
        assert!(run_pipeline(&[a.clone(), a.clone()], &sig, &single).is_err());
        let mut bad = single.clone();
        bad.detection.detector = DetectorKind::Nss;
        assert!(matches!(
            run_pipeline(&[a], &sig, &bad),
            Err(Error::Incompatible(_))
        ));
    }
}
