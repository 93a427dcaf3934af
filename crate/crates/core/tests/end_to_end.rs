use plume_core::cube::{
    read_cube, read_mask, read_signatures, write_cube, write_mask, write_signatures,
};
use plume_core::detectors::{DetectorKind, PlumeSign};
use plume_core::enhance::{DetectionSpec, EnhanceConfig};
use plume_core::eval::roc;
use plume_core::gmra::{
    detect_anomalies, fit_gmra, AnomalyConfig, Cutoff, GmraConfig, GmraDensityModel,
};
use plume_core::mixture::{BackgroundSpec, ModelKind};
use plume_core::par::ExecMode;
use plume_core::pipeline::{run_pipeline, PipelineConfig};
use plume_core::synth::*;
use plume_core::HyperCube;

fn spec(kind: ModelKind, detector: DetectorKind, k: usize, d: usize) -> DetectionSpec {
    DetectionSpec {
        background: BackgroundSpec {
            kind,
            components: k,
            dim: d,
            seed: 5,
            ..BackgroundSpec::default()
        },
        detector,
        sign: PlumeSign::Positive,
    }
}

fn small_movie() -> MovieSpec {
    MovieSpec {
        rows: 48,
        cols: 64,
        bands: 40,
        frames: 4,
        plume_start: 3,
        plume_strength: 0.05,
        seed: 11,
        ..MovieSpec::default()
    }
}

#[test]
fn scenes_survive_the_file_formats() {
    let dir = tempfile::tempdir().unwrap();
    let scene = gen_two_plume_scene(&SceneSpec::two_plume(), 3).unwrap();
    let (cube, _, mask) = scene.to_cube(100).unwrap();
    write_cube(&cube, dir.path().join("c")).unwrap();
    write_mask(&mask, dir.path().join("m")).unwrap();
    write_signatures(&scene.signatures, dir.path().join("s.csv")).unwrap();
    assert_eq!(read_cube(dir.path().join("c.hdr.json")).unwrap(), cube);
    assert_eq!(read_mask(dir.path().join("m")).unwrap(), mask);
    let sigs = read_signatures(dir.path().join("s.csv")).unwrap();
    assert_eq!(sigs.names(), scene.signatures.names());
    assert!((sigs.matrix() - scene.signatures.matrix()).abs().max() < 1e-12);
}

#[test]
fn sequential_and_parallel_maps_agree() {
    let scene = gen_subspace_scene(&SceneSpec::subspace(), 4).unwrap();
    let (cube, _, _) = scene.to_cube(100).unwrap();
    for (kind, det) in [
        (ModelKind::Gaussian, DetectorKind::Nmf),
        (ModelKind::Subspace, DetectorKind::Nss),
        (ModelKind::Subspace, DetectorKind::Lc),
    ] {
        let enhance = EnhanceConfig {
            resample_rounds: 1,
            plsr_components: Some(3),
            ..EnhanceConfig::default()
        };
        let mut cfg = PipelineConfig::single(spec(kind, det, 3, 2), enhance);
        cfg.mode = ExecMode::Sequential;
        let seq = run_pipeline(std::slice::from_ref(&cube), &scene.signatures, &cfg).unwrap();
        cfg.mode = ExecMode::Parallel;
        let par = run_pipeline(std::slice::from_ref(&cube), &scene.signatures, &cfg).unwrap();
        assert_eq!(seq.stages, par.stages, "{det}");
    }
}

#[test]
fn clean_frame_model_ranks_new_plume_high() {
    let movie = small_movie();
    let clean = movie_frame(&movie, 0).unwrap().cube;
    let plume = movie_frame(&movie, 3).unwrap();
    let frames = vec![clean.clone(), clean, plume.cube.clone()];
    let wn = plume.cube.wavenumbers().to_vec();
    let [s1, _] = reference_signatures(&wn);
    let sigs = plume_core::SignatureSet::from_columns(wn, &[("s1".into(), s1)]).unwrap();
    let cfg = PipelineConfig::movie(spec(ModelKind::Gaussian, DetectorKind::Nmf, 3, 2), 2, 0.01);
    let out = run_pipeline(&frames, &sigs, &cfg).unwrap();
    assert_eq!(out.maps.len(), 3);

    let scores = out.maps[2].values();
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let decile = sorted[(sorted.len() as f64 * 0.9) as usize];
    let truth = plume.mask.values();
    let inside = truth.iter().zip(scores).filter(|(t, _)| **t).count();
    let top = truth
        .iter()
        .zip(scores)
        .filter(|(t, s)| **t && **s >= decile)
        .count();
    assert!(inside > 0);
    assert!(
        top as f64 >= 0.9 * inside as f64,
        "{top} of {inside} plume pixels in the top decile"
    );
    assert!(roc(&out.maps[2], &plume.mask).unwrap().auc > 0.95);
}

#[test]
fn anomaly_model_files_reproduce_masks() {
    let movie = small_movie();
    let train = movie_frame(&movie, 0).unwrap().cube;
    let test = movie_frame(&movie, 3).unwrap();
    let cfg = GmraConfig {
        seed: 2,
        ..GmraConfig::default()
    };
    let model = fit_gmra(&train.to_matrix(), &cfg).unwrap();
    let rule = AnomalyConfig::LogLikelihood {
        cutoff: Cutoff::Quantile(0.01),
    };
    let (scores, mask) = detect_anomalies(&test.cube, &model, &rule, ExecMode::default()).unwrap();

    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path().join("m")).unwrap();
    let loaded = GmraDensityModel::load(dir.path().join("m.gmra.json")).unwrap();
    let (scores2, mask2) =
        detect_anomalies(&test.cube, &loaded, &rule, ExecMode::Sequential).unwrap();
    assert_eq!(scores, scores2);
    assert_eq!(mask, mask2);

    let flagged_plume = mask
        .values()
        .iter()
        .zip(test.mask.values())
        .filter(|(m, t)| **m && **t)
        .count();
    assert!(flagged_plume as f64 >= 0.9 * test.mask.count() as f64);

    // a frame with a different band count is rejected
    let other = HyperCube::from_spectra(1, 1, vec![1.0, 2.0], &[vec![0.0, 0.0]]).unwrap();
    assert!(detect_anomalies(&other, &model, &rule, ExecMode::default()).is_err());
}
