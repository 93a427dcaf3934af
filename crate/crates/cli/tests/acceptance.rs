//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Built with `harness = false` so the lines show up in
//! plain `cargo test` output.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use plume_core::cube::{read_score_map, PlumeMask, ScoreMap, SignatureSet};
use plume_core::detectors::{lc_score, nmf_score, nss_score, score_cube, DetectorKind, PlumeSign};
use plume_core::enhance::{DetectionSpec, EnhanceConfig};
use plume_core::eval::{roc, roc_values};
use plume_core::gmra::{ball_probability, build_gmra, fit_density, fit_gmra, GmraConfig};
use plume_core::mixture::{
    BackgroundModel, BackgroundSpec, GaussianComponent, GaussianMixture, MixtureDetector, ModelKind,
};
use plume_core::numerics::{fit_plsr, percentile, CovModel, SubspaceModel};
use plume_core::par::{with_threads, ExecMode};
use plume_core::pipeline::{run_pipeline, PipelineConfig};
use plume_core::synth::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

/// Regression values recorded from the first passing run (seed 42).
const FROZEN_MIX_NMF_AUC: f64 = 1.0;
const FROZEN_SINGLE_NMF_AUC: f64 = 0.3696317142857143;
const FROZEN_TOL: f64 = 1e-9;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(name: &str, limit: f64, start: Instant) -> Result<f64, String> {
    let t = start.elapsed().as_secs_f64();
    ensure(t <= limit, || {
        format!("{name} took {t:.2} s, limit {limit} s")
    })?;
    Ok(t)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn auc(scores: &ScoreMap, mask: &PlumeMask) -> f64 {
    roc(scores, mask).unwrap().auc
}

fn detection(kind: ModelKind, detector: DetectorKind, k: usize, d: usize) -> DetectionSpec {
    DetectionSpec {
        background: BackgroundSpec {
            kind,
            components: k,
            dim: d,
            seed: 42,
            ..BackgroundSpec::default()
        },
        detector,
        sign: PlumeSign::Positive,
    }
}

fn pipeline_auc(scene: &Scene, spec: DetectionSpec, enhance: EnhanceConfig) -> Vec<(String, f64)> {
    let (cube, _, mask) = scene.to_cube(100).unwrap();
    let out = run_pipeline(
        &[cube],
        &scene.signatures,
        &PipelineConfig::single(spec, enhance),
    )
    .unwrap();
    out.stages
        .iter()
        .map(|(n, m)| (n.clone(), auc(m, &mask)))
        .collect()
}

// ---------------------------------------------------------------------------

fn c1_golden() -> Outcome {
    let start = Instant::now();
    let cov = CovModel::from_covariance(
        DVector::from_vec(vec![1.0, 1.0]),
        DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0])),
        0.0,
    )
    .unwrap();
    let nmf = nmf_score(
        &[2.0, 3.0],
        &cov,
        &SignatureSet::single(vec![1.0, 1.0]).unwrap(),
    )
    .unwrap();
    ensure((nmf - 0.9).abs() <= 1e-12, || {
        format!("nmf hand case {nmf}")
    })?;

    let e = |i: usize| {
        (0..3)
            .map(|j| f64::from(u8::from(i == j)))
            .collect::<Vec<f64>>()
    };
    let sub = SubspaceModel::from_span(DVector::zeros(3), &DMatrix::from_column_slice(3, 1, &e(0)))
        .unwrap();
    let s = SignatureSet::single(e(1)).unwrap();
    let nss = nss_score(&[0.0, 1.0, 1.0], &sub, &s).unwrap();
    ensure((nss - 2.0).abs() <= 1e-11, || {
        format!("nss hand case {nss}")
    })?;
    let lc = lc_score(&[0.0, 2.0, 0.0], &sub, &s, PlumeSign::Positive).unwrap();
    ensure((lc - 2.0).abs() <= 1e-12, || format!("lc recovery {lc}"))?;
    let t = within("golden values", 1.0, start)?;
    Ok(format!("nmf={nmf} nss={nss} lc={lc} ({t:.3} s)"))
}

fn random_spd(rng: &mut ChaCha8Rng, p: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(p, p, |_, _| normal(rng));
    &a * a.transpose() + DMatrix::identity(p, p) * 0.5
}

fn c2_properties() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let p = 6;
    let trials = 1000;
    let mut worst_invariance: f64 = 0.0;
    let mut worst_nss: f64 = 0.0;
    let mut worst_lc: f64 = 0.0;
    for trial in 0..trials {
        let mu = DVector::from_fn(p, |_, _| normal(&mut rng));
        let sigma = random_spd(&mut rng, p);
        let cov = CovModel::from_covariance(mu.clone(), sigma.clone(), 0.0).unwrap();
        let s = DVector::from_fn(p, |_, _| normal(&mut rng));
        let sig = SignatureSet::single(s.iter().copied().collect()).unwrap();
        let x = DVector::from_fn(p, |_, _| normal(&mut rng) * 2.0);
        let base = nmf_score(x.as_slice(), &cov, &sig).unwrap();
        ensure((0.0..=1.0).contains(&base), || {
            format!("trial {trial}: nmf {base} outside [0,1]")
        })?;

        let c: f64 = if rng.random::<bool>() { 1.0 } else { -1.0 } * rng.random_range(0.1..10.0);
        let xs = &mu + (&x - &mu) * c;
        let scaled_sig = SignatureSet::single(s.iter().map(|v| v * c).collect()).unwrap();
        let v1 = nmf_score(xs.as_slice(), &cov, &sig).unwrap();
        let v2 = nmf_score(x.as_slice(), &cov, &scaled_sig).unwrap();

        let m = DMatrix::identity(p, p) + DMatrix::from_fn(p, p, |_, _| 0.3 * normal(&mut rng));
        let cov_m = CovModel::from_covariance(&m * &mu, &m * &sigma * m.transpose(), 0.0).unwrap();
        let sig_m = SignatureSet::single((&m * &s).iter().copied().collect()).unwrap();
        let v3 = nmf_score((&m * &x).as_slice(), &cov_m, &sig_m).unwrap();
        for v in [v1, v2, v3] {
            worst_invariance = worst_invariance.max((v - base).abs());
        }

        let d = 2;
        let b = DMatrix::from_fn(p, d, |_, _| normal(&mut rng));
        let sub = SubspaceModel::from_span(mu.clone(), &b).unwrap();
        let nss = nss_score(x.as_slice(), &sub, &sig).unwrap();
        ensure(nss >= 1.0, || format!("trial {trial}: nss {nss} < 1"))?;
        let coef = DVector::from_fn(d, |_, _| normal(&mut rng));
        let shifted = nss_score((&x + &b * &coef).as_slice(), &sub, &sig).unwrap();
        worst_nss = worst_nss.max((shifted - nss).abs() / nss.max(1.0));

        let g = rng.random_range(0.0..5.0);
        let composite = &mu + &s * g + &b * &coef;
        let lc = lc_score(composite.as_slice(), &sub, &sig, PlumeSign::Positive).unwrap();
        worst_lc = worst_lc.max((lc - g).abs());
    }
    ensure(worst_invariance <= 1e-8, || {
        format!("nmf invariance error {worst_invariance:e}")
    })?;
    ensure(worst_nss <= 1e-8, || {
        format!("nss shift invariance error {worst_nss:e}")
    })?;
    ensure(worst_lc <= 1e-8, || {
        format!("lc recovery error {worst_lc:e}")
    })?;
    let t = within("property suite", 30.0, start)?;
    Ok(format!(
        "{trials} trials; max errors nmf {worst_invariance:.1e}, nss {worst_nss:.1e}, lc {worst_lc:.1e} ({t:.2} s)"
    ))
}

fn diag_cov(mean: &[f64], sd: &[f64]) -> CovModel {
    let var: Vec<f64> = sd.iter().map(|s| s * s).collect();
    let delta = percentile(&var, 50.0);
    CovModel::from_covariance(
        DVector::from_column_slice(mean),
        DMatrix::from_diagonal(&DVector::from_vec(var)),
        delta,
    )
    .unwrap()
}

fn c3_gaussian() -> Outcome {
    let start = Instant::now();
    let spec = SceneSpec::gaussian();
    let scene = gen_gaussian_scene(&spec, 42).unwrap();
    let (cube, _, mask) = scene.to_cube(100).unwrap();
    let p = scene.wavenumbers.len();

    // mixture from the generating parameters vs one Gaussian with their
    // averaged mean and covariance
    let n: usize = spec.region_counts.iter().sum();
    let comps = (0..3)
        .map(|i| {
            GaussianComponent::new(
                spec.region_counts[i] as f64 / n as f64,
                diag_cov(&spec.means[i], &scene.region_sd[i]),
            )
        })
        .collect();
    let mix = BackgroundModel::Gaussian(GaussianMixture::new(comps).unwrap());
    let det = MixtureDetector::new(
        &mix,
        &scene.signatures,
        DetectorKind::Nmf,
        PlumeSign::Positive,
    )
    .unwrap();
    let auc_mix = auc(
        &score_cube(&det, &cube, ExecMode::default()).unwrap(),
        &mask,
    );
    let mbar: Vec<f64> = (0..p)
        .map(|j| spec.means.iter().map(|m| m[j]).sum::<f64>() / 3.0)
        .collect();
    let sbar: Vec<f64> = (0..p)
        .map(|j| (scene.region_sd.iter().map(|s| s[j] * s[j]).sum::<f64>() / 3.0).sqrt())
        .collect();
    let single =
        plume_core::detectors::NmfDetector::new(&diag_cov(&mbar, &sbar), &scene.signatures)
            .unwrap();
    let auc_single = auc(
        &score_cube(&single, &cube, ExecMode::default()).unwrap(),
        &mask,
    );

    // fitted chain
    let fitted = pipeline_auc(
        &scene,
        detection(ModelKind::Gaussian, DetectorKind::Nmf, 3, 2),
        EnhanceConfig::default(),
    );
    let auc_fitted = fitted[0].1;

    ensure(auc_fitted >= 0.95, || {
        format!("fitted mixNMF AUC {auc_fitted:.4} < 0.95")
    })?;
    ensure(auc_mix >= 0.95, || {
        format!("mixNMF AUC {auc_mix:.4} < 0.95")
    })?;
    ensure(auc_mix > auc_single, || {
        format!("mixNMF {auc_mix:.4} not above single NMF {auc_single:.4}")
    })?;
    for (name, frozen, got) in [
        ("mixNMF", FROZEN_MIX_NMF_AUC, auc_mix),
        ("single", FROZEN_SINGLE_NMF_AUC, auc_single),
    ] {
        ensure((got - frozen).abs() <= FROZEN_TOL, || {
            format!("{name} AUC {got} drifted from frozen {frozen}")
        })?;
    }
    let t = within("gaussian replication", 60.0, start)?;
    Ok(format!(
        "mixNMF {auc_mix:.6} > single NMF {auc_single:.6}; fitted K=3 mixNMF {auc_fitted:.4} ({t:.2} s)"
    ))
}

fn c4_subspace() -> Outcome {
    let start = Instant::now();
    let scene = gen_subspace_scene(&SceneSpec::subspace(), 42).unwrap();
    let mix = pipeline_auc(
        &scene,
        detection(ModelKind::Subspace, DetectorKind::Nss, 3, 1),
        EnhanceConfig::default(),
    )[0]
    .1;
    let single = pipeline_auc(
        &scene,
        detection(ModelKind::Subspace, DetectorKind::Nss, 1, 1),
        EnhanceConfig::default(),
    )[0]
    .1;
    ensure(mix >= 0.95, || format!("mixNSS AUC {mix:.4} < 0.95"))?;
    ensure(mix > single, || {
        format!("mixNSS {mix:.4} not above single NSS {single:.4}")
    })?;
    let t = within("subspace replication", 60.0, start)?;
    Ok(format!(
        "mixNSS(K=3,d=1) {mix:.4} > single NSS {single:.4} ({t:.2} s)"
    ))
}

fn c5_poisson() -> Outcome {
    let start = Instant::now();
    let scene = gen_poisson_scene(&SceneSpec::poisson(), 42).unwrap();
    let enhance = EnhanceConfig {
        tau2: 0.2,
        tau3: 0.2,
        plsr_components: Some(5),
        ..EnhanceConfig::default()
    };
    let stages = pipeline_auc(
        &scene,
        detection(ModelKind::Gaussian, DetectorKind::Nmf, 1, 2),
        enhance,
    );
    let (before, after) = (stages[0].1, stages.last().unwrap().1);
    ensure(stages.last().unwrap().0 == "plsr", || {
        "PLS stage missing".into()
    })?;
    ensure(after >= before, || {
        format!("after PLSR {after:.4} < before {before:.4}")
    })?;
    let t = within("poisson replication", 60.0, start)?;
    Ok(format!(
        "ACE {before:.4} -> after PLSR {after:.4} ({t:.2} s)"
    ))
}

fn c6_two_plume() -> Outcome {
    let start = Instant::now();
    let scene = gen_two_plume_scene(&SceneSpec::two_plume(), 42).unwrap();
    let nmf = pipeline_auc(
        &scene,
        detection(ModelKind::Gaussian, DetectorKind::Nmf, 3, 2),
        EnhanceConfig::default(),
    )[0]
    .1;
    let nss = pipeline_auc(
        &scene,
        detection(ModelKind::Subspace, DetectorKind::Nss, 3, 0),
        EnhanceConfig::default(),
    )[0]
    .1;
    ensure(nmf >= 0.95, || {
        format!("multi-signature mixNMF AUC {nmf:.4} < 0.95")
    })?;
    ensure(nss >= 0.95, || {
        format!("multi-signature mixNSS AUC {nss:.4} < 0.95")
    })?;
    let t = within("two-plume replication", 60.0, start)?;
    Ok(format!(
        "mixNMF {nmf:.4}, mixNSS(K=3,d=0) {nss:.4} ({t:.2} s)"
    ))
}

fn c7_chain() -> Outcome {
    let start = Instant::now();
    let scene = gen_gaussian_scene(&SceneSpec::gaussian(), 42).unwrap();
    let enhance = EnhanceConfig {
        resample_rounds: 2,
        plsr_components: Some(5),
        ..EnhanceConfig::default()
    };
    let stages = pipeline_auc(
        &scene,
        detection(ModelKind::Gaussian, DetectorKind::Nmf, 3, 2),
        enhance,
    );
    let get = |name: &str| {
        stages
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, a)| *a)
            .unwrap()
    };
    let (base, rs1, rs2, plsr) = (get("detect"), get("rs1"), get("rs2"), get("plsr"));
    ensure(rs1 >= base - 0.01, || {
        format!("mixNMF-rs {rs1:.4} < mixNMF {base:.4} - 0.01")
    })?;
    ensure(plsr >= base, || {
        format!("mixNMF-rs2-plsr {plsr:.4} < mixNMF {base:.4}")
    })?;
    let t = start.elapsed().as_secs_f64();
    Ok(format!(
        "mixNMF {base:.4}, rs {rs1:.4}, rs2 {rs2:.4}, rs2-plsr {plsr:.4} ({t:.2} s)"
    ))
}

fn c8_gmra() -> Outcome {
    let start = Instant::now();
    // geometry on a noisy circle
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let circle = DMatrix::from_fn(8_000, 10, |_, _| 0.0);
    let circle = {
        let mut m = circle;
        for i in 0..m.nrows() {
            let t: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            for j in 0..10 {
                let base = match j {
                    0 => t.cos(),
                    1 => t.sin(),
                    _ => 0.0,
                };
                m[(i, j)] = base + 0.01 * normal(&mut rng);
            }
        }
        m
    };
    let cfg = GmraConfig {
        min_leaf: 20,
        dim_rule: 0.5,
        ..GmraConfig::default()
    };
    let tree = build_gmra(&circle, &cfg).unwrap();
    let mut worst_pyth: f64 = 0.0;
    for j in 0..=tree.depth() {
        for i in (0..circle.nrows()).step_by(37) {
            let x: Vec<f64> = circle.row(i).iter().copied().collect();
            let t = tree.transform(&x, j);
            let c = &tree.node(t.node).center;
            let dist2: f64 = x.iter().zip(c.iter()).map(|(a, b)| (a - b).powi(2)).sum();
            let parts: f64 =
                t.coefficients.iter().map(|v| v * v).sum::<f64>() + t.residual * t.residual;
            worst_pyth = worst_pyth.max((dist2 - parts).abs());
        }
    }
    ensure(worst_pyth <= 1e-8, || {
        format!("Pythagoras error {worst_pyth:e}")
    })?;
    let errors: Vec<f64> = (0..=tree.depth())
        .map(|j| tree.reconstruction_error(&circle, j))
        .collect();
    ensure(errors.windows(2).all(|w| w[1] <= w[0]), || {
        format!("reconstruction error not monotone: {errors:?}")
    })?;

    // ball probability for a 1-D Gaussian embedded in R^5
    let line = DMatrix::from_fn(
        20_000,
        5,
        |_, j| if j == 0 { normal(&mut rng) } else { 0.0 },
    );
    let val = DMatrix::from_fn(500, 5, |_, j| if j == 0 { normal(&mut rng) } else { 0.0 });
    let one = GmraConfig {
        min_leaf: 20_000,
        ..GmraConfig::default()
    };
    let lt = build_gmra(&line, &one).unwrap();
    let lm = fit_density(&lt, &line, &val).unwrap();
    let pi_sum: f64 = lm.densities().iter().map(|d| d.weight).sum();
    ensure((pi_sum - 1.0).abs() <= 1e-12, || {
        format!("weights sum to {pi_sum}")
    })?;
    let mc = 10_000;
    let (x0, r) = (0.4, 0.8);
    let est = ball_probability(&[x0, 0.0, 0.0, 0.0, 0.0], r, &lm, mc, 5).unwrap();
    let truth = std_normal_cdf(x0 + r) - std_normal_cdf(x0 - r);
    let se = (truth * (1.0 - truth) / mc as f64).sqrt();
    ensure((est - truth).abs() <= 3.0 * se, || {
        format!("ball probability {est} vs {truth} (se {se:.4})")
    })?;

    // movie: fit on a clean frame, score a plume frame
    let movie = MovieSpec {
        seed: 42,
        ..MovieSpec::default()
    };
    let train = movie_frame(&movie, 0).unwrap();
    let test = movie_frame(&movie, 3).unwrap();
    let fit_start = Instant::now();
    let model = fit_gmra(
        &train.cube.to_matrix(),
        &GmraConfig {
            seed: 42,
            ..GmraConfig::default()
        },
    )
    .unwrap();
    let fit_time = within("GMRA fit", 120.0, fit_start)?;
    let score_start = Instant::now();
    let ll = model.score_cube(&test.cube, ExecMode::default()).unwrap();
    let score_time = within("GMRA frame scoring", 10.0, score_start)?;
    let neg: Vec<f64> = ll.values().iter().map(|v| -v).collect();
    let movie_auc = roc_values(&neg, test.mask.values()).unwrap().auc;
    ensure(movie_auc >= 0.95, || {
        format!("movie anomaly AUC {movie_auc:.4} < 0.95")
    })?;
    let t = start.elapsed().as_secs_f64();
    Ok(format!(
        "pythagoras {worst_pyth:.1e}, pi sum {pi_sum}, ball {est:.4} vs {truth:.4} (3se {:.4}), movie AUC {movie_auc:.4}, \
         fit {fit_time:.1} s, score {score_time:.2} s, scale {} ({t:.1} s total)",
        3.0 * se,
        model.scale()
    ))
}

fn std_normal_cdf(x: f64) -> f64 {
    // composite Simpson on [0, |x|]
    let n = 20_000;
    let a = x.abs();
    let h = a / n as f64;
    let f = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = f(0.0) + f(a);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    let half = s * h / 3.0;
    if x >= 0.0 {
        0.5 + half
    } else {
        0.5 - half
    }
}

// ---------------------------------------------------------------------------
// determinism through the binary

fn plume(args: &[&str]) -> Result<(), String> {
    plume_env(args, &[])
}

fn plume_env(args: &[&str], env: &[(&str, &str)]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_plume"))
        .args(args)
        .envs(env.iter().copied())
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "plume {}: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

/// Output files of a run directory, excluding manifests.
fn outputs(dir: &Path) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| !p.to_string_lossy().ends_with(".manifest.json"))
        .collect();
    files.sort();
    files
}

fn same_outputs(a: &Path, b: &Path) -> Result<usize, String> {
    let (fa, fb) = (outputs(a), outputs(b));
    let names = |v: &[PathBuf]| {
        v.iter()
            .map(|p| p.file_name().unwrap().to_owned())
            .collect::<Vec<_>>()
    };
    ensure(names(&fa) == names(&fb), || {
        format!("{} and {} hold different files", a.display(), b.display())
    })?;
    for (x, y) in fa.iter().zip(&fb) {
        ensure(
            std::fs::read(x).unwrap() == std::fs::read(y).unwrap(),
            || format!("{} differs on replay", x.display()),
        )?;
    }
    Ok(fa.len())
}

fn replay_matches(dir: &Path, sub: &str, scratch: &Path) -> Result<usize, String> {
    let manifest = dir.join(format!("{sub}.manifest.json"));
    let again = scratch.join(format!(
        "replay_{}",
        dir.file_name().unwrap().to_string_lossy()
    ));
    plume(&[
        "replay",
        manifest.to_str().unwrap(),
        "-o",
        again.to_str().unwrap(),
    ])?;
    same_outputs(dir, &again)
}

fn c9_determinism() -> Outcome {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = |name: &str| tmp.path().join(name);
    let s = |p: PathBuf| p.to_string_lossy().into_owned();

    plume_env(
        &["synth", "gauss", "-o", &s(d("gauss"))],
        &[("PLUME_SEED", "42")],
    )?;
    plume(&[
        "synth",
        "movie",
        "--seed",
        "7",
        "--frames",
        "3",
        "-o",
        &s(d("movie")),
    ])?;
    let cube = s(d("gauss").join("cube"));
    let sigs = s(d("gauss").join("signatures.csv"));
    plume(&["fit", "--cube", &cube, "-o", &s(d("fit"))])?;
    plume(&[
        "detect",
        "--cube",
        &cube,
        "--signatures",
        &sigs,
        "--resample-rounds",
        "2",
        "--plsr-components",
        "5",
        "-o",
        &s(d("detect")),
    ])?;
    plume(&[
        "detect",
        "--threads",
        "1",
        "--cube",
        &cube,
        "--signatures",
        &sigs,
        "--resample-rounds",
        "2",
        "--plsr-components",
        "5",
        "-o",
        &s(d("detect_t1")),
    ])?;
    plume(&[
        "detect",
        "--threads",
        "4",
        "--cube",
        &cube,
        "--signatures",
        &sigs,
        "--resample-rounds",
        "2",
        "--plsr-components",
        "5",
        "-o",
        &s(d("detect_t4")),
    ])?;
    plume(&[
        "enhance",
        "--cube",
        &cube,
        "--signatures",
        &sigs,
        "--scores",
        &s(d("detect").join("stage_detect")),
        "--plsr-components",
        "5",
        "-o",
        &s(d("enhance")),
    ])?;
    plume(&[
        "anomaly",
        "--train",
        &s(d("movie").join("frame_000")),
        "--test",
        &s(d("movie").join("frame_002")),
        "--max-depth",
        "4",
        "--seed",
        "3",
        "-o",
        &s(d("anomaly")),
    ])?;
    plume(&[
        "roc",
        "--scores",
        &s(d("detect").join("scores")),
        "--mask",
        &s(d("gauss").join("truth")),
        "--labels",
        &s(d("gauss").join("labels")),
        "-o",
        &s(d("roc")),
    ])?;

    let mut files = 0;
    for (dir, sub) in [
        ("gauss", "synth"),
        ("movie", "synth"),
        ("fit", "fit"),
        ("detect", "detect"),
        ("enhance", "enhance"),
        ("anomaly", "anomaly"),
        ("roc", "roc"),
    ] {
        files += replay_matches(&d(dir), sub, tmp.path())?;
    }
    let t1 = read_score_map(d("detect_t1").join("scores")).map_err(|e| e.to_string())?;
    let t4 = read_score_map(d("detect_t4").join("scores")).map_err(|e| e.to_string())?;
    ensure(t1 == t4, || {
        "score maps differ between --threads 1 and --threads 4".into()
    })?;
    same_outputs(&d("detect_t1"), &d("detect_t4"))?;

    // library level: thread count and sequential fallback
    let scene = gen_two_plume_scene(&SceneSpec::two_plume(), 9).unwrap();
    let (cube, _, _) = scene.to_cube(100).unwrap();
    let spec = detection(ModelKind::Subspace, DetectorKind::Lc, 3, 2);
    let all: Vec<usize> = (0..cube.pixels()).collect();
    let model = spec.fit(&cube, &all).unwrap();
    let seq = spec
        .score(&cube, &model, &scene.signatures, ExecMode::Sequential)
        .unwrap();
    for threads in [1, 2, 3, 8] {
        let par = with_threads(threads, || {
            spec.score(&cube, &model, &scene.signatures, ExecMode::Parallel)
                .unwrap()
        });
        ensure(par == seq, || {
            format!("parallel map with {threads} threads differs from sequential")
        })?;
    }
    let t = start.elapsed().as_secs_f64();
    Ok(format!(
        "7 runs replayed bitwise ({files} files), thread counts 1/2/3/4/8 identical ({t:.1} s)"
    ))
}

fn c10_plsr() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst: f64 = 0.0;
    for trial in 0..50 {
        let p = rng.random_range(2..8);
        let n = rng.random_range(p + 5..60);
        let x = DMatrix::from_fn(n, p, |_, _| normal(&mut rng));
        let beta = DVector::from_fn(p, |_, _| normal(&mut rng));
        let y: Vec<f64> = (0..n)
            .map(|i| (x.row(i) * &beta)[0] + 0.3 + 0.1 * normal(&mut rng))
            .collect();
        let model = fit_plsr(&x, &y, p).map_err(|e| format!("trial {trial}: {e}"))?;

        // least squares with an intercept column via SVD
        let mut design = DMatrix::from_element(n, p + 1, 1.0);
        design.view_mut((0, 1), (n, p)).copy_from(&x);
        let coef = design
            .svd(true, true)
            .solve(&DVector::from_vec(y.clone()), 1e-14)
            .map_err(|e| e.to_string())?;
        for i in 0..n {
            let ols = coef[0] + (0..p).map(|j| coef[j + 1] * x[(i, j)]).sum::<f64>();
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            worst = worst.max((model.predict(&row) - ols).abs());
        }
    }
    ensure(worst <= 1e-6, || format!("max |PLS - OLS| = {worst:e}"))?;
    let t = start.elapsed().as_secs_f64();
    Ok(format!(
        "50 problems, max |PLS - OLS| = {worst:.1e} ({t:.3} s)"
    ))
}

fn c11_roc() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut done = 0;
    while done < 100 {
        let n = rng.random_range(2..30);
        let scores: Vec<f64> = (0..n)
            .map(|_| f64::from(rng.random_range(0..8u8)) / 4.0)
            .collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
        if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
            continue;
        }
        let (mut twice, mut pos, mut neg) = (0u64, 0u64, 0u64);
        for i in 0..n {
            if labels[i] {
                pos += 1;
                for j in 0..n {
                    if !labels[j] {
                        twice += match scores[i].partial_cmp(&scores[j]).unwrap() {
                            std::cmp::Ordering::Greater => 2,
                            std::cmp::Ordering::Equal => 1,
                            std::cmp::Ordering::Less => 0,
                        };
                    }
                }
            } else {
                neg += 1;
            }
        }
        let brute = twice as f64 / (2 * pos * neg) as f64;
        let got = roc_values(&scores, &labels).unwrap().auc;
        ensure(got == brute, || {
            format!("set {done}: AUC {got} vs pair count {brute}")
        })?;
        done += 1;
    }
    let t = start.elapsed().as_secs_f64();
    Ok(format!(
        "100 sets equal to pair counting with half ties ({t:.3} s)"
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("detector golden values", c1_golden),
        ("detector property suite", c2_properties),
        ("gaussian mixture replication", c3_gaussian),
        ("subspace mixture replication", c4_subspace),
        ("PLSR enhancement replication", c5_poisson),
        ("two-plume replication", c6_two_plume),
        ("enhancement chain monotonicity", c7_chain),
        ("GMRA suite", c8_gmra),
        ("determinism", c9_determinism),
        ("PLSR oracle", c10_plsr),
        ("ROC oracle", c11_roc),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if only.is_some_and(|k| k != i + 1) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS criterion {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {:>2} {name}: {why}", i + 1);
            }
        }
    }
    if failed == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criteria failed");
        ExitCode::FAILURE
    }
}
