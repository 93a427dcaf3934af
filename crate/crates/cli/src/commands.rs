use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use clap::{Args, ValueEnum};
use nalgebra::DMatrix;
use plume_core::cube::{
    read_cube, read_labels, read_mask, read_score_map, read_signatures, write_cube, write_labels,
    write_mask, write_score_map, HyperCube, SignatureSet,
};
use plume_core::detectors::{DetectorKind, PlumeSign};
use plume_core::enhance::{
    plsr_enhance, remove_outliers, resample_enhance, DetectionSpec, EnhanceConfig,
};
use plume_core::eval::{group_summary, roc};
use plume_core::gmra::{
    detect_anomalies, fit_gmra, AnomalyConfig, Cutoff, GmraConfig, GmraDensityModel,
};
use plume_core::mixture::{BackgroundModel, BackgroundSpec, ModelKind};
use plume_core::par::ExecMode;
use plume_core::pipeline::{run_pipeline, PipelineConfig, Scenario};
use plume_core::synth::{
    gen_gaussian_scene, gen_poisson_scene, gen_subspace_scene, gen_two_plume_scene, movie_frame,
    reference_signatures, MovieSpec, SceneSpec,
};
use plume_core::ScoreMap;
use serde::{Deserialize, Serialize};

use crate::manifest::Run;

/// Flag combinations rejected before any work starts (exit status 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn parse_sign(s: &str) -> Result<PlumeSign, String> {
    match s {
        "+" | "positive" | "pos" => Ok(PlumeSign::Positive),
        "-" | "negative" | "neg" => Ok(PlumeSign::Negative),
        other => Err(format!("expected '+' or '-', got '{other}'")),
    }
}

/// Input paths are stored absolute so a manifest replays from any directory.
fn absolute(path: &Path) -> Result<PathBuf> {
    std::path::absolute(path).with_context(|| format!("resolving {}", path.display()))
}

fn absolute_all(paths: &mut [PathBuf]) -> Result<()> {
    for p in paths.iter_mut() {
        *p = absolute(p)?;
    }
    Ok(())
}

fn load_cube(run: &mut Run, path: &Path) -> Result<HyperCube> {
    run.input(path);
    read_cube(path).with_context(|| format!("reading cube {}", path.display()))
}

fn load_signatures(run: &mut Run, path: &Path, cube: &HyperCube) -> Result<SignatureSet> {
    run.input(path);
    let set =
        read_signatures(path).with_context(|| format!("reading signatures {}", path.display()))?;
    ensure!(
        set.bands() == cube.bands(),
        "signature file {} has {} bands, cube has {}",
        path.display(),
        set.bands(),
        cube.bands()
    );
    Ok(set)
}

fn save_scores(run: &mut Run, map: &ScoreMap, name: &str) -> Result<()> {
    let base = run.path(name);
    write_score_map(map, &base)?;
    let (h, d) = plume_core::cube::score_paths(&base);
    run.output(h);
    run.output(d);
    Ok(())
}

fn frame_name(prefix: &str, k: usize) -> String {
    format!("{prefix}_{k:03}")
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Gauss,
    Subspace,
    Poisson,
    Twoplume,
    Movie,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(value_enum)]
    pub experiment: Experiment,
    #[arg(long, env = "PLUME_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Columns of the packed scene cube.
    #[arg(long, default_value_t = 100)]
    pub cols: usize,
    /// Movie only: number of frames.
    #[arg(long, default_value_t = 6)]
    pub frames: usize,
    /// Movie only: first frame containing the plume.
    #[arg(long, default_value_t = 2)]
    pub plume_start: usize,
    #[arg(short, long)]
    pub out: PathBuf,
}

pub fn synth(args: &SynthArgs, run: &mut Run) -> Result<()> {
    if args.experiment == Experiment::Movie {
        let spec = MovieSpec {
            frames: args.frames,
            plume_start: args.plume_start,
            seed: args.seed,
            ..MovieSpec::default()
        };
        for k in 0..spec.frames {
            let frame = movie_frame(&spec, k)?;
            let (cube, mask) = (
                run.path(&frame_name("frame", k)),
                run.path(&frame_name("truth", k)),
            );
            write_cube(&frame.cube, &cube)?;
            write_mask(&frame.mask, &mask)?;
            let (h, d) = plume_core::cube::cube_paths(&cube);
            let (mh, md) = plume_core::cube::mask_paths(&mask);
            run.outputs.extend([h, d, mh, md]);
            if k == 0 {
                let wn = frame.cube.wavenumbers().to_vec();
                let [s1, _] = reference_signatures(&wn);
                let set = SignatureSet::from_columns(wn, &[("s1".to_string(), s1)])?;
                let path = run.path("signatures.csv");
                plume_core::cube::write_signatures(&set, &path)?;
                run.output(path);
            }
        }
        run.lap("generate");
        run.note("pixels_per_frame", spec.rows * spec.cols);
        return Ok(());
    }

    let scene = match args.experiment {
        Experiment::Gauss => gen_gaussian_scene(&SceneSpec::gaussian(), args.seed)?,
        Experiment::Subspace => gen_subspace_scene(&SceneSpec::subspace(), args.seed)?,
        Experiment::Poisson => gen_poisson_scene(&SceneSpec::poisson(), args.seed)?,
        Experiment::Twoplume => gen_two_plume_scene(&SceneSpec::two_plume(), args.seed)?,
        Experiment::Movie => unreachable!(),
    };
    run.lap("generate");
    let (cube, labels, mask) = scene.to_cube(args.cols)?;
    let base = run.path("cube");
    write_cube(&cube, &base)?;
    let (h, d) = plume_core::cube::cube_paths(&base);
    run.outputs.extend([h, d]);
    let base = run.path("truth");
    write_mask(&mask, &base)?;
    let (h, d) = plume_core::cube::mask_paths(&base);
    run.outputs.extend([h, d]);
    let base = run.path("labels");
    write_labels(&labels, &base)?;
    let (h, d) = plume_core::cube::label_paths(&base);
    run.outputs.extend([h, d]);
    let path = run.path("signatures.csv");
    plume_core::cube::write_signatures(&scene.signatures, &path)?;
    run.output(path);
    run.lap("write");
    run.note("pixels", cube.pixels());
    run.note("label_counts", scene.histogram());
    Ok(())
}

// ---------------------------------------------------------------------------
// background model flags shared by fit / detect / enhance
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ModelArgs {
    #[arg(long, default_value = "nmf")]
    pub detector: DetectorKind,
    /// Background model: gaussian or subspace. Defaults to the one the
    /// detector needs.
    #[arg(long)]
    pub model: Option<ModelKind>,
    #[arg(short = 'K', long = "components", default_value_t = 3)]
    pub k: usize,
    /// Subspace dimension.
    #[arg(short = 'd', long = "dim", default_value_t = 2)]
    pub d: usize,
    #[arg(long, value_parser = parse_sign, default_value = "+")]
    pub sign: PlumeSign,
    #[arg(long, env = "PLUME_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 50.0)]
    pub delta_percentile: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
}

impl ModelArgs {
    pub fn resolve(&mut self) {
        if self.model.is_none() {
            self.model = Some(match self.detector {
                DetectorKind::Nmf => ModelKind::Gaussian,
                DetectorKind::Nss | DetectorKind::Lc => ModelKind::Subspace,
            });
        }
    }

    pub fn spec(&self) -> Result<DetectionSpec> {
        let spec = DetectionSpec {
            background: BackgroundSpec {
                kind: self.model.expect("resolved before use"),
                components: self.k,
                dim: self.d,
                seed: self.seed,
                max_iter: self.max_iter,
                delta_percentile: self.delta_percentile,
            },
            detector: self.detector,
            sign: self.sign,
        };
        if self.k == 0 {
            return Err(usage("-K must be at least 1"));
        }
        if !(0.0..=100.0).contains(&self.delta_percentile) {
            return Err(usage("--delta-percentile must lie in [0, 100]"));
        }
        spec.validate().map_err(|e| usage(e.to_string()))?;
        Ok(spec)
    }
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FitArgs {
    #[arg(long)]
    pub cube: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 0.01)]
    pub outlier_frac: f64,
    #[arg(short, long)]
    pub out: PathBuf,
}

impl FitArgs {
    pub fn resolve(&mut self) -> Result<()> {
        self.model.resolve();
        self.cube = absolute(&self.cube)?;
        Ok(())
    }
}

pub fn fit(args: &FitArgs, run: &mut Run) -> Result<()> {
    let spec = args.model.spec()?;
    let cube = load_cube(run, &args.cube)?;
    let split = remove_outliers(&cube, args.outlier_frac)?;
    run.lap("outliers");
    let model = spec.fit(&cube, &split.kept)?;
    run.lap("fit");
    let path = run.path("background.json");
    model.save(&path)?;
    run.output(path);
    run.note("removed_outliers", split.removed.len());
    run.note("weights", model.weights());
    Ok(())
}

// ---------------------------------------------------------------------------
// detect
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DetectArgs {
    /// Cube per frame, in frame order.
    #[arg(long = "cube", required = true, num_args = 1..)]
    pub cubes: Vec<PathBuf>,
    #[arg(long)]
    pub signatures: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// 1: model the cube from itself; 2: model a movie from clean frames.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub scenario: u8,
    /// Scenario 2: the first N frames are clean.
    #[arg(long, default_value_t = 2, conflicts_with = "train_frames")]
    pub clean_frames: usize,
    /// Scenario 2: explicit clean frame indices.
    #[arg(long, value_delimiter = ',')]
    pub train_frames: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0.2)]
    pub tau1: f64,
    #[arg(long, default_value_t = 0.15)]
    pub tau2: f64,
    #[arg(long, default_value_t = 0.15)]
    pub tau3: f64,
    #[arg(long, default_value_t = 0)]
    pub resample_rounds: usize,
    #[arg(long)]
    pub plsr_components: Option<usize>,
    #[arg(long, default_value_t = 0.01)]
    pub outlier_frac: f64,
    /// Score with a saved background instead of fitting one.
    #[arg(long, conflicts_with_all = ["resample_rounds", "plsr_components"])]
    pub background: Option<PathBuf>,
    #[arg(short, long)]
    pub out: PathBuf,
}

impl DetectArgs {
    pub fn resolve(&mut self) -> Result<()> {
        self.model.resolve();
        absolute_all(&mut self.cubes)?;
        self.signatures = absolute(&self.signatures)?;
        if let Some(b) = &self.background {
            self.background = Some(absolute(b)?);
        }
        if self.scenario == 2 && self.train_frames.is_none() {
            self.train_frames = Some((0..self.clean_frames).collect());
        }
        Ok(())
    }
}

pub fn detect(args: &DetectArgs, run: &mut Run, mode: ExecMode) -> Result<()> {
    let spec = args.model.spec()?;
    let frames = args
        .cubes
        .iter()
        .map(|p| load_cube(run, p))
        .collect::<Result<Vec<_>>>()?;
    let signatures = load_signatures(run, &args.signatures, &frames[0])?;
    run.lap("read");

    if let Some(path) = &args.background {
        run.input(path);
        let model = BackgroundModel::load(path)?;
        ensure!(
            model.kind().supports(spec.detector),
            "detector {} cannot run on the {:?} background in {}",
            spec.detector,
            model.kind(),
            path.display()
        );
        for (k, frame) in frames.iter().enumerate() {
            let map = spec.score(frame, &model, &signatures, mode)?;
            save_scores(run, &map, &frame_name("scores", k))?;
            run.lap(format!("score{k}"));
        }
        return Ok(());
    }

    let enhance = EnhanceConfig {
        outlier_fraction: args.outlier_frac,
        tau1: args.tau1,
        tau2: args.tau2,
        tau3: args.tau3,
        resample_rounds: args.resample_rounds,
        plsr_components: args.plsr_components,
    };
    let mut cfg = PipelineConfig::single(spec, enhance);
    if args.scenario == 2 {
        if args.resample_rounds > 0 || args.plsr_components.is_some() {
            return Err(usage("enhancement runs only in scenario 1"));
        }
        cfg.scenario = Scenario::Movie;
        cfg.training_frames = args.train_frames.clone().unwrap_or_default();
    }
    cfg.mode = mode;
    let output = run_pipeline(&frames, &signatures, &cfg)?;
    run.timings.extend(output.timings.iter().cloned());

    if args.scenario == 1 {
        save_scores(run, &output.maps[0], "scores")?;
        for (name, map) in &output.stages {
            save_scores(run, map, &format!("stage_{name}"))?;
        }
    } else {
        for (k, map) in output.maps.iter().enumerate() {
            save_scores(run, map, &frame_name("scores", k))?;
        }
    }
    let path = run.path("background.json");
    output.model.save(&path)?;
    run.output(path);
    run.lap("write");
    run.note("removed_outliers", output.removed_outliers);
    run.note(
        "stages",
        output
            .stages
            .iter()
            .map(|(n, _)| n.as_str())
            .collect::<Vec<_>>(),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// enhance
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EnhanceArgs {
    #[arg(long)]
    pub cube: PathBuf,
    /// Score map to enhance.
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub signatures: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 0.2)]
    pub tau1: f64,
    #[arg(long, default_value_t = 0.15)]
    pub tau2: f64,
    #[arg(long, default_value_t = 0.15)]
    pub tau3: f64,
    #[arg(long, default_value_t = 1)]
    pub resample_rounds: usize,
    #[arg(long)]
    pub plsr_components: Option<usize>,
    #[arg(long, default_value_t = 0.01)]
    pub outlier_frac: f64,
    #[arg(short, long)]
    pub out: PathBuf,
}

impl EnhanceArgs {
    pub fn resolve(&mut self) -> Result<()> {
        self.model.resolve();
        self.cube = absolute(&self.cube)?;
        self.scores = absolute(&self.scores)?;
        self.signatures = absolute(&self.signatures)?;
        Ok(())
    }
}

pub fn enhance(args: &EnhanceArgs, run: &mut Run, mode: ExecMode) -> Result<()> {
    let spec = args.model.spec()?;
    let cfg = EnhanceConfig {
        outlier_fraction: args.outlier_frac,
        tau1: args.tau1,
        tau2: args.tau2,
        tau3: args.tau3,
        resample_rounds: args.resample_rounds,
        plsr_components: args.plsr_components,
    };
    cfg.validate()?;
    ensure!(
        cfg.resample_rounds > 0 || cfg.plsr_components.is_some(),
        "nothing to do: give --resample-rounds > 0 or --plsr-components"
    );
    let cube = load_cube(run, &args.cube)?;
    let signatures = load_signatures(run, &args.signatures, &cube)?;
    run.input(&args.scores);
    let mut scores = read_score_map(&args.scores)?;
    ensure!(
        scores.rows() == cube.rows() && scores.cols() == cube.cols(),
        "score map is {}x{}, cube is {}x{}",
        scores.rows(),
        scores.cols(),
        cube.rows(),
        cube.cols()
    );
    let kept = remove_outliers(&cube, cfg.outlier_fraction)?.kept_mask(cube.pixels());
    run.lap("read");

    let mut model = None;
    for round in 1..=cfg.resample_rounds {
        let (m, s) = resample_enhance(
            &cube,
            &scores,
            &signatures,
            cfg.tau1,
            &spec,
            Some(&kept),
            mode,
        )?;
        model = Some(m);
        scores = s;
        let name = format!("rs{round}");
        save_scores(run, &scores, &format!("stage_{name}"))?;
        run.lap(name);
    }
    if let Some(l) = cfg.plsr_components {
        scores = plsr_enhance(&cube, &scores, cfg.tau2, cfg.tau3, l, Some(&kept), mode)?;
        save_scores(run, &scores, "stage_plsr")?;
        run.lap("plsr");
    }
    save_scores(run, &scores, "scores")?;
    if let Some(m) = model {
        let path = run.path("background.json");
        m.save(&path)?;
        run.output(path);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// anomaly
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct AnomalyArgs {
    /// Training frames (spectra are pooled).
    #[arg(long = "train", num_args = 1.., required_unless_present = "model_in")]
    pub train: Vec<PathBuf>,
    /// Frames to score.
    #[arg(long = "test", num_args = 1.., required = true)]
    pub test: Vec<PathBuf>,
    /// Load a saved model instead of fitting.
    #[arg(long, conflicts_with = "train")]
    pub model_in: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub min_leaf: usize,
    #[arg(long, default_value_t = 0.95)]
    pub dim_rule: f64,
    #[arg(long, default_value_t = 10)]
    pub max_dim: usize,
    #[arg(long, default_value_t = 12)]
    pub max_depth: usize,
    #[arg(long, env = "PLUME_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Flag pixels whose log-likelihood falls below this quantile of the
    /// training log-likelihoods.
    #[arg(long, conflicts_with_all = ["loglik_cutoff", "radius"])]
    pub eta: Option<f64>,
    /// Flag pixels whose log-likelihood falls below this value.
    #[arg(long, conflicts_with = "radius", allow_negative_numbers = true)]
    pub loglik_cutoff: Option<f64>,
    /// Ball rule: flag pixels with less than `--ball-mass` model
    /// probability within this radius.
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long, requires = "radius", default_value_t = 0.01)]
    pub ball_mass: f64,
    #[arg(long, requires = "radius", default_value_t = 2000)]
    pub mc_samples: usize,
    #[arg(short, long)]
    pub out: PathBuf,
}

impl AnomalyArgs {
    pub fn resolve(&mut self) -> Result<()> {
        absolute_all(&mut self.train)?;
        absolute_all(&mut self.test)?;
        if let Some(m) = &self.model_in {
            self.model_in = Some(absolute(m)?);
        }
        if self.eta.is_none() && self.loglik_cutoff.is_none() && self.radius.is_none() {
            self.eta = Some(0.01);
        }
        Ok(())
    }

    pub fn rule(&self) -> Result<AnomalyConfig> {
        let rule = match (self.eta, self.loglik_cutoff, self.radius) {
            (Some(q), None, None) => AnomalyConfig::LogLikelihood {
                cutoff: Cutoff::Quantile(q),
            },
            (None, Some(v), None) => AnomalyConfig::LogLikelihood {
                cutoff: Cutoff::Value(v),
            },
            (None, None, Some(r)) => AnomalyConfig::Ball {
                radius: r,
                eta: self.ball_mass,
                mc_samples: self.mc_samples,
                seed: self.seed,
            },
            _ => {
                return Err(usage(
                    "give exactly one of --eta, --loglik-cutoff, --radius",
                ))
            }
        };
        rule.validate().map_err(|e| usage(e.to_string()))?;
        Ok(rule)
    }
}

pub fn anomaly(args: &AnomalyArgs, run: &mut Run, mode: ExecMode) -> Result<()> {
    let rule = args.rule()?;
    let model = if let Some(path) = &args.model_in {
        run.input(path);
        GmraDensityModel::load(path)?
    } else {
        let cfg = GmraConfig {
            min_leaf: args.min_leaf,
            dim_rule: args.dim_rule,
            max_dim: args.max_dim,
            max_depth: args.max_depth,
            seed: args.seed,
        };
        cfg.validate()?;
        let frames = args
            .train
            .iter()
            .map(|p| load_cube(run, p))
            .collect::<Result<Vec<_>>>()?;
        let p = frames[0].bands();
        for (k, f) in frames.iter().enumerate() {
            ensure!(
                f.bands() == p,
                "training frame {k} has {} bands, frame 0 has {p}",
                f.bands()
            );
        }
        let rows: usize = frames.iter().map(HyperCube::pixels).sum();
        let mut data = DMatrix::zeros(rows, p);
        let mut r = 0;
        for f in &frames {
            for i in 0..f.pixels() {
                for (j, &v) in f.spectrum(i).iter().enumerate() {
                    data[(r, j)] = v as f64;
                }
                r += 1;
            }
        }
        run.lap("read");
        let model = fit_gmra(&data, &cfg)?;
        run.lap("fit");
        let base = run.path("gmra");
        model.save(&base)?;
        let (h, d) = plume_core::gmra::model_paths(&base);
        run.outputs.extend([h, d]);
        model
    };
    run.note("scale", model.scale());
    run.note("nodes", model.tree().nodes().len());
    if let AnomalyConfig::LogLikelihood {
        cutoff: Cutoff::Quantile(q),
    } = rule
    {
        run.note(
            "loglik_cutoff",
            plume_core::numerics::quantile_sorted(model.training_scores(), q),
        );
    }

    let mut flagged = Vec::new();
    for (k, path) in args.test.iter().enumerate() {
        let frame = load_cube(run, path)?;
        ensure!(
            frame.bands() == model.bands(),
            "test frame {} has {} bands, model has {}",
            path.display(),
            frame.bands(),
            model.bands()
        );
        let (scores, mask) = detect_anomalies(&frame, &model, &rule, mode)?;
        save_scores(run, &scores, &frame_name("anomaly_scores", k))?;
        let base = run.path(&frame_name("anomaly_mask", k));
        write_mask(&mask, &base)?;
        let (h, d) = plume_core::cube::mask_paths(&base);
        run.outputs.extend([h, d]);
        flagged.push(mask.count());
        run.lap(format!("score{k}"));
    }
    run.note("flagged", flagged);
    Ok(())
}

// ---------------------------------------------------------------------------
// roc
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RocArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    /// Label map for per-region box-plot summaries.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Treat low scores as positive (e.g. log-likelihoods).
    #[arg(long)]
    pub lower_is_positive: bool,
    #[arg(short, long)]
    pub out: PathBuf,
}

impl RocArgs {
    pub fn resolve(&mut self) -> Result<()> {
        self.scores = absolute(&self.scores)?;
        self.mask = absolute(&self.mask)?;
        if let Some(l) = &self.labels {
            self.labels = Some(absolute(l)?);
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct RocReport<'a> {
    auc: f64,
    positives: usize,
    negatives: usize,
    points: usize,
    quantile_convention: &'a str,
    groups: Vec<plume_core::eval::GroupSummary>,
}

pub fn roc_cmd(args: &RocArgs, run: &mut Run) -> Result<()> {
    run.input(&args.scores);
    run.input(&args.mask);
    let mut scores = read_score_map(&args.scores)?;
    let mask = read_mask(&args.mask)?;
    if args.lower_is_positive {
        scores = ScoreMap::new(
            scores.rows(),
            scores.cols(),
            scores.values().iter().map(|v| -v).collect(),
        )?;
    }
    let curve = roc(&scores, &mask)?;
    run.lap("roc");

    let mut groups = Vec::new();
    if let Some(path) = &args.labels {
        run.input(path);
        let labels = read_labels(path)?;
        ensure!(
            labels.rows() == scores.rows() && labels.cols() == scores.cols(),
            "label map does not match the score map"
        );
        groups = group_summary(scores.values(), labels.values(), labels.names())?;
    }
    let csv = run.path("roc.csv");
    curve.save_csv(&csv)?;
    run.output(csv);
    let report = RocReport {
        auc: curve.auc,
        positives: curve.positives,
        negatives: curve.negatives,
        points: curve.fpr.len(),
        quantile_convention: "linear interpolation at position q*(n-1)",
        groups,
    };
    let json = run.path("roc.json");
    std::fs::write(&json, serde_json::to_string_pretty(&report)? + "\n")
        .with_context(|| format!("writing {}", json.display()))?;
    run.output(json);
    run.note("auc", curve.auc);
    Ok(())
}
