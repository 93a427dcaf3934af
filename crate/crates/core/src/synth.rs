//! Seeded synthetic scenes with known ground truth.
//!
//! The bundled reference spectra are smooth analytic stand-ins for measured
//! long-wave infrared radiance: three grey-body curves (sky coldest, ground
//! warmest) with mild spectral structure, and two absorption signatures made
//! of Gaussian bands. They can be evaluated on any wavenumber grid.
//!
//! Normal distributions are parameterised by (mean, standard deviation).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::cube::{HyperCube, LabelMap, PlumeMask, SignatureSet};
use crate::error::{Error, Result};

pub const DEFAULT_BANDS: usize = 68;
pub const WAVENUMBER_MIN: f64 = 800.0;
pub const WAVENUMBER_MAX: f64 = 1250.0;
/// Peak absorption of the bundled signatures.
pub const SIGNATURE_PEAK: f64 = 2.0;

pub const REGION_NAMES: [&str; 3] = ["sky", "mountain", "ground"];

/// `p` evenly spaced wavenumbers over the bundled band (1/cm).
pub fn reference_wavenumbers(p: usize) -> Vec<f64> {
    match p {
        0 => Vec::new(),
        1 => vec![WAVENUMBER_MIN],
        _ => (0..p)
            .map(|j| WAVENUMBER_MIN + (WAVENUMBER_MAX - WAVENUMBER_MIN) * j as f64 / (p - 1) as f64)
            .collect(),
    }
}

fn planck(nu: f64, temperature: f64) -> f64 {
    nu.powi(3) / ((1.4388 * nu / temperature).exp() - 1.0)
}

fn bump(nu: f64, center: f64, width: f64) -> f64 {
    (-((nu - center) / width).powi(2)).exp()
}

fn grey_body(wavenumbers: &[f64], temperature: f64, peak: f64) -> Vec<f64> {
    let max = wavenumbers
        .iter()
        .map(|&v| planck(v, temperature))
        .fold(0.0, f64::max);
    wavenumbers
        .iter()
        .map(|&v| peak * planck(v, temperature) / max)
        .collect()
}

/// Mean radiance of sky, mountain and ground on `wavenumbers`.
pub fn reference_means(wavenumbers: &[f64]) -> [Vec<f64>; 3] {
    let mut sky = grey_body(wavenumbers, 250.0, 0.45);
    for (v, &nu) in sky.iter_mut().zip(wavenumbers) {
        *v += 0.06 * bump(nu, 1045.0, 22.0);
    }
    let mut mountain = grey_body(wavenumbers, 285.0, 0.70);
    for (v, &nu) in mountain.iter_mut().zip(wavenumbers) {
        *v *= 1.0 - 0.06 * bump(nu, 1160.0, 45.0);
    }
    let mut ground = grey_body(wavenumbers, 305.0, 0.95);
    for (v, &nu) in ground.iter_mut().zip(wavenumbers) {
        *v *= 1.0 - 0.05 * bump(nu, 930.0, 70.0);
    }
    [sky, mountain, ground]
}

/// The two bundled absorption signatures on `wavenumbers`.
pub fn reference_signatures(wavenumbers: &[f64]) -> [Vec<f64>; 2] {
    let s1 = wavenumbers
        .iter()
        .map(|&nu| SIGNATURE_PEAK * (bump(nu, 1030.0, 14.0) + 0.7 * bump(nu, 1090.0, 18.0)))
        .collect();
    let s2 = wavenumbers
        .iter()
        .map(|&nu| SIGNATURE_PEAK * (bump(nu, 900.0, 16.0) + 0.8 * bump(nu, 1180.0, 14.0)))
        .collect();
    [s1, s2]
}

pub fn reference_signature_set(wavenumbers: &[f64]) -> Result<SignatureSet> {
    let [s1, s2] = reference_signatures(wavenumbers);
    SignatureSet::from_columns(
        wavenumbers.to_vec(),
        &[("s1".to_string(), s1), ("s2".to_string(), s2)],
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub wavenumbers: Vec<f64>,
    pub means: [Vec<f64>; 3],
    pub signatures: Vec<Vec<f64>>,
    pub signature_names: Vec<String>,
    /// Sky / mountain / ground counts.
    pub region_counts: [usize; 3],
    /// Plume spectra per signature (Poisson scene: first entry only).
    pub plume_counts: Vec<usize>,
    /// Spectra carrying every signature at once.
    pub mixed_count: usize,
    /// Poisson scene background count.
    pub background_count: usize,
    /// Gaussian scene: per-band standard deviations ~ U[low·a, high·a].
    pub noise_low: f64,
    pub noise_high: f64,
    /// Subspace scene: per-band standard deviations ~ N(0, eps_sd·a).
    pub eps_sd: f64,
    pub c_mean: f64,
    pub c_sd: f64,
    pub poisson_rate: f64,
    pub g_mean: f64,
    pub g_sd: f64,
}

impl SceneSpec {
    fn bundled(plume_counts: Vec<usize>, signatures: usize) -> Self {
        let wavenumbers = reference_wavenumbers(DEFAULT_BANDS);
        let means = reference_means(&wavenumbers);
        let sigs = reference_signatures(&wavenumbers);
        Self {
            means,
            signatures: sigs[..signatures].to_vec(),
            signature_names: ["s1", "s2"][..signatures]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            wavenumbers,
            region_counts: [5000, 5000, 4000],
            plume_counts,
            mixed_count: 0,
            background_count: 10_000,
            noise_low: 0.002,
            noise_high: 0.008,
            eps_sd: 0.005,
            c_mean: 1.0,
            c_sd: 0.01,
            poisson_rate: 0.005,
            g_mean: -0.01,
            g_sd: 0.001,
        }
    }

    pub fn gaussian() -> Self {
        Self::bundled(vec![1000], 1)
    }

    pub fn subspace() -> Self {
        Self::bundled(vec![1000], 1)
    }

    pub fn poisson() -> Self {
        Self::bundled(vec![1000], 1)
    }

    pub fn two_plume() -> Self {
        Self {
            region_counts: [5000, 5000, 5000],
            mixed_count: 100,
            ..Self::bundled(vec![1000, 1000], 2)
        }
    }

    /// Removes every random perturbation: no noise, `c` and `g` fixed at
    /// their means, Poisson rate 0.
    pub fn noise_free(mut self) -> Self {
        self.noise_low = 0.0;
        self.noise_high = 0.0;
        self.eps_sd = 0.0;
        self.c_sd = 0.0;
        self.g_sd = 0.0;
        self.poisson_rate = 0.0;
        self
    }

    pub fn bands(&self) -> usize {
        self.wavenumbers.len()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.bands();
        if p == 0 {
            return Err(Error::invalid("scene needs at least one band"));
        }
        if self.means.iter().any(|m| m.len() != p) || self.signatures.iter().any(|s| s.len() != p) {
            return Err(Error::invalid(
                "scene means and signatures must match the wavenumber count",
            ));
        }
        if self.signatures.is_empty() || self.signature_names.len() != self.signatures.len() {
            return Err(Error::invalid("scene needs named signatures"));
        }
        if self.plume_counts.is_empty() {
            return Err(Error::invalid("scene needs plume counts"));
        }
        let checks = [
            self.noise_low >= 0.0 && self.noise_high >= self.noise_low,
            self.eps_sd >= 0.0,
            self.c_sd >= 0.0,
            self.g_sd >= 0.0,
            self.poisson_rate >= 0.0,
        ];
        if checks.iter().any(|ok| !ok) {
            return Err(Error::invalid(
                "scene noise parameters must be non-negative (and low ≤ high)",
            ));
        }
        Ok(())
    }

    fn signature_set(&self) -> Result<SignatureSet> {
        let cols: Vec<(String, Vec<f64>)> = self
            .signature_names
            .iter()
            .cloned()
            .zip(self.signatures.iter().cloned())
            .collect();
        SignatureSet::from_columns(self.wavenumbers.clone(), &cols)
    }

    fn ground_max(&self) -> f64 {
        self.means[2]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Flat list of labelled spectra.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub wavenumbers: Vec<f64>,
    pub spectra: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    pub label_names: Vec<String>,
    /// Labels that count as plume-present.
    pub plume_labels: Vec<u8>,
    pub signatures: SignatureSet,
    /// Per-region per-band noise standard deviations the scene was drawn
    /// with (empty for the Poisson scene).
    pub region_sd: Vec<Vec<f64>>,
}

impl Scene {
    pub fn len(&self) -> usize {
        self.spectra.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spectra.is_empty()
    }

    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.label_names.len()];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }

    pub fn plume_truth(&self) -> Vec<bool> {
        self.labels
            .iter()
            .map(|l| self.plume_labels.contains(l))
            .collect()
    }

    /// Row-major packing into a `len/cols × cols` cube with its label map and
    /// plume mask.
    pub fn to_cube(&self, cols: usize) -> Result<(HyperCube, LabelMap, PlumeMask)> {
        if cols == 0 || !self.len().is_multiple_of(cols) {
            return Err(Error::invalid(format!(
                "{} spectra cannot be packed into rows of {cols}",
                self.len()
            )));
        }
        let rows = self.len() / cols;
        let cube = HyperCube::from_spectra(rows, cols, self.wavenumbers.clone(), &self.spectra)?;
        let labels = LabelMap::new(rows, cols, self.labels.clone(), self.label_names.clone())?;
        let mask = PlumeMask::new(rows, cols, self.plume_truth())?;
        Ok((cube, labels, mask))
    }
}

fn normal(mean: f64, sd: f64) -> Normal<f64> {
    Normal::new(mean, sd).expect("standard deviation validated non-negative")
}

fn draw_sigmas(rng: &mut ChaCha8Rng, p: usize, low: f64, high: f64) -> Vec<f64> {
    (0..p)
        .map(|_| low + (high - low) * rng.random::<f64>())
        .collect()
}

fn gaussian_draw(rng: &mut ChaCha8Rng, mean: &[f64], sigma: &[f64]) -> Vec<f64> {
    let z = normal(0.0, 1.0);
    mean.iter()
        .zip(sigma)
        .map(|(m, s)| m + s * z.sample(rng))
        .collect()
}

fn add_scaled(x: &mut [f64], g: f64, s: &[f64]) {
    for (v, si) in x.iter_mut().zip(s) {
        *v += g * si;
    }
}

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

/// Three Gaussian regions with diagonal covariances plus ground pixels
/// carrying `g·s`. Labels: sky, mountain, ground, plume.
pub fn gen_gaussian_scene(spec: &SceneSpec, seed: u64) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = spec.bands();
    let a = spec.ground_max();
    let sigmas: Vec<Vec<f64>> = (0..3)
        .map(|_| draw_sigmas(&mut rng, p, spec.noise_low * a, spec.noise_high * a))
        .collect();
    let mut spectra = Vec::new();
    let mut labels = Vec::new();
    for region in 0..3 {
        for _ in 0..spec.region_counts[region] {
            spectra.push(gaussian_draw(
                &mut rng,
                &spec.means[region],
                &sigmas[region],
            ));
            labels.push(region as u8);
        }
    }
    let g = normal(spec.g_mean, spec.g_sd);
    for _ in 0..spec.plume_counts[0] {
        let mut x = gaussian_draw(&mut rng, &spec.means[2], &sigmas[2]);
        add_scaled(&mut x, g.sample(&mut rng), &spec.signatures[0]);
        spectra.push(x);
        labels.push(3);
    }
    Ok(Scene {
        wavenumbers: spec.wavenumbers.clone(),
        spectra,
        labels,
        label_names: names(&["sky", "mountain", "ground", "plume"]),
        plume_labels: vec![3],
        signatures: spec.signature_set()?.select(&[0])?,
        region_sd: sigmas,
    })
}

/// Regions `c·μᵢ + ε` with a shared diagonal noise covariance.
/// Labels: sky, mountain, ground, plume.
pub fn gen_subspace_scene(spec: &SceneSpec, seed: u64) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = spec.bands();
    let a = spec.ground_max();
    let sd_draw = normal(0.0, spec.eps_sd * a);
    // a negative draw is a valid standard deviation once squared
    let eps_sd: Vec<f64> = (0..p).map(|_| sd_draw.sample(&mut rng).abs()).collect();
    let c = normal(spec.c_mean, spec.c_sd);
    let zero = vec![0.0; p];
    let draw = |rng: &mut ChaCha8Rng, mean: &[f64]| -> Vec<f64> {
        let cv = c.sample(rng);
        let mut x = gaussian_draw(rng, &zero, &eps_sd);
        add_scaled(&mut x, cv, mean);
        x
    };
    let mut spectra = Vec::new();
    let mut labels = Vec::new();
    for region in 0..3 {
        for _ in 0..spec.region_counts[region] {
            spectra.push(draw(&mut rng, &spec.means[region]));
            labels.push(region as u8);
        }
    }
    let g = normal(spec.g_mean, spec.g_sd);
    for _ in 0..spec.plume_counts[0] {
        let mut x = draw(&mut rng, &spec.means[2]);
        add_scaled(&mut x, g.sample(&mut rng), &spec.signatures[0]);
        spectra.push(x);
        labels.push(3);
    }
    Ok(Scene {
        wavenumbers: spec.wavenumbers.clone(),
        spectra,
        labels,
        label_names: names(&["sky", "mountain", "ground", "plume"]),
        plume_labels: vec![3],
        signatures: spec.signature_set()?.select(&[0])?,
        region_sd: vec![eps_sd; 3],
    })
}

/// Spiky background `μ + b·e`, `e_j ~ Poisson(rate)`, `μ` the mean of the
/// three regions and `b = max μ`. Labels: background, plume.
pub fn gen_poisson_scene(spec: &SceneSpec, seed: u64) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = spec.bands();
    let mu: Vec<f64> = (0..p)
        .map(|j| (spec.means[0][j] + spec.means[1][j] + spec.means[2][j]) / 3.0)
        .collect();
    let b = mu.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let poisson = (spec.poisson_rate > 0.0)
        .then(|| {
            Poisson::new(spec.poisson_rate)
                .map_err(|e| Error::invalid(format!("Poisson rate: {e}")))
        })
        .transpose()?;
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        mu.iter()
            .map(|m| m + b * poisson.as_ref().map_or(0.0, |d| d.sample(rng)))
            .collect()
    };
    let mut spectra = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..spec.background_count {
        spectra.push(draw(&mut rng));
        labels.push(0);
    }
    let g = normal(spec.g_mean, spec.g_sd);
    for _ in 0..spec.plume_counts[0] {
        let mut x = draw(&mut rng);
        add_scaled(&mut x, g.sample(&mut rng), &spec.signatures[0]);
        spectra.push(x);
        labels.push(1);
    }
    Ok(Scene {
        wavenumbers: spec.wavenumbers.clone(),
        spectra,
        labels,
        label_names: names(&["background", "plume"]),
        plume_labels: vec![1],
        signatures: spec.signature_set()?.select(&[0])?,
        region_sd: Vec::new(),
    })
}

/// Gaussian regions, ground pixels with either plume, and ground pixels with
/// both. Labels: sky, mountain, ground, plume1, plume2, both.
pub fn gen_two_plume_scene(spec: &SceneSpec, seed: u64) -> Result<Scene> {
    spec.validate()?;
    if spec.signatures.len() < 2 || spec.plume_counts.len() < 2 {
        return Err(Error::invalid(
            "two-plume scene needs two signatures and two plume counts",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = spec.bands();
    let a = spec.ground_max();
    let sigmas: Vec<Vec<f64>> = (0..3)
        .map(|_| draw_sigmas(&mut rng, p, spec.noise_low * a, spec.noise_high * a))
        .collect();
    let mut spectra = Vec::new();
    let mut labels = Vec::new();
    for region in 0..3 {
        for _ in 0..spec.region_counts[region] {
            spectra.push(gaussian_draw(
                &mut rng,
                &spec.means[region],
                &sigmas[region],
            ));
            labels.push(region as u8);
        }
    }
    let g = normal(spec.g_mean, spec.g_sd);
    for k in 0..2 {
        for _ in 0..spec.plume_counts[k] {
            let mut x = gaussian_draw(&mut rng, &spec.means[2], &sigmas[2]);
            add_scaled(&mut x, g.sample(&mut rng), &spec.signatures[k]);
            spectra.push(x);
            labels.push(3 + k as u8);
        }
    }
    for _ in 0..spec.mixed_count {
        let mut x = gaussian_draw(&mut rng, &spec.means[2], &sigmas[2]);
        add_scaled(&mut x, g.sample(&mut rng), &spec.signatures[0]);
        add_scaled(&mut x, g.sample(&mut rng), &spec.signatures[1]);
        spectra.push(x);
        labels.push(5);
    }
    Ok(Scene {
        wavenumbers: spec.wavenumbers.clone(),
        spectra,
        labels,
        label_names: names(&["sky", "mountain", "ground", "plume1", "plume2", "both"]),
        plume_labels: vec![3, 4, 5],
        signatures: spec.signature_set()?.select(&[0, 1])?,
        region_sd: sigmas,
    })
}

// ---------------------------------------------------------------------------
// Movies
// ---------------------------------------------------------------------------

/// A synthetic movie: sky / mountain / ground layout, per-pixel brightness
/// and tilt variation, white sensor noise, and from `plume_start` on a
/// drifting elliptical plume of signature `s1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovieSpec {
    pub rows: usize,
    pub cols: usize,
    pub bands: usize,
    pub frames: usize,
    pub plume_start: usize,
    /// Magnitude of the plume abundance at its centre.
    pub plume_strength: f64,
    /// Sensor noise standard deviation as a fraction of `max μ_ground`.
    pub noise: f64,
    pub seed: u64,
}

impl Default for MovieSpec {
    fn default() -> Self {
        Self {
            rows: 128,
            cols: 320,
            bands: 120,
            frames: 6,
            plume_start: 2,
            plume_strength: 0.03,
            noise: 0.003,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MovieFrame {
    pub cube: HyperCube,
    pub mask: PlumeMask,
}

fn horizon(spec: &MovieSpec, col: usize) -> (f64, f64) {
    let r = spec.rows as f64;
    let x = col as f64;
    let ridge = r * (0.32 + 0.06 * (x / 37.0).sin() + 0.03 * (x / 11.0).cos());
    let ground = r * (0.62 + 0.02 * (x / 53.0).sin());
    (ridge, ground)
}

/// Frame `index` of `spec`. Each frame has its own noise draw; the plume
/// centre drifts right by a few columns per frame.
pub fn movie_frame(spec: &MovieSpec, index: usize) -> Result<MovieFrame> {
    if spec.rows == 0 || spec.cols == 0 || spec.bands < 2 {
        return Err(Error::invalid(
            "movie needs at least 1x1 pixels and 2 bands",
        ));
    }
    if index >= spec.frames {
        return Err(Error::invalid(format!(
            "frame {index} beyond movie length {}",
            spec.frames
        )));
    }
    let wn = reference_wavenumbers(spec.bands);
    let means = reference_means(&wn);
    let [s1, _] = reference_signatures(&wn);
    let a = means[2].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tilts: Vec<Vec<f64>> = means
        .iter()
        .map(|m| {
            m.iter()
                .zip(&wn)
                .map(|(v, nu)| v * (nu - 1025.0) / 225.0)
                .collect()
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(
        spec.seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(index as u64),
    );
    let z = normal(0.0, 1.0);
    let plume_on = index >= spec.plume_start;
    let step = (index.saturating_sub(spec.plume_start)) as f64;
    let (cy, cx) = (spec.rows as f64 * 0.78, spec.cols as f64 * 0.3 + 6.0 * step);
    let (ry, rx) = (
        spec.rows as f64 * 0.1 + step,
        spec.cols as f64 * 0.08 + 2.0 * step,
    );

    let mut radiance = Vec::with_capacity(spec.rows * spec.cols * spec.bands);
    let mut mask = Vec::with_capacity(spec.rows * spec.cols);
    for r in 0..spec.rows {
        for c in 0..spec.cols {
            let (ridge, ground) = horizon(spec, c);
            let region = if (r as f64) < ridge {
                0
            } else if (r as f64) < ground {
                1
            } else {
                2
            };
            let brightness = 1.0 + 0.01 * z.sample(&mut rng);
            let tilt = 0.02 * z.sample(&mut rng);
            let d2 = ((r as f64 - cy) / ry).powi(2) + ((c as f64 - cx) / rx).powi(2);
            let inside = plume_on && d2 <= 1.0;
            let g = if inside {
                -spec.plume_strength * (1.0 - 0.5 * d2) * (1.0 + 0.1 * z.sample(&mut rng))
            } else {
                0.0
            };
            for j in 0..spec.bands {
                let v = brightness * means[region][j]
                    + tilt * tilts[region][j]
                    + g * s1[j]
                    + spec.noise * a * z.sample(&mut rng);
                radiance.push(v as f32);
            }
            mask.push(inside);
        }
    }
    Ok(MovieFrame {
        cube: HyperCube::new(spec.rows, spec.cols, wn, radiance)?,
        mask: PlumeMask::new(spec.rows, spec.cols, mask)?,
    })
}
