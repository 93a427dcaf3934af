//! Per-spectrum detection statistics for a known signature set.
//!
//! * NMF (normalized matched filter, a.k.a. ACE): squared cosine between the
//!   centred spectrum and the signature span in the whitened metric.
//! * NSS: ratio of residual energy off the background subspace to residual
//!   energy off the target-plus-background subspace.
//! * LC: clamped least-squares abundance of the signature(s).
//!
//! Each detector is prepared once per background model ([`NmfDetector`],
//! [`NssDetector`], [`LcDetector`]) and then evaluated per pixel. The free
//! functions [`nmf_score`], [`nss_score`] and [`lc_score`] prepare and score
//! in one call.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cube::{HyperCube, ScoreMap, SignatureSet};
use crate::error::{Error, Result};
use crate::numerics::{orthonormalize, pseudo_inverse, CovModel, SubspaceModel};
use crate::par::{map_indices_with, ExecMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Nmf,
    Nss,
    Lc,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 3] = [DetectorKind::Nmf, DetectorKind::Nss, DetectorKind::Lc];

    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::Nmf => "nmf",
            DetectorKind::Nss => "nss",
            DetectorKind::Lc => "lc",
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nmf" | "ace" => Ok(DetectorKind::Nmf),
            "nss" => Ok(DetectorKind::Nss),
            "lc" => Ok(DetectorKind::Lc),
            other => Err(Error::invalid(format!("unknown detector '{other}'"))),
        }
    }
}

/// Which sign of abundance counts as "plume present" for LC.
///
/// Absorptive plumes observed against a warmer background show up with a
/// negative coefficient on a positive absorption signature.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlumeSign {
    #[default]
    Positive,
    Negative,
}

impl PlumeSign {
    pub fn factor(self) -> f64 {
        match self {
            PlumeSign::Positive => 1.0,
            PlumeSign::Negative => -1.0,
        }
    }
}

impl FromStr for PlumeSign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "+" | "+1" | "pos" | "positive" => Ok(PlumeSign::Positive),
            "-" | "-1" | "neg" | "negative" => Ok(PlumeSign::Negative),
            other => Err(Error::invalid(format!(
                "unknown sign '{other}', expected + or -"
            ))),
        }
    }
}

/// Anything that maps a spectrum to a scalar statistic.
pub trait SpectrumScorer: Sync {
    fn score(&self, x: &[f64]) -> f64;
}

/// Scores every pixel of `cube`.
pub fn score_cube<S: SpectrumScorer + ?Sized>(
    scorer: &S,
    cube: &HyperCube,
    mode: ExecMode,
) -> Result<ScoreMap> {
    let values = map_indices_with(mode, cube.pixels(), |i| scorer.score(&cube.spectrum_f64(i)));
    ScoreMap::new(cube.rows(), cube.cols(), values)
}

fn check_bands(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension {
            what,
            expected,
            found,
        })
    }
}

fn centered(x: &[f64], mean: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(x.len(), x.iter().zip(mean.iter()).map(|(a, m)| a - m))
}

// ---------------------------------------------------------------------------
// NMF / ACE
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct NmfDetector {
    mean: DVector<f64>,
    whitener: DMatrix<f64>,
    /// Orthonormal basis of the whitened signature span.
    target: DMatrix<f64>,
    trace_precision: f64,
}

impl NmfDetector {
    pub fn new(cov: &CovModel, signatures: &SignatureSet) -> Result<Self> {
        check_bands("signature bands", cov.bands(), signatures.bands())?;
        let whitener = cov.whitener().clone();
        let ws = &whitener * signatures.matrix();
        let target = orthonormalize(&ws, 1e-8).map_err(|_| {
            Error::RankDeficient(
                "signatures are collinear in the whitened metric (SᵀΣ̂⁻¹S singular)".into(),
            )
        })?;
        Ok(Self {
            mean: cov.mean().clone(),
            whitener,
            target,
            trace_precision: cov.precision().trace(),
        })
    }
}

impl SpectrumScorer for NmfDetector {
    fn score(&self, x: &[f64]) -> f64 {
        let xc = centered(x, &self.mean);
        let z = &self.whitener * &xc;
        let energy = z.norm_squared();
        if energy <= 1e-12 * self.trace_precision * xc.norm_squared() {
            return 0.0;
        }
        let proj = self.target.tr_mul(&z).norm_squared();
        (proj / energy).clamp(0.0, 1.0)
    }
}

/// NMF statistic of `x` against one or more signatures.
pub fn nmf_score(x: &[f64], cov: &CovModel, signatures: &SignatureSet) -> Result<f64> {
    check_bands("spectrum", cov.bands(), x.len())?;
    Ok(NmfDetector::new(cov, signatures)?.score(x))
}

// ---------------------------------------------------------------------------
// NSS
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct NssDetector {
    mean: DVector<f64>,
    basis: DMatrix<f64>,
    /// Orthonormal basis of the signature directions orthogonal to span(B),
    /// so that `[B, target]` spans `[S, B]`.
    target: DMatrix<f64>,
}

impl NssDetector {
    pub fn new(sub: &SubspaceModel, signatures: &SignatureSet) -> Result<Self> {
        check_bands("signature bands", sub.bands(), signatures.bands())?;
        let b = sub.basis();
        let s = signatures.matrix();
        let s_perp = s - b * b.tr_mul(s);
        // dependence is judged relative to the raw signature norms
        let mut scaled = s_perp.clone();
        for (mut col, orig) in scaled.column_iter_mut().zip(s.column_iter()) {
            let n = orig.norm();
            col /= n;
        }
        let target = orthonormalize(&scaled, 1e-10)
            .map_err(|_| Error::RankDeficient("[S B] does not have full column rank".into()))?;
        Ok(Self {
            mean: sub.mean().clone(),
            basis: b.clone(),
            target,
        })
    }

    /// `(‖P_b⊥ x̃‖², ‖P_tb⊥ x̃‖², ‖x̃‖²)`.
    pub fn residuals(&self, x: &[f64]) -> (f64, f64, f64) {
        let xc = centered(x, &self.mean);
        let rb = &xc - &self.basis * self.basis.tr_mul(&xc);
        let rtb = &rb - &self.target * self.target.tr_mul(&rb);
        (rb.norm_squared(), rtb.norm_squared(), xc.norm_squared())
    }
}

impl SpectrumScorer for NssDetector {
    fn score(&self, x: &[f64]) -> f64 {
        let (background, target, total) = self.residuals(x);
        let eps = if total == 0.0 { 1e-300 } else { 1e-12 * total };
        ((background + eps) / (target + eps)).max(1.0)
    }
}

/// NSS statistic of `x` against one or more signatures.
pub fn nss_score(x: &[f64], sub: &SubspaceModel, signatures: &SignatureSet) -> Result<f64> {
    check_bands("spectrum", sub.bands(), x.len())?;
    Ok(NssDetector::new(sub, signatures)?.score(x))
}

// ---------------------------------------------------------------------------
// LC
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct LcDetector {
    mean: DVector<f64>,
    /// First `N` rows of `(AᵀA)⁻¹Aᵀ`, `A = [S B]`.
    extractor: DMatrix<f64>,
    sign: PlumeSign,
}

impl LcDetector {
    pub fn new(sub: &SubspaceModel, signatures: &SignatureSet, sign: PlumeSign) -> Result<Self> {
        check_bands("signature bands", sub.bands(), signatures.bands())?;
        let n = signatures.count();
        let d = sub.dim();
        let p = sub.bands();
        if n + d > p {
            return Err(Error::RankDeficient(format!(
                "[S B] has {} columns but only {p} rows",
                n + d
            )));
        }
        let mut a = DMatrix::zeros(p, n + d);
        a.columns_mut(0, n).copy_from(signatures.matrix());
        a.columns_mut(n, d).copy_from(sub.basis());
        let mut scaled = a.clone();
        for mut col in scaled.column_iter_mut() {
            let nrm = col.norm();
            col /= nrm;
        }
        orthonormalize(&scaled, 1e-10)
            .map_err(|_| Error::RankDeficient("[S B] does not have full column rank".into()))?;
        let pinv = pseudo_inverse(&a)?;
        Ok(Self {
            mean: sub.mean().clone(),
            extractor: pinv.rows(0, n).into_owned(),
            sign,
        })
    }

    /// Raw least-squares abundances `β̂₁..β̂_N` (before sign and clamp).
    pub fn abundances(&self, x: &[f64]) -> Vec<f64> {
        let xc = centered(x, &self.mean);
        (&self.extractor * xc).iter().copied().collect()
    }

    /// Per-signature `max(sign·β̂ᵢ, 0)`.
    pub fn coefficients(&self, x: &[f64]) -> Vec<f64> {
        let f = self.sign.factor();
        self.abundances(x)
            .into_iter()
            .map(|b| (f * b).max(0.0))
            .collect()
    }
}

impl SpectrumScorer for LcDetector {
    fn score(&self, x: &[f64]) -> f64 {
        self.coefficients(x).into_iter().fold(0.0, f64::max)
    }
}

/// LC statistic: the largest clamped abundance.
pub fn lc_score(
    x: &[f64],
    sub: &SubspaceModel,
    signatures: &SignatureSet,
    sign: PlumeSign,
) -> Result<f64> {
    check_bands("spectrum", sub.bands(), x.len())?;
    Ok(LcDetector::new(sub, signatures, sign)?.score(x))
}

/// Per-signature clamped abundances.
pub fn lc_coefficients(
    x: &[f64],
    sub: &SubspaceModel,
    signatures: &SignatureSet,
    sign: PlumeSign,
) -> Result<Vec<f64>> {
    check_bands("spectrum", sub.bands(), x.len())?;
    Ok(LcDetector::new(sub, signatures, sign)?.coefficients(x))
}
