//! Hyperspectral plume detection.
//!
//! The crate covers the whole detection chain for long-wave infrared cubes:
//!
//! * [`cube`]: cube / signature / mask / score-map types and their binary formats.
//! * [`numerics`]: regularised covariance, PCA, least squares, PLS1, 1-D KDE.
//! * [`detectors`]: NMF (ACE), NSS and LC statistics for one or more signatures.
//! * [`mixture`]: Gaussian and subspace background mixtures and their detectors.
//! * [`enhance`]: outlier removal, resampling and PLS score enhancement.
//! * [`pipeline`]: single-cube and clean-frame movie detection runs.
//! * [`gmra`]: multiscale density model and likelihood-based anomaly detection.
//! * [`synth`]: seeded synthetic scenes with known ground truth.
//! * [`eval`]: ROC/AUC and box-plot summaries.
//!
//! Per-pixel work is data-parallel through [`par`]; disabling the default
//! `parallel` feature gives a purely sequential build with identical output.

pub mod cube;
pub mod detectors;
pub mod enhance;
pub mod error;
pub mod eval;
pub mod gmra;
pub mod mixture;
pub mod numerics;
pub mod par;
pub mod pipeline;
pub mod synth;

pub use cube::{HyperCube, LabelMap, PlumeMask, ScoreMap, SignatureSet};
pub use detectors::{DetectorKind, PlumeSign};
pub use error::{Error, Result};
