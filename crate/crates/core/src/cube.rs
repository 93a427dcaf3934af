//! Cube, signature, mask and score-map data model with their on-disk formats.
//!
//! Every binary payload is little-endian and paired with a small JSON header:
//!
//! | item       | header            | payload       | element          |
//! |------------|-------------------|---------------|------------------|
//! | cube       | `<name>.hdr.json`   | `<name>.f32`        | f32, pixel-major |
//! | mask       | `<name>.mask.json`  | `<name>.u8`         | u8, 0 or 255     |
//! | labels     | `<name>.labels.json`| `<name>.labels.u8`  | u8 class index   |
//! | score map  | `<name>.score.json` | `<name>.score.f32`  | f32, row-major   |
//!
//! A cube pixel `(r, c)` occupies payload elements `[(r*n + c)*p, (r*n + c + 1)*p)`.
//! Values are stored as 32-bit floats; all arithmetic elsewhere is done in f64.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An `rows × cols` grid of `bands`-long radiance spectra.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperCube {
    rows: usize,
    cols: usize,
    bands: usize,
    wavenumbers: Vec<f64>,
    radiance: Vec<f32>,
}

impl HyperCube {
    pub fn new(
        rows: usize,
        cols: usize,
        wavenumbers: Vec<f64>,
        radiance: Vec<f32>,
    ) -> Result<Self> {
        let bands = wavenumbers.len();
        if rows == 0 || cols == 0 || bands == 0 {
            return Err(Error::invalid(format!(
                "cube dimensions must be positive, got {rows}x{cols}x{bands}"
            )));
        }
        check_increasing(&wavenumbers)?;
        let expected = rows * cols * bands;
        if radiance.len() != expected {
            return Err(Error::Dimension {
                what: "cube radiance",
                expected,
                found: radiance.len(),
            });
        }
        if radiance.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cube radiance"));
        }
        Ok(Self {
            rows,
            cols,
            bands,
            wavenumbers,
            radiance,
        })
    }

    /// Packs `spectra` row-major into a `rows × cols` cube, rounding to f32.
    pub fn from_spectra(
        rows: usize,
        cols: usize,
        wavenumbers: Vec<f64>,
        spectra: &[Vec<f64>],
    ) -> Result<Self> {
        if spectra.len() != rows * cols {
            return Err(Error::Dimension {
                what: "spectra count",
                expected: rows * cols,
                found: spectra.len(),
            });
        }
        let p = wavenumbers.len();
        let mut radiance = Vec::with_capacity(rows * cols * p);
        for s in spectra {
            if s.len() != p {
                return Err(Error::Dimension {
                    what: "spectrum length",
                    expected: p,
                    found: s.len(),
                });
            }
            radiance.extend(s.iter().map(|&v| v as f32));
        }
        Self::new(rows, cols, wavenumbers, radiance)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn pixels(&self) -> usize {
        self.rows * self.cols
    }

    pub fn wavenumbers(&self) -> &[f64] {
        &self.wavenumbers
    }

    pub fn radiance(&self) -> &[f32] {
        &self.radiance
    }

    pub fn pixel_index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    pub fn spectrum(&self, pixel: usize) -> &[f32] {
        &self.radiance[pixel * self.bands..(pixel + 1) * self.bands]
    }

    pub fn spectrum_f64(&self, pixel: usize) -> Vec<f64> {
        self.spectrum(pixel).iter().map(|&v| v as f64).collect()
    }

    /// Squared Euclidean norm of a pixel spectrum.
    pub fn magnitude(&self, pixel: usize) -> f64 {
        self.spectrum(pixel)
            .iter()
            .map(|&v| (v as f64) * (v as f64))
            .sum()
    }

    /// Spectra of the given pixels as the rows of an `len × bands` matrix.
    pub fn matrix_of(&self, pixels: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(pixels.len(), self.bands, |i, j| {
            self.radiance[pixels[i] * self.bands + j] as f64
        })
    }

    /// All spectra as the rows of a `pixels × bands` matrix.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.pixels(), self.bands, &self.radiance).map(|v: f32| v as f64)
    }

    pub fn same_shape(&self, other: &HyperCube) -> bool {
        self.rows == other.rows && self.cols == other.cols && self.wavenumbers == other.wavenumbers
    }
}

fn check_increasing(w: &[f64]) -> Result<()> {
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("wavenumbers"));
    }
    if w.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::invalid("wavenumbers must be strictly increasing"));
    }
    Ok(())
}

/// Known absorption signatures, one per column of a `bands × N` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SignatureSet {
    wavenumbers: Vec<f64>,
    names: Vec<String>,
    signatures: DMatrix<f64>,
}

impl SignatureSet {
    pub fn new(
        wavenumbers: Vec<f64>,
        names: Vec<String>,
        signatures: DMatrix<f64>,
    ) -> Result<Self> {
        if signatures.ncols() == 0 {
            return Err(Error::invalid("signature set needs at least one column"));
        }
        if names.len() != signatures.ncols() {
            return Err(Error::Dimension {
                what: "signature names",
                expected: signatures.ncols(),
                found: names.len(),
            });
        }
        if wavenumbers.len() != signatures.nrows() {
            return Err(Error::Dimension {
                what: "signature wavenumbers",
                expected: signatures.nrows(),
                found: wavenumbers.len(),
            });
        }
        if signatures.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("signatures"));
        }
        for (j, col) in signatures.column_iter().enumerate() {
            if col.iter().all(|&v| v == 0.0) {
                return Err(Error::invalid(format!(
                    "signature '{}' is identically zero",
                    names[j]
                )));
            }
        }
        Ok(Self {
            wavenumbers,
            names,
            signatures,
        })
    }

    /// Single signature with band-index wavenumbers.
    pub fn single(signature: Vec<f64>) -> Result<Self> {
        let p = signature.len();
        Self::new(
            (0..p).map(|i| i as f64).collect(),
            vec!["s".to_string()],
            DMatrix::from_vec(p, 1, signature),
        )
    }

    pub fn from_columns(wavenumbers: Vec<f64>, columns: &[(String, Vec<f64>)]) -> Result<Self> {
        let p = wavenumbers.len();
        let mut m = DMatrix::zeros(p, columns.len());
        for (j, (_, c)) in columns.iter().enumerate() {
            if c.len() != p {
                return Err(Error::Dimension {
                    what: "signature length",
                    expected: p,
                    found: c.len(),
                });
            }
            m.column_mut(j).copy_from_slice(c);
        }
        Self::new(
            wavenumbers,
            columns.iter().map(|(n, _)| n.clone()).collect(),
            m,
        )
    }

    pub fn bands(&self) -> usize {
        self.signatures.nrows()
    }

    pub fn count(&self) -> usize {
        self.signatures.ncols()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn wavenumbers(&self) -> &[f64] {
        &self.wavenumbers
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.signatures
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.signatures.column(j).iter().copied().collect()
    }

    /// Keeps only the listed columns, in the given order.
    pub fn select(&self, columns: &[usize]) -> Result<Self> {
        let m = self.signatures.select_columns(columns.iter());
        Self::new(
            self.wavenumbers.clone(),
            columns.iter().map(|&j| self.names[j].clone()).collect(),
            m,
        )
    }
}

/// Ground-truth plume mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlumeMask {
    rows: usize,
    cols: usize,
    mask: Vec<bool>,
}

impl PlumeMask {
    pub fn new(rows: usize, cols: usize, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != rows * cols {
            return Err(Error::Dimension {
                what: "mask",
                expected: rows * cols,
                found: mask.len(),
            });
        }
        Ok(Self { rows, cols, mask })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[bool] {
        &self.mask
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }
}

/// Per-pixel class labels with their names (index = label value).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    rows: usize,
    cols: usize,
    labels: Vec<u8>,
    names: Vec<String>,
}

impl LabelMap {
    pub fn new(rows: usize, cols: usize, labels: Vec<u8>, names: Vec<String>) -> Result<Self> {
        if labels.len() != rows * cols {
            return Err(Error::Dimension {
                what: "labels",
                expected: rows * cols,
                found: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= names.len()) {
            return Err(Error::invalid(format!("label {bad} has no name")));
        }
        Ok(Self {
            rows,
            cols,
            labels,
            names,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[u8] {
        &self.labels
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Per-pixel detection statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl ScoreMap {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Dimension {
                what: "score map",
                expected: rows * cols,
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("score map"));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct CubeHeader {
    m: usize,
    n: usize,
    p: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    wavenumbers: Option<Vec<f64>>,
    #[serde(default = "default_dtype")]
    dtype: String,
    #[serde(default = "default_byte_order")]
    byte_order: String,
    #[serde(default = "default_layout")]
    layout: String,
}

fn default_dtype() -> String {
    "float32".into()
}

fn default_byte_order() -> String {
    "little".into()
}

fn default_layout() -> String {
    "pixel-major".into()
}

#[derive(Debug, Serialize, Deserialize)]
struct GridHeader {
    m: usize,
    n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    names: Option<Vec<String>>,
}

/// Strips any of the known suffixes so `scene`, `scene.hdr.json` and
/// `scene.f32` all name the same cube.
fn stem(path: &Path, suffixes: &[&str]) -> PathBuf {
    let s = path.to_string_lossy();
    for suf in suffixes {
        if let Some(base) = s.strip_suffix(suf) {
            return PathBuf::from(base);
        }
    }
    path.to_path_buf()
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Header and payload paths of a cube named by `path`.
pub fn cube_paths(path: &Path) -> (PathBuf, PathBuf) {
    let st = stem(path, &[".hdr.json", ".f32"]);
    (with_suffix(&st, ".hdr.json"), with_suffix(&st, ".f32"))
}

pub fn mask_paths(path: &Path) -> (PathBuf, PathBuf) {
    let st = stem(path, &[".mask.json", ".u8"]);
    (with_suffix(&st, ".mask.json"), with_suffix(&st, ".u8"))
}

pub fn label_paths(path: &Path) -> (PathBuf, PathBuf) {
    let st = stem(path, &[".labels.json", ".labels.u8"]);
    (
        with_suffix(&st, ".labels.json"),
        with_suffix(&st, ".labels.u8"),
    )
}

pub fn score_paths(path: &Path) -> (PathBuf, PathBuf) {
    let st = stem(path, &[".score.json", ".score.f32"]);
    (
        with_suffix(&st, ".score.json"),
        with_suffix(&st, ".score.f32"),
    )
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s =
        serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

fn decode_f32(path: &Path, bytes: &[u8], expected: usize) -> Result<Vec<f32>> {
    if bytes.len() != expected * 4 {
        return Err(Error::format(
            path,
            format!(
                "payload has {} bytes, header implies {}",
                bytes.len(),
                expected * 4
            ),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn encode_f32(values: impl Iterator<Item = f32>) -> Vec<u8> {
    values.flat_map(f32::to_le_bytes).collect()
}

pub fn read_cube(path: impl AsRef<Path>) -> Result<HyperCube> {
    let (hdr_path, raw_path) = cube_paths(path.as_ref());
    let hdr: CubeHeader = read_json(&hdr_path)?;
    if hdr.dtype != "float32" || hdr.byte_order != "little" || hdr.layout != "pixel-major" {
        return Err(Error::format(
            &hdr_path,
            format!(
                "unsupported encoding {}/{}/{}",
                hdr.dtype, hdr.byte_order, hdr.layout
            ),
        ));
    }
    let wavenumbers = match hdr.wavenumbers {
        Some(w) => {
            if w.len() != hdr.p {
                return Err(Error::format(
                    &hdr_path,
                    format!("{} wavenumbers for p = {}", w.len(), hdr.p),
                ));
            }
            w
        }
        None => (0..hdr.p).map(|i| i as f64).collect(),
    };
    let bytes = read_bytes(&raw_path)?;
    let radiance = decode_f32(&raw_path, &bytes, hdr.m * hdr.n * hdr.p)?;
    HyperCube::new(hdr.m, hdr.n, wavenumbers, radiance)
        .map_err(|e| Error::format(&raw_path, e.to_string()))
}

pub fn write_cube(cube: &HyperCube, path: impl AsRef<Path>) -> Result<()> {
    let (hdr_path, raw_path) = cube_paths(path.as_ref());
    let hdr = CubeHeader {
        m: cube.rows,
        n: cube.cols,
        p: cube.bands,
        wavenumbers: Some(cube.wavenumbers.clone()),
        dtype: default_dtype(),
        byte_order: default_byte_order(),
        layout: default_layout(),
    };
    write_json(&hdr_path, &hdr)?;
    write_bytes(&raw_path, &encode_f32(cube.radiance.iter().copied()))
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<PlumeMask> {
    let (hdr_path, raw_path) = mask_paths(path.as_ref());
    let hdr: GridHeader = read_json(&hdr_path)?;
    let bytes = read_bytes(&raw_path)?;
    if bytes.len() != hdr.m * hdr.n {
        return Err(Error::format(
            &raw_path,
            format!(
                "payload has {} bytes, header implies {}",
                bytes.len(),
                hdr.m * hdr.n
            ),
        ));
    }
    PlumeMask::new(hdr.m, hdr.n, bytes.iter().map(|&b| b != 0).collect())
}

pub fn write_mask(mask: &PlumeMask, path: impl AsRef<Path>) -> Result<()> {
    let (hdr_path, raw_path) = mask_paths(path.as_ref());
    write_json(
        &hdr_path,
        &GridHeader {
            m: mask.rows,
            n: mask.cols,
            names: None,
        },
    )?;
    let bytes: Vec<u8> = mask.mask.iter().map(|&b| if b { 255 } else { 0 }).collect();
    write_bytes(&raw_path, &bytes)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    let (hdr_path, raw_path) = label_paths(path.as_ref());
    let hdr: GridHeader = read_json(&hdr_path)?;
    let bytes = read_bytes(&raw_path)?;
    if bytes.len() != hdr.m * hdr.n {
        return Err(Error::format(
            &raw_path,
            format!(
                "payload has {} bytes, header implies {}",
                bytes.len(),
                hdr.m * hdr.n
            ),
        ));
    }
    let names = hdr
        .names
        .ok_or_else(|| Error::format(&hdr_path, "label header lacks 'names'"))?;
    LabelMap::new(hdr.m, hdr.n, bytes, names)
}

pub fn write_labels(labels: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let (hdr_path, raw_path) = label_paths(path.as_ref());
    write_json(
        &hdr_path,
        &GridHeader {
            m: labels.rows,
            n: labels.cols,
            names: Some(labels.names.clone()),
        },
    )?;
    write_bytes(&raw_path, &labels.labels)
}

pub fn read_score_map(path: impl AsRef<Path>) -> Result<ScoreMap> {
    let (hdr_path, raw_path) = score_paths(path.as_ref());
    let hdr: GridHeader = read_json(&hdr_path)?;
    let bytes = read_bytes(&raw_path)?;
    let values = decode_f32(&raw_path, &bytes, hdr.m * hdr.n)?;
    ScoreMap::new(hdr.m, hdr.n, values.into_iter().map(f64::from).collect())
        .map_err(|e| Error::format(&raw_path, e.to_string()))
}

/// Writes at 32-bit precision. Scores beyond the f32 range saturate to ±f32::MAX.
pub fn write_score_map(map: &ScoreMap, path: impl AsRef<Path>) -> Result<()> {
    let (hdr_path, raw_path) = score_paths(path.as_ref());
    write_json(
        &hdr_path,
        &GridHeader {
            m: map.rows,
            n: map.cols,
            names: None,
        },
    )?;
    let payload = encode_f32(
        map.values
            .iter()
            .map(|&v| (v as f32).clamp(f32::MIN, f32::MAX)),
    );
    write_bytes(&raw_path, &payload)
}

/// Reads a signature CSV with header `wavenumber,name1[,name2,...]`.
pub fn read_signatures(path: impl AsRef<Path>) -> Result<SignatureSet> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.len() < 2 {
        return Err(Error::format(
            path,
            "need a wavenumber column and at least one signature column",
        ));
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut wavenumbers = Vec::new();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        if rec.len() != headers.len() {
            return Err(Error::format(
                path,
                format!(
                    "row {} has {} cells, expected {}",
                    row + 2,
                    rec.len(),
                    headers.len()
                ),
            ));
        }
        let mut cells = rec.iter().map(|cell| {
            cell.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    Error::format(path, format!("row {}: bad numeric cell '{cell}'", row + 2))
                })
        });
        wavenumbers.push(cells.next().unwrap()?);
        for col in columns.iter_mut() {
            col.push(cells.next().unwrap()?);
        }
    }
    if wavenumbers.is_empty() {
        return Err(Error::format(path, "no data rows"));
    }
    let p = wavenumbers.len();
    let mut m = DMatrix::zeros(p, names.len());
    for (j, col) in columns.iter().enumerate() {
        m.column_mut(j).copy_from_slice(col);
    }
    SignatureSet::new(wavenumbers, names, m).map_err(|e| Error::format(path, e.to_string()))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        },
        csv::ErrorKind::UnequalLengths { .. } => Error::format(path, format!("ragged rows: {e}")),
        _ => Error::format(path, e.to_string()),
    }
}

pub fn write_signatures(set: &SignatureSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec!["wavenumber".to_string()];
    header.extend(set.names.iter().cloned());
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for (i, wn) in set.wavenumbers.iter().enumerate() {
        let mut rec = vec![format!("{wn}")];
        rec.extend(set.signatures.row(i).iter().map(|v| format!("{v}")));
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
