//! ROC curves and per-group score summaries.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cube::{PlumeMask, ScoreMap};
use crate::error::{Error, Result};
use crate::numerics::quantile_sorted;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// Descending; the first point (0, 0) has threshold `+∞`.
    pub thresholds: Vec<f64>,
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    pub auc: f64,
    pub positives: usize,
    pub negatives: usize,
}

/// ROC of `scores` (higher = more plume-like) against `truth`.
pub fn roc(scores: &ScoreMap, truth: &PlumeMask) -> Result<RocCurve> {
    if scores.rows() != truth.rows() || scores.cols() != truth.cols() {
        return Err(Error::invalid(format!(
            "score map {}x{} does not match mask {}x{}",
            scores.rows(),
            scores.cols(),
            truth.rows(),
            truth.cols()
        )));
    }
    roc_values(scores.values(), truth.values())
}

/// ROC over parallel score / label slices. Each point thresholds at
/// `score ≥ t` for one of the distinct scores.
pub fn roc_values(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            what: "labels",
            expected: scores.len(),
            found: labels.len(),
        });
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("scores"));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::invalid(
            "ROC needs at least one positive and one negative pixel",
        ));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut thresholds = vec![f64::INFINITY];
    let mut fpr = vec![0.0];
    let mut tpr = vec![0.0];
    let (mut tp, mut fp) = (0u64, 0u64);
    // twice the number of correctly ordered (positive, negative) pairs,
    // ties counting one half
    let mut twice_pairs: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        let (mut tp_g, mut fp_g) = (0u64, 0u64);
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp_g += 1;
            } else {
                fp_g += 1;
            }
            i += 1;
        }
        twice_pairs += fp_g as u128 * (2 * tp as u128 + tp_g as u128);
        tp += tp_g;
        fp += fp_g;
        thresholds.push(t);
        fpr.push(fp as f64 / negatives as f64);
        tpr.push(tp as f64 / positives as f64);
    }
    let auc = twice_pairs as f64 / (2 * positives as u128 * negatives as u128) as f64;
    Ok(RocCurve {
        thresholds,
        fpr,
        tpr,
        auc,
        positives,
        negatives,
    })
}

impl RocCurve {
    /// Area under the piecewise-linear curve through the stored points.
    pub fn trapezoid_area(&self) -> f64 {
        self.fpr
            .windows(2)
            .zip(self.tpr.windows(2))
            .map(|(f, t)| (f[1] - f[0]) * (t[1] + t[0]) / 2.0)
            .sum()
    }

    /// `threshold,fpr,tpr` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::invalid(format!("writing ROC CSV: {e}"));
        w.write_record(["threshold", "fpr", "tpr"]).map_err(io)?;
        for ((t, f), p) in self.thresholds.iter().zip(&self.fpr).zip(&self.tpr) {
            w.write_record([t.to_string(), f.to_string(), p.to_string()])
                .map_err(io)?;
        }
        w.flush()
            .map_err(|e| Error::invalid(format!("writing ROC CSV: {e}")))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Box-plot statistics of one group. Quantiles interpolate linearly between
/// order statistics at position `q·(n−1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub label: String,
    pub count: usize,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    /// Most extreme values within `1.5·IQR` of the box.
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: usize,
}

pub fn summarize(label: &str, values: &[f64]) -> Result<GroupSummary> {
    if values.is_empty() {
        return Err(Error::invalid(format!("group '{label}' has no members")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q25 = quantile_sorted(&sorted, 0.25);
    let median = quantile_sorted(&sorted, 0.5);
    let q75 = quantile_sorted(&sorted, 0.75);
    let iqr = q75 - q25;
    let (lo, hi) = (q25 - 1.5 * iqr, q75 + 1.5 * iqr);
    let inside: Vec<f64> = sorted
        .iter()
        .copied()
        .filter(|v| *v >= lo && *v <= hi)
        .collect();
    Ok(GroupSummary {
        label: label.to_string(),
        count: sorted.len(),
        median,
        q25,
        q75,
        whisker_low: inside.first().copied().unwrap_or(median),
        whisker_high: inside.last().copied().unwrap_or(median),
        outliers: sorted.len() - inside.len(),
    })
}

/// One summary per entry of `names`, where `labels[i]` indexes `names`.
pub fn group_summary(scores: &[f64], labels: &[u8], names: &[String]) -> Result<Vec<GroupSummary>> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            what: "labels",
            expected: scores.len(),
            found: labels.len(),
        });
    }
    let mut groups: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    for (&s, &l) in scores.iter().zip(labels) {
        let slot = groups
            .get_mut(l as usize)
            .ok_or_else(|| Error::invalid(format!("label {l} has no name")))?;
        slot.push(s);
    }
    names
        .iter()
        .zip(&groups)
        .map(|(n, g)| summarize(n, g))
        .collect()
}
