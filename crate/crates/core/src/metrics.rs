//! Confidence and OOD-separation metrics over max-softmax scores.
//!
//! Conventions:
//! - AUROC treats ID as positive; ties count half.
//! - FPR at a TPR target uses `>=` on both sides, with the threshold taken
//!   from the observed ID scores.
//! - ECE and histograms use equal-width bins on `[0, 1]` that include their
//!   right edge; a score of exactly 0 goes to the first bin.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack used before rounding a fractional count up.
const COUNT_SLACK: f64 = 1e-9;

/// Scores and correctness flags gathered from a classifier.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConfidenceReport {
    pub id_scores: Vec<f64>,
    pub ood_scores: Vec<f64>,
    pub id_correct: Vec<bool>,
}

/// The evaluation summary written as `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub id_mmc: f64,
    pub ood_mmc: f64,
    pub auroc: f64,
    pub fpr95: f64,
    pub ece: f64,
    pub id_accuracy: f64,
}

impl ConfidenceReport {
    pub fn summarize(&self) -> Result<MetricsReport> {
        self.summarize_with(DEFAULT_ECE_BINS)
    }

    pub fn summarize_with(&self, ece_bins: usize) -> Result<MetricsReport> {
        if self.id_correct.len() != self.id_scores.len() {
            return Err(Error::Metrics(format!(
                "{} correctness flags for {} ID scores",
                self.id_correct.len(),
                self.id_scores.len()
            )));
        }
        Ok(MetricsReport {
            id_mmc: mmc(&self.id_scores)?,
            ood_mmc: mmc(&self.ood_scores)?,
            auroc: auroc(&self.id_scores, &self.ood_scores)?,
            fpr95: fpr_at_tpr(&self.id_scores, &self.ood_scores, 0.95)?,
            ece: ece(&self.id_scores, &self.id_correct, ece_bins)?,
            id_accuracy: self.id_correct.iter().filter(|c| **c).count() as f64 / self.id_correct.len() as f64,
        })
    }
}

pub const DEFAULT_ECE_BINS: usize = 15;

fn non_empty(scores: &[f64], what: &str) -> Result<()> {
    if scores.is_empty() {
        Err(Error::Metrics(format!("{what} scores are empty")))
    } else if scores.iter().any(|s| s.is_nan()) {
        Err(Error::Metrics(format!("{what} scores contain NaN")))
    } else {
        Ok(())
    }
}

/// Neumaier-compensated sum.
fn compensated_sum(values: &[f64]) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for &v in values {
        let t = sum + v;
        comp += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + comp
}

/// Mean maximum confidence.
pub fn mmc(scores: &[f64]) -> Result<f64> {
    non_empty(scores, "confidence")?;
    Ok(compensated_sum(scores) / scores.len() as f64)
}

/// Mann-Whitney estimate of P(id > ood) + P(id = ood) / 2, via a merged sort.
pub fn auroc(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    non_empty(id_scores, "ID")?;
    non_empty(ood_scores, "OOD")?;
    let mut ood = ood_scores.to_vec();
    ood.sort_by(f64::total_cmp);
    let mut id = id_scores.to_vec();
    id.sort_by(f64::total_cmp);
    // For each ID score count OOD strictly below and equal, walking both
    // sorted lists once.
    let (mut below, mut upto) = (0usize, 0usize);
    let mut wins = 0.0;
    for s in &id {
        while below < ood.len() && ood[below] < *s {
            below += 1;
        }
        upto = upto.max(below);
        while upto < ood.len() && ood[upto] <= *s {
            upto += 1;
        }
        wins += below as f64 + 0.5 * (upto - below) as f64;
    }
    Ok(wins / (id.len() as f64 * ood.len() as f64))
}

/// Fraction of OOD scores at or above the largest threshold that keeps at
/// least `tpr_target` of ID scores at or above it.
pub fn fpr_at_tpr(id_scores: &[f64], ood_scores: &[f64], tpr_target: f64) -> Result<f64> {
    non_empty(id_scores, "ID")?;
    non_empty(ood_scores, "OOD")?;
    if !(tpr_target > 0.0 && tpr_target <= 1.0) {
        return Err(Error::Metrics(format!("TPR target must lie in (0, 1], got {tpr_target}")));
    }
    let mut id = id_scores.to_vec();
    id.sort_by(|a, b| b.total_cmp(a));
    let needed = ((tpr_target * id.len() as f64 - COUNT_SLACK).ceil() as usize).clamp(1, id.len());
    let threshold = id[needed - 1];
    let accepted = ood_scores.iter().filter(|s| **s >= threshold).count();
    Ok(accepted as f64 / ood_scores.len() as f64)
}

/// Index of the right-inclusive equal-width bin holding `score`.
pub fn bin_index(score: f64, bins: usize) -> usize {
    let b = (score * bins as f64).ceil() as isize - 1;
    b.clamp(0, bins as isize - 1) as usize
}

/// Expected calibration error: `Σ_b (|b| / N) |acc(b) − conf(b)|`.
pub fn ece(confidences: &[f64], correct: &[bool], bins: usize) -> Result<f64> {
    if confidences.len() != correct.len() {
        return Err(Error::Metrics(format!(
            "{} confidences but {} correctness flags",
            confidences.len(),
            correct.len()
        )));
    }
    if bins == 0 {
        return Err(Error::Metrics("need at least one bin".into()));
    }
    non_empty(confidences, "confidence")?;
    let mut count = vec![0usize; bins];
    let mut conf_sum = vec![0.0; bins];
    let mut hits = vec![0usize; bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        let b = bin_index(c, bins);
        count[b] += 1;
        conf_sum[b] += c;
        hits[b] += usize::from(ok);
    }
    let n = confidences.len() as f64;
    Ok((0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let m = count[b] as f64;
            (m / n) * (hits[b] as f64 / m - conf_sum[b] / m).abs()
        })
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Equal-width histogram on `[0, 1]`.
pub fn confidence_histogram(scores: &[f64], bins: usize) -> Result<Vec<HistogramBin>> {
    if bins == 0 {
        return Err(Error::Metrics("need at least one bin".into()));
    }
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|b| HistogramBin {
            lo: b as f64 / bins as f64,
            hi: (b + 1) as f64 / bins as f64,
            count: 0,
        })
        .collect();
    for &s in scores {
        out[bin_index(s, bins)].count += 1;
    }
    Ok(out)
}

/// Histogram of one or more labelled score sets as CSV:
/// `set,bin_lo,bin_hi,count`.
pub fn histogram_csv(sets: &[(&str, &[HistogramBin])]) -> String {
    let mut s = String::from("set,bin_lo,bin_hi,count\n");
    for (name, bins) in sets {
        for b in *bins {
            s.push_str(&format!("{name},{},{},{}\n", b.lo, b.hi, b.count));
        }
    }
    s
}
