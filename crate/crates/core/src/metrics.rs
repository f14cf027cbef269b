//! Calibration and discrimination metrics over equal-mass bins.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 12;
pub const HISTOGRAM_BUCKETS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStat {
    pub lower_index: usize,
    pub upper_index: usize,
    pub count: usize,
    pub mean_confidence: f64,
    pub accuracy: f64,
}

/// Summary metrics for one method on one evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ece1: f64,
    pub ece2: f64,
    pub mce: f64,
    pub brier: f64,
    /// `None` when only one class is present.
    pub auroc: Option<f64>,
    pub n: usize,
    pub bins: Vec<BinStat>,
    pub histogram: Vec<usize>,
}

fn check_aligned(confidences: &[f64], labels: &[u8]) -> Result<()> {
    if confidences.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: confidences.len(),
            found: labels.len(),
        });
    }
    if labels.iter().any(|&z| z > 1) {
        return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
    }
    if !confidences.iter().all(|c| c.is_finite()) {
        return Err(Error::NonFinite("confidences"));
    }
    Ok(())
}

/// Stable ascending order of `values`.
fn ascending(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    order
}

/// Sorted-position ranges `[floor(b·n/B), floor((b+1)·n/B))`, all nonempty.
pub fn equal_mass_bins(confidences: &[f64], bins: usize) -> Result<Vec<Range<usize>>> {
    let n = confidences.len();
    if bins == 0 || n < bins {
        return Err(Error::InsufficientData(format!(
            "{n} points cannot fill {bins} equal-mass bins"
        )));
    }
    Ok((0..bins)
        .map(|b| (b * n / bins)..((b + 1) * n / bins))
        .collect())
}

fn bin_stats(confidences: &[f64], labels: &[u8], bins: usize) -> Result<Vec<BinStat>> {
    check_aligned(confidences, labels)?;
    let ranges = equal_mass_bins(confidences, bins)?;
    let order = ascending(confidences);
    Ok(ranges
        .into_iter()
        .map(|r| {
            let members = &order[r.clone()];
            let count = members.len() as f64;
            BinStat {
                lower_index: r.start,
                upper_index: r.end,
                count: members.len(),
                mean_confidence: members.iter().map(|&i| confidences[i]).sum::<f64>() / count,
                accuracy: members.iter().map(|&i| f64::from(labels[i])).sum::<f64>() / count,
            }
        })
        .collect())
}

fn ece_from_bins(stats: &[BinStat], n: usize, p: u32) -> f64 {
    let sum: f64 = stats
        .iter()
        .map(|b| (b.count as f64 / n as f64) * (b.accuracy - b.mean_confidence).abs().powi(p as i32))
        .sum();
    sum.powf(1.0 / f64::from(p))
}

fn mce_from_bins(stats: &[BinStat]) -> f64 {
    stats
        .iter()
        .map(|b| (b.accuracy - b.mean_confidence).abs())
        .fold(0.0, f64::max)
}

/// `(Σ_b (n_b/n)·|acc_b − conf_b|^p)^(1/p)` over equal-mass bins.
pub fn ece(confidences: &[f64], labels: &[u8], bins: usize, p: u32) -> Result<f64> {
    if p != 1 && p != 2 {
        return Err(Error::InvalidArgument(format!("ECE order must be 1 or 2, got {p}")));
    }
    let stats = bin_stats(confidences, labels, bins)?;
    Ok(ece_from_bins(&stats, confidences.len(), p))
}

/// Largest per-bin gap between accuracy and mean confidence.
pub fn mce(confidences: &[f64], labels: &[u8], bins: usize) -> Result<f64> {
    Ok(mce_from_bins(&bin_stats(confidences, labels, bins)?))
}

pub fn brier(confidences: &[f64], labels: &[u8]) -> Result<f64> {
    check_aligned(confidences, labels)?;
    if confidences.is_empty() {
        return Err(Error::InsufficientData("Brier score of an empty set".into()));
    }
    let sum: f64 = confidences
        .iter()
        .zip(labels)
        .map(|(c, &z)| (c - f64::from(z)).powi(2))
        .sum();
    Ok(sum / confidences.len() as f64)
}

/// Mann–Whitney AUROC with ties counted half, via average ranks.
///
/// `None` when either class is empty.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    if scores.len() != labels.len() {
        return None;
    }
    let n_pos = labels.iter().filter(|&&z| z == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let order = ascending(scores);
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j share their average.
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let pos_in_tie = order[i..j].iter().filter(|&&k| labels[k] == 1).count();
        rank_sum_pos += avg_rank * pos_in_tie as f64;
        i = j;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    Some((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * q))
}

/// Counts of confidences in equal-width buckets over `[0, 1]`; 1.0 goes in the last.
pub fn histogram(confidences: &[f64], buckets: usize) -> Vec<usize> {
    let mut counts = vec![0; buckets];
    for &c in confidences {
        let b = ((c.clamp(0.0, 1.0) * buckets as f64) as usize).min(buckets - 1);
        counts[b] += 1;
    }
    counts
}

/// Reliability-diagram data: per-bin stats plus a confidence histogram.
pub fn reliability_data(
    confidences: &[f64],
    labels: &[u8],
    bins: usize,
) -> Result<(Vec<BinStat>, Vec<usize>)> {
    Ok((
        bin_stats(confidences, labels, bins)?,
        histogram(confidences, HISTOGRAM_BUCKETS),
    ))
}

/// Every metric in one pass over the shared bins.
pub fn evaluate(confidences: &[f64], labels: &[u8], bins: usize) -> Result<MetricReport> {
    let stats = bin_stats(confidences, labels, bins)?;
    let n = confidences.len();
    Ok(MetricReport {
        ece1: ece_from_bins(&stats, n, 1),
        ece2: ece_from_bins(&stats, n, 2),
        mce: mce_from_bins(&stats),
        brier: brier(confidences, labels)?,
        auroc: auroc(confidences, labels),
        n,
        histogram: histogram(confidences, HISTOGRAM_BUCKETS),
        bins: stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const C4: [f64; 4] = [0.3, 0.4, 0.8, 0.9];
    const Z4: [u8; 4] = [0, 1, 1, 1];

    /// Hand-binned from the definition: {0.3, 0.4} → conf 0.35, acc 0.5;
    /// {0.8, 0.9} → conf 0.85, acc 1.0; both gaps 0.15.
    #[test]
    fn four_point_instance() {
        assert!((ece(&C4, &Z4, 2, 1).unwrap() - 0.15).abs() < 1e-12);
        assert!((ece(&C4, &Z4, 2, 2).unwrap() - 0.15).abs() < 1e-12);
        assert!((mce(&C4, &Z4, 2).unwrap() - 0.15).abs() < 1e-12);
        let (bins, _) = reliability_data(&C4, &Z4, 2).unwrap();
        assert_eq!(bins.len(), 2);
        assert_eq!(bins[0].count, 2);
        assert!((bins[0].mean_confidence - 0.35).abs() < 1e-12);
        assert_eq!(bins[0].accuracy, 0.5);
        assert!((bins[1].mean_confidence - 0.85).abs() < 1e-12);
        assert_eq!(bins[1].accuracy, 1.0);
    }

    #[test]
    fn bin_layout() {
        let r = equal_mass_bins(&[0.0; 12], 12).unwrap();
        assert!(r.iter().all(|b| b.len() == 1));
        let r = equal_mass_bins(&[0.0; 5], 2).unwrap();
        assert_eq!(r, [0..2, 2..5]);
        assert!(equal_mass_bins(&[0.0; 3], 5).is_err());
        assert!(equal_mass_bins(&[0.0; 3], 0).is_err());
    }

    #[test]
    fn calibrated_constant_is_zero() {
        let c = [0.5; 8];
        let z = [1, 0, 1, 0, 1, 0, 1, 0];
        assert_eq!(ece(&c, &z, 1, 1).unwrap(), 0.0);
        assert_eq!(ece(&c, &z, 1, 2).unwrap(), 0.0);
        assert_eq!(mce(&c, &z, 1).unwrap(), 0.0);
    }

    #[test]
    fn maximal_gap() {
        let c = [1.0; 6];
        let z = [0; 6];
        assert_eq!(ece(&c, &z, 3, 1).unwrap(), 1.0);
        assert_eq!(ece(&c, &z, 3, 2).unwrap(), 1.0);
        assert_eq!(mce(&c, &z, 3).unwrap(), 1.0);
    }

    #[test]
    fn brier_examples() {
        assert_eq!(brier(&[1.0, 0.0], &[1, 0]).unwrap(), 0.0);
        assert_eq!(brier(&[0.5], &[1]).unwrap(), 0.25);
        assert_eq!(brier(&[0.0, 1.0], &[1, 0]).unwrap(), 1.0);
        assert!(brier(&[], &[]).is_err());
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.9, 0.1], &[1, 0]), Some(1.0));
        assert_eq!(auroc(&[0.4; 5], &[1, 0, 1, 0, 0]), Some(0.5));
        assert_eq!(auroc(&[0.8, 0.8, 0.2], &[1, 0, 0]), Some(0.75));
        assert_eq!(auroc(&[0.1, 0.2], &[1, 1]), None);
        assert_eq!(auroc(&[], &[]), None);
    }

    #[test]
    fn singleton_bins() {
        let c = [0.1, 0.7, 0.3, 0.9];
        let (bins, _) = reliability_data(&c, &[1, 0, 0, 1], 4).unwrap();
        assert!(bins.iter().all(|b| b.count == 1 && (b.accuracy == 0.0 || b.accuracy == 1.0)));
    }

    #[test]
    fn point_mass_histogram() {
        let h = histogram(&[0.37; 10], HISTOGRAM_BUCKETS);
        assert_eq!(h.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(h[7], 10);
        assert_eq!(histogram(&[1.0, 0.0], 20)[19], 1);
    }

    #[test]
    fn order_must_be_one_or_two() {
        assert!(ece(&C4, &Z4, 2, 3).is_err());
    }
}
