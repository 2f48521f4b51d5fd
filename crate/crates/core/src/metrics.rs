//! Expected calibration error, reliability-diagram export, and task accuracy.
//!
//! Bins are equal width. Bin `i` covers `[i/N, (i+1)/N)` except the last,
//! which is closed on the right, so a confidence `c` lands in
//! `min(floor(c * N), N - 1)`.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{AnswerSpan, Span};

pub const DEFAULT_BINS: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub index: usize,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// Mean confidence of the bin's members, 0 when empty.
    pub confidence: f64,
    /// Fraction of correct members, 0 when empty.
    pub accuracy: f64,
    /// Correct (positive-event) members.
    pub positives: usize,
}

impl Bin {
    pub fn center(&self) -> f64 {
        (self.lower + self.upper) / 2.0
    }

    pub fn gap(&self) -> f64 {
        self.accuracy - self.confidence
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinStats {
    pub n: usize,
    pub bins: Vec<Bin>,
}

impl BinStats {
    pub fn non_empty(&self) -> impl Iterator<Item = &Bin> {
        self.bins.iter().filter(|b| b.count > 0)
    }

    pub fn positives(&self) -> usize {
        self.bins.iter().map(|b| b.positives).sum()
    }
}

pub fn bin_index(confidence: f64, n_bins: usize) -> usize {
    ((confidence * n_bins as f64).floor() as usize).min(n_bins - 1)
}

/// ECE over `(confidence, correct)` pairs with `n_bins` equal-width bins.
pub fn compute_ece(pairs: &[(f64, bool)], n_bins: usize) -> Result<(f64, BinStats)> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no predictions to score"));
    }
    if n_bins == 0 {
        return Err(Error::Config("ECE needs at least one bin".into()));
    }
    let mut sums = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    let mut positives = vec![0usize; n_bins];
    for &(conf, correct) in pairs {
        if !(0.0..=1.0).contains(&conf) {
            return Err(Error::Numeric(format!("confidence {conf} outside [0, 1]")));
        }
        let i = bin_index(conf, n_bins);
        sums[i] += conf;
        counts[i] += 1;
        positives[i] += usize::from(correct);
    }
    let n = pairs.len();
    let bins: Vec<Bin> = (0..n_bins)
        .map(|i| {
            let (confidence, accuracy) = if counts[i] == 0 {
                (0.0, 0.0)
            } else {
                (sums[i] / counts[i] as f64, positives[i] as f64 / counts[i] as f64)
            };
            Bin {
                index: i,
                lower: i as f64 / n_bins as f64,
                upper: (i + 1) as f64 / n_bins as f64,
                count: counts[i],
                confidence,
                accuracy,
                positives: positives[i],
            }
        })
        .collect();
    let ece = bins
        .iter()
        .filter(|b| b.count > 0)
        .map(|b| b.count as f64 / n as f64 * (b.accuracy - b.confidence).abs())
        .sum();
    Ok((ece, BinStats { n, bins }))
}

/// Reliability-diagram rows for non-empty bins, as CSV with the columns
/// `bin_center,acc_minus_conf,count,positive_count`.
pub fn reliability_export<W: Write>(stats: &BinStats, writer: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["bin_center", "acc_minus_conf", "count", "positive_count"])?;
    for bin in stats.non_empty() {
        csv.write_record([
            bin.center().to_string(),
            bin.gap().to_string(),
            bin.count.to_string(),
            bin.positives.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Micro-averaged exact-match span F1. Spans are keyed by instance id.
pub fn micro_f1(predicted: &[(String, Span)], gold: &[(String, Span)]) -> Prf {
    let pred: BTreeSet<&(String, Span)> = predicted.iter().collect();
    let gold: BTreeSet<&(String, Span)> = gold.iter().collect();
    if pred.is_empty() && gold.is_empty() {
        return Prf {
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
        };
    }
    let tp = pred.intersection(&gold).count() as f64;
    let precision = if pred.is_empty() { 0.0 } else { tp / pred.len() as f64 };
    let recall = if gold.is_empty() { 0.0 } else { tp / gold.len() as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf { precision, recall, f1 }
}

pub fn exact_match(predicted: &[AnswerSpan], gold: &[AnswerSpan]) -> Result<f64> {
    if predicted.len() != gold.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} questions",
            predicted.len(),
            gold.len()
        )));
    }
    if gold.is_empty() {
        return Ok(0.0);
    }
    let hits = predicted.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / gold.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceAccuracy {
    /// Fraction of sequences matching gold exactly.
    pub sentence: f64,
    pub token: f64,
}

pub fn sequence_accuracy(predicted: &[Vec<usize>], gold: &[Vec<usize>]) -> Result<SequenceAccuracy> {
    if predicted.len() != gold.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} sequences",
            predicted.len(),
            gold.len()
        )));
    }
    if gold.is_empty() {
        return Ok(SequenceAccuracy { sentence: 0.0, token: 0.0 });
    }
    let mut exact = 0usize;
    let (mut right, mut total) = (0usize, 0usize);
    for (p, g) in predicted.iter().zip(gold) {
        if p.len() != g.len() {
            return Err(Error::DimensionMismatch(format!(
                "predicted length {} vs gold length {}",
                p.len(),
                g.len()
            )));
        }
        exact += usize::from(p == g);
        right += p.iter().zip(g).filter(|(a, b)| a == b).count();
        total += g.len();
    }
    Ok(SequenceAccuracy {
        sentence: exact as f64 / gold.len() as f64,
        token: right as f64 / total.max(1) as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_have_zero_ece() {
        let (ece, stats) = compute_ece(&[(1.0, true); 7], 20).unwrap();
        assert_eq!(ece, 0.0);
        assert_eq!(stats.bins[19].count, 7);
    }

    #[test]
    fn four_point_hand_example() {
        let pairs = [(0.92, true), (0.92, false), (0.31, true), (0.12, false)];
        let (ece, stats) = compute_ece(&pairs, 20).unwrap();
        assert!((ece - 0.4125).abs() < 1e-12, "{ece}");
        let occupied: Vec<usize> = stats.non_empty().map(|b| b.index).collect();
        assert_eq!(occupied, vec![2, 6, 18]);
    }

    #[test]
    fn single_half_confident_hit() {
        let (ece, _) = compute_ece(&[(0.5, true)], 20).unwrap();
        assert_eq!(ece, 0.5);
    }

    #[test]
    fn boundary_values_bin_left_closed() {
        assert_eq!(bin_index(0.0, 20), 0);
        assert_eq!(bin_index(0.05, 20), 1);
        assert_eq!(bin_index(0.049_999, 20), 0);
        assert_eq!(bin_index(1.0, 20), 19);
    }

    #[test]
    fn rejects_empty_and_out_of_range() {
        assert!(matches!(compute_ece(&[], 20), Err(Error::EmptyInput(_))));
        assert!(compute_ece(&[(1.2, true)], 20).is_err());
        assert!(compute_ece(&[(f64::NAN, true)], 20).is_err());
    }

    #[test]
    fn reliability_rows_for_hand_example() {
        let pairs = [(0.92, true), (0.92, false), (0.31, true), (0.12, false)];
        let (_, stats) = compute_ece(&pairs, 20).unwrap();
        let mut buf = Vec::new();
        reliability_export(&stats, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "bin_center,acc_minus_conf,count,positive_count");
        assert_eq!(lines.len(), 4);
        let row = |l: &str| -> Vec<f64> { l.split(',').map(|v| v.parse().unwrap()).collect() };
        let expect = [[0.125, -0.12, 1.0, 0.0], [0.325, 0.69, 1.0, 1.0], [0.925, -0.42, 2.0, 1.0]];
        for (line, want) in lines[1..].iter().zip(expect) {
            for (got, want) in row(line).iter().zip(want) {
                assert!((got - want).abs() < 1e-12, "{line}");
            }
        }
    }

    #[test]
    fn perfect_bins_export_zero_gaps() {
        let pairs: Vec<(f64, bool)> = (0..10).map(|_| (1.0, true)).chain([(0.0, false)]).collect();
        let (_, stats) = compute_ece(&pairs, 20).unwrap();
        let mut buf = Vec::new();
        reliability_export(&stats, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        for line in text.lines().skip(1) {
            assert_eq!(line.split(',').nth(1), Some("0"));
        }
    }

    fn s(id: &str, a: usize, b: usize, c: &str) -> (String, Span) {
        (id.to_string(), Span::new(a, b, c))
    }

    #[test]
    fn micro_f1_cases() {
        let gold = vec![s("x", 0, 1, "A"), s("x", 2, 3, "C")];
        assert_eq!(micro_f1(&gold, &gold).f1, 1.0);
        let pred = vec![s("x", 0, 1, "A"), s("x", 1, 2, "B")];
        let prf = micro_f1(&pred, &gold);
        assert_eq!((prf.precision, prf.recall, prf.f1), (0.5, 0.5, 0.5));
        assert_eq!(micro_f1(&[], &gold).f1, 0.0);
    }

    #[test]
    fn exact_match_cases() {
        let a = |s, e| AnswerSpan { start: s, end: e };
        let gold = [a(0, 1), a(2, 2)];
        assert_eq!(exact_match(&gold, &gold).unwrap(), 1.0);
        assert_eq!(exact_match(&[a(0, 1), a(1, 2)], &gold).unwrap(), 0.5);
        assert_eq!(exact_match(&[a(5, 5), a(1, 2)], &gold).unwrap(), 0.0);
    }

    #[test]
    fn sequence_accuracy_cases() {
        let gold = vec![vec![0, 1], vec![1, 1]];
        assert_eq!(sequence_accuracy(&gold, &gold).unwrap().sentence, 1.0);
        let half = sequence_accuracy(&[vec![0, 1], vec![1, 0]], &gold).unwrap();
        assert_eq!((half.sentence, half.token), (0.5, 0.75));
        assert_eq!(sequence_accuracy(&[vec![1, 0], vec![0, 0]], &gold).unwrap().sentence, 0.0);
    }
}
