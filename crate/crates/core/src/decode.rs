//! Exact inference over a [`Lattice`]: k-best Viterbi, forward-backward
//! marginals, span marginals, and length-normalized entity confidence.
//!
//! Sequence boundaries carry no start or stop potentials. All sums over paths
//! are done in log space with a max shift.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Entity, EntityPayload, Lattice, McSampleSet};

/// One of the k highest-scoring label sequences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredSequence {
    pub labels: Vec<usize>,
    pub log_score: f64,
    /// 1-based position in the k-best list.
    pub rank: usize,
}

/// Per-position label marginals, `L x C`.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalTable {
    probs: Vec<Vec<f64>>,
}

impl MarginalTable {
    pub fn get(&self, t: usize, label: usize) -> f64 {
        self.probs[t][label]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.probs[t]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Label with the highest marginal at each position (lowest index on ties).
    pub fn argmax(&self) -> Vec<usize> {
        self.probs
            .iter()
            .map(|row| {
                let mut best = 0;
                for (i, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[derive(Clone)]
struct Partial {
    score: f64,
    path: Vec<usize>,
}

/// Best first; equal scores fall back to lexicographic label order.
fn partial_order(a: &Partial, b: &Partial) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.path.cmp(&b.path))
}

/// The `min(k, C^L)` highest-scoring label sequences, best first.
///
/// Every state keeps its own k best prefixes, so the result is exact. Ties
/// are broken by lexicographic order of the label indices.
pub fn kbest_viterbi(lattice: &Lattice, k: usize) -> Result<Vec<ScoredSequence>> {
    if k == 0 {
        return Err(Error::Config("k-best decoding needs k >= 1".into()));
    }
    let c = lattice.num_labels();
    let mut beams: Vec<Vec<Partial>> = (0..c)
        .map(|y| {
            vec![Partial {
                score: lattice.unary(0, y),
                path: vec![y],
            }]
        })
        .collect();

    for t in 1..lattice.len() {
        let mut next = Vec::with_capacity(c);
        for y in 0..c {
            let mut candidates: Vec<Partial> = Vec::new();
            for (prev, beam) in beams.iter().enumerate() {
                let step = lattice.transition(prev, y);
                for p in beam {
                    let mut path = Vec::with_capacity(t + 1);
                    path.extend_from_slice(&p.path);
                    path.push(y);
                    candidates.push(Partial {
                        score: p.score + step + lattice.unary(t, y),
                        path,
                    });
                }
            }
            candidates.sort_by(partial_order);
            candidates.truncate(k);
            next.push(candidates);
        }
        beams = next;
    }

    let mut finals: Vec<Partial> = beams.into_iter().flatten().collect();
    finals.sort_by(partial_order);
    finals.truncate(k);
    Ok(finals
        .into_iter()
        .enumerate()
        .map(|(i, p)| ScoredSequence {
            labels: p.path,
            log_score: p.score,
            rank: i + 1,
        })
        .collect())
}

/// Forward and backward log-tables of a lattice.
///
/// `alpha[t][y]` includes the unary score at `t`; `beta[t][y]` covers only
/// positions after `t`.
#[derive(Clone, Debug)]
pub struct ForwardBackward {
    alpha: Vec<Vec<f64>>,
    beta: Vec<Vec<f64>>,
    log_z: f64,
}

impl ForwardBackward {
    pub fn new(lattice: &Lattice) -> Self {
        let (len, c) = (lattice.len(), lattice.num_labels());
        let mut scratch = vec![0.0; c];

        let mut alpha = vec![vec![0.0; c]; len];
        for y in 0..c {
            alpha[0][y] = lattice.unary(0, y);
        }
        for t in 1..len {
            for y in 0..c {
                for (p, s) in scratch.iter_mut().enumerate() {
                    *s = alpha[t - 1][p] + lattice.transition(p, y);
                }
                alpha[t][y] = log_sum_exp(&scratch) + lattice.unary(t, y);
            }
        }

        let mut beta = vec![vec![0.0; c]; len];
        for t in (0..len - 1).rev() {
            for y in 0..c {
                for (n, s) in scratch.iter_mut().enumerate() {
                    *s = lattice.transition(y, n) + lattice.unary(t + 1, n) + beta[t + 1][n];
                }
                beta[t][y] = log_sum_exp(&scratch);
            }
        }

        let log_z = log_sum_exp(&alpha[len - 1]);
        Self { alpha, beta, log_z }
    }

    pub fn log_partition(&self) -> f64 {
        self.log_z
    }

    pub fn marginals(&self) -> MarginalTable {
        let probs = self
            .alpha
            .iter()
            .zip(&self.beta)
            .map(|(a, b)| {
                a.iter()
                    .zip(b)
                    .map(|(x, y)| (x + y - self.log_z).exp())
                    .collect()
            })
            .collect();
        MarginalTable { probs }
    }

    /// Log-probability that positions `start..end` carry `tags`.
    pub fn span_log_prob(&self, lattice: &Lattice, start: usize, end: usize, tags: &[usize]) -> Result<f64> {
        let len = lattice.len();
        if start >= end || end > len {
            return Err(Error::IndexOutOfRange(format!(
                "span [{start}, {end}) on a lattice of length {len}"
            )));
        }
        if tags.len() != end - start {
            return Err(Error::DimensionMismatch(format!(
                "span [{start}, {end}) given {} tags",
                tags.len()
            )));
        }
        if let Some(&bad) = tags.iter().find(|&&y| y >= lattice.num_labels()) {
            return Err(Error::IndexOutOfRange(format!("label index {bad}")));
        }
        let mut score = self.alpha[start][tags[0]];
        for t in start + 1..end {
            let (prev, cur) = (tags[t - 1 - start], tags[t - start]);
            score += lattice.transition(prev, cur) + lattice.unary(t, cur);
        }
        score += self.beta[end - 1][tags[tags.len() - 1]];
        Ok(score - self.log_z)
    }

    pub fn sequence_log_prob(&self, lattice: &Lattice, labels: &[usize]) -> Result<f64> {
        self.span_log_prob(lattice, 0, lattice.len(), labels)
    }
}

/// Per-position marginals and the log-partition function.
pub fn forward_backward(lattice: &Lattice) -> (MarginalTable, f64) {
    let fb = ForwardBackward::new(lattice);
    (fb.marginals(), fb.log_partition())
}

/// Joint marginal `P(y[start..end] = labels | x)`.
pub fn span_marginal(lattice: &Lattice, start: usize, end: usize, labels: &[usize]) -> Result<f64> {
    let fb = ForwardBackward::new(lattice);
    Ok(fb.span_log_prob(lattice, start, end, labels)?.exp().min(1.0))
}

fn log_softmax_column(lattice: &Lattice, column: usize) -> Vec<f64> {
    let col: Vec<f64> = lattice.unary_rows().iter().map(|r| r[column]).collect();
    let z = log_sum_exp(&col);
    col.into_iter().map(|v| v - z).collect()
}

struct SampleTables {
    fb: ForwardBackward,
    start_log_probs: Vec<f64>,
    end_log_probs: Vec<f64>,
}

/// Precomputed inference tables for every sample of one instance, so that
/// many entities can be scored against the same sample set.
pub struct SampleScorer<'a> {
    samples: &'a McSampleSet,
    tables: Vec<SampleTables>,
}

impl<'a> SampleScorer<'a> {
    pub fn new(samples: &'a McSampleSet) -> Self {
        let tables = samples
            .samples()
            .iter()
            .map(|lattice| {
                let qa = lattice.num_labels() == 2;
                SampleTables {
                    fb: ForwardBackward::new(lattice),
                    start_log_probs: if qa { log_softmax_column(lattice, 0) } else { Vec::new() },
                    end_log_probs: if qa { log_softmax_column(lattice, 1) } else { Vec::new() },
                }
            })
            .collect();
        Self { samples, tables }
    }

    /// Unnormalized probability of the entity under each sample.
    pub fn probabilities(&self, entity: &Entity) -> Result<Vec<f64>> {
        self.samples
            .samples()
            .iter()
            .zip(&self.tables)
            .map(|(lattice, tables)| {
                let log_p = match &entity.payload {
                    EntityPayload::Sequence(labels) => tables.fb.sequence_log_prob(lattice, labels)?,
                    EntityPayload::Span { span, tags } => {
                        tables.fb.span_log_prob(lattice, span.start, span.end, tags)?
                    }
                    EntityPayload::Answer(a) => {
                        if lattice.num_labels() != 2 {
                            return Err(Error::DimensionMismatch(
                                "answer spans need a two-column start/end lattice".into(),
                            ));
                        }
                        if a.start > a.end || a.end >= lattice.len() {
                            return Err(Error::IndexOutOfRange(format!(
                                "answer ({}, {}) on a passage of length {}",
                                a.start,
                                a.end,
                                lattice.len()
                            )));
                        }
                        tables.start_log_probs[a.start] + tables.end_log_probs[a.end]
                    }
                };
                Ok(log_p.exp().min(1.0))
            })
            .collect()
    }

    /// Per-sample probabilities raised to `1 / normalization_length`.
    pub fn normalized_probabilities(&self, entity: &Entity) -> Result<Vec<f64>> {
        let root = 1.0 / entity.normalization_length() as f64;
        Ok(self
            .probabilities(entity)?
            .into_iter()
            .map(|p| p.powf(root))
            .collect())
    }
}

/// Mean over the samples of the entity's probability raised to one over its
/// length: the sequence length for label sequences, the span length for
/// spans, and 2 for answer spans.
pub fn normalized_confidence(samples: &McSampleSet, entity: &Entity) -> Result<f64> {
    let values = SampleScorer::new(samples).normalized_probabilities(entity)?;
    Ok(order_free_mean(&values))
}

/// Mean summed in ascending order, so the result does not depend on the
/// order of the samples. Clamped to the sample range.
pub fn order_free_mean(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
    mean.clamp(sorted[0], sorted[sorted.len() - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{AnswerSpan, Span};

    /// Two positions, labels A=0, B=1; only A->A has a transition bonus.
    fn two_by_two() -> Lattice {
        Lattice::new(
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![0.5, 0.0], vec![0.0, 0.0]],
        )
        .unwrap()
    }

    #[test]
    fn single_token_argmax() {
        let l = Lattice::emission_only(vec![vec![1.0, 0.0]]).unwrap();
        let best = kbest_viterbi(&l, 1).unwrap();
        assert_eq!(best.len(), 1);
        assert_eq!(best[0].labels, vec![0]);
        assert_eq!(best[0].log_score, 1.0);
    }

    #[test]
    fn three_best_on_two_by_two() {
        // enumerated by hand: AA 1.5, AB 2.0, BA 0.0, BB 1.0
        let best = kbest_viterbi(&two_by_two(), 3).unwrap();
        let got: Vec<(Vec<usize>, f64, usize)> =
            best.into_iter().map(|s| (s.labels, s.log_score, s.rank)).collect();
        assert_eq!(
            got,
            vec![(vec![0, 1], 2.0, 1), (vec![0, 0], 1.5, 2), (vec![1, 1], 1.0, 3)]
        );
    }

    #[test]
    fn all_zero_lattice_breaks_ties_lexicographically() {
        let l = Lattice::emission_only(vec![vec![0.0; 3]; 3]).unwrap();
        let best = kbest_viterbi(&l, 2).unwrap();
        assert_eq!(best[0].labels, vec![0, 0, 0]);
        assert_eq!(best[1].labels, vec![0, 0, 1]);
        assert!(best.iter().all(|s| s.log_score == 0.0));
    }

    #[test]
    fn k_larger_than_space_returns_everything() {
        let best = kbest_viterbi(&two_by_two(), 10).unwrap();
        assert_eq!(best.len(), 4);
        assert!(kbest_viterbi(&two_by_two(), 0).is_err());
    }

    #[test]
    fn single_position_marginals_are_softmax() {
        let l = Lattice::emission_only(vec![vec![0.3, -1.2, 2.0]]).unwrap();
        let (m, log_z) = forward_backward(&l);
        let z: f64 = [0.3f64, -1.2, 2.0].iter().map(|v| v.exp()).sum();
        assert!((log_z - z.ln()).abs() < 1e-12);
        for (j, v) in [0.3f64, -1.2, 2.0].iter().enumerate() {
            assert!((m.get(0, j) - v.exp() / z).abs() < 1e-12);
        }
    }

    #[test]
    fn marginal_of_first_label_on_two_by_two() {
        let (m, _) = forward_backward(&two_by_two());
        let e = |x: f64| x.exp();
        let expected = (e(2.0) + e(1.5)) / (e(2.0) + e(1.5) + e(1.0) + e(0.0));
        assert!((m.get(0, 0) - expected).abs() < 1e-12);
        assert!((m.get(0, 0) - 0.7615).abs() < 1e-4);
    }

    #[test]
    fn uniform_lattice_has_uniform_marginals() {
        let l = Lattice::new(vec![vec![0.7; 4]; 5], vec![vec![0.2; 4]; 4]).unwrap();
        let (m, _) = forward_backward(&l);
        for row in m.rows() {
            for &p in row {
                assert!((p - 0.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn full_span_is_sequence_probability() {
        let l = two_by_two();
        let (_, log_z) = forward_backward(&l);
        let p = span_marginal(&l, 0, 2, &[0, 0]).unwrap();
        assert!((p - (l.score(&[0, 0]) - log_z).exp()).abs() < 1e-12);
    }

    #[test]
    fn length_one_span_matches_position_marginal() {
        let l = two_by_two();
        let p = span_marginal(&l, 0, 1, &[0]).unwrap();
        assert!((p - 0.7615).abs() < 1e-4);
        let (m, _) = forward_backward(&l);
        assert!((p - m.get(0, 0)).abs() < 1e-12);
    }

    #[test]
    fn emission_only_span_factorizes() {
        let l = Lattice::emission_only(vec![vec![0.1, 0.9], vec![1.5, -0.4], vec![0.0, 0.3]]).unwrap();
        let (m, _) = forward_backward(&l);
        let p = span_marginal(&l, 1, 3, &[0, 1]).unwrap();
        assert!((p - m.get(1, 0) * m.get(2, 1)).abs() < 1e-12);
    }

    #[test]
    fn span_marginal_rejects_bad_indices() {
        let l = two_by_two();
        assert!(matches!(span_marginal(&l, 1, 1, &[]), Err(Error::IndexOutOfRange(_))));
        assert!(matches!(span_marginal(&l, 0, 3, &[0, 0, 0]), Err(Error::IndexOutOfRange(_))));
        assert!(span_marginal(&l, 0, 1, &[5]).is_err());
    }

    /// Lattice whose single-position distribution puts `p` on label 0.
    fn lattice_with_prob(p: f64, len: usize) -> Lattice {
        let row = vec![p.ln(), (1.0 - p).ln()];
        Lattice::emission_only(vec![row; len]).unwrap()
    }

    fn seq_entity(labels: Vec<usize>) -> Entity {
        Entity {
            payload: EntityPayload::Sequence(labels),
            rank: 1,
        }
    }

    #[test]
    fn normalized_confidence_single_sample_identity() {
        let samples = McSampleSet::new(vec![lattice_with_prob(0.25, 1)]).unwrap();
        let c = normalized_confidence(&samples, &seq_entity(vec![0])).unwrap();
        assert!((c - 0.25).abs() < 1e-12);
    }

    #[test]
    fn normalized_confidence_two_samples_square_root() {
        // sequence probabilities 0.25 and 0.81 over two positions
        let samples = McSampleSet::new(vec![lattice_with_prob(0.5, 2), lattice_with_prob(0.9, 2)]).unwrap();
        let c = normalized_confidence(&samples, &seq_entity(vec![0, 0])).unwrap();
        assert!((c - 0.7).abs() < 1e-12);
    }

    #[test]
    fn normalized_confidence_fixed_point_at_one() {
        let row = vec![0.0, -800.0];
        let l = Lattice::emission_only(vec![row; 3]).unwrap();
        let samples = McSampleSet::new(vec![l.clone(), l]).unwrap();
        let c = normalized_confidence(&samples, &seq_entity(vec![0, 0, 0])).unwrap();
        assert_eq!(c, 1.0);
    }

    #[test]
    fn answer_confidence_is_geometric_mean_of_start_and_end() {
        let unary = vec![vec![2.0, 0.0], vec![0.0, 0.0], vec![0.0, 1.0]];
        let l = Lattice::emission_only(unary).unwrap();
        let samples = McSampleSet::new(vec![l]).unwrap();
        let entity = Entity {
            payload: EntityPayload::Answer(AnswerSpan { start: 0, end: 2 }),
            rank: 1,
        };
        let e = |x: f64| x.exp();
        let ps = e(2.0) / (e(2.0) + 2.0);
        let pe = e(1.0) / (e(1.0) + 2.0);
        let c = normalized_confidence(&samples, &entity).unwrap();
        assert!((c - (ps * pe).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn span_entity_uses_span_length_root() {
        let samples = McSampleSet::new(vec![lattice_with_prob(0.6, 4)]).unwrap();
        let entity = Entity {
            payload: EntityPayload::Span {
                span: Span::new(1, 4, "X"),
                tags: vec![0, 0, 0],
            },
            rank: 1,
        };
        let c = normalized_confidence(&samples, &entity).unwrap();
        assert!((c - 0.6).abs() < 1e-12);
    }
}
