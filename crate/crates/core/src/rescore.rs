//! Re-ranking and filtering of top-k entities by calibrated confidence.
//!
//! Sequences and answers are re-ranked: the most confident event wins, with
//! ties going to the better MAP rank. Spans are filtered by a confidence
//! threshold and, optionally, overlapping survivors are resolved.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{AnswerSpan, Entity, Span};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RescoreMode {
    /// Keep every span; only the overlap policy applies.
    RankSelect,
    #[default]
    ThresholdFilter,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OverlapPolicy {
    KeepAll,
    /// Among overlapping spans keep the most confident; ties go to the
    /// earlier start, then the shorter span.
    #[default]
    BestWins,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RescoreConfig {
    pub mode: RescoreMode,
    /// Minimum confidence a span needs to survive. Used only in
    /// threshold-filter mode.
    pub threshold: f64,
    pub overlap: OverlapPolicy,
}

impl Default for RescoreConfig {
    fn default() -> Self {
        Self {
            mode: RescoreMode::ThresholdFilter,
            threshold: 0.5,
            overlap: OverlapPolicy::BestWins,
        }
    }
}

impl RescoreConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        Ok(())
    }
}

/// An entity with its calibrated confidence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredEntity {
    pub entity: Entity,
    pub confidence: f64,
}

fn argmax_by_confidence(events: &[ScoredEntity]) -> Result<&ScoredEntity> {
    events
        .iter()
        .min_by(|a, b| {
            b.confidence
                .total_cmp(&a.confidence)
                .then(a.entity.rank.cmp(&b.entity.rank))
        })
        .ok_or(Error::EmptyInput("nothing to re-rank"))
}

/// The most confident label sequence.
pub fn rescore_sequences(events: &[ScoredEntity]) -> Result<Vec<usize>> {
    let best = argmax_by_confidence(events)?;
    best.entity
        .as_sequence()
        .map(<[usize]>::to_vec)
        .ok_or_else(|| Error::GoldTaskMismatch("rescore_sequences given a non-sequence entity".into()))
}

/// The most confident answer span.
pub fn rescore_answers(events: &[ScoredEntity]) -> Result<AnswerSpan> {
    argmax_by_confidence(events)?
        .entity
        .as_answer()
        .ok_or_else(|| Error::GoldTaskMismatch("rescore_answers given a non-answer entity".into()))
}

fn best_wins_order(a: &(&Span, f64, usize), b: &(&Span, f64, usize)) -> Ordering {
    b.1.total_cmp(&a.1)
        .then(a.0.start.cmp(&b.0.start))
        .then(a.0.len().cmp(&b.0.len()))
        .then(a.2.cmp(&b.2))
        .then(a.0.cmp(b.0))
}

/// The spans that survive filtering, sorted by position.
pub fn rescore_spans(events: &[ScoredEntity], config: &RescoreConfig) -> Result<Vec<Span>> {
    config.validate()?;
    let mut survivors: Vec<(&Span, f64, usize)> = Vec::with_capacity(events.len());
    for e in events {
        let span = e
            .entity
            .as_span()
            .ok_or_else(|| Error::GoldTaskMismatch("rescore_spans given a non-span entity".into()))?;
        if config.mode == RescoreMode::ThresholdFilter && e.confidence < config.threshold {
            continue;
        }
        survivors.push((span, e.confidence, e.entity.rank));
    }
    let mut kept: Vec<Span> = match config.overlap {
        OverlapPolicy::KeepAll => survivors.into_iter().map(|(s, _, _)| s.clone()).collect(),
        OverlapPolicy::BestWins => {
            survivors.sort_by(best_wins_order);
            let mut kept: Vec<Span> = Vec::new();
            for (span, _, _) in survivors {
                if !kept.iter().any(|k| k.overlaps(span)) {
                    kept.push(span.clone());
                }
            }
            kept
        }
    };
    kept.sort();
    kept.dedup();
    Ok(kept)
}
