//! Entities of interest and their events, built from top-k decodes.
//!
//! Sequence tasks use whole label sequences, NER uses the labeled spans found
//! in any of the k sequences, and extractive QA uses the k best answer spans.
//! An entity that turns up under several ranks is kept once, at its best rank.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::decode::{kbest_viterbi, ScoredSequence};
use crate::error::{Error, Result};
use crate::types::{AnswerSpan, Entity, EntityPayload, Event, Gold, Instance, LabelSet, Lattice, Span, Tag, Task};

/// Default upper bound on answer length, in tokens.
pub const DEFAULT_MAX_ANSWER_LEN: usize = 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventSet {
    pub instance_id: String,
    pub events: Vec<Event>,
    pub k_used: usize,
}

impl EventSet {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn positive_count(&self) -> usize {
        self.events.iter().filter(|e| e.positive == Some(true)).count()
    }
}

/// Gold annotation in the form positivity checks need.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GoldTarget {
    Sequence(Vec<usize>),
    Spans(BTreeSet<Span>),
    Answer(AnswerSpan),
}

impl GoldTarget {
    /// Whether the gold output lies in the entity's event set.
    pub fn contains(&self, entity: &Entity) -> bool {
        match (self, &entity.payload) {
            (GoldTarget::Sequence(gold), EntityPayload::Sequence(labels)) => gold == labels,
            (GoldTarget::Spans(gold), EntityPayload::Span { span, .. }) => gold.contains(span),
            (GoldTarget::Answer(gold), EntityPayload::Answer(a)) => gold == a,
            _ => false,
        }
    }

    pub fn spans(&self) -> Option<&BTreeSet<Span>> {
        match self {
            GoldTarget::Spans(s) => Some(s),
            _ => None,
        }
    }
}

/// Resolve an instance's gold annotation against the label set.
pub fn resolve_gold(instance: &Instance, labels: &LabelSet) -> Result<Option<GoldTarget>> {
    let Some(gold) = &instance.gold else {
        return Ok(None);
    };
    let target = match (instance.task, gold) {
        (Task::SequenceLabeling, Gold::Labels(names)) => GoldTarget::Sequence(label_indices(names, labels)?),
        (Task::SpanNer, Gold::Labels(names)) => {
            let tags = label_indices(names, labels)?;
            GoldTarget::Spans(extract_spans(&tags, labels).into_iter().collect())
        }
        (Task::SpanNer, Gold::Spans(spans)) => GoldTarget::Spans(spans.iter().cloned().collect()),
        (Task::ExtractiveQa, Gold::Answer(a)) => GoldTarget::Answer(*a),
        (task, _) => {
            return Err(Error::GoldTaskMismatch(format!(
                "instance `{}` has gold of the wrong kind for {task}",
                instance.id
            )))
        }
    };
    Ok(Some(target))
}

fn label_indices(names: &[String], labels: &LabelSet) -> Result<Vec<usize>> {
    names.iter().map(|n| labels.require_index(n)).collect()
}

/// Maximal BIO spans with the tag indices that produced them.
///
/// A span opens at `B-X`, or at `I-X` when the previous token does not belong
/// to an open `X` span, and closes before `O`, any `B-*`, or `I-Y` with
/// `Y != X`.
pub fn extract_tagged_spans(tags: &[usize], labels: &LabelSet) -> Vec<(Span, Vec<usize>)> {
    let mut out = Vec::new();
    let mut open: Option<(usize, &str)> = None;
    let close = |open: &mut Option<(usize, &str)>, end: usize, out: &mut Vec<(Span, Vec<usize>)>| {
        if let Some((start, class)) = open.take() {
            out.push((Span::new(start, end, class), tags[start..end].to_vec()));
        }
    };
    for (t, &y) in tags.iter().enumerate() {
        match labels.tag(y) {
            Tag::Outside => close(&mut open, t, &mut out),
            Tag::Begin(class) => {
                close(&mut open, t, &mut out);
                open = Some((t, class));
            }
            Tag::Inside(class) => match open {
                Some((_, c)) if c == class => {}
                _ => {
                    close(&mut open, t, &mut out);
                    open = Some((t, class));
                }
            },
        }
    }
    close(&mut open, tags.len(), &mut out);
    out
}

pub fn extract_spans(tags: &[usize], labels: &LabelSet) -> Vec<Span> {
    extract_tagged_spans(tags, labels).into_iter().map(|(s, _)| s).collect()
}

fn finish(instance_id: &str, entities: Vec<Entity>, k_used: usize, gold: Option<&GoldTarget>) -> EventSet {
    let mut kept: Vec<Entity> = Vec::with_capacity(entities.len());
    for entity in entities {
        match kept.iter_mut().find(|e| e.same_event(&entity)) {
            Some(existing) if entity.rank < existing.rank => *existing = entity,
            Some(_) => {}
            None => kept.push(entity),
        }
    }
    EventSet {
        instance_id: instance_id.to_string(),
        events: kept
            .into_iter()
            .map(|entity| Event {
                positive: gold.map(|g| g.contains(&entity)),
                entity,
            })
            .collect(),
        k_used,
    }
}

/// One event per distinct decoded sequence; positive iff it equals gold.
pub fn build_sequence_events(instance_id: &str, decodes: &[ScoredSequence], gold: Option<&[usize]>) -> EventSet {
    let entities = decodes
        .iter()
        .map(|d| Entity {
            payload: EntityPayload::Sequence(d.labels.clone()),
            rank: d.rank,
        })
        .collect();
    let gold = gold.map(|g| GoldTarget::Sequence(g.to_vec()));
    finish(instance_id, entities, decodes.len(), gold.as_ref())
}

/// Union of the spans found in every decode; positive iff the span (with
/// exact boundaries and class) is a gold span.
pub fn build_span_events(
    instance_id: &str,
    decodes: &[ScoredSequence],
    labels: &LabelSet,
    gold_spans: Option<&BTreeSet<Span>>,
) -> EventSet {
    let entities = decodes
        .iter()
        .flat_map(|d| {
            extract_tagged_spans(&d.labels, labels)
                .into_iter()
                .map(move |(span, tags)| Entity {
                    payload: EntityPayload::Span { span, tags },
                    rank: d.rank,
                })
        })
        .collect();
    let gold = gold_spans.map(|g| GoldTarget::Spans(g.clone()));
    finish(instance_id, entities, decodes.len(), gold.as_ref())
}

/// The `k` best answer spans by summed start and end score, subject to
/// `start <= end` and `end - start + 1 <= max_answer_len`. Ties go to the
/// lexicographically smaller `(start, end)`.
pub fn top_answer_spans(
    start_scores: &[f64],
    end_scores: &[f64],
    k: usize,
    max_answer_len: usize,
) -> Result<Vec<(AnswerSpan, f64)>> {
    if start_scores.len() != end_scores.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} start scores but {} end scores",
            start_scores.len(),
            end_scores.len()
        )));
    }
    if k == 0 || max_answer_len == 0 {
        return Err(Error::Config("answer enumeration needs k >= 1 and max length >= 1".into()));
    }
    let len = start_scores.len();
    let mut pairs = Vec::new();
    for start in 0..len {
        for end in start..len.min(start + max_answer_len) {
            pairs.push((AnswerSpan { start, end }, start_scores[start] + end_scores[end]));
        }
    }
    pairs.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    pairs.truncate(k);
    Ok(pairs)
}

pub fn build_qa_events(
    instance_id: &str,
    start_scores: &[f64],
    end_scores: &[f64],
    k: usize,
    max_answer_len: usize,
    gold: Option<AnswerSpan>,
) -> Result<EventSet> {
    let pairs = top_answer_spans(start_scores, end_scores, k, max_answer_len)?;
    let entities = pairs
        .iter()
        .enumerate()
        .map(|(i, (a, _))| Entity {
            payload: EntityPayload::Answer(*a),
            rank: i + 1,
        })
        .collect();
    let gold = gold.map(GoldTarget::Answer);
    Ok(finish(instance_id, entities, k, gold.as_ref()))
}

/// Candidate events for one instance: decode the (mean) lattice to its top
/// `k` outputs and collect the task's entities, labeled against gold when the
/// instance has it.
pub fn candidate_events(
    instance: &Instance,
    lattice: &Lattice,
    labels: &LabelSet,
    k: usize,
    max_answer_len: usize,
) -> Result<EventSet> {
    let gold = resolve_gold(instance, labels)?;
    match instance.task {
        Task::SequenceLabeling => {
            let decodes = kbest_viterbi(lattice, k)?;
            let gold = match &gold {
                Some(GoldTarget::Sequence(g)) => Some(g.as_slice()),
                _ => None,
            };
            Ok(build_sequence_events(&instance.id, &decodes, gold))
        }
        Task::SpanNer => {
            let decodes = kbest_viterbi(lattice, k)?;
            Ok(build_span_events(
                &instance.id,
                &decodes,
                labels,
                gold.as_ref().and_then(GoldTarget::spans),
            ))
        }
        Task::ExtractiveQa => {
            if lattice.num_labels() != 2 {
                return Err(Error::DimensionMismatch(
                    "extractive-qa lattices need exactly two columns (start, end)".into(),
                ));
            }
            let starts: Vec<f64> = lattice.unary_rows().iter().map(|r| r[0]).collect();
            let ends: Vec<f64> = lattice.unary_rows().iter().map(|r| r[1]).collect();
            let gold = match gold {
                Some(GoldTarget::Answer(a)) => Some(a),
                _ => None,
            };
            build_qa_events(&instance.id, &starts, &ends, k, max_answer_len, gold)
        }
    }
}
