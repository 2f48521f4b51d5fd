//! Domain types shared by every stage of the pipeline: label sets,
//! instances, score lattices, Monte-Carlo sample sets, entities and events.
//!
//! Lattice scores are log-potentials. Probabilities are only ever produced by
//! [`crate::decode`]. Named-entity spans are half-open token ranges
//! `[start, end)`; answer spans are inclusive `(start, end)` token positions,
//! matching how extractive readers emit a start index and an end index.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    SequenceLabeling,
    SpanNer,
    ExtractiveQa,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::SequenceLabeling => "sequence-labeling",
            Task::SpanNer => "span-ner",
            Task::ExtractiveQa => "extractive-qa",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Plain,
    Bio,
}

/// A BIO reading of a label.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tag<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
}

#[derive(Deserialize)]
struct LabelSetRepr {
    labels: Vec<String>,
    scheme: Scheme,
}

/// Ordered, duplicate-free list of output labels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LabelSetRepr")]
pub struct LabelSet {
    labels: Vec<String>,
    scheme: Scheme,
}

impl TryFrom<LabelSetRepr> for LabelSet {
    type Error = Error;

    fn try_from(repr: LabelSetRepr) -> Result<Self> {
        LabelSet::new(repr.labels, repr.scheme)
    }
}

impl LabelSet {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>, scheme: Scheme) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(Error::InvalidLabelSet("no labels".into()));
        }
        let mut seen = BTreeSet::new();
        for label in &labels {
            if !seen.insert(label.as_str()) {
                return Err(Error::InvalidLabelSet(format!("duplicate label `{label}`")));
            }
            if scheme == Scheme::Bio && parse_bio(label).is_none() {
                return Err(Error::InvalidLabelSet(format!(
                    "`{label}` is not `O`, `B-<class>` or `I-<class>`"
                )));
            }
        }
        Ok(Self { labels, scheme })
    }

    /// BIO label set `O, B-c1, I-c1, B-c2, I-c2, ...`.
    pub fn bio<S: AsRef<str>>(classes: &[S]) -> Result<Self> {
        let mut labels = vec!["O".to_string()];
        for class in classes {
            labels.push(format!("B-{}", class.as_ref()));
            labels.push(format!("I-{}", class.as_ref()));
        }
        Self::new(labels, Scheme::Bio)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, index: usize) -> &str {
        &self.labels[index]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn require_index(&self, label: &str) -> Result<usize> {
        self.index_of(label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    /// BIO tag of a label index. Plain label sets read every label as a class
    /// of its own, which never forms spans.
    pub fn tag(&self, index: usize) -> Tag<'_> {
        match self.scheme {
            Scheme::Bio => parse_bio(&self.labels[index]).unwrap_or(Tag::Outside),
            Scheme::Plain => Tag::Outside,
        }
    }

    /// Entity classes named by the BIO labels, in first-appearance order.
    pub fn classes(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for i in 0..self.labels.len() {
            if let Tag::Begin(c) | Tag::Inside(c) = self.tag(i) {
                if !out.contains(&c) {
                    out.push(c);
                }
            }
        }
        out
    }
}

fn parse_bio(label: &str) -> Option<Tag<'_>> {
    if label == "O" {
        return Some(Tag::Outside);
    }
    let (prefix, class) = label.split_once('-')?;
    if class.is_empty() {
        return None;
    }
    match prefix {
        "B" => Some(Tag::Begin(class)),
        "I" => Some(Tag::Inside(class)),
        _ => None,
    }
}

/// Labeled half-open token span `[start, end)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub class: String,
}

impl Span {
    pub fn new(start: usize, end: usize, class: impl Into<String>) -> Self {
        Self {
            start,
            end,
            class: class.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// Answer span given by inclusive start and end token positions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AnswerSpan {
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gold {
    Labels(Vec<String>),
    Spans(Vec<Span>),
    Answer(AnswerSpan),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub tokens: Vec<String>,
    pub task: Task,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<Gold>,
}

impl Instance {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Check every instance invariant against `labels`, handing the instance back
/// unchanged when they all hold.
pub fn validate_instance(instance: Instance, labels: &LabelSet) -> Result<Instance> {
    let len = instance.tokens.len();
    if len == 0 {
        return Err(Error::EmptyInput("instance has no tokens"));
    }
    let check_span = |start: usize, end: usize| {
        if start < end && end <= len {
            Ok(())
        } else {
            Err(Error::MalformedSpan { start, end, len })
        }
    };
    match (&instance.task, &instance.gold) {
        (_, None) => {}
        (Task::SequenceLabeling | Task::SpanNer, Some(Gold::Labels(gold))) => {
            if gold.len() != len {
                return Err(Error::DimensionMismatch(format!(
                    "instance `{}` has {len} tokens but {} gold labels",
                    instance.id,
                    gold.len()
                )));
            }
            for label in gold {
                labels.require_index(label)?;
            }
            if instance.task == Task::SpanNer && labels.scheme() != Scheme::Bio {
                return Err(Error::InvalidLabelSet(
                    "span-ner instances need a BIO label set".into(),
                ));
            }
        }
        (Task::SpanNer, Some(Gold::Spans(spans))) => {
            let classes = labels.classes();
            for span in spans {
                check_span(span.start, span.end)?;
                if !classes.contains(&span.class.as_str()) {
                    return Err(Error::UnknownLabel(span.class.clone()));
                }
            }
        }
        (Task::ExtractiveQa, Some(Gold::Answer(answer))) => {
            // inclusive end
            check_span(answer.start, answer.end + 1)?;
        }
        (task, Some(gold)) => {
            let kind = match gold {
                Gold::Labels(_) => "labels",
                Gold::Spans(_) => "spans",
                Gold::Answer(_) => "answer",
            };
            return Err(Error::GoldTaskMismatch(format!(
                "instance `{}`: {kind} gold for a {task} task",
                instance.id
            )));
        }
    }
    Ok(instance)
}

#[derive(Deserialize)]
struct LatticeRepr {
    unary: Vec<Vec<f64>>,
    #[serde(default)]
    transition: Option<Vec<Vec<f64>>>,
}

/// Unary (`L x C`) and transition (`C x C`) log-potentials for one
/// stochastic pass of a base model over one instance.
///
/// For extractive QA the lattice has two columns: column 0 holds the
/// answer-start logits and column 1 the answer-end logits; transitions are
/// ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LatticeRepr")]
pub struct Lattice {
    unary: Vec<Vec<f64>>,
    transition: Vec<Vec<f64>>,
}

impl TryFrom<LatticeRepr> for Lattice {
    type Error = Error;

    fn try_from(repr: LatticeRepr) -> Result<Self> {
        match repr.transition {
            Some(t) => Lattice::new(repr.unary, t),
            None => Lattice::emission_only(repr.unary),
        }
    }
}

impl Lattice {
    pub fn new(unary: Vec<Vec<f64>>, transition: Vec<Vec<f64>>) -> Result<Self> {
        let len = unary.len();
        if len == 0 {
            return Err(Error::EmptyInput("lattice has no positions"));
        }
        let c = unary[0].len();
        if c == 0 {
            return Err(Error::EmptyInput("lattice has no labels"));
        }
        for (t, row) in unary.iter().enumerate() {
            if row.len() != c {
                return Err(Error::DimensionMismatch(format!(
                    "unary row {t} has {} columns, expected {c}",
                    row.len()
                )));
            }
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteScore(format!("unary[{t}][{j}]")));
            }
        }
        if transition.len() != c || transition.iter().any(|r| r.len() != c) {
            return Err(Error::DimensionMismatch(format!(
                "transition matrix must be {c}x{c}"
            )));
        }
        for (a, row) in transition.iter().enumerate() {
            if let Some(b) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteScore(format!("transition[{a}][{b}]")));
            }
        }
        Ok(Self { unary, transition })
    }

    pub fn emission_only(unary: Vec<Vec<f64>>) -> Result<Self> {
        let c = unary.first().map_or(0, Vec::len);
        Self::new(unary, vec![vec![0.0; c]; c])
    }

    /// Sequence length `L`.
    pub fn len(&self) -> usize {
        self.unary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unary.is_empty()
    }

    /// Label count `C`.
    pub fn num_labels(&self) -> usize {
        self.transition.len()
    }

    #[inline]
    pub fn unary(&self, t: usize, label: usize) -> f64 {
        self.unary[t][label]
    }

    #[inline]
    pub fn transition(&self, from: usize, to: usize) -> f64 {
        self.transition[from][to]
    }

    pub fn unary_rows(&self) -> &[Vec<f64>] {
        &self.unary
    }

    pub fn transition_rows(&self) -> &[Vec<f64>] {
        &self.transition
    }

    pub fn has_transitions(&self) -> bool {
        self.transition.iter().flatten().any(|&v| v != 0.0)
    }

    /// Total log-potential of a label sequence, accumulated left to right.
    pub fn score(&self, labels: &[usize]) -> f64 {
        let mut score = self.unary[0][labels[0]];
        for t in 1..labels.len() {
            score = score + self.transition[labels[t - 1]][labels[t]] + self.unary[t][labels[t]];
        }
        score
    }

    pub fn check_dims(&self, len: usize, num_labels: usize) -> Result<()> {
        if self.len() != len || self.num_labels() != num_labels {
            return Err(Error::DimensionMismatch(format!(
                "lattice is {}x{}, expected {len}x{num_labels}",
                self.len(),
                self.num_labels()
            )));
        }
        Ok(())
    }

    /// Element-wise arithmetic mean of same-shaped lattices.
    pub fn mean<'a>(lattices: impl IntoIterator<Item = &'a Lattice>) -> Result<Lattice> {
        let mut iter = lattices.into_iter();
        let first = iter.next().ok_or(Error::EmptyInput("no lattices to average"))?;
        let mut unary = first.unary.clone();
        let mut transition = first.transition.clone();
        let mut count = 1usize;
        for lattice in iter {
            lattice.check_dims(first.len(), first.num_labels())?;
            for (acc, row) in unary.iter_mut().zip(&lattice.unary) {
                acc.iter_mut().zip(row).for_each(|(a, v)| *a += v);
            }
            for (acc, row) in transition.iter_mut().zip(&lattice.transition) {
                acc.iter_mut().zip(row).for_each(|(a, v)| *a += v);
            }
            count += 1;
        }
        let scale = 1.0 / count as f64;
        unary.iter_mut().flatten().for_each(|v| *v *= scale);
        transition.iter_mut().flatten().for_each(|v| *v *= scale);
        Lattice::new(unary, transition)
    }
}

/// `M >= 1` lattices drawn for one instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Lattice>", into = "Vec<Lattice>")]
pub struct McSampleSet {
    samples: Vec<Lattice>,
}

impl TryFrom<Vec<Lattice>> for McSampleSet {
    type Error = Error;

    fn try_from(samples: Vec<Lattice>) -> Result<Self> {
        McSampleSet::new(samples)
    }
}

impl From<McSampleSet> for Vec<Lattice> {
    fn from(set: McSampleSet) -> Self {
        set.samples
    }
}

impl McSampleSet {
    pub fn new(samples: Vec<Lattice>) -> Result<Self> {
        let first = samples.first().ok_or(Error::EmptyInput("sample set has no lattices"))?;
        let (len, c) = (first.len(), first.num_labels());
        for lattice in &samples[1..] {
            lattice.check_dims(len, c)?;
        }
        Ok(Self { samples })
    }

    /// Sample count `M`.
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Lattice] {
        &self.samples
    }

    pub fn seq_len(&self) -> usize {
        self.samples[0].len()
    }

    pub fn num_labels(&self) -> usize {
        self.samples[0].num_labels()
    }

    /// The averaged lattice that decoding consumes.
    pub fn mean_lattice(&self) -> Lattice {
        Lattice::mean(&self.samples).expect("sample set is non-empty and shape-consistent")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntityKind {
    Sequence,
    Span,
    AnswerSpan,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityPayload {
    /// A full label sequence, as label indices.
    Sequence(Vec<usize>),
    /// A labeled span plus the tag indices the producing decode assigned to
    /// its tokens.
    Span { span: Span, tags: Vec<usize> },
    Answer(AnswerSpan),
}

/// An entity of interest together with the MAP rank that produced it.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Entity {
    pub payload: EntityPayload,
    pub rank: usize,
}

impl Entity {
    pub fn kind(&self) -> EntityKind {
        match self.payload {
            EntityPayload::Sequence(_) => EntityKind::Sequence,
            EntityPayload::Span { .. } => EntityKind::Span,
            EntityPayload::Answer(_) => EntityKind::AnswerSpan,
        }
    }

    /// Number of per-token predictions the entity spans; the root taken when
    /// length-normalizing its probability. Answer spans always count 2.
    pub fn normalization_length(&self) -> usize {
        match &self.payload {
            EntityPayload::Sequence(labels) => labels.len(),
            EntityPayload::Span { span, .. } => span.len(),
            EntityPayload::Answer(_) => 2,
        }
    }

    /// Token extent covered by the entity.
    pub fn extent(&self) -> usize {
        match &self.payload {
            EntityPayload::Sequence(labels) => labels.len(),
            EntityPayload::Span { span, .. } => span.len(),
            EntityPayload::Answer(a) => a.end - a.start + 1,
        }
    }

    pub fn as_span(&self) -> Option<&Span> {
        match &self.payload {
            EntityPayload::Span { span, .. } => Some(span),
            _ => None,
        }
    }

    pub fn as_sequence(&self) -> Option<&[usize]> {
        match &self.payload {
            EntityPayload::Sequence(labels) => Some(labels),
            _ => None,
        }
    }

    pub fn as_answer(&self) -> Option<AnswerSpan> {
        match &self.payload {
            EntityPayload::Answer(a) => Some(*a),
            _ => None,
        }
    }

    /// Compare by the part of the payload that identifies the event; span tags
    /// do not distinguish two spans with equal boundaries and class.
    pub fn same_event(&self, other: &Entity) -> bool {
        match (&self.payload, &other.payload) {
            (EntityPayload::Span { span: a, .. }, EntityPayload::Span { span: b, .. }) => a == b,
            (a, b) => a == b,
        }
    }
}

/// An entity's event plus, when gold is known, whether the gold output lies
/// in it. `positive` is `None` in inference-only mode.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub entity: Entity,
    pub positive: Option<bool>,
}

/// An instance together with its Monte-Carlo lattices: one line of a dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledInstance {
    #[serde(flatten)]
    pub instance: Instance,
    pub samples: McSampleSet,
}

impl SampledInstance {
    pub fn validate(self, labels: &LabelSet) -> Result<Self> {
        let instance = validate_instance(self.instance, labels)?;
        let expected = match instance.task {
            Task::ExtractiveQa => 2,
            _ => labels.len(),
        };
        self.samples.samples()[0].check_dims(instance.len(), expected)?;
        Ok(Self {
            instance,
            samples: self.samples,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pos_labels() -> LabelSet {
        LabelSet::new(["DT", "NN", "VB"], Scheme::Plain).unwrap()
    }

    fn inst(tokens: &[&str], gold: Option<Gold>, task: Task) -> Instance {
        Instance {
            id: "x".into(),
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            task,
            gold,
        }
    }

    #[test]
    fn well_formed_instance_is_accepted() {
        let gold = Gold::Labels(vec!["DT".into(), "NN".into(), "VB".into()]);
        let i = inst(&["the", "dog", "runs"], Some(gold), Task::SequenceLabeling);
        assert_eq!(validate_instance(i.clone(), &pos_labels()).unwrap(), i);
    }

    #[test]
    fn short_gold_is_a_dimension_mismatch() {
        let gold = Gold::Labels(vec!["DT".into(), "NN".into()]);
        let i = inst(&["the", "dog", "runs"], Some(gold), Task::SequenceLabeling);
        assert!(matches!(
            validate_instance(i, &pos_labels()),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn unknown_label_is_named() {
        let gold = Gold::Labels(vec!["DT".into(), "JJ".into(), "VB".into()]);
        let i = inst(&["the", "big", "runs"], Some(gold), Task::SequenceLabeling);
        match validate_instance(i, &pos_labels()) {
            Err(Error::UnknownLabel(l)) => assert_eq!(l, "JJ"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_span_is_malformed() {
        let labels = LabelSet::bio(&["PER"]).unwrap();
        let gold = Gold::Spans(vec![Span::new(2, 2, "PER")]);
        let i = inst(&["a", "b", "c"], Some(gold), Task::SpanNer);
        assert!(matches!(
            validate_instance(i, &labels),
            Err(Error::MalformedSpan { start: 2, end: 2, len: 3 })
        ));
    }

    #[test]
    fn answer_past_the_end_is_malformed() {
        let labels = LabelSet::new(["start", "end"], Scheme::Plain).unwrap();
        let gold = Gold::Answer(AnswerSpan { start: 1, end: 3 });
        let i = inst(&["a", "b", "c"], Some(gold), Task::ExtractiveQa);
        assert!(matches!(validate_instance(i, &labels), Err(Error::MalformedSpan { .. })));
    }

    #[test]
    fn gold_kind_must_match_task() {
        let gold = Gold::Answer(AnswerSpan { start: 0, end: 0 });
        let i = inst(&["a"], Some(gold), Task::SequenceLabeling);
        assert!(matches!(
            validate_instance(i, &pos_labels()),
            Err(Error::GoldTaskMismatch(_))
        ));
    }

    #[test]
    fn bio_label_set_rules() {
        assert!(LabelSet::new(["O", "I-PER"], Scheme::Bio).is_ok());
        assert!(LabelSet::new(["O", "X-PER"], Scheme::Bio).is_err());
        assert!(LabelSet::new(["O", "O"], Scheme::Plain).is_err());
        assert!(LabelSet::new(Vec::<String>::new(), Scheme::Plain).is_err());
        let l = LabelSet::bio(&["PER", "LOC"]).unwrap();
        assert_eq!(l.tag(3), Tag::Begin("LOC"));
        assert_eq!(l.classes(), vec!["PER", "LOC"]);
    }

    #[test]
    fn lattice_rejects_ragged_and_non_finite() {
        assert!(Lattice::emission_only(vec![vec![0.0, 1.0], vec![0.0]]).is_err());
        assert!(matches!(
            Lattice::emission_only(vec![vec![0.0, f64::NAN]]),
            Err(Error::NonFiniteScore(_))
        ));
        assert!(Lattice::new(vec![vec![0.0, 1.0]], vec![vec![0.0]]).is_err());
    }

    #[test]
    fn dump_line_deserializes_and_defaults_transition() {
        let line = r#"{"id":"q1","tokens":["a","b"],"task":"extractive-qa",
            "gold":{"answer":{"start":0,"end":1}},
            "samples":[{"unary":[[1.0,0.0],[0.0,2.0]]}]}"#;
        let s: SampledInstance = serde_json::from_str(line).unwrap();
        assert_eq!(s.samples.len(), 1);
        assert_eq!(s.samples.samples()[0].transition_rows(), &[vec![0.0, 0.0], vec![0.0, 0.0]]);
        let labels = LabelSet::new(["start", "end"], Scheme::Plain).unwrap();
        assert!(s.validate(&labels).is_ok());
    }

    #[test]
    fn empty_sample_set_is_rejected() {
        let line = r#"{"id":"q","tokens":["a"],"task":"sequence-labeling","samples":[]}"#;
        assert!(serde_json::from_str::<SampledInstance>(line).is_err());
    }

    #[test]
    fn mean_lattice_averages_entries() {
        let a = Lattice::new(vec![vec![1.0, 3.0]], vec![vec![0.0, 2.0], vec![0.0, 0.0]]).unwrap();
        let b = Lattice::new(vec![vec![3.0, 1.0]], vec![vec![2.0, 0.0], vec![0.0, 4.0]]).unwrap();
        let m = McSampleSet::new(vec![a, b]).unwrap().mean_lattice();
        assert_eq!(m.unary_rows(), &[vec![2.0, 2.0]]);
        assert_eq!(m.transition_rows(), &[vec![1.0, 1.0], vec![0.0, 2.0]]);
    }

    #[test]
    fn core_types_are_send_and_sync() {
        fn assert_send_sync<T: Send + Sync>() {}
        assert_send_sync::<LabelSet>();
        assert_send_sync::<Instance>();
        assert_send_sync::<McSampleSet>();
        assert_send_sync::<Event>();
    }
}
