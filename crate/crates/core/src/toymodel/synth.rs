//! Seeded HMM corpora with tunable token ambiguity.
//!
//! Every label owns a "home" vocabulary with Zipf-distributed frequencies.
//! With probability `confusability` a token is drawn instead from a shared
//! pool that every label emits alike, so it says nothing about its label and
//! only context can resolve it. Home tokens of label `j` share a letter
//! prefix, which the CRF sees as the token's class bucket; the pool has the
//! next prefix after the last label.

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::extract_spans;
use crate::types::{Gold, Instance, LabelSet, Scheme, Task};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// `sequence-labeling` (plain tags) or `span-ner` (BIO tags).
    pub task: Task,
    /// Hidden states for sequence labeling, entity classes for NER.
    pub classes: usize,
    /// Size of each home vocabulary and of the shared pool.
    pub vocab_per_label: usize,
    pub zipf_exponent: f64,
    pub confusability: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            task: Task::SpanNer,
            classes: 3,
            vocab_per_label: 40,
            zipf_exponent: 1.0,
            confusability: 0.3,
            min_len: 6,
            max_len: 16,
            n_train: 500,
            n_dev: 100,
            n_test: 100,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.task == Task::ExtractiveQa {
            return Err(Error::Config("the synthetic generator emits sequence-labeling or span-ner corpora".into()));
        }
        if self.classes == 0 || self.vocab_per_label == 0 {
            return Err(Error::Config("need at least one class and one token per label".into()));
        }
        if self.task == Task::SequenceLabeling && self.classes < 2 {
            return Err(Error::Config("sequence labeling needs at least two states".into()));
        }
        if !(0.0..=1.0).contains(&self.confusability) {
            return Err(Error::Config(format!("confusability {} outside [0, 1]", self.confusability)));
        }
        if !(self.zipf_exponent.is_finite() && self.zipf_exponent >= 0.0) {
            return Err(Error::Config("zipf exponent must be finite and >= 0".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config(format!("bad length range {}..={}", self.min_len, self.max_len)));
        }
        if self.n_train == 0 {
            return Err(Error::Config("empty training split".into()));
        }
        Ok(())
    }

    pub fn label_set(&self) -> Result<LabelSet> {
        match self.task {
            Task::SpanNer => {
                let classes: Vec<String> = (0..self.classes).map(|i| format!("C{i}")).collect();
                LabelSet::bio(&classes)
            }
            _ => LabelSet::new((0..self.classes).map(|i| format!("T{i}")), Scheme::Plain),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub labels: LabelSet,
    pub train: Vec<Instance>,
    pub dev: Vec<Instance>,
    pub test: Vec<Instance>,
}

/// Base-26 letter prefix for label `j`: a, b, ..., z, ba, bb, ...
fn letters(mut j: usize) -> String {
    let mut out = Vec::new();
    loop {
        out.push(b'a' + (j % 26) as u8);
        j /= 26;
        if j == 0 {
            break;
        }
    }
    out.reverse();
    String::from_utf8(out).expect("ascii")
}

fn home_token(label: usize, rank: usize) -> String {
    format!("{}{}", letters(label), rank)
}

fn dirichlet_row(rng: &mut ChaCha8Rng, n: usize, concentration: f64) -> Vec<f64> {
    let gamma = Gamma::new(concentration, 1.0).expect("positive shape");
    let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng).max(1e-12)).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|d| d / total).collect()
}

struct Hmm {
    start: Vec<f64>,
    trans: Vec<Vec<f64>>,
}

/// Transition structure for plain tags: random rows with a mild preference
/// for staying put.
fn plain_hmm(rng: &mut ChaCha8Rng, n: usize) -> Hmm {
    let trans = (0..n)
        .map(|i| {
            let mut row = dirichlet_row(rng, n, 0.7);
            row[i] += 0.2;
            let total: f64 = row.iter().sum();
            row.into_iter().map(|p| p / total).collect()
        })
        .collect();
    Hmm {
        start: dirichlet_row(rng, n, 1.0),
        trans,
    }
}

/// BIO structure: `I-X` is reachable only from `B-X` or `I-X`.
fn bio_hmm(rng: &mut ChaCha8Rng, classes: usize) -> Hmm {
    let n = 1 + 2 * classes;
    let b = |c: usize| 1 + 2 * c;
    let i = |c: usize| 2 + 2 * c;
    let class_mix = dirichlet_row(rng, classes, 2.0);
    let enter: f64 = rng.random_range(0.15..0.3);
    let mut trans = vec![vec![0.0; n]; n];
    trans[0][0] = 1.0 - enter;
    for c in 0..classes {
        trans[0][b(c)] = enter * class_mix[c];
    }
    for c in 0..classes {
        let cont: f64 = rng.random_range(0.35..0.65);
        let stay: f64 = rng.random_range(0.2..0.45);
        let hop = 0.08;
        for (from, keep) in [(b(c), cont), (i(c), stay)] {
            trans[from][i(c)] = keep;
            for d in 0..classes {
                trans[from][b(d)] += hop * class_mix[d];
            }
            trans[from][0] = 1.0 - keep - hop;
        }
    }
    let mut start = vec![0.0; n];
    start[0] = 1.0 - enter;
    for c in 0..classes {
        start[b(c)] = enter * class_mix[c];
    }
    Hmm { start, trans }
}

fn draw(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    WeightedIndex::new(probs).expect("valid distribution").sample(rng)
}

/// Draw a corpus; identical configs give identical corpora.
pub fn make_synthetic_corpus(config: &SynthConfig) -> Result<Corpus> {
    config.validate()?;
    let labels = config.label_set()?;
    let n = labels.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let hmm = match config.task {
        Task::SpanNer => bio_hmm(&mut rng, config.classes),
        _ => plain_hmm(&mut rng, n),
    };
    let zipf: Vec<f64> = (0..config.vocab_per_label)
        .map(|r| 1.0 / ((r + 1) as f64).powf(config.zipf_exponent))
        .collect();
    let zipf = WeightedIndex::new(&zipf).expect("positive weights");
    let sentence = |rng: &mut ChaCha8Rng, id: String| -> Result<Instance> {
        let len = rng.random_range(config.min_len..=config.max_len);
        let mut tags = Vec::with_capacity(len);
        let mut tokens = Vec::with_capacity(len);
        let mut state = draw(rng, &hmm.start);
        for t in 0..len {
            if t > 0 {
                state = draw(rng, &hmm.trans[state]);
            }
            let home = if rng.random::<f64>() < config.confusability { n } else { state };
            tokens.push(home_token(home, zipf.sample(rng)));
            tags.push(state);
        }
        let gold = match config.task {
            Task::SpanNer => Gold::Spans(extract_spans(&tags, &labels)),
            _ => Gold::Labels(tags.iter().map(|&t| labels.label(t).to_string()).collect()),
        };
        Ok(Instance {
            id,
            tokens,
            task: config.task,
            gold: Some(gold),
        })
    };

    let mut split = |name: &str, count: usize| -> Result<Vec<Instance>> {
        (0..count).map(|i| sentence(&mut rng, format!("{name}-{i:05}"))).collect()
    };
    let train = split("train", config.n_train)?;
    let dev = split("dev", config.n_dev)?;
    let test = split("test", config.n_test)?;
    Ok(Corpus {
        labels,
        train,
        dev,
        test,
    })
}
