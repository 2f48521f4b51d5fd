//! Linear-chain CRF over sparse token features, trained by full-batch
//! gradient descent on mean negative log-likelihood plus `l2 * |theta|^2`.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decode::{kbest_viterbi, ForwardBackward};
use crate::error::{Error, Result};
use crate::events::extract_spans;
use crate::metrics::micro_f1;
use crate::types::{Gold, Instance, LabelSet, Lattice, Scheme, Task};

const FORMAT_VERSION: u32 = 1;

/// Sparse feature names for one token: a bias, the token itself, and its
/// class bucket (the leading run of non-digit characters, lowercased).
pub fn token_features(token: &str) -> [String; 3] {
    let bucket: String = token
        .chars()
        .take_while(|c| !c.is_ascii_digit())
        .flat_map(char::to_lowercase)
        .collect();
    ["b".to_string(), format!("w:{token}"), format!("c:{bucket}")]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrfConfig {
    /// Weight of the squared L2 penalty.
    pub l2: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
}

impl Default for CrfConfig {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            learning_rate: 1.0,
            max_epochs: 200,
            patience: 20,
        }
    }
}

/// Trained CRF weights. Unknown features contribute nothing at inference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "CrfFile", try_from = "CrfFile")]
pub struct CrfModel {
    labels: LabelSet,
    features: Vec<String>,
    index: HashMap<String, usize>,
    /// Row-major `features x labels`.
    emission: Vec<f64>,
    transition: Vec<Vec<f64>>,
    l2: f64,
    /// Training occurrences of each feature.
    feature_counts: Vec<u64>,
    /// Training occurrences of each gold label bigram.
    transition_counts: Vec<Vec<u64>>,
    config_hash: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct CrfFile {
    format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
    labels: LabelSet,
    l2: f64,
    features: Vec<String>,
    feature_counts: Vec<u64>,
    transition_counts: Vec<Vec<u64>>,
    emission: Vec<Vec<f64>>,
    transition: Vec<Vec<f64>>,
}

impl From<CrfModel> for CrfFile {
    fn from(m: CrfModel) -> Self {
        let c = m.labels.len();
        CrfFile {
            format_version: FORMAT_VERSION,
            config_hash: m.config_hash,
            emission: m.emission.chunks(c).map(<[f64]>::to_vec).collect(),
            labels: m.labels,
            l2: m.l2,
            features: m.features,
            feature_counts: m.feature_counts,
            transition_counts: m.transition_counts,
            transition: m.transition,
        }
    }
}

impl TryFrom<CrfFile> for CrfModel {
    type Error = Error;

    fn try_from(file: CrfFile) -> Result<Self> {
        if file.format_version != FORMAT_VERSION {
            return Err(Error::FormatVersion {
                what: "CRF model",
                found: file.format_version,
                expected: FORMAT_VERSION,
            });
        }
        let c = file.labels.len();
        if file.emission.len() != file.features.len() || file.emission.iter().any(|r| r.len() != c) {
            return Err(Error::DimensionMismatch("emission table does not match features x labels".into()));
        }
        if file.transition.len() != c || file.transition.iter().any(|r| r.len() != c) {
            return Err(Error::DimensionMismatch("transition table is not labels x labels".into()));
        }
        if file.feature_counts.len() != file.features.len()
            || file.transition_counts.len() != c
            || file.transition_counts.iter().any(|r| r.len() != c)
        {
            return Err(Error::DimensionMismatch("count tables do not match the model".into()));
        }
        let mut model = CrfModel::new(file.labels, file.features, file.l2);
        model.emission = file.emission.concat();
        model.transition = file.transition;
        model.feature_counts = file.feature_counts;
        model.transition_counts = file.transition_counts;
        model.config_hash = file.config_hash;
        if !model.params().iter().all(|w| w.is_finite()) {
            return Err(Error::Numeric("non-finite CRF weight".into()));
        }
        Ok(model)
    }
}

/// An instance reduced to feature ids and gold label ids.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub feats: Vec<Vec<usize>>,
    pub gold: Vec<usize>,
}

/// Gold label indices for a sequence task. Span gold is converted to BIO.
pub fn gold_tags(instance: &Instance, labels: &LabelSet) -> Result<Vec<usize>> {
    match &instance.gold {
        None => Err(Error::MissingGold(instance.id.clone())),
        Some(Gold::Labels(tags)) => tags.iter().map(|t| labels.require_index(t)).collect(),
        Some(Gold::Spans(spans)) => {
            if labels.scheme() != Scheme::Bio {
                return Err(Error::InvalidLabelSet("span gold needs a BIO label set".into()));
            }
            let outside = labels.require_index("O")?;
            let mut tags = vec![outside; instance.len()];
            for s in spans {
                tags[s.start] = labels.require_index(&format!("B-{}", s.class))?;
                for t in &mut tags[s.start + 1..s.end] {
                    *t = labels.require_index(&format!("I-{}", s.class))?;
                }
            }
            Ok(tags)
        }
        Some(Gold::Answer(_)) => Err(Error::Config("the toy CRF models sequence tasks only".into())),
    }
}

impl CrfModel {
    /// Zero weights over the given feature names.
    pub fn new(labels: LabelSet, features: Vec<String>, l2: f64) -> Self {
        let index = features.iter().enumerate().map(|(i, f)| (f.clone(), i)).collect();
        let c = labels.len();
        Self {
            emission: vec![0.0; features.len() * c],
            transition: vec![vec![0.0; c]; c],
            feature_counts: vec![0; features.len()],
            transition_counts: vec![vec![0; c]; c],
            labels,
            features,
            index,
            l2,
            config_hash: None,
        }
    }

    /// Tag the model with the hash of the configuration that built it.
    pub fn with_config_hash(mut self, hash: Option<String>) -> Self {
        self.config_hash = hash;
        self
    }

    pub fn config_hash(&self) -> Option<&str> {
        self.config_hash.as_deref()
    }

    /// Zero weights over every feature seen in `instances`, with occurrence
    /// counts taken from the same instances.
    pub fn for_corpus(labels: LabelSet, instances: &[Instance], l2: f64) -> Result<Self> {
        let names: BTreeSet<String> = instances
            .iter()
            .flat_map(|i| i.tokens.iter().flat_map(|t| token_features(t)))
            .collect();
        let mut model = Self::new(labels, names.into_iter().collect(), l2);
        for inst in instances {
            for ids in model.feature_ids(&inst.tokens) {
                for f in ids {
                    model.feature_counts[f] += 1;
                }
            }
            if inst.gold.is_some() {
                let gold = gold_tags(inst, &model.labels)?;
                for w in gold.windows(2) {
                    model.transition_counts[w[0]][w[1]] += 1;
                }
            }
        }
        Ok(model)
    }

    pub fn feature_count(&self, feature: usize) -> u64 {
        self.feature_counts[feature]
    }

    pub fn transition_count(&self, from: usize, to: usize) -> u64 {
        self.transition_counts[from][to]
    }

    pub fn labels(&self) -> &LabelSet {
        &self.labels
    }

    pub fn num_features(&self) -> usize {
        self.features.len()
    }

    pub fn l2(&self) -> f64 {
        self.l2
    }

    pub fn num_params(&self) -> usize {
        self.emission.len() + self.labels.len() * self.labels.len()
    }

    /// Emission weights followed by the row-major transition matrix.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.emission.clone();
        p.extend(self.transition.iter().flatten());
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::DimensionMismatch(format!(
                "{} parameters for a model with {}",
                params.len(),
                self.num_params()
            )));
        }
        let (e, t) = params.split_at(self.emission.len());
        self.emission.copy_from_slice(e);
        let c = self.labels.len();
        for (row, chunk) in self.transition.iter_mut().zip(t.chunks(c)) {
            row.copy_from_slice(chunk);
        }
        Ok(())
    }

    pub fn feature_ids(&self, tokens: &[String]) -> Vec<Vec<usize>> {
        tokens
            .iter()
            .map(|t| token_features(t).iter().filter_map(|f| self.index.get(f).copied()).collect())
            .collect()
    }

    pub fn encode(&self, instance: &Instance) -> Result<Encoded> {
        Ok(Encoded {
            feats: self.feature_ids(&instance.tokens),
            gold: gold_tags(instance, &self.labels)?,
        })
    }

    /// Lattice from feature ids, with optional per-weight offsets.
    pub(crate) fn lattice_from_ids(
        &self,
        feats: &[Vec<usize>],
        emission: &dyn Fn(usize, usize) -> f64,
        transition: &[Vec<f64>],
    ) -> Result<Lattice> {
        let c = self.labels.len();
        let unary = feats
            .iter()
            .map(|ids| (0..c).map(|y| ids.iter().map(|&f| emission(f, y)).sum()).collect())
            .collect();
        Lattice::new(unary, transition.to_vec())
    }

    pub fn emission_weight(&self, feature: usize, label: usize) -> f64 {
        self.emission[feature * self.labels.len() + label]
    }

    pub fn transition_weights(&self) -> &[Vec<f64>] {
        &self.transition
    }

    pub fn lattice(&self, tokens: &[String]) -> Result<Lattice> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput("cannot score an empty token sequence"));
        }
        let feats = self.feature_ids(tokens);
        self.lattice_from_ids(&feats, &|f, y| self.emission_weight(f, y), &self.transition)
    }

    pub fn predict(&self, tokens: &[String]) -> Result<Vec<usize>> {
        let best = kbest_viterbi(&self.lattice(tokens)?, 1)?;
        Ok(best.into_iter().next().expect("k = 1 yields one path").labels)
    }

    /// Mean negative log-likelihood plus `l2 * |theta|^2`.
    pub fn objective(&self, data: &[Encoded]) -> Result<f64> {
        let mut nll = 0.0;
        for ex in data {
            let lattice = self.lattice_from_ids(&ex.feats, &|f, y| self.emission_weight(f, y), &self.transition)?;
            let fb = ForwardBackward::new(&lattice);
            nll -= fb.sequence_log_prob(&lattice, &ex.gold)?;
        }
        let norm: f64 = self.params().iter().map(|w| w * w).sum();
        Ok(nll / data.len() as f64 + self.l2 * norm)
    }

    /// Analytic gradient of [`CrfModel::objective`] in [`CrfModel::params`]
    /// order.
    pub fn gradient(&self, data: &[Encoded]) -> Result<Vec<f64>> {
        let c = self.labels.len();
        let n_emit = self.emission.len();
        let mut grad = vec![0.0; self.num_params()];
        for ex in data {
            let lattice = self.lattice_from_ids(&ex.feats, &|f, y| self.emission_weight(f, y), &self.transition)?;
            let fb = ForwardBackward::new(&lattice);
            let marg = fb.marginals();
            for (t, ids) in ex.feats.iter().enumerate() {
                for &f in ids {
                    for y in 0..c {
                        grad[f * c + y] += marg.get(t, y);
                    }
                    grad[f * c + ex.gold[t]] -= 1.0;
                }
            }
            for t in 1..ex.gold.len() {
                for a in 0..c {
                    for b in 0..c {
                        grad[n_emit + a * c + b] += fb.span_log_prob(&lattice, t - 1, t + 1, &[a, b])?.exp();
                    }
                }
                grad[n_emit + ex.gold[t - 1] * c + ex.gold[t]] -= 1.0;
            }
        }
        let n = data.len() as f64;
        for (g, w) in grad.iter_mut().zip(self.params()) {
            *g = *g / n + 2.0 * self.l2 * w;
        }
        Ok(grad)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CrfFile = serde_json::from_str(text)?;
        Self::try_from(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_text(path, &(self.to_json()? + "\n"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&crate::io::read_text(path)?)
    }
}

/// Validation score used for early stopping: span micro-F1 for NER, token
/// accuracy otherwise.
pub fn validation_score(model: &CrfModel, instances: &[Instance]) -> Result<f64> {
    let labels = model.labels();
    let (mut right, mut total) = (0usize, 0usize);
    let (mut pred_spans, mut gold_spans) = (Vec::new(), Vec::new());
    let ner = instances.iter().any(|i| i.task == Task::SpanNer);
    for inst in instances {
        let gold = gold_tags(inst, labels)?;
        let pred = model.predict(&inst.tokens)?;
        right += pred.iter().zip(&gold).filter(|(a, b)| a == b).count();
        total += gold.len();
        if ner {
            pred_spans.extend(extract_spans(&pred, labels).into_iter().map(|s| (inst.id.clone(), s)));
            gold_spans.extend(extract_spans(&gold, labels).into_iter().map(|s| (inst.id.clone(), s)));
        }
    }
    if ner {
        Ok(micro_f1(&pred_spans, &gold_spans).f1)
    } else {
        Ok(right as f64 / total.max(1) as f64)
    }
}

/// Per-epoch record of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val: f64,
    pub objective: Vec<f64>,
}

/// Full-batch gradient descent from zero weights. After each step the
/// validation score is checked; training stops after `patience` epochs
/// without improvement and the best weights are returned.
pub fn train_crf(
    train: &[Instance],
    val: &[Instance],
    labels: &LabelSet,
    config: &CrfConfig,
) -> Result<(CrfModel, TrainLog)> {
    if train.is_empty() {
        return Err(Error::EmptyInput("no training instances"));
    }
    if !(config.l2.is_finite() && config.l2 >= 0.0) {
        return Err(Error::Config(format!("l2 must be >= 0, got {}", config.l2)));
    }
    if !(config.learning_rate.is_finite() && config.learning_rate > 0.0) {
        return Err(Error::Config(format!("learning rate must be positive, got {}", config.learning_rate)));
    }
    let mut model = CrfModel::for_corpus(labels.clone(), train, config.l2)?;
    let data = train.iter().map(|i| model.encode(i)).collect::<Result<Vec<_>>>()?;
    let val_set = if val.is_empty() { train } else { val };

    let mut params = model.params();
    let mut best = (validation_score(&model, val_set)?, params.clone(), 0usize);
    let mut objective = Vec::new();
    let mut stale = 0;
    let mut epochs = 0;
    for epoch in 1..=config.max_epochs {
        epochs = epoch;
        let grad = model.gradient(&data)?;
        for (w, g) in params.iter_mut().zip(&grad) {
            *w -= config.learning_rate * g;
        }
        model.set_params(&params)?;
        let obj = model.objective(&data)?;
        if !obj.is_finite() {
            return Err(Error::Numeric(format!("CRF objective diverged at epoch {epoch}")));
        }
        objective.push(obj);
        let score = validation_score(&model, val_set)?;
        if score > best.0 {
            best = (score, params.clone(), epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    model.set_params(&best.1)?;
    Ok((
        model,
        TrainLog {
            epochs,
            best_epoch: best.2,
            best_val: best.0,
            objective,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pos_instance(id: usize, pairs: &[(&str, &str)]) -> Instance {
        Instance {
            id: format!("s{id}"),
            tokens: pairs.iter().map(|p| p.0.to_string()).collect(),
            task: Task::SequenceLabeling,
            gold: Some(Gold::Labels(pairs.iter().map(|p| p.1.to_string()).collect())),
        }
    }

    fn pos_labels() -> LabelSet {
        LabelSet::new(["D", "N", "V"], Scheme::Plain).unwrap()
    }

    fn separable() -> Vec<Instance> {
        vec![
            pos_instance(0, &[("the", "D"), ("dog", "N"), ("runs", "V")]),
            pos_instance(1, &[("a", "D"), ("cat", "N"), ("sleeps", "V")]),
            pos_instance(2, &[("the", "D"), ("cat", "N"), ("runs", "V")]),
            pos_instance(3, &[("a", "D"), ("dog", "N")]),
        ]
    }

    #[test]
    fn token_features_bucket_prefix() {
        assert_eq!(token_features("Ab12"), ["b", "w:Ab12", "c:ab"]);
        assert_eq!(token_features("42"), ["b", "w:42", "c:"]);
    }

    #[test]
    fn learns_a_deterministic_corpus() {
        let data = separable();
        let (model, log) = train_crf(&data, &[], &pos_labels(), &CrfConfig::default()).unwrap();
        assert_eq!(log.best_val, 1.0);
        assert_eq!(validation_score(&model, &data).unwrap(), 1.0);
    }

    #[test]
    fn huge_penalty_keeps_marginals_uniform() {
        let cfg = CrfConfig {
            l2: 1e6,
            learning_rate: 1e-7,
            max_epochs: 20,
            patience: 100,
        };
        let (model, _) = train_crf(&separable(), &[], &pos_labels(), &cfg).unwrap();
        assert!(model.params().iter().all(|w| w.abs() < 1e-6));
        let (marg, _) = crate::decode::forward_backward(&model.lattice(&["the".to_string()]).unwrap());
        for p in marg.row(0) {
            assert!((p - 1.0 / 3.0).abs() < 1e-5);
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vocab = ["a", "b", "c", "d1", "e22"];
        let labels = pos_labels();
        let data: Vec<Instance> = (0..5)
            .map(|i| {
                let len = rng.random_range(1..=4);
                let pairs: Vec<(&str, &str)> = (0..len)
                    .map(|_| (vocab[rng.random_range(0..vocab.len())], ["D", "N", "V"][rng.random_range(0..3)]))
                    .collect();
                pos_instance(i, &pairs)
            })
            .collect();
        let mut model = CrfModel::for_corpus(labels, &data, 0.05).unwrap();
        let params: Vec<f64> = (0..model.num_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
        model.set_params(&params).unwrap();
        let enc: Vec<Encoded> = data.iter().map(|i| model.encode(i).unwrap()).collect();
        let grad = model.gradient(&enc).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += h;
            model.set_params(&p).unwrap();
            let up = model.objective(&enc).unwrap();
            p[i] -= 2.0 * h;
            model.set_params(&p).unwrap();
            let down = model.objective(&enc).unwrap();
            worst = worst.max(((up - down) / (2.0 * h) - grad[i]).abs());
        }
        assert!(worst < 1e-5, "max abs diff {worst}");
    }

    #[test]
    fn json_round_trip_is_exact() {
        let (model, _) = train_crf(&separable(), &[], &pos_labels(), &CrfConfig::default()).unwrap();
        let back = CrfModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn span_gold_becomes_bio() {
        let labels = LabelSet::bio(&["PER"]).unwrap();
        let inst = Instance {
            id: "x".into(),
            tokens: vec!["a".into(), "b".into(), "c".into()],
            task: Task::SpanNer,
            gold: Some(Gold::Spans(vec![crate::types::Span::new(1, 3, "PER")])),
        };
        let tags = gold_tags(&inst, &labels).unwrap();
        let names: Vec<&str> = tags.iter().map(|&t| labels.label(t)).collect();
        assert_eq!(names, vec!["O", "B-PER", "I-PER"]);
    }

    #[test]
    fn rejects_empty_training_set() {
        assert!(matches!(
            train_crf(&[], &[], &pos_labels(), &CrfConfig::default()),
            Err(Error::EmptyInput(_))
        ));
    }
}
