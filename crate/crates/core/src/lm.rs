//! Additive-smoothed n-gram language model used for the perplexity feature.
//!
//! Sentences are left-padded with `n - 1` boundary symbols that only ever
//! appear as context. The predicted vocabulary is the training vocabulary plus
//! an `<unk>` symbol that absorbs every unseen word.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FORMAT_VERSION: u32 = 1;
const BOS: u32 = 0;
const UNK: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "LmFile", try_from = "LmFile")]
pub struct LanguageModel {
    order: usize,
    alpha: f64,
    vocab: Vec<String>,
    index: HashMap<String, u32>,
    ngrams: BTreeMap<Vec<u32>, u64>,
    contexts: BTreeMap<Vec<u32>, u64>,
    config_hash: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct LmFile {
    format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
    order: usize,
    alpha: f64,
    vocab: Vec<String>,
    /// Each entry is the n-gram's symbol ids followed by its count.
    ngrams: Vec<Vec<u64>>,
}

impl From<LanguageModel> for LmFile {
    fn from(lm: LanguageModel) -> Self {
        LmFile {
            format_version: FORMAT_VERSION,
            config_hash: lm.config_hash,
            order: lm.order,
            alpha: lm.alpha,
            vocab: lm.vocab,
            ngrams: lm
                .ngrams
                .into_iter()
                .map(|(ids, count)| ids.into_iter().map(u64::from).chain([count]).collect())
                .collect(),
        }
    }
}

impl TryFrom<LmFile> for LanguageModel {
    type Error = Error;

    fn try_from(file: LmFile) -> Result<Self> {
        if file.format_version != FORMAT_VERSION {
            return Err(Error::FormatVersion {
                what: "language model",
                found: file.format_version,
                expected: FORMAT_VERSION,
            });
        }
        check_params(file.order, file.alpha)?;
        let mut ngrams = BTreeMap::new();
        for entry in file.ngrams {
            let (count, ids) = entry
                .split_last()
                .ok_or_else(|| Error::Config("empty n-gram entry".into()))?;
            if ids.len() != file.order {
                return Err(Error::Config(format!("n-gram entry of length {} in order-{} model", ids.len(), file.order)));
            }
            let ids = ids
                .iter()
                .map(|&id| u32::try_from(id).map_err(|_| Error::Config("n-gram id out of range".into())))
                .collect::<Result<Vec<u32>>>()?;
            ngrams.insert(ids, *count);
        }
        let mut lm = LanguageModel::assemble(file.order, file.alpha, file.vocab, ngrams);
        lm.config_hash = file.config_hash;
        Ok(lm)
    }
}

fn check_params(order: usize, alpha: f64) -> Result<()> {
    if order == 0 {
        return Err(Error::Config("n-gram order must be >= 1".into()));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::Config(format!("smoothing constant must be positive, got {alpha}")));
    }
    Ok(())
}

/// Train an order-`order` model with add-`alpha` smoothing.
pub fn train_lm<S: AsRef<str>>(corpus: &[Vec<S>], order: usize, alpha: f64) -> Result<LanguageModel> {
    check_params(order, alpha)?;
    let mut vocab: Vec<String> = corpus.iter().flatten().map(|w| w.as_ref().to_string()).collect();
    if vocab.is_empty() {
        return Err(Error::EmptyInput("language model corpus has no tokens"));
    }
    vocab.sort();
    vocab.dedup();
    let index: HashMap<String, u32> = vocab
        .iter()
        .enumerate()
        .map(|(i, w)| (w.clone(), i as u32 + 2))
        .collect();

    let mut ngrams: BTreeMap<Vec<u32>, u64> = BTreeMap::new();
    for sentence in corpus {
        let ids: Vec<u32> = sentence.iter().map(|w| index[w.as_ref()]).collect();
        for window in padded_windows(&ids, order) {
            *ngrams.entry(window).or_default() += 1;
        }
    }
    Ok(LanguageModel::assemble(order, alpha, vocab, ngrams))
}

fn padded_windows(ids: &[u32], order: usize) -> impl Iterator<Item = Vec<u32>> + '_ {
    (0..ids.len()).map(move |i| {
        let mut window = Vec::with_capacity(order);
        for j in (0..order - 1).rev() {
            window.push(if i > j { ids[i - j - 1] } else { BOS });
        }
        window.push(ids[i]);
        window
    })
}

impl LanguageModel {
    fn assemble(order: usize, alpha: f64, vocab: Vec<String>, ngrams: BTreeMap<Vec<u32>, u64>) -> Self {
        let index = vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32 + 2))
            .collect();
        let mut contexts: BTreeMap<Vec<u32>, u64> = BTreeMap::new();
        for (gram, count) in &ngrams {
            *contexts.entry(gram[..order - 1].to_vec()).or_default() += count;
        }
        Self {
            order,
            alpha,
            vocab,
            index,
            ngrams,
            contexts,
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

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: LmFile = serde_json::from_str(text)?;
        Self::try_from(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_text(path, &(self.to_json()? + "\n"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&crate::io::read_text(path)?)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Training vocabulary, excluding `<unk>`.
    pub fn vocabulary(&self) -> &[String] {
        &self.vocab
    }

    /// Number of predictable outcomes: the vocabulary plus `<unk>`.
    pub fn outcome_count(&self) -> usize {
        self.vocab.len() + 1
    }

    fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    fn prob_ids(&self, context: &[u32], word: u32) -> f64 {
        let joint = {
            let mut gram = context.to_vec();
            gram.push(word);
            self.ngrams.get(&gram).copied().unwrap_or(0)
        };
        let ctx = self.contexts.get(context).copied().unwrap_or(0);
        (joint as f64 + self.alpha) / (ctx as f64 + self.alpha * self.outcome_count() as f64)
    }

    /// `P(word | context)`. Only the last `n - 1` context words are used; a
    /// shorter context is left-padded with the boundary symbol.
    pub fn prob(&self, context: &[&str], word: &str) -> f64 {
        let mut ids: Vec<u32> = context.iter().map(|w| self.id(w)).collect();
        let need = self.order - 1;
        if ids.len() > need {
            ids.drain(..ids.len() - need);
        }
        while ids.len() < need {
            ids.insert(0, BOS);
        }
        self.prob_ids(&ids, self.id(word))
    }

    /// Exponentiated mean negative log-likelihood per token.
    pub fn perplexity<S: AsRef<str>>(&self, tokens: &[S]) -> Result<f64> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput("perplexity of an empty token list"));
        }
        let ids: Vec<u32> = tokens.iter().map(|w| self.id(w.as_ref())).collect();
        let nll: f64 = padded_windows(&ids, self.order)
            .map(|w| -self.prob_ids(&w[..self.order - 1], w[self.order - 1]).ln())
            .sum();
        Ok((nll / ids.len() as f64).exp().max(1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(lines: &[&str]) -> Vec<Vec<String>> {
        lines
            .iter()
            .map(|l| l.split_whitespace().map(String::from).collect())
            .collect()
    }

    #[test]
    fn degenerate_unigram_approaches_certainty() {
        let lm = train_lm(&corpus(&["a a a"]), 1, 1e-12).unwrap();
        assert!((lm.prob(&[], "a") - 1.0).abs() < 1e-9);
    }

    #[test]
    fn add_one_bigram_hand_count() {
        let lm = train_lm(&corpus(&["a b a b"]), 2, 1.0).unwrap();
        assert_eq!(lm.outcome_count(), 3);
        assert!((lm.prob(&["a"], "b") - 0.6).abs() < 1e-12);
    }

    #[test]
    fn conditional_distributions_sum_to_one() {
        let lm = train_lm(&corpus(&["a b c a", "c c b"]), 3, 0.5).unwrap();
        let outcomes = ["a", "b", "c", "never-seen"];
        for ctx in [vec![], vec!["a"], vec!["c", "c"], vec!["zz", "b"]] {
            let total: f64 = outcomes.iter().map(|w| lm.prob(&ctx, w)).sum();
            assert!((total - 1.0).abs() < 1e-12, "{ctx:?}: {total}");
        }
    }

    #[test]
    fn uniform_unigram_has_vocabulary_perplexity() {
        let lm = train_lm(&corpus(&["a b c"]), 1, 1e12).unwrap();
        let ppl = lm.perplexity(&["a", "x", "c", "c"]).unwrap();
        assert!((ppl - 4.0).abs() < 1e-9);
    }

    #[test]
    fn certain_model_has_perplexity_one() {
        let lm = train_lm(&corpus(&["a a a a"]), 1, 1e-15).unwrap();
        let ppl = lm.perplexity(&["a", "a"]).unwrap();
        assert!((ppl - 1.0).abs() < 1e-9);
    }

    #[test]
    fn bigram_perplexity_from_hand_counts() {
        let lm = train_lm(&corpus(&["a b a b"]), 2, 1.0).unwrap();
        // P(a|<s>) = (1+1)/(1+3), P(b|a) = (2+1)/(2+3)
        let expected = (-(0.5f64.ln() + 0.6f64.ln()) / 2.0).exp();
        assert!((lm.perplexity(&["a", "b"]).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn shifted_text_is_more_perplexing() {
        let train = corpus(&["the cat sat", "the dog sat", "a cat ran"]);
        let lm = train_lm(&train, 2, 0.1).unwrap();
        let own: f64 = train.iter().map(|s| lm.perplexity(s).unwrap()).sum();
        let shifted: f64 = corpus(&["qq rr ss", "tt uu vv", "ww xx yy"])
            .iter()
            .map(|s| lm.perplexity(s).unwrap())
            .sum();
        assert!(own < shifted);
    }

    #[test]
    fn errors_on_bad_input() {
        assert!(matches!(train_lm::<String>(&[], 2, 1.0), Err(Error::EmptyInput(_))));
        assert!(train_lm(&corpus(&["a"]), 0, 1.0).is_err());
        assert!(train_lm(&corpus(&["a"]), 2, 0.0).is_err());
        let lm = train_lm(&corpus(&["a"]), 2, 1.0).unwrap();
        assert!(lm.perplexity::<&str>(&[]).is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let lm = train_lm(&corpus(&["x y z x", "y y"]), 3, 0.37).unwrap();
        let text = serde_json::to_string(&lm).unwrap();
        let back: LanguageModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, lm);
        assert_eq!(back.perplexity(&["x", "y"]).unwrap(), lm.perplexity(&["x", "y"]).unwrap());
    }
}
