//! Forecasters mapping entity features to calibrated confidence, the
//! datasets they are trained on, and heuristic selection of the top-k depth.
//!
//! Training rows come from the top-k events of gold-annotated instances;
//! validation rows always come from top-1 events. The selected depth is the
//! one whose forecaster has the lowest validation ECE.

mod gbdt;
mod platt;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use gbdt::{best_split, fit_gbdt, GbdtConfig, GbdtForecaster, Node, Tree};
pub use platt::{fit_platt, sigmoid, PlattForecaster};

use crate::decode::{order_free_mean, SampleScorer};
use crate::error::{Error, Result};
use crate::events::candidate_events;
use crate::features::{featurize_values, FeatureSchema, FeatureVector};
use crate::lm::LanguageModel;
use crate::metrics::{compute_ece, DEFAULT_BINS};
use crate::types::{Entity, LabelSet, SampledInstance};

const FORMAT_VERSION: u32 = 1;

/// Which end of the heuristic-k protocol a dataset serves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    /// Built from the top-k events.
    Train,
    /// Built from top-1 events only.
    Val,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub k: usize,
    pub split: Split,
}

/// One event with its features, ready for forecasting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredEvent {
    pub instance_id: String,
    pub entity: Entity,
    pub features: FeatureVector,
    /// Mean over samples of the entity's probability, without the length
    /// root. This is the uncalibrated confidence.
    pub raw_prob: f64,
    pub positive: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastRow {
    pub instance_id: String,
    pub entity: Entity,
    pub features: FeatureVector,
    pub raw_prob: f64,
    pub label: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastDataset {
    pub schema: FeatureSchema,
    pub rows: Vec<ForecastRow>,
    pub provenance: Provenance,
}

impl ForecastDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.rows.iter().filter(|r| r.label).count()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.rows.iter().map(|r| r.label).collect()
    }

    /// Feature matrix in `schema` order.
    pub fn matrix(&self, schema: &FeatureSchema) -> Result<Vec<Vec<f64>>> {
        self.rows.iter().map(|r| r.features.project(schema)).collect()
    }
}

/// Options shared by every dataset build.
#[derive(Clone, Copy, Debug)]
pub struct EventOptions<'a> {
    pub labels: &'a LabelSet,
    pub schema: &'a FeatureSchema,
    pub lm: Option<&'a LanguageModel>,
    pub max_answer_len: usize,
}

/// Decode the mean lattice of one instance to its top-`k` outputs and
/// featurize every resulting event against the instance's samples.
pub fn score_events(item: &SampledInstance, k: usize, opts: &EventOptions<'_>) -> Result<Vec<ScoredEvent>> {
    let mean = item.samples.mean_lattice();
    let set = candidate_events(&item.instance, &mean, opts.labels, k, opts.max_answer_len)?;
    let perplexity = match (opts.schema.needs_lm(), opts.lm) {
        (true, Some(lm)) => Some(lm.perplexity(&item.instance.tokens)?),
        (true, None) => return Err(Error::MissingLanguageModel),
        (false, _) => None,
    };
    let scorer = SampleScorer::new(&item.samples);
    set.events
        .into_iter()
        .map(|event| {
            let raw = scorer.probabilities(&event.entity)?;
            let root = 1.0 / event.entity.normalization_length() as f64;
            let normalized: Vec<f64> = raw.iter().map(|p| p.powf(root)).collect();
            let features = featurize_values(&normalized, &event.entity, opts.schema, perplexity)?;
            Ok(ScoredEvent {
                instance_id: set.instance_id.clone(),
                entity: event.entity,
                features,
                raw_prob: order_free_mean(&raw),
                positive: event.positive,
            })
        })
        .collect()
}

/// Forecaster training rows from the top-`k` events of every instance,
/// labeled by whether the gold output lies in the event.
pub fn build_forecast_dataset(
    instances: &[SampledInstance],
    k: usize,
    split: Split,
    opts: &EventOptions<'_>,
) -> Result<ForecastDataset> {
    let mut rows = Vec::new();
    for item in instances {
        if item.instance.gold.is_none() {
            return Err(Error::MissingGold(item.instance.id.clone()));
        }
        for e in score_events(item, k, opts)? {
            rows.push(ForecastRow {
                label: e.positive.ok_or_else(|| Error::MissingGold(e.instance_id.clone()))?,
                instance_id: e.instance_id,
                entity: e.entity,
                features: e.features,
                raw_prob: e.raw_prob,
            });
        }
    }
    Ok(ForecastDataset {
        schema: opts.schema.clone(),
        rows,
        provenance: Provenance { k, split },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Platt(PlattForecaster),
    Gbdt(GbdtForecaster),
}

/// A trained calibration map together with the features it reads.
///
/// Serializes to a versioned document; reloading reproduces predictions
/// bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "ForecasterFile", try_from = "ForecasterFile")]
pub struct Forecaster {
    schema: FeatureSchema,
    model: Model,
    config_hash: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct ForecasterFile {
    format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
    schema: FeatureSchema,
    model: Model,
}

impl From<Forecaster> for ForecasterFile {
    fn from(f: Forecaster) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            config_hash: f.config_hash,
            schema: f.schema,
            model: f.model,
        }
    }
}

impl TryFrom<ForecasterFile> for Forecaster {
    type Error = Error;

    fn try_from(file: ForecasterFile) -> Result<Self> {
        if file.format_version != FORMAT_VERSION {
            return Err(Error::FormatVersion {
                what: "forecaster",
                found: file.format_version,
                expected: FORMAT_VERSION,
            });
        }
        Ok(Forecaster::new(file.schema, file.model)?.with_config_hash(file.config_hash))
    }
}

impl Forecaster {
    pub fn new(schema: FeatureSchema, model: Model) -> Result<Self> {
        match &model {
            Model::Platt(_) if schema != FeatureSchema::mean_only() => Err(Error::SchemaMismatch(format!(
                "Platt scaling reads mean_prob only, not {schema}"
            ))),
            Model::Gbdt(g) if g.n_features != schema.len() => Err(Error::SchemaMismatch(format!(
                "GBDT over {} features with schema {schema}",
                g.n_features
            ))),
            _ => Ok(Self {
                schema,
                model,
                config_hash: None,
            }),
        }
    }

    /// Tag the forecaster with the hash of the configuration that built it.
    pub fn with_config_hash(mut self, hash: Option<String>) -> Self {
        self.config_hash = hash;
        self
    }

    pub fn config_hash(&self) -> Option<&str> {
        self.config_hash.as_deref()
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn predict(&self, features: &FeatureVector) -> Result<f64> {
        let x = features.project(&self.schema)?;
        match &self.model {
            Model::Platt(p) => Ok(p.predict(x[0])),
            Model::Gbdt(g) => g.predict(&x),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ForecasterFile = serde_json::from_str(text)?;
        Self::try_from(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_text(path, &(self.to_json()? + "\n"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&crate::io::read_text(path)?)
    }
}

/// How to fit a forecaster to a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trainer {
    /// Logistic map of `mean_prob`; other features are ignored.
    Platt,
    Gbdt(GbdtConfig),
}

impl Trainer {
    pub fn fit(&self, dataset: &ForecastDataset) -> Result<Forecaster> {
        if dataset.is_empty() {
            return Err(Error::EmptyInput("forecast dataset has no rows"));
        }
        let labels = dataset.labels();
        match self {
            Trainer::Platt => {
                let scores: Vec<f64> = dataset.rows.iter().map(|r| r.features.mean_prob).collect();
                let model = fit_platt(&scores, &labels)?;
                Forecaster::new(FeatureSchema::mean_only(), Model::Platt(model))
            }
            Trainer::Gbdt(config) => {
                let x = dataset.matrix(&dataset.schema)?;
                let model = fit_gbdt(&x, &labels, config)?;
                Forecaster::new(dataset.schema.clone(), Model::Gbdt(model))
            }
        }
    }
}

/// `(confidence, correct)` pairs of a forecaster over a dataset.
pub fn forecast_pairs(forecaster: &Forecaster, dataset: &ForecastDataset) -> Result<Vec<(f64, bool)>> {
    dataset
        .rows
        .iter()
        .map(|r| Ok((forecaster.predict(&r.features)?, r.label)))
        .collect()
}

/// One candidate depth in a heuristic-k run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KReport {
    pub k: usize,
    pub train_rows: usize,
    pub train_positives: usize,
    pub val_ece: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectedForecaster {
    pub forecaster: Forecaster,
    pub chosen_k: usize,
    pub val_ece: f64,
    pub candidates: Vec<KReport>,
}

/// Fit one forecaster per candidate dataset, score each by ECE on `val`, and
/// keep the lowest. Ties go to the smaller k. Candidates are fitted on
/// separate threads; the result does not depend on scheduling.
pub fn select_from_datasets(
    candidates: &[ForecastDataset],
    val: &ForecastDataset,
    trainer: &Trainer,
) -> Result<SelectedForecaster> {
    if candidates.is_empty() {
        return Err(Error::Config("heuristic-k needs at least one candidate k".into()));
    }
    if val.is_empty() {
        return Err(Error::EmptyInput("validation dataset has no rows"));
    }
    let fitted: Vec<Result<(Forecaster, f64)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = candidates
            .iter()
            .map(|data| {
                scope.spawn(move || {
                    let f = trainer.fit(data)?;
                    let (ece, _) = compute_ece(&forecast_pairs(&f, val)?, DEFAULT_BINS)?;
                    Ok((f, ece))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("forecaster fit panicked"))
            .collect()
    });

    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by_key(|&i| candidates[i].provenance.k);
    let mut reports = Vec::with_capacity(candidates.len());
    let mut best: Option<(Forecaster, usize, f64)> = None;
    let mut fitted: Vec<Option<Result<(Forecaster, f64)>>> = fitted.into_iter().map(Some).collect();
    for i in order {
        let (forecaster, ece) = fitted[i].take().expect("each candidate visited once")?;
        let data = &candidates[i];
        reports.push(KReport {
            k: data.provenance.k,
            train_rows: data.len(),
            train_positives: data.positives(),
            val_ece: ece,
        });
        if best.as_ref().is_none_or(|(_, _, b)| ece < *b) {
            best = Some((forecaster, data.provenance.k, ece));
        }
    }
    let (forecaster, chosen_k, val_ece) = best.expect("at least one candidate");
    Ok(SelectedForecaster {
        forecaster,
        chosen_k,
        val_ece,
        candidates: reports,
    })
}

/// Candidate depths `1..=k_max`, or the explicit subset when given.
pub fn candidate_ks(k_max: usize, subset: Option<&[usize]>) -> Result<Vec<usize>> {
    if k_max == 0 {
        return Err(Error::Config("k_max must be >= 1".into()));
    }
    let mut ks = match subset {
        Some(s) => s.to_vec(),
        None => (1..=k_max).collect(),
    };
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() || ks[0] == 0 || *ks.last().unwrap() > k_max {
        return Err(Error::Config(format!("candidate ks {ks:?} must lie in 1..={k_max}")));
    }
    Ok(ks)
}

/// Heuristic-k over gold-annotated development instances: a forecaster per
/// candidate k trained on top-k rows, each judged on the top-1 rows.
pub fn select_heuristic_k(
    dev: &[SampledInstance],
    ks: &[usize],
    opts: &EventOptions<'_>,
    trainer: &Trainer,
) -> Result<SelectedForecaster> {
    let val = build_forecast_dataset(dev, 1, Split::Val, opts)?;
    let candidates = ks
        .iter()
        .map(|&k| build_forecast_dataset(dev, k, Split::Train, opts))
        .collect::<Result<Vec<_>>>()?;
    select_from_datasets(&candidates, &val, trainer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{EntityPayload, Gold, Instance, Lattice, McSampleSet, Scheme, Task};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn row(mean: f64, rank: usize, label: bool) -> ForecastRow {
        let schema = FeatureSchema::rank_var();
        ForecastRow {
            instance_id: "x".into(),
            entity: Entity {
                payload: EntityPayload::Sequence(vec![0]),
                rank,
            },
            features: FeatureVector {
                schema,
                mean_prob: mean,
                p10: Some(mean * 0.9),
                p90: Some(mean),
                variance: Some(0.01),
                rank: Some(rank),
                span_len: None,
                lm_perplexity: None,
            },
            raw_prob: mean,
            label,
        }
    }

    fn dataset(rows: Vec<ForecastRow>, k: usize) -> ForecastDataset {
        ForecastDataset {
            schema: FeatureSchema::rank_var(),
            rows,
            provenance: Provenance { k, split: Split::Train },
        }
    }

    fn pos_item(id: &str, unary: Vec<Vec<f64>>, gold: &[&str]) -> SampledInstance {
        let lattice = Lattice::new(unary, vec![vec![0.0; 2]; 2]).unwrap();
        SampledInstance {
            instance: Instance {
                id: id.into(),
                tokens: gold.iter().map(|_| "w".to_string()).collect(),
                task: Task::SequenceLabeling,
                gold: Some(Gold::Labels(gold.iter().map(|s| s.to_string()).collect())),
            },
            samples: McSampleSet::new(vec![lattice]).unwrap(),
        }
    }

    fn ab() -> LabelSet {
        LabelSet::new(["A", "B"], Scheme::Plain).unwrap()
    }

    #[test]
    fn single_correct_map_yields_one_positive_row() {
        let labels = ab();
        let schema = FeatureSchema::mean_only();
        let opts = EventOptions {
            labels: &labels,
            schema: &schema,
            lm: None,
            max_answer_len: 30,
        };
        let item = pos_item("a", vec![vec![2.0, 0.0]], &["A"]);
        let data = build_forecast_dataset(&[item], 1, Split::Val, &opts).unwrap();
        assert_eq!(data.len(), 1);
        assert!(data.rows[0].label);
    }

    #[test]
    fn top_two_rows_are_labeled_by_gold() {
        let labels = ab();
        let schema = FeatureSchema::rank_var();
        let opts = EventOptions {
            labels: &labels,
            schema: &schema,
            lm: None,
            max_answer_len: 30,
        };
        let item = pos_item("a", vec![vec![2.0, 0.0], vec![1.0, 0.5]], &["A", "A"]);
        let data = build_forecast_dataset(&[item], 2, Split::Train, &opts).unwrap();
        let got: Vec<(bool, Option<usize>)> = data.rows.iter().map(|r| (r.label, r.features.rank)).collect();
        assert_eq!(got, vec![(true, Some(1)), (false, Some(2))]);
    }

    #[test]
    fn missing_gold_is_an_error() {
        let labels = ab();
        let schema = FeatureSchema::mean_only();
        let opts = EventOptions {
            labels: &labels,
            schema: &schema,
            lm: None,
            max_answer_len: 30,
        };
        let mut item = pos_item("nogold", vec![vec![2.0, 0.0]], &["A"]);
        item.instance.gold = None;
        assert!(matches!(
            build_forecast_dataset(&[item], 1, Split::Val, &opts),
            Err(Error::MissingGold(id)) if id == "nogold"
        ));
    }

    #[test]
    fn lm_feature_without_model_fails() {
        let labels = ab();
        let schema = FeatureSchema::rank_var_lm();
        let opts = EventOptions {
            labels: &labels,
            schema: &schema,
            lm: None,
            max_answer_len: 30,
        };
        let item = pos_item("a", vec![vec![2.0, 0.0]], &["A"]);
        assert!(matches!(
            build_forecast_dataset(&[item], 1, Split::Val, &opts),
            Err(Error::MissingLanguageModel)
        ));
    }

    #[test]
    fn argmin_with_ties_toward_smaller_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows: Vec<ForecastRow> = (0..60)
            .map(|i| {
                let s = rng.random::<f64>();
                row(s, 1, rng.random::<f64>() < s || i == 0)
            })
            .collect();
        let val = dataset(rows.clone(), 1);
        // identical candidate datasets give identical ECE, so the smaller k wins
        let cands = vec![dataset(rows.clone(), 3), dataset(rows.clone(), 2)];
        let sel = select_from_datasets(&cands, &val, &Trainer::Platt).unwrap();
        assert_eq!(sel.chosen_k, 2);
        assert_eq!(sel.candidates.iter().map(|c| c.k).collect::<Vec<_>>(), vec![2, 3]);
        assert_eq!(sel.candidates[0].val_ece, sel.candidates[1].val_ece);
    }

    #[test]
    fn single_candidate_is_returned() {
        let rows: Vec<ForecastRow> = (0..20).map(|i| row(i as f64 / 20.0, 1, i % 3 == 0)).collect();
        let val = dataset(rows.clone(), 1);
        let sel = select_from_datasets(&[dataset(rows, 1)], &val, &Trainer::Platt).unwrap();
        assert_eq!(sel.chosen_k, 1);
        assert_eq!(sel.val_ece, sel.candidates[0].val_ece);
    }

    #[test]
    fn candidate_ks_validation() {
        assert_eq!(candidate_ks(3, None).unwrap(), vec![1, 2, 3]);
        assert_eq!(candidate_ks(3, Some(&[3, 2])).unwrap(), vec![2, 3]);
        assert!(candidate_ks(3, Some(&[4])).is_err());
        assert!(candidate_ks(0, None).is_err());
    }

    #[test]
    fn persisted_forecasters_predict_identically() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<ForecastRow> = (0..300)
            .map(|_| {
                let s = rng.random::<f64>();
                let rank = rng.random_range(1..=3);
                row(s, rank, rng.random::<f64>() < s / rank as f64)
            })
            .collect();
        let data = dataset(rows, 3);
        for trainer in [Trainer::Platt, Trainer::Gbdt(GbdtConfig::default())] {
            let f = trainer.fit(&data).unwrap();
            let back = Forecaster::from_json(&f.to_json().unwrap()).unwrap();
            assert_eq!(back, f);
            for r in &data.rows[..100] {
                let (a, b) = (f.predict(&r.features).unwrap(), back.predict(&r.features).unwrap());
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn schema_mismatch_and_version_checks() {
        let f = Trainer::Gbdt(GbdtConfig {
            n_trees: 2,
            ..Default::default()
        })
        .fit(&dataset((0..20).map(|i| row(i as f64 / 20.0, 1, i > 9)).collect(), 1))
        .unwrap();
        let mut v = row(0.5, 1, true).features;
        v.variance = None;
        assert!(matches!(f.predict(&v), Err(Error::SchemaMismatch(_))));
        let text = f.to_json().unwrap().replace("\"format_version\": 1", "\"format_version\": 7");
        assert!(matches!(Forecaster::from_json(&text), Err(Error::FormatVersion { found: 7, .. })));
    }
}
