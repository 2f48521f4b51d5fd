//! End-to-end driver: synthesize a corpus, train the toy CRF, dump Monte
//! Carlo lattices, calibrate forecasters, evaluate them, and rescore.
//!
//! Each command reads the artifacts of earlier commands from disk and writes
//! its own, so any stage can be replaced by external files (for instance a
//! dump produced by another model). Every output carries the hash of the
//! configuration with its `paths` section removed: JSON documents in a
//! `config_hash` field, JSON-lines and CSV files in a `# config_hash:`
//! header line.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::events::{resolve_gold, GoldTarget, DEFAULT_MAX_ANSWER_LEN};
use crate::features::FeatureSchema;
use crate::forecast::{
    build_forecast_dataset, candidate_ks, forecast_pairs, score_events, select_heuristic_k, EventOptions,
    Forecaster, GbdtConfig, KReport, ScoredEvent, Split, Trainer,
};
use crate::io::{hash_header, read_dump, read_instances, read_json, read_text, write_json, write_jsonl, write_text};
use crate::lm::{train_lm, LanguageModel};
use crate::metrics::{compute_ece, exact_match, micro_f1, reliability_export, sequence_accuracy, Bin, DEFAULT_BINS};
use crate::rescore::{rescore_answers, rescore_sequences, rescore_spans, RescoreConfig, ScoredEntity};
use crate::toymodel::{dump_instances, make_synthetic_corpus, train_crf, CrfConfig, CrfModel, PerturbConfig, SynthConfig};
use crate::types::{AnswerSpan, LabelSet, SampledInstance, Span, Task};

/// Where artifacts live. Unset entries default to locations under `out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub out: PathBuf,
    /// Directory with `train.jsonl`, `dev.jsonl`, `test.jsonl`.
    pub data: Option<PathBuf>,
    /// Label set file; defaults to `labels.json` in the data directory.
    pub labels: Option<PathBuf>,
    pub model: Option<PathBuf>,
    /// Dump the forecasters are calibrated on.
    pub calibration_dump: Option<PathBuf>,
    /// Dump the forecasters are evaluated and rescored on.
    pub evaluation_dump: Option<PathBuf>,
    pub forecasters: Option<PathBuf>,
    pub reports: Option<PathBuf>,
    /// Instances whose tokens train the n-gram model. Defaults to the
    /// calibration dump.
    pub lm_corpus: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            out: PathBuf::from("out"),
            data: None,
            labels: None,
            model: None,
            calibration_dump: None,
            evaluation_dump: None,
            forecasters: None,
            reports: None,
            lm_corpus: None,
        }
    }
}

impl Paths {
    pub fn data(&self) -> PathBuf {
        self.data.clone().unwrap_or_else(|| self.out.join("data"))
    }

    pub fn split(&self, name: &str) -> PathBuf {
        self.data().join(format!("{name}.jsonl"))
    }

    pub fn labels(&self) -> PathBuf {
        self.labels.clone().unwrap_or_else(|| self.data().join("labels.json"))
    }

    pub fn model(&self) -> PathBuf {
        self.model.clone().unwrap_or_else(|| self.out.join("model.json"))
    }

    pub fn calibration_dump(&self) -> PathBuf {
        self.calibration_dump
            .clone()
            .unwrap_or_else(|| self.out.join("dumps/dev.jsonl"))
    }

    pub fn evaluation_dump(&self) -> PathBuf {
        self.evaluation_dump
            .clone()
            .unwrap_or_else(|| self.out.join("dumps/test.jsonl"))
    }

    pub fn forecasters(&self) -> PathBuf {
        self.forecasters.clone().unwrap_or_else(|| self.out.join("forecasters"))
    }

    pub fn forecaster(&self, variant: Variant) -> PathBuf {
        self.forecasters().join(format!("{}.json", variant.name()))
    }

    pub fn lm(&self) -> PathBuf {
        self.forecasters().join("lm.json")
    }

    pub fn reports(&self) -> PathBuf {
        self.reports.clone().unwrap_or_else(|| self.out.join("reports"))
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.reports().join(name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmConfig {
    pub order: usize,
    /// Add-alpha smoothing constant.
    pub alpha: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self { order: 3, alpha: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub k_max: usize,
    /// Explicit candidate depths; `1..=k_max` when unset.
    pub ks: Option<Vec<usize>>,
    /// Features of the full forecaster.
    pub schema: FeatureSchema,
    /// Trees for the full and calibrated-mean forecasters.
    pub gbdt: GbdtConfig,
    pub max_answer_len: usize,
    pub bins: usize,
    pub lm: LmConfig,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            k_max: 3,
            ks: None,
            schema: FeatureSchema::rank_var(),
            gbdt: GbdtConfig {
                n_trees: 30,
                max_depth: 2,
                min_leaf: 40,
                ..GbdtConfig::default()
            },
            max_answer_len: DEFAULT_MAX_ANSWER_LEN,
            bins: DEFAULT_BINS,
            lm: LmConfig::default(),
        }
    }
}

/// The single configuration document every command reads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub task: Task,
    /// When set, replaces the seeds of the generator, the perturbation
    /// sampler and the boosted trees.
    pub seed: Option<u64>,
    /// Inline label set; otherwise read from the labels file.
    pub labels: Option<LabelSet>,
    pub synth: SynthConfig,
    pub crf: CrfConfig,
    pub perturb: PerturbConfig,
    pub calibration: CalibrationConfig,
    pub rescore: RescoreConfig,
    /// Depth of the k-best lists that get rescored; defaults to the depth the
    /// full forecaster was selected at.
    pub rescore_k: Option<usize>,
    pub paths: Paths,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            task: Task::SpanNer,
            seed: Some(7),
            labels: None,
            synth: SynthConfig {
                min_len: 40,
                max_len: 80,
                ..SynthConfig::default()
            },
            crf: CrfConfig::default(),
            perturb: PerturbConfig {
                sigma: 2.0,
                ..PerturbConfig::default()
            },
            calibration: CalibrationConfig::default(),
            rescore: RescoreConfig::default(),
            rescore_k: None,
            paths: Paths::default(),
        }
    }
}

impl PipelineConfig {
    /// Parse a configuration document. Any problem with it, including a
    /// missing file, is a configuration error.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// The configuration with the shared seed pushed into every stage.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        if let Some(seed) = c.seed {
            c.synth.seed = seed;
            c.perturb.seed = seed;
            c.calibration.gbdt.seed = seed;
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.perturb.validate()?;
        self.calibration.gbdt.validate()?;
        self.rescore.validate()?;
        candidate_ks(self.calibration.k_max, self.calibration.ks.as_deref())?;
        if self.calibration.bins == 0 {
            return Err(Error::Config("need at least one ECE bin".into()));
        }
        if self.calibration.lm.order == 0 || !(self.calibration.lm.alpha > 0.0 && self.calibration.lm.alpha.is_finite()) {
            return Err(Error::Config("n-gram order must be >= 1 and alpha > 0".into()));
        }
        if self.rescore_k == Some(0) {
            return Err(Error::Config("rescore_k must be >= 1".into()));
        }
        Ok(())
    }

    /// SHA-256 over the resolved configuration without its `paths`, so
    /// moving artifacts around does not change it.
    pub fn hash(&self) -> Result<String> {
        let mut value = serde_json::to_value(self.resolved())?;
        if let Some(map) = value.as_object_mut() {
            map.remove("paths");
        }
        let digest = Sha256::digest(serde_json::to_string(&value)?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// The three calibrated forecasters every run builds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Logistic map of the mean probability.
    Platt,
    /// Boosted trees over the mean probability alone.
    CalibratedMean,
    /// Boosted trees over the configured schema.
    Full,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Platt, Variant::CalibratedMean, Variant::Full];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Platt => "platt",
            Variant::CalibratedMean => "calibrated_mean",
            Variant::Full => "full",
        }
    }

    fn schema(self, full: &FeatureSchema) -> FeatureSchema {
        match self {
            Variant::Full => full.clone(),
            _ => FeatureSchema::mean_only(),
        }
    }

    fn trainer(self, gbdt: &GbdtConfig) -> Trainer {
        match self {
            Variant::Platt => Trainer::Platt,
            _ => Trainer::Gbdt(gbdt.clone()),
        }
    }
}

/// Validated configuration plus its hash.
struct Ctx {
    config: PipelineConfig,
    hash: String,
}

impl Ctx {
    fn new(config: &PipelineConfig) -> Result<Self> {
        let config = config.resolved();
        config.validate()?;
        let hash = config.hash()?;
        Ok(Self { config, hash })
    }

    fn paths(&self) -> &Paths {
        &self.config.paths
    }

    fn header(&self) -> String {
        hash_header(&self.hash)
    }

    fn labels(&self) -> Result<LabelSet> {
        match &self.config.labels {
            Some(l) => Ok(l.clone()),
            None => Ok(read_json::<LabelsFile>(&self.paths().labels())?.labels),
        }
    }

    fn lm(&self) -> Result<Option<LanguageModel>> {
        if self.config.calibration.schema.needs_lm() {
            Ok(Some(LanguageModel::load(&self.paths().lm())?))
        } else {
            Ok(None)
        }
    }

    fn options<'a>(&'a self, labels: &'a LabelSet, lm: Option<&'a LanguageModel>) -> EventOptions<'a> {
        EventOptions {
            labels,
            schema: &self.config.calibration.schema,
            lm,
            max_answer_len: self.config.calibration.max_answer_len,
        }
    }

    fn require_toy_task(&self) -> Result<()> {
        if self.config.task == Task::ExtractiveQa {
            return Err(Error::Config(
                "the built-in CRF covers sequence tasks; extractive QA runs start from a dump".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelsFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub labels: LabelSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthReport {
    pub config_hash: String,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub gold_spans: Option<usize>,
}

/// Generate the synthetic corpus and its label file.
pub fn cmd_synth(config: &PipelineConfig) -> Result<SynthReport> {
    let ctx = Ctx::new(config)?;
    ctx.require_toy_task()?;
    if ctx.config.synth.task != ctx.config.task {
        return Err(Error::Config(format!(
            "synth.task is {} but the pipeline task is {}",
            ctx.config.synth.task, ctx.config.task
        )));
    }
    let corpus = make_synthetic_corpus(&ctx.config.synth)?;
    let p = ctx.paths();
    for (name, split) in [("train", &corpus.train), ("dev", &corpus.dev), ("test", &corpus.test)] {
        write_jsonl(&p.split(name), Some(&ctx.header()), split)?;
    }
    write_json(
        &p.labels(),
        &LabelsFile {
            config_hash: Some(ctx.hash.clone()),
            labels: corpus.labels.clone(),
        },
    )?;
    let gold_spans = (ctx.config.task == Task::SpanNer).then(|| {
        corpus
            .train
            .iter()
            .chain(&corpus.dev)
            .chain(&corpus.test)
            .map(|i| match &i.gold {
                Some(crate::types::Gold::Spans(s)) => s.len(),
                _ => 0,
            })
            .sum()
    });
    let report = SynthReport {
        config_hash: ctx.hash.clone(),
        train: corpus.train.len(),
        dev: corpus.dev.len(),
        test: corpus.test.len(),
        gold_spans,
    };
    write_json(&p.report("synth.json"), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config_hash: String,
    pub train_instances: usize,
    pub val_instances: usize,
    pub features: usize,
    pub epochs: usize,
    pub best_epoch: usize,
    /// Span F1 for NER, token accuracy otherwise.
    pub best_val: f64,
    pub final_objective: Option<f64>,
}

/// Train the CRF on the train split with early stopping on dev.
pub fn cmd_train(config: &PipelineConfig) -> Result<TrainReport> {
    let ctx = Ctx::new(config)?;
    ctx.require_toy_task()?;
    let labels = ctx.labels()?;
    let p = ctx.paths();
    let train = read_instances(&p.split("train"), &labels)?;
    let dev = read_instances(&p.split("dev"), &labels)?;
    let (model, log) = train_crf(&train, &dev, &labels, &ctx.config.crf)?;
    let model = model.with_config_hash(Some(ctx.hash.clone()));
    model.save(&p.model())?;
    let report = TrainReport {
        config_hash: ctx.hash.clone(),
        train_instances: train.len(),
        val_instances: dev.len(),
        features: model.num_features(),
        epochs: log.epochs,
        best_epoch: log.best_epoch,
        best_val: log.best_val,
        final_objective: log.objective.last().copied(),
    };
    write_json(&p.report("train.json"), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DumpReport {
    pub config_hash: String,
    pub calibration_instances: usize,
    pub evaluation_instances: usize,
    pub samples: usize,
}

/// Sample lattices for dev (calibration dump) and test (evaluation dump).
pub fn cmd_dump(config: &PipelineConfig) -> Result<DumpReport> {
    let ctx = Ctx::new(config)?;
    ctx.require_toy_task()?;
    let labels = ctx.labels()?;
    let p = ctx.paths();
    let model = CrfModel::load(&p.model())?;
    if model.labels() != &labels {
        return Err(Error::InvalidLabelSet("model and data use different label sets".into()));
    }
    let mut counts = [0usize; 2];
    for (i, (split, target)) in [("dev", p.calibration_dump()), ("test", p.evaluation_dump())]
        .into_iter()
        .enumerate()
    {
        let instances = read_instances(&p.split(split), &labels)?;
        let dump = dump_instances(&model, &instances, &ctx.config.perturb)?;
        write_jsonl(&target, Some(&ctx.header()), &dump)?;
        counts[i] = dump.len();
    }
    let report = DumpReport {
        config_hash: ctx.hash.clone(),
        calibration_instances: counts[0],
        evaluation_instances: counts[1],
        samples: ctx.config.perturb.samples,
    };
    write_json(&p.report("dump.json"), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSelection {
    pub variant: Variant,
    pub schema: FeatureSchema,
    pub chosen_k: usize,
    pub val_ece: f64,
    pub candidates: Vec<KReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub config_hash: String,
    pub instances: usize,
    /// Top-1 validation events and how many are positive.
    pub val_events: usize,
    pub val_positives: usize,
    pub variants: Vec<VariantSelection>,
}

impl CalibrationReport {
    pub fn variant(&self, v: Variant) -> Option<&VariantSelection> {
        self.variants.iter().find(|s| s.variant == v)
    }
}

/// Heuristic-k selection for each forecaster variant on the calibration
/// dump.
pub fn cmd_calibrate(config: &PipelineConfig) -> Result<CalibrationReport> {
    let ctx = Ctx::new(config)?;
    let labels = ctx.labels()?;
    let p = ctx.paths();
    let dev = read_dump(&p.calibration_dump(), &labels)?;
    let cal = &ctx.config.calibration;

    let lm = if cal.schema.needs_lm() {
        let corpus: Vec<Vec<String>> = match &p.lm_corpus {
            Some(path) => read_instances(path, &labels)?.into_iter().map(|i| i.tokens).collect(),
            None => dev.iter().map(|d| d.instance.tokens.clone()).collect(),
        };
        let lm = train_lm(&corpus, cal.lm.order, cal.lm.alpha)?.with_config_hash(Some(ctx.hash.clone()));
        lm.save(&p.lm())?;
        Some(lm)
    } else {
        None
    };

    let ks = candidate_ks(cal.k_max, cal.ks.as_deref())?;
    let val = build_forecast_dataset(&dev, 1, Split::Val, &ctx.options(&labels, lm.as_ref()))?;
    let mut variants = Vec::new();
    for v in Variant::ALL {
        let schema = v.schema(&cal.schema);
        let opts = EventOptions {
            schema: &schema,
            ..ctx.options(&labels, lm.as_ref())
        };
        let selected = select_heuristic_k(&dev, &ks, &opts, &v.trainer(&cal.gbdt))?;
        selected
            .forecaster
            .clone()
            .with_config_hash(Some(ctx.hash.clone()))
            .save(&p.forecaster(v))?;
        variants.push(VariantSelection {
            variant: v,
            schema,
            chosen_k: selected.chosen_k,
            val_ece: selected.val_ece,
            candidates: selected.candidates,
        });
    }
    let report = CalibrationReport {
        config_hash: ctx.hash.clone(),
        instances: dev.len(),
        val_events: val.len(),
        val_positives: val.positives(),
        variants,
    };
    write_json(&p.report("calibrate.json"), &report)?;
    Ok(report)
}

/// One calibration-error row of an evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EceRow {
    /// `uncalibrated` or a forecaster variant name.
    pub name: String,
    pub ece: f64,
    pub chosen_k: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub name: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub config_hash: String,
    pub task: Task,
    pub schema: FeatureSchema,
    pub instances: usize,
    /// Top-1 events scored and how many are positive.
    pub events: usize,
    pub positives: usize,
    pub ece: Vec<EceRow>,
    /// Task metrics of the top-1 predictions.
    pub metrics: Vec<MetricValue>,
    /// Reliability bins of the full forecaster.
    pub bins: Vec<Bin>,
}

impl EvaluationReport {
    pub fn ece_of(&self, name: &str) -> Option<f64> {
        self.ece.iter().find(|r| r.name == name).map(|r| r.ece)
    }
}

fn chosen_k(p: &Paths, v: Variant) -> Option<usize> {
    read_json::<CalibrationReport>(&p.report("calibrate.json"))
        .ok()
        .and_then(|r| r.variant(v).map(|s| s.chosen_k))
}

/// ECE of the uncalibrated probabilities and of every forecaster on the
/// top-1 events of the evaluation dump, plus reliability CSVs.
pub fn cmd_evaluate(config: &PipelineConfig) -> Result<EvaluationReport> {
    let ctx = Ctx::new(config)?;
    let labels = ctx.labels()?;
    let p = ctx.paths();
    let test = read_dump(&p.evaluation_dump(), &labels)?;
    let lm = ctx.lm()?;
    let forecasters = Variant::ALL
        .iter()
        .map(|&v| Forecaster::load(&p.forecaster(v)))
        .collect::<Result<Vec<_>>>()?;
    let data = build_forecast_dataset(&test, 1, Split::Val, &ctx.options(&labels, lm.as_ref()))?;
    let bins = ctx.config.calibration.bins;

    let mut rows = Vec::new();
    let mut full_bins = Vec::new();
    let raw: Vec<(f64, bool)> = data.rows.iter().map(|r| (r.raw_prob, r.label)).collect();
    let mut variants: Vec<(String, Option<usize>, Vec<(f64, bool)>)> = vec![("uncalibrated".into(), None, raw)];
    for (v, f) in Variant::ALL.iter().zip(&forecasters) {
        variants.push((v.name().into(), chosen_k(p, *v), forecast_pairs(f, &data)?));
    }
    for (name, k, pairs) in variants {
        let (ece, stats) = compute_ece(&pairs, bins)?;
        let mut csv = Vec::new();
        reliability_export(&stats, &mut csv)?;
        let text = format!("{}\n{}", ctx.header(), String::from_utf8(csv).expect("csv is utf-8"));
        write_text(&p.report(&format!("reliability_{name}.csv")), &text)?;
        if name == Variant::Full.name() {
            full_bins = stats.bins;
        }
        rows.push(EceRow { name, ece, chosen_k: k });
    }

    let predictions = baseline_predictions(&test, &labels, &ctx.options(&labels, lm.as_ref()))?;
    let report = EvaluationReport {
        config_hash: ctx.hash.clone(),
        task: ctx.config.task,
        schema: ctx.config.calibration.schema.clone(),
        instances: test.len(),
        events: data.len(),
        positives: data.positives(),
        ece: rows,
        metrics: task_metrics(&test, &labels, &predictions)?,
        bins: full_bins,
    };
    write_json(&p.report("evaluate.json"), &report)?;
    Ok(report)
}

/// A system output for one instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    Labels(Vec<String>),
    Spans(Vec<Span>),
    Answer(AnswerSpan),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub baseline: Prediction,
    pub rescored: Prediction,
}

/// Top-1 outputs of the mean lattice.
pub fn baseline_predictions(
    items: &[SampledInstance],
    labels: &LabelSet,
    opts: &EventOptions<'_>,
) -> Result<Vec<Prediction>> {
    items
        .iter()
        .map(|item| {
            let events = score_events(item, 1, opts)?;
            top1_prediction(item, labels, &events)
        })
        .collect()
}

fn top1_prediction(item: &SampledInstance, labels: &LabelSet, events: &[ScoredEvent]) -> Result<Prediction> {
    let top = events.iter().filter(|e| e.entity.rank == 1);
    Ok(match item.instance.task {
        Task::SequenceLabeling => {
            let seq = top
                .filter_map(|e| e.entity.as_sequence())
                .next()
                .ok_or(Error::EmptyInput("no top-1 sequence"))?;
            Prediction::Labels(seq.iter().map(|&i| labels.label(i).to_string()).collect())
        }
        Task::SpanNer => {
            let spans: BTreeSet<Span> = top.filter_map(|e| e.entity.as_span().cloned()).collect();
            Prediction::Spans(spans.into_iter().collect())
        }
        Task::ExtractiveQa => Prediction::Answer(
            top.filter_map(|e| e.entity.as_answer())
                .next()
                .ok_or(Error::EmptyInput("no top-1 answer"))?,
        ),
    })
}

/// Primary task metric first: span F1, sentence accuracy, or exact match.
pub fn task_metrics(items: &[SampledInstance], labels: &LabelSet, predictions: &[Prediction]) -> Result<Vec<MetricValue>> {
    if items.len() != predictions.len() {
        return Err(Error::DimensionMismatch("one prediction per instance expected".into()));
    }
    let metric = |name: &str, value: f64| MetricValue {
        name: name.into(),
        value,
    };
    let mut pred_spans = Vec::new();
    let mut gold_spans = Vec::new();
    let (mut pred_seqs, mut gold_seqs) = (Vec::new(), Vec::new());
    let (mut pred_ans, mut gold_ans) = (Vec::new(), Vec::new());
    for (item, pred) in items.iter().zip(predictions) {
        let id = &item.instance.id;
        let gold = resolve_gold(&item.instance, labels)?.ok_or_else(|| Error::MissingGold(id.clone()))?;
        match (gold, pred) {
            (GoldTarget::Spans(g), Prediction::Spans(p)) => {
                gold_spans.extend(g.into_iter().map(|s| (id.clone(), s)));
                pred_spans.extend(p.iter().map(|s| (id.clone(), s.clone())));
            }
            (GoldTarget::Sequence(g), Prediction::Labels(p)) => {
                pred_seqs.push(p.iter().map(|l| labels.require_index(l)).collect::<Result<Vec<_>>>()?);
                gold_seqs.push(g);
            }
            (GoldTarget::Answer(g), Prediction::Answer(p)) => {
                gold_ans.push(g);
                pred_ans.push(*p);
            }
            _ => return Err(Error::GoldTaskMismatch(format!("prediction kind differs from gold for `{id}`"))),
        }
    }
    Ok(match items.first().map(|i| i.instance.task) {
        Some(Task::SpanNer) => {
            let prf = micro_f1(&pred_spans, &gold_spans);
            vec![
                metric("span_f1", prf.f1),
                metric("span_precision", prf.precision),
                metric("span_recall", prf.recall),
            ]
        }
        Some(Task::SequenceLabeling) => {
            let acc = sequence_accuracy(&pred_seqs, &gold_seqs)?;
            vec![metric("sentence_accuracy", acc.sentence), metric("token_accuracy", acc.token)]
        }
        Some(Task::ExtractiveQa) => vec![metric("exact_match", exact_match(&pred_ans, &gold_ans)?)],
        None => Vec::new(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RescoreReport {
    pub config_hash: String,
    pub k: usize,
    pub policy: RescoreConfig,
    pub instances: usize,
    pub baseline: Vec<MetricValue>,
    pub rescored: Vec<MetricValue>,
    /// Rescored minus baseline, primary metric.
    pub delta: f64,
}

/// Re-rank or filter the top-k entities of one instance by calibrated
/// confidence.
pub fn rescore_instance(
    item: &SampledInstance,
    labels: &LabelSet,
    events: &[ScoredEvent],
    forecaster: &Forecaster,
    policy: &RescoreConfig,
) -> Result<Prediction> {
    let scored = events
        .iter()
        .map(|e| {
            Ok(ScoredEntity {
                entity: e.entity.clone(),
                confidence: forecaster.predict(&e.features)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(match item.instance.task {
        Task::SequenceLabeling => Prediction::Labels(
            rescore_sequences(&scored)?
                .into_iter()
                .map(|i| labels.label(i).to_string())
                .collect(),
        ),
        Task::SpanNer => Prediction::Spans(rescore_spans(&scored, policy)?),
        Task::ExtractiveQa => Prediction::Answer(rescore_answers(&scored)?),
    })
}

/// Rescore the evaluation dump with the full forecaster and compare against
/// the top-1 baseline.
pub fn cmd_rescore(config: &PipelineConfig) -> Result<RescoreReport> {
    let ctx = Ctx::new(config)?;
    let labels = ctx.labels()?;
    let p = ctx.paths();
    let test = read_dump(&p.evaluation_dump(), &labels)?;
    let lm = ctx.lm()?;
    let forecaster = Forecaster::load(&p.forecaster(Variant::Full))?;
    let k = match ctx.config.rescore_k {
        Some(k) => k,
        None => read_json::<CalibrationReport>(&p.report("calibrate.json"))?
            .variant(Variant::Full)
            .map(|s| s.chosen_k)
            .ok_or_else(|| Error::Config("calibration report lists no full forecaster".into()))?,
    };
    let opts = ctx.options(&labels, lm.as_ref());

    let mut baseline = Vec::with_capacity(test.len());
    let mut rescored = Vec::with_capacity(test.len());
    let mut records = Vec::with_capacity(test.len());
    for item in &test {
        let events = score_events(item, k, &opts)?;
        let base = top1_prediction(item, &labels, &events)?;
        let new = rescore_instance(item, &labels, &events, &forecaster, &ctx.config.rescore)?;
        records.push(PredictionRecord {
            id: item.instance.id.clone(),
            baseline: base.clone(),
            rescored: new.clone(),
        });
        baseline.push(base);
        rescored.push(new);
    }
    write_jsonl(&p.report("predictions.jsonl"), Some(&ctx.header()), &records)?;
    let before = task_metrics(&test, &labels, &baseline)?;
    let after = task_metrics(&test, &labels, &rescored)?;
    let delta = match (before.first(), after.first()) {
        (Some(b), Some(a)) => a.value - b.value,
        _ => 0.0,
    };
    let report = RescoreReport {
        config_hash: ctx.hash.clone(),
        k,
        policy: ctx.config.rescore.clone(),
        instances: test.len(),
        baseline: before,
        rescored: after,
        delta,
    };
    write_json(&p.report("rescore.json"), &report)?;
    Ok(report)
}

/// Every stage in order.
pub fn run_all(config: &PipelineConfig) -> Result<(EvaluationReport, RescoreReport)> {
    cmd_synth(config)?;
    cmd_train(config)?;
    cmd_dump(config)?;
    cmd_calibrate(config)?;
    Ok((cmd_evaluate(config)?, cmd_rescore(config)?))
}
