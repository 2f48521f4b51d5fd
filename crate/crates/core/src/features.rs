//! Forecaster input rows.
//!
//! Every row starts from the per-sample length-normalized probabilities of an
//! entity. Their mean is the base confidence; the 10th/90th percentiles and
//! the population variance describe the spread across samples. Rank, entity
//! extent and input perplexity can be appended.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::decode::{order_free_mean, SampleScorer};
use crate::error::{Error, Result};
use crate::lm::LanguageModel;
use crate::types::{Entity, Instance, McSampleSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureName {
    MeanProb,
    P10,
    P90,
    Variance,
    Rank,
    SpanLen,
    LmPerplexity,
}

impl FeatureName {
    pub const ALL: [FeatureName; 7] = [
        FeatureName::MeanProb,
        FeatureName::P10,
        FeatureName::P90,
        FeatureName::Variance,
        FeatureName::Rank,
        FeatureName::SpanLen,
        FeatureName::LmPerplexity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureName::MeanProb => "mean_prob",
            FeatureName::P10 => "p10",
            FeatureName::P90 => "p90",
            FeatureName::Variance => "variance",
            FeatureName::Rank => "rank",
            FeatureName::SpanLen => "span_len",
            FeatureName::LmPerplexity => "lm_perplexity",
        }
    }
}

impl fmt::Display for FeatureName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureName::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown feature `{s}`")))
    }
}

/// Ordered list of active features. `mean_prob` is always present.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<FeatureName>", into = "Vec<FeatureName>")]
pub struct FeatureSchema(Vec<FeatureName>);

impl TryFrom<Vec<FeatureName>> for FeatureSchema {
    type Error = Error;

    fn try_from(names: Vec<FeatureName>) -> Result<Self> {
        FeatureSchema::new(names)
    }
}

impl From<FeatureSchema> for Vec<FeatureName> {
    fn from(schema: FeatureSchema) -> Self {
        schema.0
    }
}

impl FeatureSchema {
    pub fn new(names: Vec<FeatureName>) -> Result<Self> {
        if !names.contains(&FeatureName::MeanProb) {
            return Err(Error::Config("feature schema must include mean_prob".into()));
        }
        for (i, name) in names.iter().enumerate() {
            if names[..i].contains(name) {
                return Err(Error::Config(format!("feature `{name}` listed twice")));
            }
        }
        Ok(Self(names))
    }

    /// The Platt / calibrated-mean input.
    pub fn mean_only() -> Self {
        Self(vec![FeatureName::MeanProb])
    }

    /// Mean plus the spread features.
    pub fn var() -> Self {
        use FeatureName::*;
        Self(vec![MeanProb, P10, P90, Variance])
    }

    pub fn rank_var() -> Self {
        use FeatureName::*;
        Self(vec![MeanProb, P10, P90, Variance, Rank])
    }

    pub fn rank_var_len() -> Self {
        use FeatureName::*;
        Self(vec![MeanProb, P10, P90, Variance, Rank, SpanLen])
    }

    pub fn rank_var_lm() -> Self {
        use FeatureName::*;
        Self(vec![MeanProb, P10, P90, Variance, Rank, LmPerplexity])
    }

    pub fn names(&self) -> &[FeatureName] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, name: FeatureName) -> bool {
        self.0.contains(&name)
    }

    pub fn needs_lm(&self) -> bool {
        self.contains(FeatureName::LmPerplexity)
    }
}

impl fmt::Display for FeatureSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.0.iter().map(|n| n.as_str()).collect();
        f.write_str(&names.join("+"))
    }
}

/// One forecaster input. Fields outside the schema are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub schema: FeatureSchema,
    pub mean_prob: f64,
    pub p10: Option<f64>,
    pub p90: Option<f64>,
    pub variance: Option<f64>,
    pub rank: Option<usize>,
    pub span_len: Option<usize>,
    pub lm_perplexity: Option<f64>,
}

impl FeatureVector {
    pub fn get(&self, name: FeatureName) -> Option<f64> {
        match name {
            FeatureName::MeanProb => Some(self.mean_prob),
            FeatureName::P10 => self.p10,
            FeatureName::P90 => self.p90,
            FeatureName::Variance => self.variance,
            FeatureName::Rank => self.rank.map(|r| r as f64),
            FeatureName::SpanLen => self.span_len.map(|l| l as f64),
            FeatureName::LmPerplexity => self.lm_perplexity,
        }
    }

    /// Values in this vector's own schema order.
    pub fn values(&self) -> Vec<f64> {
        self.schema
            .names()
            .iter()
            .map(|&n| self.get(n).expect("schema fields are populated"))
            .collect()
    }

    /// Values for another schema, which must be covered by this vector.
    pub fn project(&self, schema: &FeatureSchema) -> Result<Vec<f64>> {
        schema
            .names()
            .iter()
            .map(|&n| {
                self.get(n)
                    .ok_or_else(|| Error::SchemaMismatch(format!("feature vector lacks `{n}`")))
            })
            .collect()
    }
}

/// Percentile by linear interpolation between closest ranks, `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Summary statistics of the per-sample normalized probabilities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleStats {
    pub mean: f64,
    pub p10: f64,
    pub p90: f64,
    pub variance: f64,
}

pub fn sample_stats(values: &[f64]) -> Result<SampleStats> {
    if values.is_empty() {
        return Err(Error::EmptyInput("no per-sample probabilities"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = order_free_mean(&sorted);
    let variance = sorted.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let variance = if sorted[0] == sorted[sorted.len() - 1] { 0.0 } else { variance };
    Ok(SampleStats {
        mean,
        p10: percentile(&sorted, 0.1),
        p90: percentile(&sorted, 0.9),
        variance,
    })
}

/// Assemble a feature vector from precomputed per-sample probabilities.
pub fn featurize_values(
    normalized: &[f64],
    entity: &Entity,
    schema: &FeatureSchema,
    perplexity: Option<f64>,
) -> Result<FeatureVector> {
    let stats = sample_stats(normalized)?;
    let want = |n| schema.contains(n);
    let lm_perplexity = if want(FeatureName::LmPerplexity) {
        Some(perplexity.ok_or(Error::MissingLanguageModel)?)
    } else {
        None
    };
    Ok(FeatureVector {
        schema: schema.clone(),
        mean_prob: stats.mean,
        p10: want(FeatureName::P10).then_some(stats.p10),
        p90: want(FeatureName::P90).then_some(stats.p90),
        variance: want(FeatureName::Variance).then_some(stats.variance),
        rank: want(FeatureName::Rank).then_some(entity.rank),
        span_len: want(FeatureName::SpanLen).then_some(entity.extent()),
        lm_perplexity,
    })
}

/// Feature vector for one entity of `instance` under its MC samples.
pub fn featurize(
    instance: &Instance,
    samples: &McSampleSet,
    entity: &Entity,
    schema: &FeatureSchema,
    lm: Option<&LanguageModel>,
) -> Result<FeatureVector> {
    let scorer = SampleScorer::new(samples);
    let normalized = scorer.normalized_probabilities(entity)?;
    let perplexity = match (schema.needs_lm(), lm) {
        (true, Some(lm)) => Some(lm.perplexity(&instance.tokens)?),
        (true, None) => return Err(Error::MissingLanguageModel),
        (false, _) => None,
    };
    featurize_values(&normalized, entity, schema, perplexity)
}

/// Write feature rows as CSV with the schema names as the header.
pub fn write_features_csv<'a, W: Write>(
    writer: W,
    schema: &FeatureSchema,
    rows: impl IntoIterator<Item = &'a FeatureVector>,
) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(schema.names().iter().map(|n| n.as_str()))?;
    for row in rows {
        let values = row.project(schema)?;
        csv.write_record(values.iter().map(|v| v.to_string()))?;
    }
    csv.flush()?;
    Ok(())
}
