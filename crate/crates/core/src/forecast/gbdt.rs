//! Gradient-boosted regression trees on binary log-loss.
//!
//! Each round fits a depth-limited tree to the residuals `y - p` by squared
//! error reduction; leaves then take the Newton value
//! `sum(y - p) / sum(p (1 - p))` over their rows.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::platt::sigmoid;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbdtConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
    /// Fraction of rows drawn (without replacement) for each tree.
    pub subsample: f64,
    pub seed: u64,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 3,
            learning_rate: 0.1,
            min_leaf: 5,
            subsample: 1.0,
            seed: 0,
        }
    }
}

impl GbdtConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth == 0 || self.min_leaf == 0 {
            return Err(Error::Config("GBDT needs max_depth >= 1 and min_leaf >= 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::Config(format!("subsample must be in (0, 1], got {}", self.subsample)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    /// Rows with `x[feature] < threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { value: f64 },
}

/// A regression tree stored as a flat node list; node 0 is the root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] < threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbdtForecaster {
    pub config: GbdtConfig,
    pub n_features: usize,
    pub base_score: f64,
    pub trees: Vec<Tree>,
}

impl GbdtForecaster {
    pub fn raw_score(&self, x: &[f64]) -> f64 {
        let boost: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        self.base_score + self.config.learning_rate * boost
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch(format!(
                "forecaster expects {} features, got {}",
                self.n_features,
                x.len()
            )));
        }
        Ok(sigmoid(self.raw_score(x)))
    }
}

/// The best split of `rows`, if any split leaves `min_leaf` rows on each side
/// and strictly reduces squared error. Candidate thresholds are midpoints
/// between consecutive distinct feature values; ties go to the lower feature
/// index, then the lower threshold.
pub fn best_split(
    x: &[Vec<f64>],
    residuals: &[f64],
    rows: &[usize],
    min_leaf: usize,
) -> Option<(usize, f64, f64)> {
    let n = rows.len();
    if n < 2 * min_leaf {
        return None;
    }
    let total: f64 = rows.iter().map(|&r| residuals[r]).sum();
    let parent = total * total / n as f64;
    let n_features = x[rows[0]].len();
    let mut best: Option<(usize, f64, f64)> = None;
    let mut order = rows.to_vec();
    for f in 0..n_features {
        order.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]).then(a.cmp(&b)));
        let mut left_sum = 0.0;
        for i in 0..n - 1 {
            left_sum += residuals[order[i]];
            let (lo, hi) = (x[order[i]][f], x[order[i + 1]][f]);
            let n_left = i + 1;
            if lo == hi || n_left < min_leaf || n - n_left < min_leaf {
                continue;
            }
            let right_sum = total - left_sum;
            let gain = left_sum * left_sum / n_left as f64 + right_sum * right_sum / (n - n_left) as f64 - parent;
            if gain > 1e-12 && best.is_none_or(|(_, _, g)| gain > g) {
                best = Some((f, lo + (hi - lo) / 2.0, gain));
            }
        }
    }
    best
}

fn newton_value(rows: &[usize], labels: &[f64], probs: &[f64]) -> f64 {
    let num: f64 = rows.iter().map(|&r| labels[r] - probs[r]).sum();
    let den: f64 = rows.iter().map(|&r| probs[r] * (1.0 - probs[r])).sum();
    if den.abs() < 1e-150 {
        0.0
    } else {
        num / den
    }
}

fn grow(
    nodes: &mut Vec<Node>,
    x: &[Vec<f64>],
    labels: &[f64],
    probs: &[f64],
    residuals: &[f64],
    rows: Vec<usize>,
    depth: usize,
    config: &GbdtConfig,
) -> usize {
    let id = nodes.len();
    nodes.push(Node::Leaf { value: 0.0 });
    let split = if depth < config.max_depth {
        best_split(x, residuals, &rows, config.min_leaf)
    } else {
        None
    };
    match split {
        None => nodes[id] = Node::Leaf { value: newton_value(&rows, labels, probs) },
        Some((feature, threshold, _)) => {
            let (l, r): (Vec<usize>, Vec<usize>) = rows.into_iter().partition(|&i| x[i][feature] < threshold);
            let left = grow(nodes, x, labels, probs, residuals, l, depth + 1, config);
            let right = grow(nodes, x, labels, probs, residuals, r, depth + 1, config);
            nodes[id] = Node::Split {
                feature,
                threshold,
                left,
                right,
            };
        }
    }
    id
}

pub fn fit_gbdt(x: &[Vec<f64>], labels: &[bool], config: &GbdtConfig) -> Result<GbdtForecaster> {
    config.validate()?;
    if x.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!("{} rows for {} labels", x.len(), labels.len())));
    }
    if x.is_empty() {
        return Err(Error::EmptyInput("no rows to fit"));
    }
    let n_features = x[0].len();
    if let Some(row) = x.iter().find(|r| r.len() != n_features) {
        return Err(Error::DimensionMismatch(format!(
            "ragged feature matrix: {} vs {} columns",
            row.len(),
            n_features
        )));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite feature value".into()));
    }
    let positives = labels.iter().filter(|&&y| y).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::DegenerateData("GBDT needs both positive and negative rows".into()));
    }

    let n = x.len();
    let y: Vec<f64> = labels.iter().map(|&b| f64::from(u8::from(b))).collect();
    let rate = positives as f64 / n as f64;
    let base_score = (rate / (1.0 - rate)).ln();
    let mut raw = vec![base_score; n];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let take = ((n as f64 * config.subsample).floor() as usize).max(1);

    let mut trees = Vec::with_capacity(config.n_trees);
    for _ in 0..config.n_trees {
        let probs: Vec<f64> = raw.iter().map(|&z| sigmoid(z)).collect();
        let residuals: Vec<f64> = y.iter().zip(&probs).map(|(y, p)| y - p).collect();
        let rows: Vec<usize> = if take < n {
            let mut rows = sample(&mut rng, n, take).into_vec();
            rows.sort_unstable();
            rows
        } else {
            (0..n).collect()
        };
        let mut nodes = Vec::new();
        grow(&mut nodes, x, &y, &probs, &residuals, rows, 0, config);
        let tree = Tree { nodes };
        for (z, row) in raw.iter_mut().zip(x) {
            *z += config.learning_rate * tree.predict(row);
        }
        trees.push(tree);
    }
    Ok(GbdtForecaster {
        config: config.clone(),
        n_features,
        base_score,
        trees,
    })
}
