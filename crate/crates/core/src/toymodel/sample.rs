//! Stochastic lattices from Gaussian perturbations of CRF weights.

use std::collections::{BTreeSet, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::crf::CrfModel;
use crate::error::{Error, Result};
use crate::types::{Instance, McSampleSet, SampledInstance};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbConfig {
    /// Standard deviation of the per-weight noise.
    pub sigma: f64,
    pub samples: usize,
    pub seed: u64,
    pub perturb_transitions: bool,
    /// Scale each weight's noise by `1 / sqrt(n)`, `n` being the weight's
    /// training occurrence count (at least 1), so rarely seen weights wobble
    /// more.
    pub count_scaled: bool,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            sigma: 0.1,
            samples: 10,
            seed: 0,
            perturb_transitions: true,
            count_scaled: true,
        }
    }
}

impl PerturbConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::Config(format!("noise scale must be finite and >= 0, got {}", self.sigma)));
        }
        if self.samples == 0 {
            return Err(Error::Config("need at least one sample".into()));
        }
        Ok(())
    }
}

/// FNV-1a over the bytes of `id`, mixed with `seed`.
pub fn instance_seed(seed: u64, id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for b in id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// `M` lattices for one token sequence, each from an independent draw of
/// weight noise. Only weights the sequence touches are drawn, in feature-id
/// order, so the result depends on the seed and the instance id alone.
pub fn sample_lattices(
    model: &CrfModel,
    tokens: &[String],
    instance_id: &str,
    config: &PerturbConfig,
) -> Result<McSampleSet> {
    config.validate()?;
    if tokens.is_empty() {
        return Err(Error::EmptyInput("cannot sample lattices for an empty token sequence"));
    }
    let c = model.labels().len();
    let feats = model.feature_ids(tokens);
    let active: BTreeSet<usize> = feats.iter().flatten().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(instance_seed(config.seed, instance_id));
    let scale = |count: u64| {
        if config.count_scaled {
            config.sigma / (count.max(1) as f64).sqrt()
        } else {
            config.sigma
        }
    };
    let mut noise = |sd: f64| -> f64 {
        let z: f64 = StandardNormal.sample(&mut rng);
        sd * z
    };

    let mut lattices = Vec::with_capacity(config.samples);
    for _ in 0..config.samples {
        let mut offsets: HashMap<usize, Vec<f64>> = HashMap::with_capacity(active.len());
        for &f in &active {
            let sd = scale(model.feature_count(f));
            offsets.insert(f, (0..c).map(|_| noise(sd)).collect());
        }
        let transition: Vec<Vec<f64>> = model
            .transition_weights()
            .iter()
            .enumerate()
            .map(|(a, row)| {
                row.iter()
                    .enumerate()
                    .map(|(b, &w)| {
                        if config.perturb_transitions {
                            w + noise(scale(model.transition_count(a, b)))
                        } else {
                            w
                        }
                    })
                    .collect()
            })
            .collect();
        let emission = |f: usize, y: usize| model.emission_weight(f, y) + offsets[&f][y];
        lattices.push(model.lattice_from_ids(&feats, &emission, &transition)?);
    }
    McSampleSet::new(lattices)
}

/// Sample every instance, keeping gold and ids.
pub fn dump_instances(model: &CrfModel, instances: &[Instance], config: &PerturbConfig) -> Result<Vec<SampledInstance>> {
    instances
        .iter()
        .map(|inst| {
            Ok(SampledInstance {
                samples: sample_lattices(model, &inst.tokens, &inst.id, config)?,
                instance: inst.clone(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decode::normalized_confidence;
    use crate::features::sample_stats;
    use crate::toymodel::crf::{train_crf, CrfConfig};
    use crate::types::{Entity, EntityPayload, Gold, LabelSet, Lattice, Scheme, Task};

    fn trained() -> (CrfModel, Vec<String>) {
        let inst = |id: &str, w: &[&str], l: &[&str]| Instance {
            id: id.into(),
            tokens: w.iter().map(|s| s.to_string()).collect(),
            task: Task::SequenceLabeling,
            gold: Some(Gold::Labels(l.iter().map(|s| s.to_string()).collect())),
        };
        let data = vec![
            inst("a", &["x", "y", "z"], &["A", "B", "A"]),
            inst("b", &["y", "y", "x"], &["B", "B", "A"]),
            inst("c", &["z", "x"], &["A", "A"]),
        ];
        let labels = LabelSet::new(["A", "B"], Scheme::Plain).unwrap();
        let (m, _) = train_crf(&data, &[], &labels, &CrfConfig::default()).unwrap();
        (m, vec!["x".into(), "y".into(), "q".into()])
    }

    #[test]
    fn zero_noise_reproduces_clean_lattice() {
        let (model, tokens) = trained();
        let cfg = PerturbConfig {
            sigma: 0.0,
            ..Default::default()
        };
        let set = sample_lattices(&model, &tokens, "i", &cfg).unwrap();
        let clean = model.lattice(&tokens).unwrap();
        assert_eq!(set.len(), 10);
        assert!(set.samples().iter().all(|l| *l == clean));
    }

    #[test]
    fn tiny_noise_mean_approaches_clean() {
        let (model, tokens) = trained();
        let cfg = PerturbConfig {
            sigma: 1e-6,
            ..Default::default()
        };
        let mean = sample_lattices(&model, &tokens, "i", &cfg).unwrap().mean_lattice();
        let clean = model.lattice(&tokens).unwrap();
        for (a, b) in mean.unary_rows().iter().flatten().zip(clean.unary_rows().iter().flatten()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let (model, tokens) = trained();
        let cfg = PerturbConfig::default();
        let a = sample_lattices(&model, &tokens, "i", &cfg).unwrap();
        let b = sample_lattices(&model, &tokens, "i", &cfg).unwrap();
        assert_eq!(a, b);
        let other = sample_lattices(&model, &tokens, "j", &cfg).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn noise_gives_spread_in_features() {
        let (model, tokens) = trained();
        let set = sample_lattices(&model, &tokens, "i", &PerturbConfig::default()).unwrap();
        let entity = Entity {
            payload: EntityPayload::Sequence(vec![0, 1, 0]),
            rank: 1,
        };
        let values = crate::decode::SampleScorer::new(&set).normalized_probabilities(&entity).unwrap();
        assert!(sample_stats(&values).unwrap().variance > 0.0);
        assert!(normalized_confidence(&set, &entity).unwrap() > 0.0);
    }

    #[test]
    fn frozen_transitions_stay_put() {
        let (model, tokens) = trained();
        let cfg = PerturbConfig {
            perturb_transitions: false,
            ..Default::default()
        };
        let set = sample_lattices(&model, &tokens, "i", &cfg).unwrap();
        let clean: Lattice = model.lattice(&tokens).unwrap();
        assert!(set.samples().iter().all(|l| l.transition_rows() == clean.transition_rows()));
    }
}
