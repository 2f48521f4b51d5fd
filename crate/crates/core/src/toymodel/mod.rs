//! A small trainable base model: a linear-chain CRF, weight-noise sampling
//! of its lattices, and a seeded HMM corpus generator.

mod crf;
mod sample;
mod synth;

pub use crf::{gold_tags, token_features, train_crf, validation_score, CrfConfig, CrfModel, Encoded, TrainLog};
pub use sample::{dump_instances, instance_seed, sample_lattices, PerturbConfig};
pub use synth::{make_synthetic_corpus, Corpus, SynthConfig};
