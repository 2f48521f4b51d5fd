//! Heuristic-k selection on a freshly trained toy CRF.

use structcal::features::FeatureSchema;
use structcal::forecast::{candidate_ks, select_heuristic_k, EventOptions, GbdtConfig, Trainer};
use structcal::toymodel::{dump_instances, make_synthetic_corpus, train_crf, CrfConfig, PerturbConfig, SynthConfig};

fn main() -> structcal::Result<()> {
    let synth = SynthConfig {
        n_train: 300,
        n_dev: 150,
        n_test: 10,
        min_len: 20,
        max_len: 40,
        ..SynthConfig::default()
    };
    let corpus = make_synthetic_corpus(&synth)?;
    let (model, log) = train_crf(&corpus.train, &corpus.dev, &corpus.labels, &CrfConfig::default())?;
    println!("CRF dev F1 {:.3} after {} epochs", log.best_val, log.epochs);

    let perturb = PerturbConfig {
        sigma: 2.0,
        ..PerturbConfig::default()
    };
    let dev = dump_instances(&model, &corpus.dev, &perturb)?;
    let schema = FeatureSchema::rank_var();
    let opts = EventOptions {
        labels: &corpus.labels,
        schema: &schema,
        lm: None,
        max_answer_len: 30,
    };
    let trainer = Trainer::Gbdt(GbdtConfig {
        n_trees: 30,
        max_depth: 2,
        min_leaf: 40,
        ..GbdtConfig::default()
    });
    let selected = select_heuristic_k(&dev, &candidate_ks(3, None)?, &opts, &trainer)?;
    for c in &selected.candidates {
        println!("k={} rows={} positives={} val ECE {:.4}", c.k, c.train_rows, c.train_positives, c.val_ece);
    }
    println!("chosen k={}", selected.chosen_k);
    Ok(())
}
