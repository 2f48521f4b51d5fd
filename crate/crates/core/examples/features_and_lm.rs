//! Sample statistics, rank and language-model perplexity for one entity.

use structcal::features::{featurize, write_features_csv, FeatureSchema};
use structcal::lm::train_lm;
use structcal::types::{Entity, EntityPayload, Instance, Lattice, McSampleSet, Task};

fn main() -> structcal::Result<()> {
    let corpus: Vec<Vec<&str>> = vec![
        vec!["the", "cat", "sat"],
        vec!["the", "dog", "sat"],
        vec!["a", "cat", "ran"],
    ];
    let lm = train_lm(&corpus, 2, 0.5)?;
    let familiar = ["the", "cat", "ran"];
    let strange = ["zebra", "quantum", "sat"];
    println!("perplexity familiar {:.2}, strange {:.2}", lm.perplexity(&familiar)?, lm.perplexity(&strange)?);

    let instance = Instance {
        id: "x".into(),
        tokens: familiar.iter().map(|t| t.to_string()).collect(),
        task: Task::SequenceLabeling,
        gold: None,
    };
    // Five perturbed passes of a two-label model.
    let samples = (0..5)
        .map(|m| {
            let wobble = 0.3 * (m as f64 - 2.0);
            Lattice::emission_only(vec![vec![1.0 + wobble, 0.0], vec![0.5, 0.2 - wobble], vec![2.0, wobble]])
        })
        .collect::<structcal::Result<Vec<_>>>()?;
    let samples = McSampleSet::new(samples)?;
    let entity = Entity {
        payload: EntityPayload::Sequence(vec![0, 0, 0]),
        rank: 1,
    };
    let schema = FeatureSchema::rank_var_lm();
    let features = featurize(&instance, &samples, &entity, &schema, Some(&lm))?;
    write_features_csv(std::io::stdout(), &schema, [&features])?;
    Ok(())
}
