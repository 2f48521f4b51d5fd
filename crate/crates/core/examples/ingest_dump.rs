//! Reading an externally produced lattice dump and scoring its events.

use structcal::features::FeatureSchema;
use structcal::forecast::{score_events, EventOptions};
use structcal::io::read_dump;
use structcal::types::{LabelSet, Scheme};

const DUMP: &str = r#"# produced by some other tagger
{"id": "s1", "tokens": ["time", "flies"], "task": "sequence-labeling", "gold": {"labels": ["N", "V"]}, "samples": [{"unary": [[1.0, 0.2], [0.1, 0.9]], "transition": [[0.0, 0.5], [0.2, 0.0]]}, {"unary": [[0.8, 0.4], [0.3, 0.6]], "transition": [[0.0, 0.4], [0.1, 0.0]]}]}
{"id": "s2", "tokens": ["fruit", "flies", "like"], "task": "sequence-labeling", "gold": {"labels": ["N", "N", "V"]}, "samples": [{"unary": [[1.2, 0.1], [0.4, 0.5], [0.0, 1.1]]}, {"unary": [[0.9, 0.3], [0.6, 0.2], [0.2, 0.8]]}]}
"#;

fn main() -> structcal::Result<()> {
    let path = std::env::temp_dir().join("structcal_ingest_example.jsonl");
    std::fs::write(&path, DUMP)?;
    let labels = LabelSet::new(["N", "V"], Scheme::Plain)?;
    let items = read_dump(&path, &labels)?;
    let schema = FeatureSchema::rank_var();
    let opts = EventOptions {
        labels: &labels,
        schema: &schema,
        lm: None,
        max_answer_len: 30,
    };
    for item in &items {
        for e in score_events(item, 3, &opts)? {
            println!(
                "{} rank {} {:?} raw {:.3} normalized mean {:.3} positive={:?}",
                e.instance_id,
                e.entity.rank,
                e.entity.as_sequence().expect("sequence task"),
                e.raw_prob,
                e.features.mean_prob,
                e.positive
            );
        }
    }
    std::fs::remove_file(&path)?;
    Ok(())
}
