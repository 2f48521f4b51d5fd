//! The whole pipeline on the default synthetic setup. Pass an output
//! directory as the first argument; artifacts go to a temp dir otherwise.

use std::path::PathBuf;

use structcal::pipeline::{run_all, PipelineConfig};

fn main() -> structcal::Result<()> {
    let mut config = PipelineConfig::default();
    config.paths.out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("structcal_end_to_end"));
    let (evaluation, rescore) = run_all(&config)?;
    println!("artifacts in {}", config.paths.out.display());
    println!("{} test events, {} positive", evaluation.events, evaluation.positives);
    for row in &evaluation.ece {
        let k = row.chosen_k.map(|k| format!(" (k={k})")).unwrap_or_default();
        println!("ECE {:<16}{:.4}{k}", row.name, row.ece);
    }
    let (before, after) = (&rescore.baseline[0], &rescore.rescored[0]);
    println!("{} {:.4} -> {:.4} after rescoring top-{}", before.name, before.value, after.value, rescore.k);
    Ok(())
}
