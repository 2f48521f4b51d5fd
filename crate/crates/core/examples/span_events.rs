//! Named-entity events from the k best BIO decodes, labeled against gold.

use std::collections::BTreeSet;

use structcal::decode::kbest_viterbi;
use structcal::events::build_span_events;
use structcal::types::{LabelSet, Lattice, Span};

fn main() -> structcal::Result<()> {
    let labels = LabelSet::bio(&["PER", "LOC"])?;
    // O, B-PER, I-PER, B-LOC, I-LOC over "Ada visited New York".
    let unary = vec![
        vec![0.1, 2.0, -1.0, 0.5, -2.0],
        vec![1.5, -1.0, 0.2, -0.5, -1.0],
        vec![0.4, 0.6, -1.0, 1.0, -2.0],
        vec![0.2, -1.0, 0.3, -0.4, 0.9],
    ];
    let mut transition = vec![vec![0.0; 5]; 5];
    for from in [0, 3, 4] {
        transition[from][2] = -4.0;
    }
    for from in [0, 1, 2] {
        transition[from][4] = -4.0;
    }
    let lattice = Lattice::new(unary, transition)?;
    let gold: BTreeSet<Span> = [Span::new(0, 1, "PER"), Span::new(2, 4, "LOC")].into();

    let decodes = kbest_viterbi(&lattice, 4)?;
    for k in 1..=decodes.len() {
        let set = build_span_events("s1", &decodes[..k], &labels, Some(&gold));
        println!("k={k}: {} events, {} positive", set.len(), set.positive_count());
        if k == decodes.len() {
            for e in &set.events {
                let span = e.entity.as_span().expect("span events");
                println!(
                    "  {} [{}, {}) from rank {} positive={:?}",
                    span.class, span.start, span.end, e.entity.rank, e.positive
                );
            }
        }
    }
    Ok(())
}
