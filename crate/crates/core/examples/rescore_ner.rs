//! Threshold filtering and overlap resolution of candidate entity spans.

use structcal::rescore::{rescore_spans, OverlapPolicy, RescoreConfig, RescoreMode, ScoredEntity};
use structcal::types::{Entity, EntityPayload, Span};

fn span(start: usize, end: usize, class: &str, rank: usize, confidence: f64) -> ScoredEntity {
    ScoredEntity {
        entity: Entity {
            payload: EntityPayload::Span {
                span: Span::new(start, end, class),
                tags: Vec::new(),
            },
            rank,
        },
        confidence,
    }
}

fn main() -> structcal::Result<()> {
    // "Washington" as a person from the best decode, as a location from the second.
    let events = vec![
        span(0, 1, "PER", 1, 0.41),
        span(0, 1, "LOC", 2, 0.77),
        span(3, 5, "ORG", 1, 0.92),
        span(4, 5, "ORG", 3, 0.30),
    ];
    for (name, config) in [
        ("threshold 0.5, best wins", RescoreConfig::default()),
        (
            "threshold 0.2, keep all",
            RescoreConfig {
                threshold: 0.2,
                overlap: OverlapPolicy::KeepAll,
                ..RescoreConfig::default()
            },
        ),
        (
            "rank select, best wins",
            RescoreConfig {
                mode: RescoreMode::RankSelect,
                ..RescoreConfig::default()
            },
        ),
    ] {
        let kept: Vec<String> = rescore_spans(&events, &config)?
            .iter()
            .map(|s| format!("{}[{},{})", s.class, s.start, s.end))
            .collect();
        println!("{name}: {}", kept.join(" "));
    }
    Ok(())
}
