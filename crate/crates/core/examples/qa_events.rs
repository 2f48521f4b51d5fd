//! Answer-span events from start and end logits.

use structcal::events::build_qa_events;
use structcal::types::AnswerSpan;

fn main() -> structcal::Result<()> {
    let start = [0.1, 2.3, 0.4, 1.9, -0.5, 0.0];
    let end = [-1.0, 0.2, 1.1, 2.5, 0.3, -0.2];
    let gold = AnswerSpan { start: 1, end: 3 };
    let set = build_qa_events("q1", &start, &end, 5, 30, Some(gold))?;
    println!("{} candidates, {} contain the gold answer", set.len(), set.positive_count());
    for e in &set.events {
        let a = e.entity.as_answer().expect("answer events");
        let score = start[a.start] + end[a.end];
        println!("  rank {} [{}, {}] score {score:.2} positive={:?}", e.entity.rank, a.start, a.end, e.positive);
    }
    Ok(())
}
