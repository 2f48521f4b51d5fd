//! Reliability bins as CSV plus a text rendering of the diagram.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use structcal::metrics::{compute_ece, reliability_export};

fn main() -> structcal::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pairs: Vec<(f64, bool)> = (0..2000)
        .map(|_| {
            let c: f64 = rng.random();
            (c, rng.random::<f64>() < 0.15 + 0.7 * c)
        })
        .collect();
    let (ece, stats) = compute_ece(&pairs, 10)?;
    reliability_export(&stats, std::io::stdout())?;
    println!("\nECE {ece:.4}");
    for bin in stats.non_empty() {
        let bar = "#".repeat((bin.accuracy * 40.0).round() as usize);
        println!("{:.1}-{:.1} {:<40} conf {:.2} acc {:.2}", bin.lower, bin.upper, bar, bin.confidence, bin.accuracy);
    }
    Ok(())
}
