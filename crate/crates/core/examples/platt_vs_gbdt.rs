//! Recalibrating an over-confident score with Platt scaling and boosted trees.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use structcal::forecast::{fit_gbdt, fit_platt, GbdtConfig};
use structcal::metrics::compute_ece;

fn main() -> structcal::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    // True accuracy is the square of the reported confidence.
    let mut draw = |n: usize| -> (Vec<f64>, Vec<bool>) {
        let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let labels = scores.iter().map(|s| rng.random::<f64>() < s * s).collect();
        (scores, labels)
    };
    let (train_x, train_y) = draw(4000);
    let (test_x, test_y) = draw(4000);

    let platt = fit_platt(&train_x, &train_y)?;
    let rows: Vec<Vec<f64>> = train_x.iter().map(|&s| vec![s]).collect();
    let gbdt = fit_gbdt(&rows, &train_y, &GbdtConfig::default())?;

    let pairs = |f: &dyn Fn(f64) -> f64| -> Vec<(f64, bool)> {
        test_x.iter().zip(&test_y).map(|(&s, &y)| (f(s), y)).collect()
    };
    let (raw, _) = compute_ece(&pairs(&|s| s), 20)?;
    let (p, _) = compute_ece(&pairs(&|s| platt.predict(s)), 20)?;
    let (g, _) = compute_ece(&pairs(&|s| gbdt.predict(&[s]).expect("one feature")), 20)?;
    println!("platt a={:.3} b={:.3}", platt.a, platt.b);
    println!("ECE raw {raw:.4}  platt {p:.4}  gbdt {g:.4}");
    Ok(())
}
