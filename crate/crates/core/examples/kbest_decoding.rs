//! Exact k-best decoding, marginals and span probabilities on a small lattice.

use structcal::decode::{forward_backward, kbest_viterbi, span_marginal};
use structcal::types::Lattice;

fn main() -> structcal::Result<()> {
    // Three tokens, labels N=0, V=1, D=2.
    let unary = vec![vec![0.2, -1.0, 1.5], vec![1.2, 0.9, -2.0], vec![-0.5, 1.4, -1.0]];
    let transition = vec![vec![0.0, 0.8, -0.5], vec![0.3, -1.0, 0.6], vec![1.1, -0.8, -2.0]];
    let lattice = Lattice::new(unary, transition)?;
    let (marginals, log_z) = forward_backward(&lattice);

    println!("top sequences:");
    for s in kbest_viterbi(&lattice, 5)? {
        println!("  #{} {:?} score {:.3} p {:.4}", s.rank, s.labels, s.log_score, (s.log_score - log_z).exp());
    }
    println!("marginals:");
    for (t, row) in marginals.rows().iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|p| format!("{p:.3}")).collect();
        println!("  t={t} [{}]", cells.join(", "));
    }
    println!("P(y[1..3] = [N, V]) = {:.4}", span_marginal(&lattice, 1, 3, &[0, 1])?);
    Ok(())
}
