//! KL-regularised policy iteration against soft iteration with a penalty,
//! on random tabular MDPs. The two produce the same (Q, π) sequences.

use arq::dqp::{run_equivalence, verify_theorem1, PenaltySpec, TabularMDP, Theorem1Config};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> arq::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    let mdp = TabularMDP::random(4, 3, 0.9, &mut rng)?;
    let log_beta = Array2::from_shape_fn((4, 3), |_| rng.random_range(-8.0..0.0));
    let p = PenaltySpec::default().table(log_beta.view())?;
    println!("support-set penalty table (ln eps = -5):\n{p}");
    for r in run_equivalence(&mdp, p.view(), 10)? {
        println!("iter {:2}: |dQ| {:.1e} |dpi| {:.1e}", r.iteration, r.q_diff, r.pi_diff);
    }

    let report = verify_theorem1(&Theorem1Config::default(), &mut rng)?;
    println!(
        "20 random MDPs x 50 iterations: max |dQ| {:.1e}, max |dpi| {:.1e}",
        report.max_q_diff, report.max_pi_diff
    );
    Ok(())
}
