//! The three penalty shapes and the policy each one induces.

use arq::dqp::{brac_kl_penalty, induced_policy, mmd2_penalty, support_penalty};
use ndarray::{array, Array1};

fn main() -> arq::Result<()> {
    let log_beta = [-0.5, -2.0, -4.9, -5.1, -9.0];
    let support: Array1<f64> = log_beta.iter().map(|&l| support_penalty(l, -5.0)).collect();
    let kl: Array1<f64> = log_beta.iter().map(|&l| brac_kl_penalty(l)).collect();
    println!("log beta     {log_beta:?}");
    println!("support p    {support}");
    println!("  pi_p       {:.3?}", induced_policy(support.view())?);
    println!("brac kl p    {kl}");
    println!("  pi_p       {:.3?}", induced_policy(kl.view())?);

    let behavior = array![[0.0], [0.1], [-0.1], [0.05]];
    for shift in [0.0, 0.5, 2.0] {
        let policy = behavior.mapv(|v| v + shift);
        println!("mmd2 with policy shifted by {shift}: {:.4}", mmd2_penalty(policy.view(), behavior.view(), 1.0)?);
    }
    Ok(())
}
