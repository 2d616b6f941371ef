//! Policy extraction from a trained Q ensemble and rollout evaluation.

mod awr;
mod implicit;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arq::QEnsemble;
use crate::envs::ToyEnv;
use crate::error::{Error, Result};

pub use awr::{awr_train, AwrConfig, AwrPolicy, AwrReport};
pub use implicit::{ImplicitPolicy, LogitMode};

/// Anything that maps a raw state to a raw action.
pub trait Policy: Sync {
    fn name(&self) -> String;
    fn act(&self, state: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>>;
}

/// Always emits the same action.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedAction(pub Vec<f64>);

impl Policy for FixedAction {
    fn name(&self) -> String {
        "fixed".into()
    }
    fn act(&self, _state: &[f64], _rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        Ok(self.0.clone())
    }
}

/// `Q(s, a) − mean over candidates of Q(s, a′)` for each candidate.
pub fn advantage(q: &QEnsemble, state: &[f64], candidates: &[Vec<f64>]) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return Err(Error::contract("advantage needs at least one candidate"));
    }
    let states = crate::sampling::repeat_row(state, candidates.len());
    let actions = crate::data::rows_to_array(candidates.iter().map(|a| a.as_slice()), q.action_dim);
    let values = q.q_values(states.view(), actions.view())?;
    Ok(centre(&values))
}

pub(crate) fn centre(values: &[f64]) -> Vec<f64> {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| v - mean).collect()
}

/// `softmax(alpha · logits)`, computed stably.
pub fn softmax(logits: &[f64], alpha: f64) -> Vec<f64> {
    if alpha == 0.0 {
        return vec![1.0 / logits.len() as f64; logits.len()];
    }
    let m = logits.iter().map(|l| alpha * l).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (alpha * l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub policy: String,
    pub env: String,
    pub episodes: usize,
    pub mean_return: f64,
    pub std_return: f64,
    pub mean_discounted: f64,
}

/// Roll out `policy` for `episodes` episodes, each truncated at the env
/// horizon. Episode `i` uses RNG stream `i` of `seed`, so the report does
/// not depend on the thread count.
pub fn evaluate_policy(
    env: &dyn ToyEnv,
    policy: &dyn Policy,
    episodes: usize,
    gamma: f64,
    seed: u64,
) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::contract("need at least one evaluation episode"));
    }
    let returns = (0..episodes)
        .into_par_iter()
        .map(|ep| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(ep as u64);
            let mut s = env.reset(&mut rng);
            let (mut ret, mut disc, mut g) = (0.0, 0.0, 1.0);
            for step in 0..env.horizon() {
                let a = policy
                    .act(&s, &mut rng)
                    .map_err(|e| Error::numerical(format!("episode {ep} step {step}: {e}")))?;
                if a.len() != env.action_dim() || a.iter().any(|v| !v.is_finite()) {
                    return Err(Error::numerical(format!("episode {ep} step {step}: invalid action {a:?}")));
                }
                let out = env.step(&s, &a, &mut rng);
                if !out.r.is_finite() || out.s2.iter().any(|v| !v.is_finite()) {
                    return Err(Error::numerical(format!("episode {ep} step {step}: env returned non-finite values")));
                }
                ret += out.r;
                disc += g * out.r;
                g *= gamma;
                if out.done {
                    break;
                }
                s = out.s2;
            }
            Ok((ret, disc))
        })
        .collect::<Result<Vec<_>>>()?;
    // Welford, so identical returns give their exact value and zero spread
    let (mut mean, mut m2, mut disc) = (0.0, 0.0, 0.0);
    for (k, &(r, d)) in returns.iter().enumerate() {
        let delta = r - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (r - mean);
        disc += (d - disc) / (k + 1) as f64;
    }
    Ok(EvalReport {
        policy: policy.name(),
        env: env.name().into(),
        episodes,
        mean_return: mean,
        std_return: (m2 / episodes as f64).sqrt(),
        mean_discounted: disc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{CliffBandit, LineWorld, StitchGrid};

    #[test]
    fn softmax_is_shift_invariant_and_normalized() {
        let l = [0.3, -1.2, 2.0];
        let p = softmax(&l, 1.7);
        let q = softmax(&l.map(|v| v + 50.0), 1.7);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(softmax(&l, 0.0), vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn cliff_optimum_is_exact() {
        let r = evaluate_policy(&CliffBandit, &FixedAction(vec![0.2]), 50, 0.99, 0).unwrap();
        assert_eq!(r.mean_return, CliffBandit.optimal_return());
        assert_eq!(r.std_return, 0.0);
    }

    #[test]
    fn gamma_zero_gives_first_reward() {
        // staying put on stitchgrid costs -1 per step for the whole horizon
        let g = StitchGrid::default();
        let r = evaluate_policy(&g, &FixedAction(vec![0.0]), 4, 0.0, 0).unwrap();
        assert_eq!(r.mean_return, -(g.horizon() as f64));
        assert_eq!(r.mean_discounted, -1.0);
    }

    #[test]
    fn lineworld_gap_action_is_penalized() {
        let r = evaluate_policy(&LineWorld, &FixedAction(vec![0.0]), 20, 0.9, 3).unwrap();
        assert_eq!(r.mean_return, -1.0);
    }

    #[test]
    fn bad_action_reports_episode() {
        let err = evaluate_policy(&CliffBandit, &FixedAction(vec![f64::NAN]), 3, 0.9, 0).unwrap_err();
        assert!(err.to_string().contains("episode 0 step 0"), "{err}");
    }
}
