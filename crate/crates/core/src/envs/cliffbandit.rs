//! cliffbandit: a one-step bandit with reward `1 - a²` for `|a| ≤ 0.8` and
//! -10 beyond. The behaviour only covers `|a| ∈ [0.2, 0.8]`, so the best
//! in-support return is 0.96 at `|a| = 0.2`.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{log_mix, uniform_logpdf, StepResult, ToyEnv};
use crate::data::Transition;
use crate::error::{Error, Result};
use crate::sampling::BehaviorModel;

pub const EDGE: f64 = 0.8;
pub const INNER: f64 = 0.2;
pub const CLIFF_REWARD: f64 = -10.0;

#[derive(Debug, Clone, Copy, Default)]
pub struct CliffBandit;

pub fn reward(a: f64) -> f64 {
    if a.abs() <= EDGE {
        1.0 - a * a
    } else {
        CLIFF_REWARD
    }
}

impl ToyEnv for CliffBandit {
    fn name(&self) -> &'static str {
        "cliffbandit"
    }
    fn state_dim(&self) -> usize {
        1
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn horizon(&self) -> usize {
        1
    }
    fn reset(&self, _rng: &mut ChaCha8Rng) -> Vec<f64> {
        vec![0.0]
    }
    fn step(&self, s: &[f64], a: &[f64], _rng: &mut ChaCha8Rng) -> StepResult {
        StepResult {
            s2: s.to_vec(),
            r: reward(a[0]),
            done: true,
            goal: false,
        }
    }
    fn optimal_return(&self) -> f64 {
        1.0 - INNER * INNER
    }
    fn reward_bounds(&self) -> (f64, f64) {
        (CLIFF_REWARD, 1.0)
    }
    fn behavior_rollouts(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<Transition> {
        let b = CliffBehavior;
        (0..n)
            .map(|_| {
                let s = self.reset(rng);
                let a = b.draw(rng);
                let st = self.step(&s, &[a], rng);
                Transition {
                    s,
                    a: vec![a],
                    r: st.r,
                    s2: st.s2,
                    done: st.done,
                    goal: st.goal,
                }
            })
            .collect()
    }
    fn behavior(&self) -> Box<dyn BehaviorModel + '_> {
        Box::new(CliffBehavior)
    }
}

/// `|a| ~ U[0.2, 0.8]` with a fair random sign.
#[derive(Debug, Clone, Copy, Default)]
pub struct CliffBehavior;

impl CliffBehavior {
    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        let m = rng.random_range(INNER..=EDGE);
        if rng.random::<bool>() {
            m
        } else {
            -m
        }
    }
}

impl BehaviorModel for CliffBehavior {
    fn action_dim(&self) -> usize {
        1
    }
    fn sample_actions(&self, _state: &[f64], n: usize, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
        Ok(Array2::from_shape_fn((n, 1), |_| self.draw(rng)))
    }
    fn log_likelihoods(&self, _state: &[f64], actions: ArrayView2<f64>) -> Result<Vec<f64>> {
        if actions.ncols() != 1 {
            return Err(Error::contract("cliffbandit actions are 1-d"));
        }
        Ok(actions
            .column(0)
            .iter()
            .map(|&a| {
                log_mix(&[
                    (0.5, uniform_logpdf(a, INNER, EDGE)),
                    (0.5, uniform_logpdf(a, -EDGE, -INNER)),
                ])
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reward_law() {
        assert_eq!(reward(0.0), 1.0);
        assert!((reward(0.2) - 0.96).abs() < 1e-15);
        assert!((reward(-0.8) - 0.36).abs() < 1e-15);
        assert_eq!(reward(0.81), -10.0);
        assert!((CliffBandit.optimal_return() - 0.96).abs() < 1e-15);
    }

    #[test]
    fn behaviour_density_is_uniform_on_support() {
        let b = CliffBehavior;
        let a = ndarray::array![[0.5], [-0.3], [0.1], [0.9]];
        let lp = b.log_likelihoods(&[0.0], a.view()).unwrap();
        let inside = (1.0f64 / 1.2).ln();
        assert!((lp[0] - inside).abs() < 1e-12 && (lp[1] - inside).abs() < 1e-12);
        assert_eq!(lp[2], f64::NEG_INFINITY);
        assert_eq!(lp[3], f64::NEG_INFINITY);
    }
}
