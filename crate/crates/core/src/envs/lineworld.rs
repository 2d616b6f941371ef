//! lineworld: a contextual bandit with state `s ∈ [-1, 1]` and a bimodal
//! behaviour policy.
//!
//! Behaviour: two raised-cosine bands of half-width 0.1 centred at
//! `±(0.3 + 0.4|s|)`. For `s < 0` the upper band has weight 0.75; for
//! `s ≥ 0` the lower band does. The density is exactly zero outside the
//! bands, including the gap between them.
//!
//! Reward: 1 inside the less frequent band, 0.2 inside the frequent one,
//! -1 anywhere else. Optimal return 1.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{StepResult, ToyEnv};
use crate::data::Transition;
use crate::error::{Error, Result};
use crate::sampling::BehaviorModel;

pub const HALF_WIDTH: f64 = 0.1;
const MAJOR_WEIGHT: f64 = 0.75;

#[derive(Debug, Clone, Copy, Default)]
pub struct LineWorld;

/// Band centres `(upper, lower)` for state `s`.
pub fn modes(s: f64) -> (f64, f64) {
    let c = 0.3 + 0.4 * s.abs();
    (c, -c)
}

/// Weights of the `(upper, lower)` bands.
pub fn weights(s: f64) -> (f64, f64) {
    if s < 0.0 {
        (MAJOR_WEIGHT, 1.0 - MAJOR_WEIGHT)
    } else {
        (1.0 - MAJOR_WEIGHT, MAJOR_WEIGHT)
    }
}

fn band_density(a: f64, centre: f64) -> f64 {
    let x = (a - centre) / HALF_WIDTH;
    if x.abs() <= 1.0 {
        (1.0 + (PI * x).cos()) / (2.0 * HALF_WIDTH)
    } else {
        0.0
    }
}

/// Exact behaviour density β(a | s).
pub fn density(s: f64, a: f64) -> f64 {
    let (up, lo) = modes(s);
    let (wu, wl) = weights(s);
    wu * band_density(a, up) + wl * band_density(a, lo)
}

/// Draw from one raised-cosine band by rejection against a uniform envelope.
fn sample_band(centre: f64, rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let x: f64 = rng.random_range(-1.0..=1.0);
        let u: f64 = rng.random();
        if u <= 0.5 * (1.0 + (PI * x).cos()) {
            return centre + HALF_WIDTH * x;
        }
    }
}

pub fn sample(s: f64, rng: &mut ChaCha8Rng) -> f64 {
    let (up, lo) = modes(s);
    let (wu, _) = weights(s);
    if rng.random::<f64>() < wu {
        sample_band(up, rng)
    } else {
        sample_band(lo, rng)
    }
}

pub fn reward(s: f64, a: f64) -> f64 {
    let (up, lo) = modes(s);
    let (wu, _) = weights(s);
    let (rare, common) = if wu < 0.5 { (up, lo) } else { (lo, up) };
    if (a - rare).abs() <= HALF_WIDTH {
        1.0
    } else if (a - common).abs() <= HALF_WIDTH {
        0.2
    } else {
        -1.0
    }
}

impl ToyEnv for LineWorld {
    fn name(&self) -> &'static str {
        "lineworld"
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
    fn reset(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        vec![rng.random_range(-1.0..=1.0)]
    }
    fn step(&self, s: &[f64], a: &[f64], _rng: &mut ChaCha8Rng) -> StepResult {
        StepResult {
            s2: s.to_vec(),
            r: reward(s[0], a[0]),
            done: true,
            goal: false,
        }
    }
    fn optimal_return(&self) -> f64 {
        1.0
    }
    fn reward_bounds(&self) -> (f64, f64) {
        (-1.0, 1.0)
    }
    fn behavior_rollouts(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<Transition> {
        (0..n)
            .map(|_| {
                let s = self.reset(rng);
                let a = vec![sample(s[0], rng)];
                let st = self.step(&s, &a, rng);
                Transition {
                    s,
                    a,
                    r: st.r,
                    s2: st.s2,
                    done: st.done,
                    goal: st.goal,
                }
            })
            .collect()
    }
    fn behavior(&self) -> Box<dyn BehaviorModel + '_> {
        Box::new(LineBehavior)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LineBehavior;

impl BehaviorModel for LineBehavior {
    fn action_dim(&self) -> usize {
        1
    }
    fn sample_actions(&self, state: &[f64], n: usize, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
        if state.len() != 1 {
            return Err(Error::contract("lineworld state is 1-d"));
        }
        Ok(Array2::from_shape_fn((n, 1), |_| sample(state[0], rng)))
    }
    fn log_likelihoods(&self, state: &[f64], actions: ArrayView2<f64>) -> Result<Vec<f64>> {
        if state.len() != 1 || actions.ncols() != 1 {
            return Err(Error::contract("lineworld states and actions are 1-d"));
        }
        Ok(actions.column(0).iter().map(|&a| density(state[0], a).ln()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn samples_stay_in_bands() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..2000 {
            let a = sample(0.5, &mut rng);
            assert!((0.4..=0.6).contains(&a.abs()), "{a}");
        }
    }

    #[test]
    fn density_integrates_to_one() {
        let n = 10_000;
        for s in [-0.9, -0.3, 0.0, 0.45, 1.0] {
            let h = 2.0 / (n - 1) as f64;
            let mut total = 0.0;
            for i in 0..n {
                let a = -1.0 + i as f64 * h;
                let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                total += w * density(s, a) * h;
            }
            assert!((total - 1.0).abs() < 1e-4, "s = {s}: {total}");
        }
    }

    #[test]
    fn gap_has_zero_density() {
        for s in [-1.0, -0.2, 0.0, 0.7] {
            assert_eq!(density(s, 0.0), 0.0);
        }
    }

    #[test]
    fn weights_switch_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let frac_up = |s: f64, rng: &mut ChaCha8Rng| (0..4000).filter(|_| sample(s, rng) > 0.0).count() as f64 / 4000.0;
        assert!((frac_up(-0.5, &mut rng) - 0.75).abs() < 0.03);
        assert!((frac_up(0.5, &mut rng) - 0.25).abs() < 0.03);
    }

    #[test]
    fn rewards_follow_bands() {
        assert_eq!(reward(0.5, 0.5), 1.0);
        assert_eq!(reward(0.5, -0.5), 0.2);
        assert_eq!(reward(-0.5, -0.5), 1.0);
        assert_eq!(reward(0.5, 0.0), -1.0);
    }
}
