//! stitchgrid: a point moving along 8 waypoints on a line in the plane.
//!
//! Waypoint `i` sits at `(2i/7 - 1, (2i/7 - 1) / 2)`. Episodes start at
//! waypoint 0; waypoint 7 is the goal. Action `a ≥ 0.5` moves forward,
//! `a ≤ -0.5` moves back, anything else stays. Reward is -1 per step and 0
//! on the step that reaches the goal, which ends the episode. Horizon 16,
//! optimal return -6.
//!
//! The behaviour data holds two kinds of segments: start → midpoint → start
//! (never reaching the goal) and midpoint → goal. No single trajectory goes
//! from start to goal, so the optimal path must be stitched together.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{log_mix, uniform_logpdf, StepResult, ToyEnv};
use crate::data::Transition;
use crate::error::{Error, Result};
use crate::sampling::BehaviorModel;

const FORWARD: (f64, f64) = (0.55, 0.95);
const BACKWARD: (f64, f64) = (-0.95, -0.55);

#[derive(Debug, Clone, Copy)]
pub struct StitchGrid {
    pub waypoints: usize,
    pub midpoint: usize,
    pub horizon: usize,
}

impl Default for StitchGrid {
    fn default() -> Self {
        StitchGrid {
            waypoints: 8,
            midpoint: 3,
            horizon: 16,
        }
    }
}

impl StitchGrid {
    pub fn goal(&self) -> usize {
        self.waypoints - 1
    }

    pub fn state_of(&self, i: usize) -> Vec<f64> {
        let x = 2.0 * i as f64 / self.goal() as f64 - 1.0;
        vec![x, 0.5 * x]
    }

    pub fn index_of(&self, s: &[f64]) -> usize {
        let i = ((s[0] + 1.0) * self.goal() as f64 / 2.0).round();
        i.clamp(0.0, self.goal() as f64) as usize
    }

    /// Probability that the behaviour moves forward at waypoint `i`.
    pub fn forward_prob(&self, i: usize) -> f64 {
        if i == 0 || i > self.midpoint {
            1.0
        } else {
            0.5
        }
    }

    fn transition(&self, i: usize, a: f64) -> (usize, StepResult) {
        let j = if a >= 0.5 {
            (i + 1).min(self.goal())
        } else if a <= -0.5 {
            i.saturating_sub(1)
        } else {
            i
        };
        let goal = j == self.goal();
        (
            j,
            StepResult {
                s2: self.state_of(j),
                r: if goal { 0.0 } else { -1.0 },
                done: goal,
                goal,
            },
        )
    }

    fn push_segment(&self, path: &[usize], rng: &mut ChaCha8Rng, out: &mut Vec<Transition>) {
        for w in path.windows(2) {
            let (lo, hi) = if w[1] > w[0] { FORWARD } else { BACKWARD };
            let a = rng.random_range(lo..=hi);
            let (_, st) = self.transition(w[0], a);
            out.push(Transition {
                s: self.state_of(w[0]),
                a: vec![a],
                r: st.r,
                s2: st.s2,
                done: st.done,
                goal: st.goal,
            });
        }
    }
}

impl ToyEnv for StitchGrid {
    fn name(&self) -> &'static str {
        "stitchgrid"
    }
    fn state_dim(&self) -> usize {
        2
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn horizon(&self) -> usize {
        self.horizon
    }
    fn reset(&self, _rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.state_of(0)
    }
    fn step(&self, s: &[f64], a: &[f64], _rng: &mut ChaCha8Rng) -> StepResult {
        self.transition(self.index_of(s), a[0]).1
    }
    fn optimal_return(&self) -> f64 {
        -(self.goal() as f64 - 1.0)
    }
    fn reward_bounds(&self) -> (f64, f64) {
        (-1.0, 0.0)
    }
    fn behavior_rollouts(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<Transition> {
        let m = self.midpoint;
        let out_and_back: Vec<usize> = (0..=m).chain((0..m).rev()).collect();
        let to_goal: Vec<usize> = (m..=self.goal()).collect();
        let mut rows = Vec::with_capacity(n + self.goal() * 2);
        let mut k = 0;
        while rows.len() < n {
            let path = if k % 2 == 0 { &out_and_back } else { &to_goal };
            self.push_segment(path, rng, &mut rows);
            k += 1;
        }
        rows.truncate(n);
        rows
    }
    fn behavior(&self) -> Box<dyn BehaviorModel + '_> {
        Box::new(StitchBehavior { grid: *self })
    }
}

/// Exact per-waypoint behaviour: forward with probability
/// [`StitchGrid::forward_prob`], each direction uniform on its interval.
#[derive(Debug, Clone, Copy)]
pub struct StitchBehavior {
    pub grid: StitchGrid,
}

impl BehaviorModel for StitchBehavior {
    fn action_dim(&self) -> usize {
        1
    }
    fn sample_actions(&self, state: &[f64], n: usize, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
        if state.len() != 2 {
            return Err(Error::contract("stitchgrid state is 2-d"));
        }
        let p = self.grid.forward_prob(self.grid.index_of(state));
        Ok(Array2::from_shape_fn((n, 1), |_| {
            let (lo, hi) = if rng.random::<f64>() < p { FORWARD } else { BACKWARD };
            rng.random_range(lo..=hi)
        }))
    }
    fn log_likelihoods(&self, state: &[f64], actions: ArrayView2<f64>) -> Result<Vec<f64>> {
        if state.len() != 2 || actions.ncols() != 1 {
            return Err(Error::contract("stitchgrid states are 2-d and actions 1-d"));
        }
        let p = self.grid.forward_prob(self.grid.index_of(state));
        Ok(actions
            .column(0)
            .iter()
            .map(|&a| {
                log_mix(&[
                    (p, uniform_logpdf(a, FORWARD.0, FORWARD.1)),
                    (1.0 - p, uniform_logpdf(a, BACKWARD.0, BACKWARD.1)),
                ])
            })
            .collect())
    }
}
