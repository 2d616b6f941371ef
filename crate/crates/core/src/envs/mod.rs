//! Toy continuous-action environments with known behaviour policies and
//! analytic optimal returns, plus offline dataset generation.

pub mod cliffbandit;
pub mod lineworld;
pub mod stitchgrid;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{DatasetHeader, OfflineDataset, Transition};
use crate::error::{Error, Result};
use crate::sampling::BehaviorModel;

pub use cliffbandit::CliffBandit;
pub use lineworld::{LineBehavior, LineWorld};
pub use stitchgrid::{StitchBehavior, StitchGrid};

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub s2: Vec<f64>,
    pub r: f64,
    pub done: bool,
    pub goal: bool,
}

pub trait ToyEnv: Sync {
    fn name(&self) -> &'static str;
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Maximum episode length.
    fn horizon(&self) -> usize;
    fn reset(&self, rng: &mut ChaCha8Rng) -> Vec<f64>;
    fn step(&self, s: &[f64], a: &[f64], rng: &mut ChaCha8Rng) -> StepResult;
    /// Undiscounted return of an optimal policy.
    fn optimal_return(&self) -> f64;
    /// Smallest and largest one-step reward.
    fn reward_bounds(&self) -> (f64, f64);
    /// Offline data in the order it was collected.
    fn behavior_rollouts(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<Transition>;
    /// Exact behaviour policy in raw action space.
    fn behavior(&self) -> Box<dyn BehaviorModel + '_>;
}

pub const ENV_NAMES: [&str; 3] = ["lineworld", "stitchgrid", "cliffbandit"];

pub fn env_by_name(name: &str) -> Result<Box<dyn ToyEnv>> {
    match name {
        "lineworld" => Ok(Box::new(LineWorld)),
        "stitchgrid" => Ok(Box::new(StitchGrid::default())),
        "cliffbandit" => Ok(Box::new(CliffBandit)),
        other => Err(Error::contract(format!(
            "unknown environment {other:?}; expected one of {ENV_NAMES:?}"
        ))),
    }
}

/// `n` behaviour transitions from `env`, deterministic in `seed`.
pub fn generate_dataset(env: &dyn ToyEnv, n: usize, seed: u64) -> Result<OfflineDataset> {
    if n == 0 {
        return Err(Error::contract("dataset size must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = env.behavior_rollouts(n, &mut rng);
    OfflineDataset::new(env.name(), seed, rows)
}

/// Wraps a raw-space behaviour model so it works in the dataset's
/// normalized action box.
pub struct NormalizedBehavior<'a> {
    pub inner: &'a dyn BehaviorModel,
    pub header: DatasetHeader,
}

impl BehaviorModel for NormalizedBehavior<'_> {
    fn action_dim(&self) -> usize {
        self.inner.action_dim()
    }

    fn sample_actions(&self, state: &[f64], n: usize, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
        let mut raw = self.inner.sample_actions(state, n, rng)?;
        for mut row in raw.rows_mut() {
            let u = self.header.normalize_action(row.as_slice().expect("row"));
            row.assign(&ArrayView2::from_shape((1, u.len()), &u).expect("row").row(0));
        }
        Ok(raw)
    }

    fn log_likelihoods(&self, state: &[f64], actions: ArrayView2<f64>) -> Result<Vec<f64>> {
        let mut raw = actions.to_owned();
        for mut row in raw.rows_mut() {
            let a = self.header.denormalize_action(row.as_slice().expect("row"));
            row.assign(&ArrayView2::from_shape((1, a.len()), &a).expect("row").row(0));
        }
        let jac = self.header.log_jacobian();
        Ok(self
            .inner
            .log_likelihoods(state, raw.view())?
            .into_iter()
            .map(|lp| lp + jac)
            .collect())
    }
}

/// Log-density of a uniform distribution on `[lo, hi]` at `x`.
pub(crate) fn uniform_logpdf(x: f64, lo: f64, hi: f64) -> f64 {
    if (lo..=hi).contains(&x) {
        -(hi - lo).ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// `ln(Σ w_i exp(l_i))` for weights `w_i ≥ 0`.
pub(crate) fn log_mix(parts: &[(f64, f64)]) -> f64 {
    let m = parts
        .iter()
        .filter(|(w, _)| *w > 0.0)
        .map(|(_, l)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    let s: f64 = parts
        .iter()
        .filter(|(w, _)| *w > 0.0)
        .map(|(w, l)| w * (l - m).exp())
        .sum();
    m + s.ln()
}
