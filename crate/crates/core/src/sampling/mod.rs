//! Sampling from a trained score model, exact likelihoods, and the
//! per-state cache of in-support actions.

mod cache;
mod likelihood;
pub mod ode;
mod pc;

use ndarray::{Array2, ArrayView2};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sde::ScoreModel;

#[cfg(test)]
pub(crate) use likelihood::tests as likelihood_test_models;

pub use cache::{CacheEntry, CacheParams, SupportCache, Which};
pub use likelihood::{log_likelihood, log_likelihood_batch};
pub use ode::{dopri5, OdeStats, OdeTolerance};
pub use pc::{langevin_correct, langevin_step, pc_sample, pc_sample_rows};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub n_steps: usize,
    pub snr: f64,
    pub corrector_steps: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_steps: 500,
            snr: 0.16,
            corrector_steps: 1,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_steps < 2 || !(self.snr > 0.0) || !self.snr.is_finite() {
            return Err(Error::contract(format!("invalid sampler config {self:?}")));
        }
        Ok(())
    }
}

/// Anything that can propose actions for a state and score them.
///
/// Implemented by the learned score model and by the exact behaviour
/// policies of the toy environments.
pub trait BehaviorModel: Sync {
    fn action_dim(&self) -> usize;

    /// `n` candidate actions for `state`, one per row.
    fn sample_actions(&self, state: &[f64], n: usize, rng: &mut ChaCha8Rng) -> Result<Array2<f64>>;

    /// Log-density of each row of `actions` given `state`.
    fn log_likelihoods(&self, state: &[f64], actions: ArrayView2<f64>) -> Result<Vec<f64>>;
}

/// A score model together with the settings used to sample and score it.
#[derive(Debug, Clone)]
pub struct ScoreBehavior {
    pub model: ScoreModel,
    pub sampler: SamplerConfig,
    pub tol: OdeTolerance,
}

impl ScoreBehavior {
    pub fn new(model: ScoreModel) -> Self {
        ScoreBehavior {
            model,
            sampler: SamplerConfig::default(),
            tol: OdeTolerance::default(),
        }
    }
}

impl BehaviorModel for ScoreBehavior {
    fn action_dim(&self) -> usize {
        self.model.action_dim
    }

    fn sample_actions(&self, state: &[f64], n: usize, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
        pc_sample(&self.model, state, n, &self.sampler, rng)
    }

    fn log_likelihoods(&self, state: &[f64], actions: ArrayView2<f64>) -> Result<Vec<f64>> {
        let states = repeat_row(state, actions.nrows());
        log_likelihood_batch(&self.model, states.view(), actions, &self.tol)
    }
}

pub(crate) fn repeat_row(row: &[f64], n: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, row.len()), |(_, j)| row[j])
}
