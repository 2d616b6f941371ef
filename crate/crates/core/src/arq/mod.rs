//! Action-restricted fitted Q iteration: the bootstrap maximises only over
//! cached in-support actions for the next state, using the K-th largest
//! value instead of the max.

mod ensemble;
mod reward;

use std::fmt::Write as _;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{OfflineDataset, Transition};
use crate::error::{Error, Result};
use crate::nn::AdamState;
use crate::sampling::{SupportCache, Which};

pub use ensemble::QEnsemble;
pub(crate) use ensemble::join_inputs;
pub use reward::{shape_rewards, RewardMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TdLoss {
    SquaredL2,
    /// Huber with threshold 1.
    #[default]
    Huber,
}

impl TdLoss {
    /// `(loss, d loss / d diff)`.
    fn eval(self, diff: f64) -> (f64, f64) {
        match self {
            TdLoss::SquaredL2 => (diff * diff, 2.0 * diff),
            TdLoss::Huber => {
                if diff.abs() <= 1.0 {
                    (0.5 * diff * diff, diff)
                } else {
                    (diff.abs() - 0.5, diff.signum())
                }
            }
        }
    }
}

/// Which bootstrap to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QMode {
    /// Two networks, K-th largest over all cached candidates for `s2`.
    #[default]
    Arq,
    /// Evaluation of the behaviour policy: one network, one cached candidate
    /// drawn uniformly per update.
    Qbeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArqConfig {
    pub mode: QMode,
    pub k: usize,
    pub gamma: f64,
    pub loss: TdLoss,
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub polyak: f64,
    pub reward_mode: RewardMode,
    /// Numerator of the normalized reward scale.
    pub reward_scale: f64,
    /// Log one CSV row every this many steps.
    pub log_every: usize,
}

impl Default for ArqConfig {
    fn default() -> Self {
        ArqConfig {
            mode: QMode::Arq,
            k: 9,
            gamma: 0.99,
            loss: TdLoss::Huber,
            lr: 3e-4,
            steps: 50_000,
            batch_size: 256,
            hidden: vec![64, 64],
            polyak: 0.995,
            reward_mode: RewardMode::Raw,
            reward_scale: 1000.0,
            log_every: 100,
        }
    }
}

impl ArqConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::contract("K must be at least 1"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::contract(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if self.steps == 0 || self.batch_size == 0 || self.log_every == 0 {
            return Err(Error::contract("steps, batch size and log interval must be positive"));
        }
        if !(self.lr > 0.0) || !(0.0..=1.0).contains(&self.polyak) {
            return Err(Error::contract("invalid learning rate or polyak coefficient"));
        }
        Ok(())
    }

    fn nets(&self) -> usize {
        match self.mode {
            QMode::Arq => 2,
            QMode::Qbeta => 1,
        }
    }
}

/// The K-th largest value; the minimum when `k` exceeds the list length.
pub fn kth_max(values: &[f64], k: usize) -> Result<f64> {
    if values.is_empty() || k == 0 {
        return Err(Error::contract("kth_max needs a non-empty list and K ≥ 1"));
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    Ok(v[k.min(v.len()) - 1])
}

/// Bootstrapped target for one transition given the cached candidates for
/// its next state (normalized actions).
pub fn arq_target(t: &Transition, support: &[Vec<f64>], q: &QEnsemble, gamma: f64, k: usize) -> Result<f64> {
    if t.done {
        return Ok(t.r);
    }
    if support.is_empty() {
        return Err(Error::contract("support list for s2 is empty"));
    }
    let states = crate::data::rows_to_array(std::iter::repeat_n(t.s2.as_slice(), support.len()), t.s2.len());
    let actions = crate::data::rows_to_array(support.iter().map(|a| a.as_slice()), q.action_dim);
    let values = q.target_values(states.view(), actions.view())?;
    Ok(t.r + gamma * kth_max(&values, k)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    pub mean_target: f64,
    pub mean_q: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArqReport {
    pub log: Vec<LogRow>,
    /// Bootstrap evaluations at actions missing from the cache entry of `s2`.
    pub out_of_cache: usize,
}

impl ArqReport {
    pub fn log_csv(&self) -> String {
        let mut s = String::from("step,loss,mean_target,mean_q\n");
        for r in &self.log {
            writeln!(s, "{},{},{},{}", r.step, r.loss, r.mean_target, r.mean_q).expect("write to string");
        }
        s
    }
}

fn contains(entry: &[Vec<f64>], a: &[f64]) -> bool {
    entry.iter().any(|c| c.as_slice() == a)
}

/// Train a Q ensemble on `ds` with bootstrap candidates from `cache`.
///
/// The minibatch targets are evaluated in one stacked pass over every
/// `(s2, candidate)` pair, then reduced per row.
pub fn arq_train(
    ds: &OfflineDataset,
    cache: &SupportCache,
    cfg: &ArqConfig,
    seed: u64,
) -> Result<(QEnsemble, ArqReport)> {
    cfg.validate()?;
    if cache.rows() != ds.len() {
        return Err(Error::contract(format!(
            "cache covers {} rows, dataset has {}",
            cache.rows(),
            ds.len()
        )));
    }
    let ds = shape_rewards(ds, cfg.reward_mode, cfg.reward_scale)?;
    let (n, sd, ad) = (ds.len(), ds.state_dim(), ds.action_dim());
    let states = ds.states();
    let next_states = ds.next_states();
    let actions = ds.normalized_actions();
    let k = match cfg.mode {
        QMode::Arq => cfg.k,
        QMode::Qbeta => 1,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = QEnsemble::new(sd, ad, &cfg.hidden, cfg.nets(), cfg.polyak, &mut rng)?;
    let mut adams: Vec<AdamState> = (0..q.nets()).map(|i| AdamState::new(q.online(i))).collect();
    let b = cfg.batch_size;
    let mut report = ArqReport {
        log: Vec::new(),
        out_of_cache: 0,
    };
    let mut boot_s: Vec<f64> = Vec::new();
    let mut boot_a: Vec<f64> = Vec::new();
    let mut spans: Vec<(usize, usize)> = Vec::with_capacity(b);
    let mut idx = vec![0usize; b];
    for step in 0..cfg.steps {
        for i in idx.iter_mut() {
            *i = rng.random_range(0..n);
        }

        // stacked bootstrap inputs
        boot_s.clear();
        boot_a.clear();
        spans.clear();
        for &row in &idx {
            let start = boot_s.len() / sd;
            if !ds.transitions[row].done {
                let entry = cache.actions(row, Which::S2);
                let chosen: &[Vec<f64>] = match cfg.mode {
                    QMode::Arq => entry,
                    QMode::Qbeta => {
                        let j = rng.random_range(0..entry.len());
                        &entry[j..=j]
                    }
                };
                for a in chosen {
                    if !contains(entry, a) {
                        report.out_of_cache += 1;
                    }
                    boot_s.extend(next_states.row(row).iter());
                    boot_a.extend_from_slice(a);
                }
            }
            spans.push((start, boot_s.len() / sd));
        }
        let m = boot_s.len() / sd;
        let boot_values = if m > 0 {
            let s = Array2::from_shape_vec((m, sd), std::mem::take(&mut boot_s)).expect("sized");
            let a = Array2::from_shape_vec((m, ad), std::mem::take(&mut boot_a)).expect("sized");
            let v = q.target_values(s.view(), a.view());
            boot_s = s.into_raw_vec_and_offset().0;
            boot_a = a.into_raw_vec_and_offset().0;
            v.map_err(|e| Error::numerical(format!("Q training step {step}: {e}")))?
        } else {
            Vec::new()
        };
        let mut targets = Array1::zeros(b);
        for (i, (&row, &(lo, hi))) in idx.iter().zip(&spans).enumerate() {
            let t = &ds.transitions[row];
            targets[i] = if t.done {
                t.r
            } else {
                t.r + cfg.gamma * kth_max(&boot_values[lo..hi], k)?
            };
        }

        // one gradient step per online network
        let bs = states.select(ndarray::Axis(0), &idx);
        let ba = actions.select(ndarray::Axis(0), &idx);
        let x = join_inputs(bs.view(), ba.view())?;
        let mut loss_sum = 0.0;
        let mut q_sum = 0.0;
        for (net, adam) in adams.iter_mut().enumerate() {
            let params = q.online_mut(net);
            let (out, tape) = params
                .forward_batch(x.view())
                .map_err(|e| Error::numerical(format!("Q training step {step}: {e}")))?;
            let mut grad = Array2::zeros((b, 1));
            let mut loss = 0.0;
            for i in 0..b {
                let (l, g) = cfg.loss.eval(out[[i, 0]] - targets[i]);
                loss += l;
                grad[[i, 0]] = g / b as f64;
                q_sum += out[[i, 0]];
            }
            loss /= b as f64;
            if !loss.is_finite() {
                return Err(Error::numerical(format!("non-finite Q loss at step {step}")));
            }
            loss_sum += loss;
            let (grads, _) = params
                .backward(&tape, grad.view())
                .map_err(|e| Error::numerical(format!("Q training step {step}: {e}")))?;
            adam.step(params, &grads, cfg.lr)
                .map_err(|e| Error::numerical(format!("Q training step {step}: {e}")))?;
        }
        q.polyak_update()?;

        if step % cfg.log_every == 0 || step + 1 == cfg.steps {
            let nets = q.nets() as f64;
            report.log.push(LogRow {
                step,
                loss: loss_sum / nets,
                mean_target: targets.mean().unwrap_or(0.0),
                mean_q: q_sum / (nets * b as f64),
            });
        }
    }
    q.round_to_f32()?;
    Ok((q, report))
}
