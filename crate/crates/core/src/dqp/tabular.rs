//! Exact tabular engines for the two regularized policy-iteration schemes
//! and their numeric equivalence check.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::penalty::induced_policy;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularMDP {
    pub n_states: usize,
    pub n_actions: usize,
    /// `transitions[s][a][s']`
    pub transitions: Vec<Vec<Vec<f64>>>,
    /// `rewards[s][a]`
    pub rewards: Vec<Vec<f64>>,
    pub gamma: f64,
    pub d0: Vec<f64>,
}

impl TabularMDP {
    pub fn validate(&self) -> Result<()> {
        let (ns, na) = (self.n_states, self.n_actions);
        if ns == 0 || na == 0 {
            return Err(Error::contract("MDP needs at least one state and one action"));
        }
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return Err(Error::contract(format!("discount {} outside [0, 1)", self.gamma)));
        }
        if self.transitions.len() != ns || self.rewards.len() != ns || self.d0.len() != ns {
            return Err(Error::contract("MDP arrays disagree with n_states"));
        }
        for s in 0..ns {
            if self.transitions[s].len() != na || self.rewards[s].len() != na {
                return Err(Error::contract(format!("state {s}: arrays disagree with n_actions")));
            }
            for a in 0..na {
                let row = &self.transitions[s][a];
                if row.len() != ns || row.iter().any(|&v| !(v >= 0.0)) {
                    return Err(Error::contract(format!("T[{s},{a}] is not a distribution")));
                }
                if (row.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                    return Err(Error::contract(format!("T[{s},{a}] does not sum to 1")));
                }
                if !self.rewards[s][a].is_finite() {
                    return Err(Error::contract(format!("r[{s},{a}] is not finite")));
                }
            }
        }
        if self.d0.iter().any(|&v| !(v >= 0.0)) || (self.d0.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::contract("d0 is not a distribution"));
        }
        Ok(())
    }

    /// Random MDP with Dirichlet(1) transition rows and uniform rewards in [-1, 1].
    pub fn random<R: Rng + ?Sized>(n_states: usize, n_actions: usize, gamma: f64, rng: &mut R) -> Result<Self> {
        let mut simplex = |n: usize| -> Vec<f64> {
            let w: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
            let z: f64 = w.iter().sum();
            let mut p: Vec<f64> = w.iter().map(|v| v / z).collect();
            // put rounding residue on the largest entry so the row sums to 1
            let rest: f64 = p.iter().sum::<f64>() - 1.0;
            let k = (0..n).max_by(|&i, &j| p[i].total_cmp(&p[j])).unwrap_or(0);
            p[k] -= rest;
            p
        };
        let transitions = (0..n_states)
            .map(|_| (0..n_actions).map(|_| simplex(n_states)).collect())
            .collect();
        let d0 = simplex(n_states);
        let rewards = (0..n_states)
            .map(|_| (0..n_actions).map(|_| rng.random_range(-1.0..=1.0)).collect())
            .collect();
        let mdp = TabularMDP {
            n_states,
            n_actions,
            transitions,
            rewards,
            gamma,
            d0,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mdp: TabularMDP = serde_json::from_str(&text)?;
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(path, e))
    }

    /// `r(s,a) + γ Σ_s' T(s,a,s') v(s')`
    pub fn backup(&self, v: &[f64]) -> Array2<f64> {
        Array2::from_shape_fn((self.n_states, self.n_actions), |(s, a)| {
            let ev: f64 = self.transitions[s][a].iter().zip(v).map(|(p, x)| p * x).sum();
            self.rewards[s][a] + self.gamma * ev
        })
    }
}

/// `Σ_a π(a) x(a)` with `0 · ±∞ = 0`.
pub fn expect(pi: ArrayView1<f64>, x: ArrayView1<f64>) -> f64 {
    pi.iter()
        .zip(x)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, v)| p * v)
        .sum()
}

pub fn entropy(pi: ArrayView1<f64>) -> f64 {
    -pi.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// KL(π ‖ ρ); infinite if π puts mass where ρ has none.
pub fn kl(pi: ArrayView1<f64>, rho: ArrayView1<f64>) -> f64 {
    pi.iter()
        .zip(rho)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, r)| if *r > 0.0 { p * (p / r).ln() } else { f64::INFINITY })
        .sum()
}

/// `ln Σ_a exp(-p(a))`, skipping infinite penalties.
pub fn log_partition(p: ArrayView1<f64>) -> Result<f64> {
    let min = p.iter().copied().fold(f64::INFINITY, f64::min);
    if min == f64::INFINITY {
        return Err(Error::contract("every action has infinite penalty"));
    }
    let s: f64 = p.iter().filter(|v| v.is_finite()).map(|v| (min - v).exp()).sum();
    Ok(s.ln() - min)
}

/// Normalized `weights(a) · exp(x(a))`, computed stably.
fn tilt(weights: ArrayView1<f64>, x: ArrayView1<f64>) -> Vec<f64> {
    let m = weights
        .iter()
        .zip(x)
        .filter(|(w, _)| **w > 0.0)
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = weights
        .iter()
        .zip(x)
        .map(|(w, v)| if *w > 0.0 { w * (v - m).exp() } else { 0.0 })
        .collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn check_shapes(mdp: &TabularMDP, arrays: &[ArrayView2<f64>]) -> Result<()> {
    let shape = [mdp.n_states, mdp.n_actions];
    if arrays.iter().any(|a| a.shape() != shape) {
        return Err(Error::contract("tables must be n_states × n_actions"));
    }
    Ok(())
}

/// Induced policy of every row of a penalty table.
pub fn induced_table(p: ArrayView2<f64>) -> Result<Array2<f64>> {
    let mut out = Array2::zeros(p.raw_dim());
    for (s, row) in p.rows().into_iter().enumerate() {
        let pi = induced_policy(row)?;
        out.row_mut(s).assign(&ArrayView1::from(&pi));
    }
    Ok(out)
}

/// Policy iteration with KL regularization toward `pi_p`:
/// `Q' = r + γ E[⟨π,Q⟩ - KL(π‖π_p)]`, `π' ∝ π_p exp(Q')`.
pub fn kl_regularized_step(
    mdp: &TabularMDP,
    q: ArrayView2<f64>,
    pi: ArrayView2<f64>,
    pi_p: ArrayView2<f64>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    check_shapes(mdp, &[q, pi, pi_p])?;
    let mut v = vec![0.0; mdp.n_states];
    for s in 0..mdp.n_states {
        let d = kl(pi.row(s), pi_p.row(s));
        if !d.is_finite() {
            return Err(Error::contract(format!("state {s}: π has mass outside the support of π_p")));
        }
        v[s] = expect(pi.row(s), q.row(s)) - d;
    }
    let q_new = mdp.backup(&v);
    let mut pi_new = Array2::zeros(q_new.raw_dim());
    for s in 0..mdp.n_states {
        pi_new
            .row_mut(s)
            .assign(&ArrayView1::from(&tilt(pi_p.row(s), q_new.row(s))));
    }
    Ok((q_new, pi_new))
}

/// Soft policy iteration on the penalized value:
/// `Q' = r + γ E[⟨π, Q - p⟩ - Z + H(π)]`, `π' ∝ exp(Q' - p)`.
pub fn penalized_soft_step(
    mdp: &TabularMDP,
    q: ArrayView2<f64>,
    pi: ArrayView2<f64>,
    p: ArrayView2<f64>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    check_shapes(mdp, &[q, pi, p])?;
    let mut v = vec![0.0; mdp.n_states];
    let mut logz = vec![0.0; mdp.n_states];
    for s in 0..mdp.n_states {
        logz[s] = log_partition(p.row(s))?;
        if pi.row(s).iter().zip(p.row(s)).any(|(a, b)| *a > 0.0 && !b.is_finite()) {
            return Err(Error::contract(format!("state {s}: π has mass on an infinite penalty")));
        }
        let qp = &q.row(s) - &p.row(s);
        v[s] = expect(pi.row(s), qp.view()) - logz[s] + entropy(pi.row(s));
    }
    let q_new = mdp.backup(&v);
    let mut pi_new = Array2::zeros(q_new.raw_dim());
    for s in 0..mdp.n_states {
        let support = p.row(s).mapv(|v| if v.is_finite() { 1.0 } else { 0.0 });
        let x = &q_new.row(s) - &p.row(s).mapv(|v| if v.is_finite() { v } else { 0.0 });
        pi_new
            .row_mut(s)
            .assign(&ArrayView1::from(&tilt(support.view(), x.view())));
    }
    Ok((q_new, pi_new))
}

/// `|LHS - RHS|` of `⟨π,Q⟩ - KL(π‖π_p) = ⟨π, Q-p⟩ - Z + H(π)` for one state.
pub fn theorem1_identity_check(pi: ArrayView1<f64>, q: ArrayView1<f64>, p: ArrayView1<f64>) -> Result<f64> {
    let pi_p = induced_policy(p)?;
    let lhs = expect(pi, q) - kl(pi, ArrayView1::from(&pi_p));
    let qp = &q - &p;
    let rhs = expect(pi, qp.view()) - log_partition(p)? + entropy(pi);
    Ok((lhs - rhs).abs())
}

/// Largest per-iteration differences between the two schemes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationResidual {
    pub iteration: usize,
    pub q_diff: f64,
    pub pi_diff: f64,
}

fn max_abs_diff(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Run both schemes from `Q = 0`, `π = π_p` and report their gap after
/// every iteration.
pub fn run_equivalence(mdp: &TabularMDP, p: ArrayView2<f64>, iters: usize) -> Result<Vec<IterationResidual>> {
    mdp.validate()?;
    let pi_p = induced_table(p)?;
    let mut q_a = Array2::zeros(p.raw_dim());
    let mut pi_a = pi_p.clone();
    let mut q_b = q_a.clone();
    let mut pi_b = pi_a.clone();
    let mut out = Vec::with_capacity(iters);
    for iteration in 1..=iters {
        (q_a, pi_a) = kl_regularized_step(mdp, q_a.view(), pi_a.view(), pi_p.view())?;
        (q_b, pi_b) = penalized_soft_step(mdp, q_b.view(), pi_b.view(), p)?;
        out.push(IterationResidual {
            iteration,
            q_diff: max_abs_diff(q_a.view(), q_b.view()),
            pi_diff: max_abs_diff(pi_a.view(), pi_b.view()),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Theorem1Config {
    pub mdps: usize,
    pub max_states: usize,
    pub max_actions: usize,
    pub iters: usize,
    /// Random penalties are drawn from `[0, max_penalty]`.
    pub max_penalty: f64,
}

impl Default for Theorem1Config {
    fn default() -> Self {
        Theorem1Config {
            mdps: 20,
            max_states: 6,
            max_actions: 4,
            iters: 50,
            max_penalty: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Report {
    /// Worst residual across MDPs, per iteration.
    pub per_iteration: Vec<IterationResidual>,
    pub max_q_diff: f64,
    pub max_pi_diff: f64,
}

/// Equivalence run over random MDPs with random finite penalties.
pub fn verify_theorem1<R: Rng + ?Sized>(cfg: &Theorem1Config, rng: &mut R) -> Result<Theorem1Report> {
    if cfg.mdps == 0 || cfg.max_states == 0 || cfg.max_actions == 0 || !(cfg.max_penalty >= 0.0) {
        return Err(Error::contract(format!("invalid theorem check config {cfg:?}")));
    }
    let mut worst: Vec<IterationResidual> = (1..=cfg.iters)
        .map(|iteration| IterationResidual {
            iteration,
            q_diff: 0.0,
            pi_diff: 0.0,
        })
        .collect();
    for _ in 0..cfg.mdps {
        let ns = rng.random_range(1..=cfg.max_states);
        let na = rng.random_range(1..=cfg.max_actions);
        let gamma = rng.random_range(0.5..0.99);
        let mdp = TabularMDP::random(ns, na, gamma, rng)?;
        let p = Array2::from_shape_fn((ns, na), |_| rng.random_range(0.0..=cfg.max_penalty));
        for (w, r) in worst.iter_mut().zip(run_equivalence(&mdp, p.view(), cfg.iters)?) {
            w.q_diff = w.q_diff.max(r.q_diff);
            w.pi_diff = w.pi_diff.max(r.pi_diff);
        }
    }
    let max_q_diff = worst.iter().map(|r| r.q_diff).fold(0.0, f64::max);
    let max_pi_diff = worst.iter().map(|r| r.pi_diff).fold(0.0, f64::max);
    Ok(Theorem1Report {
        per_iteration: worst,
        max_q_diff,
        max_pi_diff,
    })
}
