//! Prepopulated in-support actions for every dataset state.
//!
//! File format: JSON lines, one record per `(row, which)` pair in row order,
//! `s` before `s2`:
//! `{"row":0,"which":"s","actions":[[...]],"logp":[...],"fallback":false}`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::BehaviorModel;
use crate::data::OfflineDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Which {
    #[serde(rename = "s")]
    S,
    #[serde(rename = "s2")]
    S2,
}

impl Which {
    fn index(self) -> usize {
        match self {
            Which::S => 0,
            Which::S2 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheEntry {
    pub row: usize,
    pub which: Which,
    pub actions: Vec<Vec<f64>>,
    pub logp: Vec<f64>,
    /// No sample passed the threshold; `actions` holds the dataset action.
    pub fallback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CacheParams {
    /// Samples requested per state.
    pub n: usize,
    /// ln ε; samples with lower log-likelihood are dropped.
    pub log_eps: f64,
    /// Sample once per distinct state and share the result across rows.
    /// Off by default: every `(row, which)` gets its own samples.
    pub share_states: bool,
}

impl Default for CacheParams {
    fn default() -> Self {
        CacheParams {
            n: 30,
            log_eps: -5.0,
            share_states: false,
        }
    }
}

impl CacheParams {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.log_eps.is_nan() {
            return Err(Error::contract(format!("invalid cache parameters {self:?}")));
        }
        Ok(())
    }

    #[inline]
    pub fn keeps(&self, logp: f64) -> bool {
        logp >= self.log_eps
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupportCache {
    pub params: CacheParams,
    entries: Vec<CacheEntry>,
}

fn in_unit_box(a: &[f64]) -> bool {
    a.iter().all(|v| (-1.0..=1.0).contains(v))
}

/// Dataset action used when every sample for a state is rejected: the row's
/// own action for `s`; for `s2`, the action taken next when the trajectory
/// continues from it, else the row's own action.
fn fallback_action(ds: &OfflineDataset, row: usize, which: Which) -> Vec<f64> {
    let t = &ds.transitions[row];
    let src = match which {
        Which::S => t,
        Which::S2 => match ds.transitions.get(row + 1) {
            Some(next) if !t.done && next.s == t.s2 => next,
            _ => t,
        },
    };
    ds.header.normalize_action(&src.a)
}

/// Filtered samples for one distinct state.
fn sample_state<B: BehaviorModel + ?Sized>(
    behavior: &B,
    params: &CacheParams,
    seed: u64,
    state: &[f64],
    row: usize,
    which: Which,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ row as u64);
    rng.set_stream(which.index() as u64);
    let samples = behavior.sample_actions(state, params.n, &mut rng)?;
    let inside: Vec<usize> = (0..samples.nrows())
        .filter(|&i| in_unit_box(samples.row(i).as_slice().expect("standard layout")))
        .collect();
    let candidates = samples.select(ndarray::Axis(0), &inside);
    let logp = behavior.log_likelihoods(state, candidates.view())?;
    let mut actions = Vec::new();
    let mut kept = Vec::new();
    for (i, lp) in logp.into_iter().enumerate() {
        if params.keeps(lp) {
            actions.push(candidates.row(i).to_vec());
            kept.push(lp);
        }
    }
    Ok((actions, kept))
}

fn fallback_entry<B: BehaviorModel + ?Sized>(
    behavior: &B,
    ds: &OfflineDataset,
    row: usize,
    which: Which,
    state: &[f64],
) -> Result<CacheEntry> {
    let a = fallback_action(ds, row, which);
    let view = ndarray::ArrayView2::from_shape((1, a.len()), &a).expect("one row");
    let lp = behavior.log_likelihoods(state, view)?[0];
    Ok(CacheEntry {
        row,
        which,
        actions: vec![a],
        logp: vec![if lp.is_finite() { lp } else { f64::MIN }],
        fallback: true,
    })
}

fn state_key(s: &[f64]) -> Vec<u64> {
    s.iter().map(|v| v.to_bits()).collect()
}

impl SupportCache {
    /// Sample and filter candidates for every `s` and `s2` in the dataset.
    ///
    /// Each `(row, which)` pair draws from its own RNG stream, so the result
    /// does not depend on the thread count. With `share_states`, a state uses
    /// the stream of its first occurrence and later rows reuse the samples.
    pub fn build<B: BehaviorModel + ?Sized>(
        behavior: &B,
        ds: &OfflineDataset,
        params: CacheParams,
        seed: u64,
    ) -> Result<Self> {
        params.validate()?;
        if behavior.action_dim() != ds.action_dim() {
            return Err(Error::contract("behaviour model and dataset disagree on action dim"));
        }
        let slot = |k: usize| {
            let t = &ds.transitions[k / 2];
            if k.is_multiple_of(2) {
                (Which::S, &t.s)
            } else {
                (Which::S2, &t.s2)
            }
        };
        let mut index = HashMap::new();
        let mut first = Vec::new();
        let owner: Vec<usize> = (0..ds.len() * 2)
            .map(|k| {
                let key = if params.share_states {
                    state_key(slot(k).1)
                } else {
                    vec![k as u64]
                };
                *index.entry(key).or_insert_with(|| {
                    first.push(k);
                    first.len() - 1
                })
            })
            .collect();
        let sampled = first
            .par_iter()
            .map(|&k| {
                let (which, state) = slot(k);
                sample_state(behavior, &params, seed, state, k / 2, which)
            })
            .collect::<Result<Vec<_>>>()?;
        let entries = owner
            .into_par_iter()
            .enumerate()
            .map(|(k, u)| {
                let (which, state) = slot(k);
                let (actions, logp) = &sampled[u];
                if actions.is_empty() {
                    return fallback_entry(behavior, ds, k / 2, which, state);
                }
                Ok(CacheEntry {
                    row: k / 2,
                    which,
                    actions: actions.clone(),
                    logp: logp.clone(),
                    fallback: false,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SupportCache { params, entries })
    }

    pub fn from_entries(params: CacheParams, entries: Vec<CacheEntry>) -> Result<Self> {
        params.validate()?;
        let cache = SupportCache { params, entries };
        cache.validate()?;
        Ok(cache)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.entries.len().is_multiple_of(2) {
            return Err(Error::contract("cache must hold an s and an s2 record per row"));
        }
        for (k, e) in self.entries.iter().enumerate() {
            let which = if k % 2 == 0 { Which::S } else { Which::S2 };
            if e.row != k / 2 || e.which != which {
                return Err(Error::contract(format!("cache record {k} is out of order")));
            }
            if e.actions.is_empty() || e.actions.len() != e.logp.len() {
                return Err(Error::contract(format!("cache record {k} has mismatched lists")));
            }
            if e.fallback {
                if e.actions.len() != 1 {
                    return Err(Error::contract(format!("fallback record {k} must hold one action")));
                }
                continue;
            }
            if e.actions.len() > self.params.n {
                return Err(Error::contract(format!("cache record {k} exceeds N = {}", self.params.n)));
            }
            if e.logp.iter().any(|&lp| !self.params.keeps(lp)) {
                return Err(Error::contract(format!("cache record {k} holds a sample below ln ε")));
            }
            if e.actions.iter().any(|a| !in_unit_box(a)) {
                return Err(Error::contract(format!("cache record {k} holds an out-of-box action")));
            }
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.entries.len() / 2
    }

    pub fn entries(&self) -> &[CacheEntry] {
        &self.entries
    }

    pub fn get(&self, row: usize, which: Which) -> Option<&CacheEntry> {
        self.entries.get(2 * row + which.index())
    }

    /// Candidate actions for a row's state or successor.
    pub fn actions(&self, row: usize, which: Which) -> &[Vec<f64>] {
        self.get(row, which).map(|e| e.actions.as_slice()).unwrap_or(&[])
    }

    /// Number of states for which every sample was rejected.
    pub fn fallback_count(&self) -> usize {
        self.entries.iter().filter(|e| e.fallback).count()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str, params: CacheParams, path: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: CacheEntry = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })?;
            entries.push(e);
        }
        Self::from_entries(params, entries)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, params: CacheParams) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text, params, path)
    }
}
