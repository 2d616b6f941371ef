//! Offline transition datasets and their JSON-lines file format.
//!
//! Line 1 is the header; every following line is one transition:
//! `{"s":[...],"a":[...],"r":x,"s2":[...],"done":b,"goal":b}`.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s2: Vec<f64>,
    pub done: bool,
    pub goal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub env: String,
    pub seed: u64,
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_min: Vec<f64>,
    pub action_max: Vec<f64>,
}

impl DatasetHeader {
    /// Map a raw action into the normalized box. A dimension whose min equals
    /// its max is only re-centred.
    pub fn normalize_action(&self, a: &[f64]) -> Vec<f64> {
        a.iter()
            .enumerate()
            .map(|(j, &v)| {
                let (lo, hi) = (self.action_min[j], self.action_max[j]);
                let half = 0.5 * (hi - lo);
                let mid = 0.5 * (hi + lo);
                if half > 1e-12 {
                    (v - mid) / half
                } else {
                    v - mid
                }
            })
            .collect()
    }

    pub fn denormalize_action(&self, a: &[f64]) -> Vec<f64> {
        a.iter()
            .enumerate()
            .map(|(j, &v)| {
                let (lo, hi) = (self.action_min[j], self.action_max[j]);
                let half = 0.5 * (hi - lo);
                let mid = 0.5 * (hi + lo);
                if half > 1e-12 {
                    mid + v * half
                } else {
                    mid + v
                }
            })
            .collect()
    }

    /// log |d raw / d normalized|, the density correction between the two spaces.
    pub fn log_jacobian(&self) -> f64 {
        self.action_min
            .iter()
            .zip(&self.action_max)
            .map(|(lo, hi)| {
                let half = 0.5 * (hi - lo);
                if half > 1e-12 {
                    half.ln()
                } else {
                    0.0
                }
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    pub header: DatasetHeader,
    pub transitions: Vec<Transition>,
}

impl OfflineDataset {
    /// Build a dataset, computing per-dimension action bounds from the data.
    pub fn new(env: &str, seed: u64, transitions: Vec<Transition>) -> Result<Self> {
        let first = transitions
            .first()
            .ok_or_else(|| Error::contract("dataset needs at least one transition"))?;
        let (sd, ad) = (first.s.len(), first.a.len());
        let mut lo = vec![f64::INFINITY; ad];
        let mut hi = vec![f64::NEG_INFINITY; ad];
        for t in &transitions {
            for (j, &v) in t.a.iter().enumerate().take(ad) {
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
        let ds = OfflineDataset {
            header: DatasetHeader {
                env: env.to_string(),
                seed,
                state_dim: sd,
                action_dim: ad,
                action_min: lo,
                action_max: hi,
            },
            transitions,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.header.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.header.action_dim
    }

    fn validate_row(&self, idx: usize, t: &Transition) -> Result<()> {
        let h = &self.header;
        if t.s.len() != h.state_dim || t.s2.len() != h.state_dim || t.a.len() != h.action_dim {
            return Err(Error::contract(format!(
                "row {idx}: dims (s {}, a {}, s2 {}) do not match header (state {}, action {})",
                t.s.len(),
                t.a.len(),
                t.s2.len(),
                h.state_dim,
                h.action_dim
            )));
        }
        if !t.r.is_finite() || t.s.iter().chain(&t.a).chain(&t.s2).any(|v| !v.is_finite()) {
            return Err(Error::contract(format!("row {idx}: non-finite value")));
        }
        for (j, &v) in t.a.iter().enumerate() {
            if v < h.action_min[j] || v > h.action_max[j] {
                return Err(Error::contract(format!("row {idx}: action {v} outside declared bounds")));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.header;
        if h.action_min.len() != h.action_dim || h.action_max.len() != h.action_dim {
            return Err(Error::contract("header bounds length differs from action_dim"));
        }
        if h.action_min.iter().zip(&h.action_max).any(|(lo, hi)| !(lo <= hi)) {
            return Err(Error::contract("header action_min exceeds action_max"));
        }
        for (i, t) in self.transitions.iter().enumerate() {
            self.validate_row(i, t)?;
        }
        Ok(())
    }

    pub fn states(&self) -> Array2<f64> {
        rows_to_array(self.transitions.iter().map(|t| t.s.as_slice()), self.state_dim())
    }

    pub fn next_states(&self) -> Array2<f64> {
        rows_to_array(self.transitions.iter().map(|t| t.s2.as_slice()), self.state_dim())
    }

    /// Actions mapped into the normalized box.
    pub fn normalized_actions(&self) -> Array2<f64> {
        let rows: Vec<Vec<f64>> = self
            .transitions
            .iter()
            .map(|t| self.header.normalize_action(&t.a))
            .collect();
        rows_to_array(rows.iter().map(|r| r.as_slice()), self.action_dim())
    }

    /// Indices where a trajectory ends: terminal rows, the last row, and rows
    /// whose successor does not start from their `s2`.
    pub fn trajectory_ends(&self) -> Vec<usize> {
        let n = self.transitions.len();
        (0..n)
            .filter(|&i| {
                let t = &self.transitions[i];
                t.done || i + 1 == n || self.transitions[i + 1].s != t.s2
            })
            .collect()
    }

    /// Per-trajectory `(start row, end row inclusive)`.
    pub fn trajectories(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut start = 0;
        for end in self.trajectory_ends() {
            out.push((start, end));
            start = end + 1;
        }
        out
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = serde_json::to_string(&self.header)?;
        s.push('\n');
        for t in &self.transitions {
            s.push_str(&serde_json::to_string(t)?);
            s.push('\n');
        }
        Ok(s)
    }

    pub fn from_jsonl(text: &str, path: &Path) -> Result<Self> {
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate();
        let (_, head) = lines.next().ok_or_else(|| parse_err(1, "empty file".into()))?;
        let header: DatasetHeader =
            serde_json::from_str(head).map_err(|e| parse_err(1, format!("bad header: {e}")))?;
        let mut ds = OfflineDataset {
            header,
            transitions: Vec::new(),
        };
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let t: Transition = serde_json::from_str(line).map_err(|e| parse_err(i + 1, e.to_string()))?;
            let row = ds.transitions.len();
            ds.validate_row(row, &t)
                .map_err(|e| parse_err(i + 1, e.to_string()))?;
            ds.transitions.push(t);
        }
        if ds.transitions.is_empty() {
            return Err(parse_err(1, "dataset has no transitions".into()));
        }
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text, path)
    }
}

pub(crate) fn rows_to_array<'a>(rows: impl Iterator<Item = &'a [f64]>, dim: usize) -> Array2<f64> {
    let flat: Vec<f64> = rows.flat_map(|r| r.iter().copied()).collect();
    let n = flat.len() / dim.max(1);
    Array2::from_shape_vec((n, dim), flat).expect("rows have uniform length")
}
