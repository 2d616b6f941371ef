//! Log-density heatmaps of a 1-D-state, 1-D-action score model.

use std::fmt::Write as _;

use ndarray::Array2;
use rayon::prelude::*;

use crate::data::DatasetHeader;
use crate::error::{Error, Result};
use crate::sampling::{log_likelihood, OdeTolerance};
use crate::sde::ScoreModel;

/// `logp[i][j]` is the normalized-space log-density at `(s[j], a[i])`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub s: Vec<f64>,
    /// Raw actions, ascending.
    pub a: Vec<f64>,
    pub logp: Array2<f64>,
    /// Cells whose likelihood failed; they hold the clip floor.
    pub failures: usize,
    pub floor: f64,
}

/// `n` evenly spaced points on `[lo, hi]`; a single point sits at `lo`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

impl DensityGrid {
    /// Evaluate `model` on the product of `s_grid` and the normalized action
    /// grid `u_grid`. Failed cells are set to `log_eps - 5`.
    pub fn evaluate(
        model: &ScoreModel,
        header: &DatasetHeader,
        s_grid: &[f64],
        u_grid: &[f64],
        log_eps: f64,
        tol: &OdeTolerance,
    ) -> Result<Self> {
        if model.state_dim != 1 || model.action_dim != 1 {
            return Err(Error::contract("density grids need a 1-D state and a 1-D action"));
        }
        if s_grid.is_empty() || u_grid.is_empty() {
            return Err(Error::contract("density grid axes must be non-empty"));
        }
        if u_grid.iter().any(|u| !(-1.0..=1.0).contains(u)) {
            return Err(Error::contract("action grid must lie in the normalized box"));
        }
        let floor = log_eps - 5.0;
        let (na, ns) = (u_grid.len(), s_grid.len());
        let mut logp = Array2::from_elem((na, ns), floor);
        let mut failures = 0;
        let cells: Vec<(usize, usize)> = (0..ns).flat_map(|j| (0..na).map(move |i| (i, j))).collect();
        let values: Vec<Result<f64>> = cells
            .par_iter()
            .map(|&(i, j)| log_likelihood(model, &[s_grid[j]], &[u_grid[i]], tol))
            .collect();
        for (&(i, j), v) in cells.iter().zip(values) {
            match v {
                Ok(v) => logp[[i, j]] = v,
                // a stiff cell gets the floor instead of sinking the whole grid
                Err(e) if e.is_numerical() => failures += 1,
                Err(e) => return Err(e),
            }
        }
        Ok(DensityGrid {
            s: s_grid.to_vec(),
            a: u_grid.iter().map(|&u| header.denormalize_action(&[u])[0]).collect(),
            logp,
            failures,
            floor,
        })
    }

    /// `s,a,logp` rows in state-major order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,a,logp\n");
        for (j, s) in self.s.iter().enumerate() {
            for (i, a) in self.a.iter().enumerate() {
                writeln!(out, "{s},{a},{}", self.logp[[i, j]]).expect("write to string");
            }
        }
        out
    }

    /// Binary 8-bit PGM: rows are actions from high to low, columns states
    /// from low to high. Gray is linear in log-density clipped to
    /// `[floor, max]`; a constant grid is all white.
    pub fn to_pgm(&self) -> Vec<u8> {
        let (na, ns) = self.logp.dim();
        let hi = self.logp.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(self.floor);
        let span = hi - self.floor;
        let mut out = format!("P5\n{ns} {na}\n255\n").into_bytes();
        for i in (0..na).rev() {
            for j in 0..ns {
                let v = self.logp[[i, j]].clamp(self.floor, hi);
                let g = if span > 0.0 {
                    (255.0 * (v - self.floor) / span).round()
                } else {
                    255.0
                };
                out.push(g as u8);
            }
        }
        out
    }
}
