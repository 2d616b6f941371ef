use serde::{Deserialize, Serialize};

use crate::data::OfflineDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    #[default]
    Raw,
    /// Scale every reward by `scale / (best return − worst return)`.
    Normalized,
    /// -1 everywhere except 0 on goal-reaching rows.
    MinusOneExceptGoal,
}

/// Rewrite the rewards of `ds` according to `mode`. Trajectory returns for
/// the normalized mode come from [`OfflineDataset::trajectories`].
pub fn shape_rewards(ds: &OfflineDataset, mode: RewardMode, scale: f64) -> Result<OfflineDataset> {
    let mut out = ds.clone();
    match mode {
        RewardMode::Raw => {}
        RewardMode::MinusOneExceptGoal => {
            for t in &mut out.transitions {
                t.r = if t.goal { 0.0 } else { -1.0 };
            }
        }
        RewardMode::Normalized => {
            let returns: Vec<f64> = ds
                .trajectories()
                .iter()
                .map(|&(a, b)| ds.transitions[a..=b].iter().map(|t| t.r).sum())
                .collect();
            let best = returns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let worst = returns.iter().copied().fold(f64::INFINITY, f64::min);
            let spread = best - worst;
            if !(spread > 0.0) || !spread.is_finite() {
                return Err(Error::contract(format!(
                    "cannot normalize rewards: best and worst trajectory returns are both {best}"
                )));
            }
            let k = scale / spread;
            for t in &mut out.transitions {
                t.r *= k;
            }
        }
    }
    Ok(out)
}
