//! Penalty functions `p(s, a)` and the policy they induce.
//!
//! An infinite penalty is `f64::INFINITY`; it maps to probability exactly 0.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 0 where `logβ ≥ ln ε`, infinite otherwise.
pub fn support_penalty(log_beta: f64, log_eps: f64) -> f64 {
    if log_beta >= log_eps {
        0.0
    } else {
        f64::INFINITY
    }
}

pub fn brac_kl_penalty(log_beta: f64) -> f64 {
    -log_beta
}

fn gaussian_kernel(x: &[f64], y: &[f64], bandwidth: f64) -> f64 {
    let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
    (-sq / (2.0 * bandwidth * bandwidth)).exp()
}

fn mean_kernel(xs: ArrayView2<f64>, ys: ArrayView2<f64>, bandwidth: f64) -> f64 {
    let mut total = 0.0;
    for x in xs.rows() {
        for y in ys.rows() {
            total += gaussian_kernel(x.as_slice().expect("row"), y.as_slice().expect("row"), bandwidth);
        }
    }
    total / (xs.nrows() * ys.nrows()) as f64
}

/// Biased (V-statistic) squared MMD with kernel `exp(-‖x-y‖² / 2h²)`.
pub fn mmd2_penalty(policy: ArrayView2<f64>, behavior: ArrayView2<f64>, bandwidth: f64) -> Result<f64> {
    if policy.nrows() == 0 || behavior.nrows() == 0 {
        return Err(Error::contract("MMD needs non-empty sample sets"));
    }
    if policy.ncols() != behavior.ncols() {
        return Err(Error::contract("MMD sample sets differ in dimension"));
    }
    if !(bandwidth > 0.0) {
        return Err(Error::contract("MMD bandwidth must be positive"));
    }
    let (p, b) = (policy.as_standard_layout(), behavior.as_standard_layout());
    let v = mean_kernel(p.view(), p.view(), bandwidth) + mean_kernel(b.view(), b.view(), bandwidth)
        - 2.0 * mean_kernel(p.view(), b.view(), bandwidth);
    Ok(v.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PenaltySpec {
    SupportSet { log_eps: f64 },
    BracKl,
    Mmd2 { bandwidth: f64, samples: usize },
}

impl Default for PenaltySpec {
    fn default() -> Self {
        PenaltySpec::SupportSet { log_eps: -5.0 }
    }
}

impl PenaltySpec {
    pub fn mmd_default() -> Self {
        PenaltySpec::Mmd2 {
            bandwidth: 1.0,
            samples: 4,
        }
    }

    /// Per-(s, a) penalty table from behaviour log-probabilities.
    ///
    /// MMD² is a distance between action distributions, not a per-action
    /// value, so it has no such table.
    pub fn table(&self, log_beta: ArrayView2<f64>) -> Result<Array2<f64>> {
        match *self {
            PenaltySpec::SupportSet { log_eps } => Ok(log_beta.mapv(|lb| support_penalty(lb, log_eps))),
            PenaltySpec::BracKl => Ok(log_beta.mapv(brac_kl_penalty)),
            PenaltySpec::Mmd2 { .. } => Err(Error::contract("MMD² penalty has no per-action table")),
        }
    }
}

/// `softmax(-p)` with infinite penalties mapped to exactly zero probability.
pub fn induced_policy(p: ArrayView1<f64>) -> Result<Vec<f64>> {
    if p.iter().any(|v| v.is_nan() || *v == f64::NEG_INFINITY) {
        return Err(Error::contract("penalties must be finite or +∞"));
    }
    let min = p.iter().copied().fold(f64::INFINITY, f64::min);
    if min == f64::INFINITY {
        return Err(Error::contract("every action has infinite penalty: empty support"));
    }
    let w: Vec<f64> = p
        .iter()
        .map(|&v| if v == f64::INFINITY { 0.0 } else { (min - v).exp() })
        .collect();
    let z: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / z).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn support_penalty_examples() {
        assert_eq!(support_penalty(-4.9, -5.0), 0.0);
        assert_eq!(support_penalty(-5.1, -5.0), f64::INFINITY);
        assert_eq!(support_penalty(-5.0, -5.0), 0.0);
    }

    #[test]
    fn brac_kl_examples() {
        assert_eq!(brac_kl_penalty(0.0), 0.0);
        assert_eq!(brac_kl_penalty(-5.0), 5.0);
        assert_eq!(brac_kl_penalty(f64::NEG_INFINITY), f64::INFINITY);
    }

    #[test]
    fn mmd_examples() {
        let a = array![[0.1, 0.2], [0.5, -0.3], [1.0, 0.0]];
        assert!(mmd2_penalty(a.view(), a.view(), 0.7).unwrap().abs() < 1e-12);
        let (x, y) = (array![[0.0]], array![[1.0]]);
        let v = mmd2_penalty(x.view(), y.view(), 1.0).unwrap();
        assert!((v - (2.0 - 2.0 * (-0.5f64).exp())).abs() < 1e-12);
        assert!((v - 0.7869).abs() < 1e-4);
        let b = array![[0.3, 0.3]];
        assert_eq!(
            mmd2_penalty(a.view(), b.view(), 0.5).unwrap(),
            mmd2_penalty(b.view(), a.view(), 0.5).unwrap()
        );
        assert!(mmd2_penalty(a.view(), b.view(), 0.0).is_err());
    }

    #[test]
    fn induced_policy_examples() {
        let inf = f64::INFINITY;
        assert_eq!(induced_policy(array![0.0, 0.0, inf].view()).unwrap(), vec![0.5, 0.5, 0.0]);
        let u = induced_policy(array![0.0, 0.0, 0.0].view()).unwrap();
        assert!(u.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        let e = std::f64::consts::E;
        let p = induced_policy(array![0.0, 1.0].view()).unwrap();
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-15 && (p[1] - 1.0 / (e + 1.0)).abs() < 1e-15);
        assert!(induced_policy(array![inf, inf].view()).is_err());
    }

    #[test]
    fn support_table_induces_uniform_over_support() {
        let log_beta = array![[-1.0, -6.0, -4.0, -5.0], [-9.0, -9.0, -0.5, -7.0]];
        let table = PenaltySpec::default().table(log_beta.view()).unwrap();
        let p0 = induced_policy(table.row(0)).unwrap();
        assert_eq!(p0, vec![1.0 / 3.0, 0.0, 1.0 / 3.0, 1.0 / 3.0]);
        let p1 = induced_policy(table.row(1)).unwrap();
        assert_eq!(p1, vec![0.0, 0.0, 1.0, 0.0]);
        assert!(PenaltySpec::mmd_default().table(log_beta.view()).is_err());
    }
}
