//! Exact log-likelihood through the probability-flow ODE
//! `dx/dt = -½β(t)(x + s(x, t))`, integrated from `t_min` to `t_max`
//! together with the divergence of its drift.

use ndarray::{s, Array2, ArrayView2};
use rayon::prelude::*;

use super::ode::{dopri5, OdeTolerance};
use crate::error::{Error, Result};
use crate::sde::{std_normal_logpdf, ScoreModel};

const FD_STEP: f64 = 1e-4;

/// Drift and exact divergence for a batch of points at time `t`.
///
/// `x` holds the points row-wise; the result is `(drift, divergence per row)`.
fn drift_and_divergence(
    model: &ScoreModel,
    states: ArrayView2<f64>,
    x: ArrayView2<f64>,
    t: f64,
) -> Result<(Array2<f64>, Vec<f64>)> {
    let (n, d) = x.dim();
    let copies = 1 + 2 * d;
    let mut big_x = Array2::zeros((n * copies, d));
    let mut big_s = Array2::zeros((n * copies, states.ncols()));
    for c in 0..copies {
        for i in 0..n {
            let r = c * n + i;
            big_x.row_mut(r).assign(&x.row(i));
            big_s.row_mut(r).assign(&states.row(i));
            if c > 0 {
                let j = (c - 1) / 2;
                let sign = if (c - 1) % 2 == 0 { 1.0 } else { -1.0 };
                big_x[[r, j]] += sign * FD_STEP;
            }
        }
    }
    let ts = vec![t; n * copies];
    let score = model.score(big_s.view(), big_x.view(), &ts)?;
    let half_beta = 0.5 * model.sde.beta(t);
    let f = |r: usize, j: usize| -half_beta * (big_x[[r, j]] + score[[r, j]]);
    let drift = Array2::from_shape_fn((n, d), |(i, j)| f(i, j));
    let div = (0..n)
        .map(|i| {
            (0..d)
                .map(|j| {
                    let plus = (1 + 2 * j) * n + i;
                    let minus = (2 + 2 * j) * n + i;
                    (f(plus, j) - f(minus, j)) / (2.0 * FD_STEP)
                })
                .sum()
        })
        .collect();
    Ok((drift, div))
}

/// Log-density of each `(state, action)` row under the model.
///
/// Every row gets its own integration, so its value does not depend on the
/// rest of the batch and matches [`log_likelihood`] exactly.
pub fn log_likelihood_batch(
    model: &ScoreModel,
    states: ArrayView2<f64>,
    actions: ArrayView2<f64>,
    tol: &OdeTolerance,
) -> Result<Vec<f64>> {
    let (n, d) = actions.dim();
    if states.nrows() != n {
        return Err(Error::contract("states and actions differ in row count"));
    }
    if d != model.action_dim || states.ncols() != model.state_dim {
        return Err(Error::contract("state or action dim does not match the model"));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    if actions.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("actions must be finite"));
    }
    (0..n)
        .into_par_iter()
        .map(|i| {
            let r = i..i + 1;
            Ok(integrate(model, states.slice(s![r.clone(), ..]), actions.slice(s![r, ..]), tol)?[0])
        })
        .collect()
}

/// One ODE over all given rows, sharing step-size control.
fn integrate(
    model: &ScoreModel,
    states: ArrayView2<f64>,
    actions: ArrayView2<f64>,
    tol: &OdeTolerance,
) -> Result<Vec<f64>> {
    let (n, d) = actions.dim();
    // y = [x row-major (n*d) | accumulated divergence (n)]
    let mut y0 = actions.iter().copied().collect::<Vec<_>>();
    y0.extend(std::iter::repeat_n(0.0, n));
    let rhs = |t: f64, y: &[f64], out: &mut [f64]| -> Result<()> {
        let x = ArrayView2::from_shape((n, d), &y[..n * d]).expect("sized above");
        let (drift, div) = drift_and_divergence(model, states, x, t)?;
        out[..n * d].copy_from_slice(drift.as_slice().expect("standard layout"));
        out[n * d..].copy_from_slice(&div);
        Ok(())
    };
    let (y, _) = dopri5(rhs, model.sde.t_min, model.sde.t_max, &y0, *tol)?;
    Ok((0..n)
        .map(|i| std_normal_logpdf(&y[i * d..(i + 1) * d]) + y[n * d + i])
        .collect())
}

/// Log-density of one action given one state.
pub fn log_likelihood(model: &ScoreModel, state: &[f64], action: &[f64], tol: &OdeTolerance) -> Result<f64> {
    let s = ArrayView2::from_shape((1, state.len()), state).map_err(|e| Error::contract(e.to_string()))?;
    let a = ArrayView2::from_shape((1, action.len()), action).map_err(|e| Error::contract(e.to_string()))?;
    Ok(log_likelihood_batch(model, s, a, tol)?[0])
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::nn::{Activation, Arch, Dense, MlpParams};
    use crate::sde::{OutputKind, ScoreModel, SdeConfig, TimeEmbedding};
    use ndarray::{Array1, Array2};

    /// A score model whose network outputs zero: its score is 0 everywhere,
    /// so the flow is `dx/dt = -½βx` and the divergence is `-½β d`.
    pub(crate) fn zero_model(action_dim: usize) -> ScoreModel {
        let emb = TimeEmbedding::default();
        let in_dim = 1 + action_dim + emb.dim();
        let layer = Dense {
            weight: Array2::zeros((action_dim, in_dim)),
            bias: Array1::zeros(action_dim),
            activation: Activation::Identity,
        };
        ScoreModel {
            net: MlpParams::from_layers(Arch::Plain, vec![layer]).unwrap(),
            sde: SdeConfig::default(),
            embedding: emb,
            state_dim: 1,
            action_dim,
            output: OutputKind::Noise,
            prior_var: None,
        }
    }

    /// Zero network plus Gaussian skip: the exact score of the diffused
    /// `N(0, var)`.
    pub(crate) fn gaussian_model(var: f64) -> ScoreModel {
        let mut m = zero_model(1);
        m.output = OutputKind::Score;
        m.prior_var = Some(vec![var]);
        m
    }

    #[test]
    fn analytic_gaussian_score_gives_exact_density() {
        for var in [1.0, 0.09, 0.25] {
            let m = gaussian_model(var);
            let (mt, st) = m.sde.marginal(m.sde.t_min).unwrap();
            let v_min = mt * mt * var + st * st;
            for a in [0.0, 0.3, -1.1, 2.0] {
                let got = log_likelihood(&m, &[0.0], &[a], &OdeTolerance::default()).unwrap();
                let expect = -0.5 * a * a / v_min - 0.5 * (2.0 * std::f64::consts::PI * v_min).ln();
                assert!((got - expect).abs() < 1e-3 + 1e-4 * expect.abs(), "var {var} a {a}: {got} vs {expect}");
            }
        }
    }

    #[test]
    fn zero_score_flow_has_closed_form() {
        let m = zero_model(2);
        let sde = m.sde;
        let a = [0.4, -0.7];
        let got = log_likelihood(&m, &[0.0], &a, &OdeTolerance::default()).unwrap();
        let decay = (-0.5 * (sde.beta_integral(sde.t_max) - sde.beta_integral(sde.t_min))).exp();
        let x_t: Vec<f64> = a.iter().map(|v| v * decay).collect();
        let expect = std_normal_logpdf(&x_t) + 2.0 * decay.ln();
        assert!((got - expect).abs() < 1e-4, "{got} vs {expect}");
    }

    #[test]
    fn batch_matches_single_rows() {
        let m = zero_model(1);
        let tol = OdeTolerance {
            rtol: 1e-9,
            atol: 1e-9,
            ..OdeTolerance::default()
        };
        let states = Array2::zeros((3, 1));
        let actions = ndarray::array![[0.1], [-0.5], [0.9]];
        let batch = log_likelihood_batch(&m, states.view(), actions.view(), &tol).unwrap();
        for i in 0..3 {
            let single = log_likelihood(&m, &[0.0], &[actions[[i, 0]]], &tol).unwrap();
            assert!((single - batch[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn dimension_mismatch_is_contract_error() {
        let m = zero_model(1);
        assert!(log_likelihood(&m, &[0.0], &[0.1, 0.2], &OdeTolerance::default()).is_err());
    }
}
