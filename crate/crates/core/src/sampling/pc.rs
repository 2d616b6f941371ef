//! Predictor–corrector sampling of the reverse-time VP SDE: Euler–Maruyama
//! predictor, Langevin corrector with a fixed signal-to-noise ratio.

use ndarray::{Array2, ArrayView2, Zip};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{repeat_row, SamplerConfig};
use crate::error::{Error, Result};
use crate::sde::ScoreModel;

fn mean_row_norm(m: ArrayView2<f64>) -> f64 {
    let n = m.nrows().max(1) as f64;
    m.rows().into_iter().map(|r| r.dot(&r).sqrt()).sum::<f64>() / n
}

fn standard_normal<R: Rng + ?Sized>(shape: (usize, usize), rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.sample(StandardNormal))
}

/// One Langevin update `x + δ·score + √(2δ)·z` with
/// `δ = 2 (snr ‖z‖ / ‖score‖)²`, norms averaged over rows.
/// A zero score norm leaves `x` unchanged.
pub fn langevin_step(x: ArrayView2<f64>, score: ArrayView2<f64>, z: ArrayView2<f64>, snr: f64) -> Array2<f64> {
    let s_norm = mean_row_norm(score);
    if s_norm == 0.0 || snr == 0.0 {
        return x.to_owned();
    }
    let z_norm = mean_row_norm(z);
    let delta = 2.0 * (snr * z_norm / s_norm).powi(2);
    let noise_scale = (2.0 * delta).sqrt();
    let mut out = x.to_owned();
    Zip::from(&mut out)
        .and(score)
        .and(z)
        .for_each(|o, &s, &zz| *o += delta * s + noise_scale * zz);
    out
}

/// Evaluate the score at `(states, x, t)` and apply one Langevin step.
pub fn langevin_correct<R: Rng + ?Sized>(
    model: &ScoreModel,
    states: ArrayView2<f64>,
    x: ArrayView2<f64>,
    t: f64,
    snr: f64,
    rng: &mut R,
) -> Result<Array2<f64>> {
    if !(model.sde.t_min..=model.sde.t_max).contains(&t) {
        return Err(Error::contract(format!("t = {t} outside the sampling interval")));
    }
    let ts = vec![t; x.nrows()];
    let score = model.score(states, x, &ts)?;
    let z = standard_normal(x.dim(), rng);
    Ok(langevin_step(x, score.view(), z.view(), snr))
}

/// Draw one action per row of `states`.
pub fn pc_sample_rows<R: Rng + ?Sized>(
    model: &ScoreModel,
    states: ArrayView2<f64>,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Array2<f64>> {
    cfg.validate()?;
    let n = states.nrows();
    let sde = &model.sde;
    let h = (sde.t_max - sde.t_min) / (cfg.n_steps - 1) as f64;
    let mut x = standard_normal((n, model.action_dim), rng);
    let mut x_mean = x.clone();
    let mut ts = vec![0.0; n];
    for i in 0..cfg.n_steps - 1 {
        let t = sde.t_max - i as f64 * h;
        for _ in 0..cfg.corrector_steps {
            x = langevin_correct(model, states, x.view(), t, cfg.snr, rng)?;
        }
        ts.fill(t);
        let score = model.score(states, x.view(), &ts)?;
        let beta = sde.beta(t);
        let noise_scale = (beta * h).sqrt();
        let z = standard_normal(x.dim(), rng);
        Zip::from(&mut x_mean)
            .and(&x)
            .and(&score)
            .for_each(|m, &xv, &s| *m = xv + (0.5 * beta * xv + beta * s) * h);
        Zip::from(&mut x)
            .and(&x_mean)
            .and(&z)
            .for_each(|xv, &m, &zz| *xv = m + noise_scale * zz);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical(format!("non-finite sample at predictor step {i} (t = {t})")));
        }
    }
    Ok(x_mean)
}

/// Draw `n` actions for a single state.
pub fn pc_sample<R: Rng + ?Sized>(
    model: &ScoreModel,
    state: &[f64],
    n: usize,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Array2<f64>> {
    if n == 0 {
        return Err(Error::contract("sample count must be at least 1"));
    }
    if state.len() != model.state_dim {
        return Err(Error::contract("state dim mismatch"));
    }
    let states = repeat_row(state, n);
    pc_sample_rows(model, states.view(), cfg, rng)
}
