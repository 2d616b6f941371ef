use super::mlp::{MlpParams, ParamGrads};
use crate::error::{Error, Result};

/// Adam moments and step counter for one network.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: ParamGrads,
    v: ParamGrads,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &MlpParams) -> Self {
        Self::with_betas(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(params: &MlpParams, beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamState {
            m: ParamGrads::zeros_like(params),
            v: ParamGrads::zeros_like(params),
            t: 0,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Apply one bias-corrected Adam update. Non-finite gradients leave both
    /// the state and the parameters untouched.
    pub fn step(&mut self, params: &mut MlpParams, grads: &ParamGrads, lr: f64) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::contract(format!("learning rate must be positive, got {lr}")));
        }
        if grads.layers.len() != params.layers().len()
            || grads
                .layers
                .iter()
                .zip(params.layers())
                .any(|((w, b), l)| w.dim() != l.weight.dim() || b.len() != l.bias.len())
        {
            return Err(Error::contract("gradient shapes do not match parameters"));
        }
        if !grads.is_finite() {
            return Err(Error::numerical("non-finite gradient rejected by Adam"));
        }
        self.t += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let step = lr / c1;
        let layers = params.layers_mut();
        for (i, layer) in layers.iter_mut().enumerate() {
            let (gw, gb) = &grads.layers[i];
            let (mw, mb) = &mut self.m.layers[i];
            let (vw, vb) = &mut self.v.layers[i];
            update(
                layer.weight.as_slice_mut().expect("standard layout"),
                gw.as_slice().expect("standard layout"),
                mw.as_slice_mut().expect("standard layout"),
                vw.as_slice_mut().expect("standard layout"),
                (b1, b2, eps, step, c2),
            );
            update(
                layer.bias.as_slice_mut().expect("standard layout"),
                gb.as_slice().expect("standard layout"),
                mb.as_slice_mut().expect("standard layout"),
                vb.as_slice_mut().expect("standard layout"),
                (b1, b2, eps, step, c2),
            );
        }
        Ok(())
    }
}

#[inline]
fn update(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], (b1, b2, eps, step, c2): (f64, f64, f64, f64, f64)) {
    for i in 0..p.len() {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        p[i] -= step * m[i] / ((v[i] / c2).sqrt() + eps);
    }
}

/// Exponential moving average of a network's parameters.
#[derive(Debug, Clone)]
pub struct EmaParams {
    shadow: MlpParams,
    pub decay: f64,
}

impl EmaParams {
    pub fn new(params: &MlpParams, decay: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&decay) {
            return Err(Error::contract(format!("EMA decay must lie in [0, 1], got {decay}")));
        }
        Ok(EmaParams {
            shadow: params.clone(),
            decay,
        })
    }

    pub fn shadow(&self) -> &MlpParams {
        &self.shadow
    }

    pub fn into_shadow(self) -> MlpParams {
        self.shadow
    }

    /// `shadow <- decay * shadow + (1 - decay) * params`.
    pub fn update(&mut self, params: &MlpParams) -> Result<()> {
        if !self.shadow.same_shape(params) {
            return Err(Error::contract("EMA shadow and parameters differ in shape"));
        }
        let d = self.decay;
        for (s, p) in self.shadow.layers_mut().iter_mut().zip(params.layers()) {
            s.weight.zip_mut_with(&p.weight, |a, &b| *a = d * *a + (1.0 - d) * b);
            s.bias.zip_mut_with(&p.bias, |a, &b| *a = d * *a + (1.0 - d) * b);
        }
        Ok(())
    }
}
