//! Variance-preserving SDE and denoising score matching for the conditional
//! score model `s(s, a, t) ≈ ∇_a log β_t(a | s)`.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, AdamState, Checkpoint, EmaParams, MlpParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SdeConfig {
    pub beta_min: f64,
    pub beta_max: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub n_discretization: usize,
}

impl Default for SdeConfig {
    fn default() -> Self {
        SdeConfig {
            beta_min: 0.1,
            beta_max: 20.0,
            t_min: 1e-3,
            t_max: 1.0,
            n_discretization: 500,
        }
    }
}

impl SdeConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.beta_min > 0.0
            && self.beta_max > self.beta_min
            && self.t_min > 0.0
            && self.t_min < self.t_max
            && self.t_max <= 1.0
            && self.n_discretization >= 2;
        if ok {
            Ok(())
        } else {
            Err(Error::contract(format!("invalid SDE config {self:?}")))
        }
    }

    /// β(t), linear in t.
    #[inline]
    pub fn beta(&self, t: f64) -> f64 {
        self.beta_min + t * (self.beta_max - self.beta_min)
    }

    /// ∫₀ᵗ β(u) du.
    #[inline]
    pub fn beta_integral(&self, t: f64) -> f64 {
        self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t * t
    }

    /// Closed-form perturbation kernel: `(mean_coef, std)` of `a_t | a_0`.
    pub fn marginal(&self, t: f64) -> Result<(f64, f64)> {
        if !(0.0..=self.t_max).contains(&t) {
            return Err(Error::contract(format!("t = {t} outside [0, {}]", self.t_max)));
        }
        Ok(self.marginal_unchecked(t))
    }

    #[inline]
    pub(crate) fn marginal_unchecked(&self, t: f64) -> (f64, f64) {
        let b = self.beta_integral(t);
        ((-0.5 * b).exp(), (-(-b).exp_m1()).sqrt())
    }

    /// `a_t = mean_coef * a0 + std * noise`.
    pub fn perturb(&self, a0: &[f64], t: f64, noise: &[f64]) -> Result<Vec<f64>> {
        if a0.len() != noise.len() {
            return Err(Error::contract("noise and action dims differ"));
        }
        let (m, s) = self.marginal(t)?;
        Ok(a0.iter().zip(noise).map(|(a, z)| m * a + s * z).collect())
    }
}

/// Sinusoidal features of t at geometrically spaced angular frequencies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeEmbedding {
    pub frequencies: usize,
    pub min_freq: f64,
    pub max_freq: f64,
}

impl Default for TimeEmbedding {
    fn default() -> Self {
        TimeEmbedding {
            frequencies: 8,
            min_freq: 1.0,
            max_freq: 100.0,
        }
    }
}

impl TimeEmbedding {
    pub fn dim(&self) -> usize {
        2 * self.frequencies
    }

    fn omega(&self, k: usize) -> f64 {
        if self.frequencies <= 1 {
            return self.min_freq;
        }
        let r = k as f64 / (self.frequencies - 1) as f64;
        self.min_freq * (self.max_freq / self.min_freq).powf(r)
    }

    pub fn write(&self, t: f64, out: &mut [f64]) {
        for k in 0..self.frequencies {
            let (s, c) = (self.omega(k) * t).sin_cos();
            out[2 * k] = s;
            out[2 * k + 1] = c;
        }
    }
}

/// How the network output becomes a score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    /// The network predicts the injected noise; score = `-net / std(t)`.
    #[default]
    Noise,
    /// The network predicts the score directly.
    Score,
}

/// Conditional score network with its SDE.
///
/// score = `skip + head(net)`, where `skip` is the score of a zero-mean
/// Gaussian with per-dimension variance `prior_var` pushed through the SDE
/// (zero when `prior_var` is `None`).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreModel {
    pub net: MlpParams,
    pub sde: SdeConfig,
    pub embedding: TimeEmbedding,
    pub state_dim: usize,
    pub action_dim: usize,
    pub output: OutputKind,
    pub prior_var: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoreMeta {
    kind: String,
    sde: SdeConfig,
    embedding: TimeEmbedding,
    state_dim: usize,
    action_dim: usize,
    #[serde(default)]
    output: OutputKind,
    #[serde(default)]
    prior_var: Option<Vec<f64>>,
    #[serde(default)]
    extra: serde_json::Value,
}

impl ScoreModel {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        width: usize,
        blocks: usize,
        sde: SdeConfig,
        rng: &mut R,
    ) -> Result<Self> {
        sde.validate()?;
        if action_dim == 0 {
            return Err(Error::contract("action_dim must be at least 1"));
        }
        let embedding = TimeEmbedding::default();
        let in_dim = state_dim + action_dim + embedding.dim();
        let net = MlpParams::residual(in_dim, width, blocks, action_dim, Activation::Swish, rng)?;
        Ok(ScoreModel {
            net,
            sde,
            embedding,
            state_dim,
            action_dim,
            output: OutputKind::Noise,
            prior_var: None,
        })
    }

    /// `(skip coefficient c, output gain g)` at time t: score_j = c_j x_j + g net_j.
    #[inline]
    pub(crate) fn head(&self, t: f64, j: usize) -> (f64, f64) {
        let (m, std) = self.sde.marginal_unchecked(t);
        let c = match &self.prior_var {
            Some(v) => -1.0 / (m * m * v[j] + std * std),
            None => 0.0,
        };
        let g = match self.output {
            OutputKind::Noise => -1.0 / std,
            OutputKind::Score => 1.0,
        };
        (c, g)
    }

    fn check_net(&self) -> Result<()> {
        if self.net.in_dim() != self.state_dim + self.action_dim + self.embedding.dim()
            || self.net.out_dim() != self.action_dim
        {
            return Err(Error::contract("score network dims disagree with state/action dims"));
        }
        if let Some(v) = &self.prior_var {
            if v.len() != self.action_dim || v.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
                return Err(Error::contract("prior variance must be positive per action dim"));
            }
        }
        Ok(())
    }

    /// Stack `(state, action, emb(t))` rows.
    pub(crate) fn inputs(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>, ts: &[f64]) -> Result<Array2<f64>> {
        let n = actions.nrows();
        if states.nrows() != n || ts.len() != n {
            return Err(Error::contract("states, actions and times must have equal rows"));
        }
        if states.ncols() != self.state_dim || actions.ncols() != self.action_dim {
            return Err(Error::contract(format!(
                "expected state dim {} and action dim {}, got {} and {}",
                self.state_dim,
                self.action_dim,
                states.ncols(),
                actions.ncols()
            )));
        }
        let (sd, ad) = (self.state_dim, self.action_dim);
        let mut x = Array2::zeros((n, sd + ad + self.embedding.dim()));
        for i in 0..n {
            let mut row = x.row_mut(i);
            let row = row.as_slice_mut().expect("standard layout");
            for j in 0..sd {
                row[j] = states[[i, j]];
            }
            for j in 0..ad {
                row[sd + j] = actions[[i, j]];
            }
            self.embedding.write(ts[i], &mut row[sd + ad..]);
        }
        Ok(x)
    }

    /// Batched score evaluation; row i uses time `ts[i]`.
    pub fn score(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>, ts: &[f64]) -> Result<Array2<f64>> {
        let x = self.inputs(states, actions, ts)?;
        let mut out = self.net.predict(x.view())?;
        for (i, &t) in ts.iter().enumerate() {
            for j in 0..self.action_dim {
                let (c, g) = self.head(t, j);
                out[[i, j]] = c * actions[[i, j]] + g * out[[i, j]];
            }
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self, extra: serde_json::Value) -> Result<Checkpoint> {
        let meta = ScoreMeta {
            kind: "score".into(),
            sde: self.sde,
            embedding: self.embedding,
            state_dim: self.state_dim,
            action_dim: self.action_dim,
            output: self.output,
            prior_var: self.prior_var.clone(),
            extra,
        };
        Ok(Checkpoint::new(serde_json::to_value(meta)?).with("score", &self.net))
    }

    /// Returns the model and the free-form `extra` metadata stored with it.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, serde_json::Value)> {
        let meta: ScoreMeta = serde_json::from_value(ck.meta.clone())?;
        if meta.kind != "score" {
            return Err(Error::contract(format!("checkpoint kind {:?} is not a score model", meta.kind)));
        }
        let model = ScoreModel {
            net: ck.get("score")?.clone(),
            sde: meta.sde,
            embedding: meta.embedding,
            state_dim: meta.state_dim,
            action_dim: meta.action_dim,
            output: meta.output,
            prior_var: meta.prior_var,
        };
        model.sde.validate()?;
        model.check_net()?;
        Ok((model, meta.extra))
    }
}

/// Per-time weighting λ(t) of the denoising score matching loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DsmWeighting {
    /// λ(t) = std(t)²: equivalent to a unit-weight noise-prediction loss.
    #[default]
    VarianceScaled,
    /// λ(t) = 1: `E‖s + noise/std‖²`.
    Unit,
}

/// Mean of `λ(t_i) ‖score_i + noise_i / std_i‖²` over rows.
pub fn dsm_residual_loss(scores: ArrayView2<f64>, noise: ArrayView2<f64>, stds: &[f64], weighting: DsmWeighting) -> f64 {
    let n = scores.nrows();
    let mut total = 0.0;
    for i in 0..n {
        let s = stds[i];
        let lambda = match weighting {
            DsmWeighting::VarianceScaled => s * s,
            DsmWeighting::Unit => 1.0,
        };
        let sq: f64 = scores
            .row(i)
            .iter()
            .zip(noise.row(i))
            .map(|(sc, z)| (sc + z / s).powi(2))
            .sum();
        total += lambda * sq;
    }
    total / n as f64
}

/// Denoising score matching loss and its gradient with respect to the
/// score network parameters, on fixed time and noise draws.
pub fn dsm_loss(
    model: &ScoreModel,
    states: ArrayView2<f64>,
    actions: ArrayView2<f64>,
    t_draws: &[f64],
    noise: ArrayView2<f64>,
    weighting: DsmWeighting,
) -> Result<(f64, crate::nn::ParamGrads)> {
    let n = actions.nrows();
    if n == 0 {
        return Err(Error::contract("empty batch"));
    }
    if noise.dim() != actions.dim() || t_draws.len() != n {
        return Err(Error::contract("one time and one noise vector per batch item"));
    }
    let mut perturbed = Array2::zeros(actions.raw_dim());
    let mut stds = Vec::with_capacity(n);
    for i in 0..n {
        let (m, s) = model.sde.marginal(t_draws[i])?;
        if s <= 0.0 {
            return Err(Error::contract("t draws must be positive"));
        }
        stds.push(s);
        for j in 0..actions.ncols() {
            perturbed[[i, j]] = m * actions[[i, j]] + s * noise[[i, j]];
        }
    }
    let x = model.inputs(states, perturbed.view(), t_draws)?;
    let (out, tape) = model.net.forward_batch(x.view())?;
    let mut scores = out.clone();
    let mut grad_out = Array2::zeros(out.raw_dim());
    for i in 0..n {
        let s = stds[i];
        let lambda = match weighting {
            DsmWeighting::VarianceScaled => s * s,
            DsmWeighting::Unit => 1.0,
        };
        for j in 0..out.ncols() {
            let (c, g) = model.head(t_draws[i], j);
            let score = c * perturbed[[i, j]] + g * out[[i, j]];
            scores[[i, j]] = score;
            let resid = score + noise[[i, j]] / s;
            grad_out[[i, j]] = 2.0 * lambda * resid * g / n as f64;
        }
    }
    let loss = dsm_residual_loss(scores.view(), noise, &stds, weighting);
    if !loss.is_finite() {
        return Err(Error::numerical("non-finite DSM loss"));
    }
    let (grads, _) = model.net.backward(&tape, grad_out.view())?;
    Ok((loss, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreTrainConfig {
    pub width: usize,
    pub blocks: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Anneal the learning rate to zero along a half cosine.
    pub cosine_decay: bool,
    pub ema_decay: f64,
    pub weighting: DsmWeighting,
    pub output: OutputKind,
    /// Add the score of a Gaussian fitted to the training actions.
    pub gaussian_skip: bool,
    pub sde: SdeConfig,
}

impl Default for ScoreTrainConfig {
    fn default() -> Self {
        ScoreTrainConfig {
            width: 64,
            blocks: 3,
            steps: 20_000,
            batch_size: 256,
            lr: 1e-3,
            cosine_decay: false,
            ema_decay: 0.999,
            weighting: DsmWeighting::VarianceScaled,
            output: OutputKind::Noise,
            gaussian_skip: false,
            sde: SdeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Loss of every optimisation step.
    pub losses: Vec<f64>,
}

impl TrainReport {
    fn window_mean(&self, from: usize, to: usize) -> f64 {
        let w = &self.losses[from..to];
        w.iter().sum::<f64>() / w.len() as f64
    }

    /// Mean loss over the first and last 10% of steps.
    pub fn first_last_window(&self) -> (f64, f64) {
        let n = self.losses.len();
        let w = (n / 10).max(1);
        (self.window_mean(0, w), self.window_mean(n - w, n))
    }
}

/// Fit a score model to `(state, action)` rows with denoising score matching.
///
/// Actions are expected in the normalized `[-1, 1]` box for dataset-driven
/// runs; any finite actions are accepted. The returned model carries the
/// EMA weights rounded to checkpoint precision.
pub fn train_score_model(
    states: ArrayView2<f64>,
    actions: ArrayView2<f64>,
    cfg: &ScoreTrainConfig,
    seed: u64,
) -> Result<(ScoreModel, TrainReport)> {
    let n = actions.nrows();
    if n == 0 {
        return Err(Error::contract("cannot train a score model on an empty dataset"));
    }
    if states.nrows() != n {
        return Err(Error::contract("states and actions differ in row count"));
    }
    if cfg.steps == 0 || cfg.batch_size == 0 {
        return Err(Error::contract("steps and batch size must be positive"));
    }
    if actions.iter().chain(states.iter()).any(|v| !v.is_finite()) {
        return Err(Error::contract("training data must be finite"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = ScoreModel::new(states.ncols(), actions.ncols(), cfg.width, cfg.blocks, cfg.sde, &mut rng)?;
    model.output = cfg.output;
    if cfg.gaussian_skip {
        let var = actions.var_axis(ndarray::Axis(0), 0.0);
        model.prior_var = Some(var.iter().map(|v| v.max(1e-4)).collect());
    }
    let mut adam = AdamState::new(&model.net);
    let mut ema = EmaParams::new(&model.net, cfg.ema_decay)?;
    let (sd, ad, b) = (states.ncols(), actions.ncols(), cfg.batch_size);
    let mut bs = Array2::zeros((b, sd));
    let mut ba = Array2::zeros((b, ad));
    let mut noise = Array2::zeros((b, ad));
    let mut ts = vec![0.0; b];
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        for i in 0..b {
            let idx = rng.random_range(0..n);
            bs.row_mut(i).assign(&states.row(idx));
            ba.row_mut(i).assign(&actions.row(idx));
            ts[i] = rng.random_range(cfg.sde.t_min..cfg.sde.t_max);
            for j in 0..ad {
                noise[[i, j]] = rng.sample(StandardNormal);
            }
        }
        let (loss, grads) = dsm_loss(&model, bs.view(), ba.view(), &ts, noise.view(), cfg.weighting)
            .map_err(|e| Error::numerical(format!("score training step {step}: {e}")))?;
        let lr = if cfg.cosine_decay {
            0.5 * cfg.lr * (1.0 + (PI * step as f64 / cfg.steps as f64).cos())
        } else {
            cfg.lr
        };
        adam.step(&mut model.net, &grads, lr)
            .map_err(|e| Error::numerical(format!("score training step {step}: {e}")))?;
        ema.update(&model.net)?;
        losses.push(loss);
    }
    model.net = ema.into_shadow();
    model.net.round_to_f32();
    Ok((model, TrainReport { losses }))
}

/// Log-density of the standard normal prior at `x`.
pub(crate) fn std_normal_logpdf(x: &[f64]) -> f64 {
    let sq: f64 = x.iter().map(|v| v * v).sum();
    -0.5 * sq - 0.5 * x.len() as f64 * (2.0 * PI).ln()
}
