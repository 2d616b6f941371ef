use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Policy;
use crate::arq::QEnsemble;
use crate::data::{DatasetHeader, OfflineDataset};
use crate::error::{Error, Result};
use crate::nn::{Activation, AdamState, Arch, Checkpoint, Dense, MlpParams};
use crate::sampling::{SupportCache, Which};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AwrConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// Gaussian head with a learned state-independent log-std; otherwise a
    /// deterministic head trained by weighted squared error.
    pub gaussian: bool,
    pub init_log_std: f64,
    pub weight_clip: f64,
}

impl Default for AwrConfig {
    fn default() -> Self {
        AwrConfig {
            hidden: vec![64, 64],
            lr: 1e-3,
            steps: 5_000,
            batch_size: 256,
            gaussian: true,
            init_log_std: -1.0,
            weight_clip: 100.0,
        }
    }
}

/// Explicit policy: `tanh(net(s))` is the mean in the normalized box.
#[derive(Debug, Clone, PartialEq)]
pub struct AwrPolicy {
    pub net: MlpParams,
    /// One bias-only layer fed a constant 0: its output is the log-std.
    pub log_std: Option<MlpParams>,
    pub header: DatasetHeader,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AwrMeta {
    kind: String,
    header: DatasetHeader,
    #[serde(default)]
    extra: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AwrReport {
    pub losses: Vec<f64>,
    /// Per-row weights `min(exp(α A), clip)`.
    pub weights: Vec<f64>,
}

impl AwrPolicy {
    /// Normalized means for each row of `states`.
    pub fn mean(&self, states: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.net.predict(states)?.mapv(f64::tanh))
    }

    pub fn log_std(&self) -> Option<Vec<f64>> {
        self.log_std.as_ref().map(|p| p.layers()[0].bias.to_vec())
    }

    pub fn to_checkpoint(&self, extra: serde_json::Value) -> Result<Checkpoint> {
        let meta = AwrMeta {
            kind: "awr".into(),
            header: self.header.clone(),
            extra,
        };
        let mut ck = Checkpoint::new(serde_json::to_value(meta)?).with("policy", &self.net);
        if let Some(ls) = &self.log_std {
            ck = ck.with("log_std", ls);
        }
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, serde_json::Value)> {
        let meta: AwrMeta = serde_json::from_value(ck.meta.clone())?;
        if meta.kind != "awr" {
            return Err(Error::contract(format!("checkpoint kind {:?} is not an AWR policy", meta.kind)));
        }
        let log_std = ck.networks.iter().find(|(n, _)| n == "log_std").map(|(_, p)| p.clone());
        let pol = AwrPolicy {
            net: ck.get("policy")?.clone(),
            log_std,
            header: meta.header,
        };
        Ok((pol, meta.extra))
    }
}

impl Policy for AwrPolicy {
    fn name(&self) -> String {
        "awr".into()
    }

    /// The mean action; evaluation is deterministic.
    fn act(&self, state: &[f64], _rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let s = ArrayView2::from_shape((1, state.len()), state).map_err(|e| Error::contract(e.to_string()))?;
        let m = self.mean(s)?;
        Ok(self.header.denormalize_action(m.row(0).as_slice().expect("row")))
    }
}

/// Advantage-weighted regression onto the dataset actions.
///
/// Each row's advantage uses the cached candidates for its state as the
/// baseline. Weights are `exp(α A)` clipped at `cfg.weight_clip`.
pub fn awr_train(
    ds: &OfflineDataset,
    q: &QEnsemble,
    cache: &SupportCache,
    alpha: f64,
    cfg: &AwrConfig,
    seed: u64,
) -> Result<(AwrPolicy, AwrReport)> {
    if cache.rows() != ds.len() {
        return Err(Error::contract("cache and dataset differ in row count"));
    }
    if !(alpha >= 0.0) || cfg.steps == 0 || cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::contract("invalid AWR settings"));
    }
    let (n, sd, ad) = (ds.len(), ds.state_dim(), ds.action_dim());
    let states = ds.states();
    let actions = ds.normalized_actions();
    let weights = awr_weights(ds, q, cache, alpha, cfg.weight_clip)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dims = vec![sd];
    dims.extend_from_slice(&cfg.hidden);
    dims.push(ad);
    let mut net = MlpParams::plain(&dims, Activation::Relu, Activation::Identity, &mut rng)?;
    let mut log_std = if cfg.gaussian {
        Some(MlpParams::from_layers(
            Arch::Plain,
            vec![Dense {
                weight: Array2::zeros((ad, 1)),
                bias: Array1::from_elem(ad, cfg.init_log_std),
                activation: Activation::Identity,
            }],
        )?)
    } else {
        None
    };
    let mut adam = AdamState::new(&net);
    let mut adam_std = log_std.as_ref().map(AdamState::new);
    let b = cfg.batch_size;
    let zero_in = Array2::zeros((1, 1));
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let idx: Vec<usize> = (0..b).map(|_| rng.random_range(0..n)).collect();
        let bs = states.select(Axis(0), &idx);
        let ba = actions.select(Axis(0), &idx);
        let (z, tape) = net.forward_batch(bs.view())?;
        let mu = z.mapv(f64::tanh);
        let ls = log_std.as_ref().map(|p| p.forward_batch(zero_in.view())).transpose()?;
        let mut g_z = Array2::zeros((b, ad));
        let mut g_ls = Array2::zeros((1, ad));
        let mut loss = 0.0;
        for i in 0..b {
            let w = weights[idx[i]] / b as f64;
            for j in 0..ad {
                let d = ba[[i, j]] - mu[[i, j]];
                let dmu = if let Some((lv, _)) = &ls {
                    let inv_var = (-2.0 * lv[[0, j]]).exp();
                    loss += w * (0.5 * d * d * inv_var + lv[[0, j]]);
                    g_ls[[0, j]] += w * (1.0 - d * d * inv_var);
                    -w * d * inv_var
                } else {
                    loss += w * d * d;
                    -2.0 * w * d
                };
                g_z[[i, j]] = dmu * (1.0 - mu[[i, j]] * mu[[i, j]]);
            }
        }
        if !loss.is_finite() {
            return Err(Error::numerical(format!("non-finite AWR loss at step {step}")));
        }
        let (grads, _) = net.backward(&tape, g_z.view())?;
        adam.step(&mut net, &grads, cfg.lr)?;
        if let (Some(p), Some(opt), Some((_, tape))) = (log_std.as_mut(), adam_std.as_mut(), ls) {
            let (g, _) = p.backward(&tape, g_ls.view())?;
            opt.step(p, &g, cfg.lr)?;
        }
        losses.push(loss);
    }
    net.round_to_f32();
    if let Some(p) = log_std.as_mut() {
        p.round_to_f32();
    }
    let pol = AwrPolicy {
        net,
        log_std,
        header: ds.header.clone(),
    };
    Ok((pol, AwrReport { losses, weights }))
}

fn awr_weights(ds: &OfflineDataset, q: &QEnsemble, cache: &SupportCache, alpha: f64, clip: f64) -> Result<Vec<f64>> {
    let n = ds.len();
    let states = ds.states();
    let own = q.q_values(states.view(), ds.normalized_actions().view())?;
    let mut s_rows: Vec<&[f64]> = Vec::new();
    let mut a_rows: Vec<&[f64]> = Vec::new();
    let mut spans = Vec::with_capacity(n);
    for row in 0..n {
        let start = a_rows.len();
        for a in cache.actions(row, Which::S) {
            s_rows.push(&ds.transitions[row].s);
            a_rows.push(a);
        }
        spans.push((start, a_rows.len()));
    }
    let cs = crate::data::rows_to_array(s_rows.into_iter(), ds.state_dim());
    let ca = crate::data::rows_to_array(a_rows.into_iter(), ds.action_dim());
    let cq = q.q_values(cs.view(), ca.view())?;
    (0..n)
        .map(|row| {
            let (lo, hi) = spans[row];
            let baseline = cq[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
            let w = (alpha * (own[row] - baseline)).exp().min(clip);
            if w.is_finite() {
                Ok(w)
            } else {
                Err(Error::numerical(format!("non-finite AWR weight at row {row}")))
            }
        })
        .collect()
}
