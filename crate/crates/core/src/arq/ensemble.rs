use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Checkpoint, EmaParams, MlpParams};

/// Online Q networks over `state ⊕ action` and their slowly moving targets.
#[derive(Debug, Clone)]
pub struct QEnsemble {
    online: Vec<MlpParams>,
    target: Vec<EmaParams>,
    pub polyak: f64,
    pub state_dim: usize,
    pub action_dim: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QMeta {
    kind: String,
    state_dim: usize,
    action_dim: usize,
    polyak: f64,
    nets: usize,
    #[serde(default)]
    extra: serde_json::Value,
}

/// Row-wise concatenation `[states | actions]`.
pub(crate) fn join_inputs(states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array2<f64>> {
    if states.nrows() != actions.nrows() {
        return Err(Error::contract("states and actions differ in row count"));
    }
    let (sd, ad) = (states.ncols(), actions.ncols());
    let mut x = Array2::zeros((states.nrows(), sd + ad));
    x.slice_mut(ndarray::s![.., ..sd]).assign(&states);
    x.slice_mut(ndarray::s![.., sd..]).assign(&actions);
    Ok(x)
}

impl QEnsemble {
    /// `nets` independent ReLU MLPs with the given hidden widths; targets
    /// start as copies.
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        nets: usize,
        polyak: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if nets == 0 {
            return Err(Error::contract("a Q ensemble needs at least one network"));
        }
        let mut dims = vec![state_dim + action_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        let online = (0..nets)
            .map(|_| MlpParams::plain(&dims, Activation::Relu, Activation::Identity, rng))
            .collect::<Result<Vec<_>>>()?;
        Self::from_nets(online.clone(), online, polyak, state_dim, action_dim)
    }

    /// Assemble from explicit online and target networks.
    pub fn from_nets(
        online: Vec<MlpParams>,
        target: Vec<MlpParams>,
        polyak: f64,
        state_dim: usize,
        action_dim: usize,
    ) -> Result<Self> {
        if online.is_empty() || online.len() != target.len() {
            return Err(Error::contract("online and target network counts differ"));
        }
        for (o, t) in online.iter().zip(&target) {
            if !o.same_shape(t) || o.in_dim() != state_dim + action_dim || o.out_dim() != 1 {
                return Err(Error::contract("Q network shapes do not match the ensemble dims"));
            }
        }
        let target = target
            .iter()
            .map(|t| EmaParams::new(t, polyak))
            .collect::<Result<Vec<_>>>()?;
        Ok(QEnsemble {
            online,
            target,
            polyak,
            state_dim,
            action_dim,
        })
    }

    pub fn nets(&self) -> usize {
        self.online.len()
    }

    pub fn online(&self, i: usize) -> &MlpParams {
        &self.online[i]
    }

    pub fn online_mut(&mut self, i: usize) -> &mut MlpParams {
        &mut self.online[i]
    }

    pub fn target(&self, i: usize) -> &MlpParams {
        self.target[i].shadow()
    }

    fn min_over(nets: &[&MlpParams], x: ArrayView2<f64>) -> Result<Vec<f64>> {
        let mut out = vec![f64::INFINITY; x.nrows()];
        for net in nets {
            let q = net.predict(x)?;
            for (o, v) in out.iter_mut().zip(q.column(0)) {
                *o = o.min(*v);
            }
        }
        Ok(out)
    }

    /// Minimum over the online networks, one value per row.
    pub fn q_values(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Vec<f64>> {
        let x = join_inputs(states, actions)?;
        Self::min_over(&self.online.iter().collect::<Vec<_>>(), x.view())
    }

    /// Minimum over the target networks, one value per row.
    pub fn target_values(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Vec<f64>> {
        let x = join_inputs(states, actions)?;
        Self::min_over(&self.target.iter().map(|t| t.shadow()).collect::<Vec<_>>(), x.view())
    }

    /// `target ← polyak·target + (1 − polyak)·online` for every pair.
    pub fn polyak_update(&mut self) -> Result<()> {
        for (t, o) in self.target.iter_mut().zip(&self.online) {
            t.update(o)?;
        }
        Ok(())
    }

    /// Largest absolute parameter difference between online and target nets.
    pub fn target_gap(&self) -> f64 {
        self.online
            .iter()
            .zip(&self.target)
            .flat_map(|(o, t)| o.iter_flat().zip(t.shadow().iter_flat()).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max)
    }

    /// Round all parameters to checkpoint precision.
    pub fn round_to_f32(&mut self) -> Result<()> {
        let mut target: Vec<MlpParams> = self.target.iter().map(|t| t.shadow().clone()).collect();
        for p in self.online.iter_mut().chain(target.iter_mut()) {
            p.round_to_f32();
        }
        *self = Self::from_nets(self.online.clone(), target, self.polyak, self.state_dim, self.action_dim)?;
        Ok(())
    }

    pub fn to_checkpoint(&self, extra: serde_json::Value) -> Result<Checkpoint> {
        let meta = QMeta {
            kind: "q".into(),
            state_dim: self.state_dim,
            action_dim: self.action_dim,
            polyak: self.polyak,
            nets: self.nets(),
            extra,
        };
        let mut ck = Checkpoint::new(serde_json::to_value(meta)?);
        for (i, o) in self.online.iter().enumerate() {
            ck = ck.with(&format!("q{i}"), o);
        }
        for (i, t) in self.target.iter().enumerate() {
            ck = ck.with(&format!("target{i}"), t.shadow());
        }
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, serde_json::Value)> {
        let meta: QMeta = serde_json::from_value(ck.meta.clone())?;
        if meta.kind != "q" {
            return Err(Error::contract(format!("checkpoint kind {:?} is not a Q ensemble", meta.kind)));
        }
        let online = (0..meta.nets)
            .map(|i| ck.get(&format!("q{i}")).cloned())
            .collect::<Result<Vec<_>>>()?;
        let target = (0..meta.nets)
            .map(|i| ck.get(&format!("target{i}")).cloned())
            .collect::<Result<Vec<_>>>()?;
        let q = Self::from_nets(online, target, meta.polyak, meta.state_dim, meta.action_dim)?;
        Ok((q, meta.extra))
    }
}
