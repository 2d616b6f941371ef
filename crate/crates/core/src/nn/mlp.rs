use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Swish,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Swish => z * sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative with respect to the pre-activation value.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Swish => {
                let s = sigmoid(z);
                s * (1.0 + z * (1.0 - s))
            }
            Activation::Identity => 1.0,
        }
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Network topology.
///
/// `Plain` applies every layer in sequence, each followed by its own
/// activation. `Residual` is a stem layer, `blocks` pre-activation residual
/// blocks of two layers each, and a linear head fed by `activation(h)`:
///
/// ```text
/// h0 = stem(x)
/// h_{k+1} = h_k + W2 act(W1 act(h_k) + b1) + b2
/// y = head(act(h_K))
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Arch {
    Plain,
    Residual { blocks: usize, activation: Activation },
}

/// One affine layer followed by an activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// Row-major `(out, in)`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Dense {
    fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = Array2::from_shape_fn((out_dim, in_dim), |_| rng.random_range(-bound..bound));
        let bias = Array1::from_shape_fn(out_dim, |_| rng.random_range(-bound..bound));
        Dense {
            weight,
            bias,
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    fn affine(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weight.t());
        z += &self.bias;
        z
    }
}

/// Parameters of a fixed-family MLP.
#[derive(Debug, Clone)]
pub struct MlpParams {
    arch: Arch,
    layers: Vec<Dense>,
    version: u64,
}

impl PartialEq for MlpParams {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch && self.layers == other.layers
    }
}

/// Cached activations from a forward pass, consumed by [`MlpParams::backward`].
#[derive(Debug, Clone)]
pub struct Tape {
    version: u64,
    batch: usize,
    layer_in: Vec<Array2<f64>>,
    layer_z: Vec<Array2<f64>>,
    // residual stream entering each block, plus the final stream before the head
    stream: Vec<Array2<f64>>,
}

impl Tape {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// Gradients shaped like an [`MlpParams`]: one `(weight, bias)` pair per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl ParamGrads {
    pub fn zeros_like(params: &MlpParams) -> Self {
        ParamGrads {
            layers: params
                .layers
                .iter()
                .map(|l| (Array2::zeros(l.weight.raw_dim()), Array1::zeros(l.bias.len())))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|(w, b)| w.iter().all(|v| v.is_finite()) && b.iter().all(|v| v.is_finite()))
    }

    pub fn scale(&mut self, factor: f64) {
        for (w, b) in &mut self.layers {
            *w *= factor;
            *b *= factor;
        }
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            *w += ow;
            *b += ob;
        }
    }

    /// Iterate every scalar in manifest order (per layer: weight row-major, then bias).
    pub fn iter_flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().copied().chain(b.iter().copied()))
    }
}

impl MlpParams {
    /// Plain MLP through `dims`; hidden layers use `hidden`, the last layer `output`.
    pub fn plain<R: Rng + ?Sized>(dims: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::contract(format!("invalid layer dims {dims:?}")));
        }
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                Dense::init(dims[i], dims[i + 1], act, rng)
            })
            .collect();
        Ok(MlpParams {
            arch: Arch::Plain,
            layers,
            version: fresh_version(),
        })
    }

    /// Residual MLP: stem, `blocks` pre-activation blocks of `width`, linear head.
    pub fn residual<R: Rng + ?Sized>(
        in_dim: usize,
        width: usize,
        blocks: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if in_dim == 0 || width == 0 || out_dim == 0 {
            return Err(Error::contract("residual net dims must be positive"));
        }
        let mut layers = Vec::with_capacity(2 * blocks + 2);
        layers.push(Dense::init(in_dim, width, Activation::Identity, rng));
        for _ in 0..blocks {
            layers.push(Dense::init(width, width, activation, rng));
            layers.push(Dense::init(width, width, Activation::Identity, rng));
        }
        layers.push(Dense::init(width, out_dim, Activation::Identity, rng));
        Ok(MlpParams {
            arch: Arch::Residual { blocks, activation },
            layers,
            version: fresh_version(),
        })
    }

    /// Assemble from explicit layers, validating the topology.
    pub fn from_layers(arch: Arch, layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::contract("network needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::contract(format!(
                    "layer dims do not chain: {} -> {}",
                    pair[0].out_dim(),
                    pair[1].in_dim()
                )));
            }
        }
        for l in &layers {
            if l.bias.len() != l.out_dim() {
                return Err(Error::contract("bias length differs from layer out dim"));
            }
        }
        if let Arch::Residual { blocks, .. } = arch {
            if layers.len() != 2 * blocks + 2 {
                return Err(Error::contract(format!(
                    "residual net with {blocks} blocks needs {} layers, got {}",
                    2 * blocks + 2,
                    layers.len()
                )));
            }
            let width = layers[0].out_dim();
            if layers[1..layers.len() - 1]
                .iter()
                .any(|l| l.in_dim() != width || l.out_dim() != width)
            {
                return Err(Error::contract("residual blocks must be square"));
            }
        }
        let params = MlpParams {
            arch,
            layers,
            version: fresh_version(),
        };
        if !params.is_finite() {
            return Err(Error::contract("non-finite parameter"));
        }
        Ok(params)
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Every parameter in checkpoint order.
    pub fn iter_flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().copied().chain(l.bias.iter().copied()))
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite()))
    }

    /// Mutable access to the layers. Invalidates outstanding tapes.
    pub fn layers_mut(&mut self) -> &mut [Dense] {
        self.version = fresh_version();
        &mut self.layers
    }

    /// Round every parameter to the nearest `f32`, the checkpoint precision.
    pub fn round_to_f32(&mut self) {
        for l in self.layers_mut() {
            l.weight.mapv_inplace(|v| v as f32 as f64);
            l.bias.mapv_inplace(|v| v as f32 as f64);
        }
    }

    pub fn same_shape(&self, other: &MlpParams) -> bool {
        self.arch == other.arch
            && self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weight.dim() == b.weight.dim() && a.activation == b.activation)
    }

    fn check_input(&self, inputs: &ArrayView2<f64>) -> Result<()> {
        if inputs.ncols() != self.in_dim() {
            return Err(Error::contract(format!(
                "input has {} features, network expects {}",
                inputs.ncols(),
                self.in_dim()
            )));
        }
        Ok(())
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Tape)> {
        let view = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|e| Error::contract(e.to_string()))?;
        let (out, tape) = self.forward_batch(view)?;
        Ok((out.into_raw_vec_and_offset().0, tape))
    }

    /// Batched forward pass over the rows of `inputs`, recording a tape.
    pub fn forward_batch(&self, inputs: ArrayView2<f64>) -> Result<(Array2<f64>, Tape)> {
        self.check_input(&inputs)?;
        let n = self.layers.len();
        let mut layer_in = Vec::with_capacity(n);
        let mut layer_z = Vec::with_capacity(n);
        let mut stream = Vec::new();
        let out = match self.arch {
            Arch::Plain => {
                let mut x = inputs.to_owned();
                for layer in &self.layers {
                    let z = layer.affine(&x.view());
                    let act = layer.activation;
                    let y = z.mapv(|v| act.apply(v));
                    layer_in.push(x);
                    layer_z.push(z);
                    x = y;
                }
                x
            }
            Arch::Residual { blocks, activation } => {
                let stem = &self.layers[0];
                let mut h = stem.affine(&inputs);
                layer_in.push(inputs.to_owned());
                layer_z.push(h.clone());
                for k in 0..blocks {
                    let l1 = &self.layers[1 + 2 * k];
                    let l2 = &self.layers[2 + 2 * k];
                    let u = h.mapv(|v| activation.apply(v));
                    let z1 = l1.affine(&u.view());
                    let v = z1.mapv(|x| l1.activation.apply(x));
                    let z2 = l2.affine(&v.view());
                    let mut next = h.clone();
                    next += &z2.mapv(|x| l2.activation.apply(x));
                    stream.push(h);
                    layer_in.push(u);
                    layer_z.push(z1);
                    layer_in.push(v);
                    layer_z.push(z2);
                    h = next;
                }
                let head = &self.layers[n - 1];
                let u = h.mapv(|v| activation.apply(v));
                let z = head.affine(&u.view());
                let y = z.mapv(|x| head.activation.apply(x));
                stream.push(h);
                layer_in.push(u);
                layer_z.push(z);
                y
            }
        };
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("non-finite network output"));
        }
        Ok((
            out,
            Tape {
                version: self.version,
                batch: inputs.nrows(),
                layer_in,
                layer_z,
                stream,
            },
        ))
    }

    /// Batched inference without a tape.
    pub fn predict(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&inputs)?;
        let out = match self.arch {
            Arch::Plain => {
                let mut x = inputs.to_owned();
                for layer in &self.layers {
                    let act = layer.activation;
                    x = layer.affine(&x.view());
                    if act != Activation::Identity {
                        x.mapv_inplace(|v| act.apply(v));
                    }
                }
                x
            }
            Arch::Residual { blocks, activation } => {
                let n = self.layers.len();
                let mut h = self.layers[0].affine(&inputs);
                for k in 0..blocks {
                    let l1 = &self.layers[1 + 2 * k];
                    let l2 = &self.layers[2 + 2 * k];
                    let u = h.mapv(|v| activation.apply(v));
                    let mut v = l1.affine(&u.view());
                    v.mapv_inplace(|x| l1.activation.apply(x));
                    let mut z2 = l2.affine(&v.view());
                    z2.mapv_inplace(|x| l2.activation.apply(x));
                    h += &z2;
                }
                h.mapv_inplace(|v| activation.apply(v));
                let head = &self.layers[n - 1];
                let mut y = head.affine(&h.view());
                y.mapv_inplace(|x| head.activation.apply(x));
                y
            }
        };
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("non-finite network output"));
        }
        Ok(out)
    }

    /// Reverse-mode pass. Gradients are summed over the batch rows.
    pub fn backward(&self, tape: &Tape, output_grad: ArrayView2<f64>) -> Result<(ParamGrads, Array2<f64>)> {
        if tape.version != self.version || tape.layer_z.len() != self.layers.len() {
            return Err(Error::contract("tape does not belong to these parameters (stale or foreign)"));
        }
        if output_grad.dim() != (tape.batch, self.out_dim()) {
            return Err(Error::contract(format!(
                "output grad shape {:?} does not match ({}, {})",
                output_grad.dim(),
                tape.batch,
                self.out_dim()
            )));
        }
        let n = self.layers.len();
        let mut grads: Vec<Option<(Array2<f64>, Array1<f64>)>> = vec![None; n];
        // gradient through one affine+activation layer; returns grad w.r.t. layer input
        let through = |idx: usize, g: &Array2<f64>, grads: &mut Vec<Option<(Array2<f64>, Array1<f64>)>>| {
            let layer = &self.layers[idx];
            let z = &tape.layer_z[idx];
            let act = layer.activation;
            let dz = if act == Activation::Identity {
                g.clone()
            } else {
                let mut dz = g.clone();
                dz.zip_mut_with(z, |d, &zv| *d *= act.derivative(zv));
                dz
            };
            let dw = dz.t().dot(&tape.layer_in[idx]).as_standard_layout().into_owned();
            let db = dz.sum_axis(Axis(0));
            grads[idx] = Some((dw, db));
            dz.dot(&layer.weight)
        };
        let input_grad = match self.arch {
            Arch::Plain => {
                let mut g = output_grad.to_owned();
                for idx in (0..n).rev() {
                    g = through(idx, &g, &mut grads);
                }
                g
            }
            Arch::Residual { blocks, activation } => {
                let g_u = through(n - 1, &output_grad.to_owned(), &mut grads);
                let mut g_h = g_u;
                g_h.zip_mut_with(&tape.stream[blocks], |d, &h| *d *= activation.derivative(h));
                for k in (0..blocks).rev() {
                    let g_v = through(2 + 2 * k, &g_h, &mut grads);
                    let mut g_u = through(1 + 2 * k, &g_v, &mut grads);
                    g_u.zip_mut_with(&tape.stream[k], |d, &h| *d *= activation.derivative(h));
                    g_h += &g_u;
                }
                through(0, &g_h, &mut grads)
            }
        };
        let layers = grads
            .into_iter()
            .map(|g| g.expect("every layer visited"))
            .collect();
        let grads = ParamGrads { layers };
        if !grads.is_finite() {
            return Err(Error::numerical("non-finite gradient"));
        }
        Ok((grads, input_grad))
    }

    /// `self += scale * delta`, layer by layer.
    pub fn apply_delta(&mut self, delta: &ParamGrads, scale: f64) {
        for (l, (dw, db)) in self.layers_mut().iter_mut().zip(&delta.layers) {
            l.weight.scaled_add(scale, dw);
            l.bias.scaled_add(scale, db);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(w: Array2<f64>, b: Array1<f64>, act: Activation) -> MlpParams {
        MlpParams::from_layers(
            Arch::Plain,
            vec![Dense {
                weight: w,
                bias: b,
                activation: act,
            }],
        )
        .unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let p = single(Array2::eye(2), Array1::zeros(2), Activation::Identity);
        let (y, _) = p.forward(&[1.0, 2.0]).unwrap();
        assert_eq!(y, vec![1.0, 2.0]);
    }

    #[test]
    fn relu_layer_clamps_negatives() {
        let p = single(Array2::eye(2), Array1::zeros(2), Activation::Relu);
        let (y, _) = p.forward(&[-1.0, 2.0]).unwrap();
        assert_eq!(y, vec![0.0, 2.0]);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let p = single(Array2::eye(2), Array1::zeros(2), Activation::Relu);
        assert!(matches!(p.forward(&[1.0, 2.0, 3.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn scalar_chain_rule() {
        let p = single(array![[2.0]], array![0.0], Activation::Relu);
        let (_, tape) = p.forward(&[3.0]).unwrap();
        let (g, dx) = p.backward(&tape, array![[1.0]].view()).unwrap();
        assert_eq!(g.layers[0].0[[0, 0]], 3.0);
        assert_eq!(g.layers[0].1[0], 1.0);
        assert_eq!(dx[[0, 0]], 2.0);
    }

    #[test]
    fn zero_output_grad_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = MlpParams::residual(3, 8, 2, 2, Activation::Swish, &mut rng).unwrap();
        let (_, tape) = p.forward(&[0.1, -0.4, 0.7]).unwrap();
        let (g, dx) = p.backward(&tape, Array2::zeros((1, 2)).view()).unwrap();
        assert!(g.iter_flat().all(|v| v == 0.0));
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_tape_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = MlpParams::plain(&[2, 4, 1], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let (_, tape) = p.forward(&[0.5, 0.5]).unwrap();
        let zero = ParamGrads::zeros_like(&p);
        p.apply_delta(&zero, 1.0);
        assert!(matches!(
            p.backward(&tape, array![[1.0]].view()),
            Err(Error::Contract(_))
        ));
        let other = MlpParams::plain(&[2, 4, 1], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let (_, tape) = other.forward(&[0.5, 0.5]).unwrap();
        assert!(p.backward(&tape, array![[1.0]].view()).is_err());
    }

    #[test]
    fn predict_matches_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = MlpParams::residual(4, 16, 3, 2, Activation::Swish, &mut rng).unwrap();
        let x = Array2::from_shape_fn((7, 4), |(i, j)| (i as f64 - 3.0) * 0.3 + j as f64 * 0.1);
        let (a, _) = p.forward_batch(x.view()).unwrap();
        let b = p.predict(x.view()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn residual_layer_count_is_validated() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = MlpParams::residual(2, 4, 2, 1, Activation::Swish, &mut rng).unwrap();
        let mut layers = p.layers().to_vec();
        layers.pop();
        assert!(MlpParams::from_layers(p.arch(), layers).is_err());
    }
}
