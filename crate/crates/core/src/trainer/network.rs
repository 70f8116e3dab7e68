//! Feed-forward embedding network with a cosine classification head.
//!
//! `input -> [dense + activation]* -> dense -> L2 normalize -> W·e`, where the
//! rows of `W` are unit vectors so that `W·e` are cosines.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{objective_grad_cosines, AamConfig, LossBreakdown, Objective};

/// Pre-normalization embeddings shorter than this get nudged off the origin.
pub const ZERO_EMBEDDING_GUARD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation value.
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
    pub num_classes: usize,
    pub activation: Activation,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            input_dim: 20,
            hidden_dims: vec![64],
            embed_dim: 16,
            num_classes: 50,
            activation: Activation::Relu,
        }
    }
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.embed_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::InvalidConfig(
                "network dimensions must all be at least 1".into(),
            ));
        }
        if self.num_classes < 3 {
            return Err(Error::InvalidConfig(format!(
                "num_classes must be at least 3, got {}",
                self.num_classes
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every dense layer, embedding layer last.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.embed_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `fan_out × fan_in`
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

/// Every trainable tensor of the network. Also used for gradients and
/// momentum buffers, which share the layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensors {
    pub layers: Vec<DenseLayer>,
    /// `num_classes × embed_dim`
    pub class_weights: DMatrix<f64>,
}

impl Tensors {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        Self {
            layers: spec
                .layer_shapes()
                .into_iter()
                .map(|(fan_in, fan_out)| DenseLayer {
                    weights: DMatrix::zeros(fan_out, fan_in),
                    bias: DVector::zeros(fan_out),
                })
                .collect(),
            class_weights: DMatrix::zeros(spec.num_classes, spec.embed_dim),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer {
                    weights: DMatrix::zeros(l.weights.nrows(), l.weights.ncols()),
                    bias: DVector::zeros(l.bias.len()),
                })
                .collect(),
            class_weights: DMatrix::zeros(self.class_weights.nrows(), self.class_weights.ncols()),
        }
    }

    fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(2 * self.layers.len() + 1);
        for l in &self.layers {
            out.push(l.weights.as_slice());
            out.push(l.bias.as_slice());
        }
        out.push(self.class_weights.as_slice());
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(2 * self.layers.len() + 1);
        for l in &mut self.layers {
            out.push(l.weights.as_mut_slice());
            out.push(l.bias.as_mut_slice());
        }
        out.push(self.class_weights.as_mut_slice());
        out
    }

    pub fn num_values(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    /// Flat view of value `index` in a fixed (storage) order.
    pub fn value_mut(&mut self, mut index: usize) -> &mut f64 {
        for s in self.slices_mut() {
            if index < s.len() {
                return &mut s[index];
            }
            index -= s.len();
        }
        panic!("parameter index out of range");
    }

    pub fn value(&self, mut index: usize) -> f64 {
        for s in self.slices() {
            if index < s.len() {
                return s[index];
            }
            index -= s.len();
        }
        panic!("parameter index out of range");
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: f64, other: &Tensors) {
        for (dst, src) in self.slices_mut().into_iter().zip(other.slices()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += a * s;
            }
        }
    }

    pub fn scale(&mut self, a: f64) {
        for s in self.slices_mut() {
            for v in s {
                *v *= a;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// Squared Euclidean norm of the dense layers only (class weights excluded).
    pub fn layer_norm_squared(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weights.norm_squared() + l.bias.norm_squared())
            .sum()
    }

    pub fn normalize_class_rows(&mut self) {
        for mut row in self.class_weights.row_iter_mut() {
            let n = row.norm();
            if n > 0.0 {
                row /= n;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub spec: NetworkSpec,
    pub tensors: Tensors,
}

/// Scaled-uniform initialization, bound `sqrt(6 / (fan_in + fan_out))`, zero
/// biases and unit-norm class rows. Values are drawn layer by layer in
/// row-major order, class weights last.
pub fn init_params(spec: &NetworkSpec, seed: u64) -> Result<NetworkParams> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = Tensors::zeros(spec);
    for layer in &mut tensors.layers {
        fill_uniform(&mut layer.weights, &mut rng);
    }
    fill_uniform(&mut tensors.class_weights, &mut rng);
    tensors.normalize_class_rows();
    Ok(NetworkParams {
        spec: spec.clone(),
        tensors,
    })
}

fn fill_uniform(m: &mut DMatrix<f64>, rng: &mut ChaCha8Rng) {
    let (rows, cols) = m.shape();
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    for r in 0..rows {
        for c in 0..cols {
            m[(r, c)] = rng.random_range(-bound..bound);
        }
    }
}

/// Intermediate values of one forward pass, kept for backprop.
struct Trace {
    /// Input to each dense layer.
    inputs: Vec<DVector<f64>>,
    /// Pre-activation output of each hidden layer.
    pre: Vec<DVector<f64>>,
    embedding: DVector<f64>,
    raw_norm: f64,
}

impl NetworkParams {
    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.spec.input_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    fn trace(&self, x: &[f64]) -> Result<Trace> {
        self.check_input(x)?;
        let n_layers = self.tensors.layers.len();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut pre = Vec::with_capacity(n_layers - 1);
        let mut a = DVector::from_column_slice(x);
        for (i, layer) in self.tensors.layers.iter().enumerate() {
            let z = &layer.weights * &a + &layer.bias;
            inputs.push(a);
            if i + 1 < n_layers {
                a = z.map(|v| self.spec.activation.apply(v));
                pre.push(z);
            } else {
                a = z;
            }
        }
        let mut raw = a;
        if raw.norm() < ZERO_EMBEDDING_GUARD {
            raw[0] += ZERO_EMBEDDING_GUARD;
        }
        let raw_norm = raw.norm();
        Ok(Trace {
            inputs,
            pre,
            embedding: raw / raw_norm,
            raw_norm,
        })
    }

    /// Unit-norm embedding of a single input vector.
    pub fn embed(&self, x: &[f64]) -> Result<DVector<f64>> {
        Ok(self.trace(x)?.embedding)
    }

    /// Cosines between an embedding and every class-weight row.
    pub fn cosines(&self, embedding: &DVector<f64>) -> Result<Vec<f64>> {
        if embedding.len() != self.spec.embed_dim {
            return Err(Error::DimensionMismatch {
                expected: self.spec.embed_dim,
                got: embedding.len(),
            });
        }
        Ok((&self.tensors.class_weights * embedding)
            .iter()
            .map(|c| c.clamp(-1.0, 1.0))
            .collect())
    }

    /// Mean loss and gradient over a batch.
    pub fn loss_and_grad(
        &self,
        inputs: &[&[f64]],
        labels: &[usize],
        objective: &Objective,
        aam: &AamConfig,
    ) -> Result<(LossBreakdown, Tensors)> {
        self.batch_pass(inputs, labels, objective, aam, true)
            .map(|(l, g)| (l, g.expect("gradient requested")))
    }

    /// Mean loss over a batch, no gradient.
    pub fn batch_loss(
        &self,
        inputs: &[&[f64]],
        labels: &[usize],
        objective: &Objective,
        aam: &AamConfig,
    ) -> Result<LossBreakdown> {
        self.batch_pass(inputs, labels, objective, aam, false)
            .map(|(l, _)| l)
    }

    fn batch_pass(
        &self,
        inputs: &[&[f64]],
        labels: &[usize],
        objective: &Objective,
        aam: &AamConfig,
        with_grad: bool,
    ) -> Result<(LossBreakdown, Option<Tensors>)> {
        if inputs.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: inputs.len(),
                got: labels.len(),
            });
        }
        if inputs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let scale = 1.0 / inputs.len() as f64;
        let mut grads = with_grad.then(|| self.tensors.zeros_like());
        let mut total = Vec::with_capacity(inputs.len());
        for (x, &label) in inputs.iter().zip(labels) {
            let trace = self.trace(x)?;
            // Unclamped on purpose: the class rows are unit norm and the
            // embedding is unit norm, so any excess is rounding only.
            let cos = &self.tensors.class_weights * &trace.embedding;
            let (breakdown, dcos) =
                objective_grad_cosines(cos.as_slice(), label, objective, aam)?;
            total.push(breakdown);
            if let Some(g) = grads.as_mut() {
                self.backward(&trace, &dcos, scale, g);
            }
        }
        Ok((LossBreakdown::mean(&total), grads))
    }

    fn backward(&self, trace: &Trace, dcos: &[f64], scale: f64, grads: &mut Tensors) {
        let dcos = DVector::from_column_slice(dcos) * scale;
        grads.class_weights += &dcos * trace.embedding.transpose();
        let de = self.tensors.class_weights.transpose() * &dcos;
        let e = &trace.embedding;
        let mut delta = (&de - e * e.dot(&de)) / trace.raw_norm;

        for i in (0..self.tensors.layers.len()).rev() {
            let layer_grad = &mut grads.layers[i];
            layer_grad.weights += &delta * trace.inputs[i].transpose();
            layer_grad.bias += &delta;
            if i == 0 {
                break;
            }
            let back = self.tensors.layers[i].weights.transpose() * &delta;
            let act = self.spec.activation;
            delta = back.zip_map(&trace.pre[i - 1], |d, z| d * act.derivative(z));
        }
    }
}

/// Row `i` holds the unit embedding of `batch[i]`.
pub fn forward_embed(params: &NetworkParams, batch: &[&[f64]]) -> Result<Vec<DVector<f64>>> {
    batch.iter().map(|x| params.embed(x)).collect()
}

/// Row `i` holds the cosines of `embeddings[i]` against every class.
pub fn forward_cosines(
    params: &NetworkParams,
    embeddings: &[DVector<f64>],
) -> Result<Vec<Vec<f64>>> {
    embeddings.iter().map(|e| params.cosines(e)).collect()
}
