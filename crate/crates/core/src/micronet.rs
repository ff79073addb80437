//! A small dense feed-forward network with hand-written backpropagation.
//!
//! Parameters live in one flat [`ParamVector`] so the optimizers can update a
//! whole model at once. Layer `l` maps `fan_in -> fan_out`; its weights are a
//! row-major `fan_out x fan_in` block followed by `fan_out` biases, and layers
//! are stored in order. The binary save format uses the same ordering.
//!
//! Two output heads exist, each tied to its loss:
//!
//! * [`OutputHead::SigmoidWithCategoricalCe`]: per-class sigmoid probabilities,
//!   loss `-sum_k t_k ln p_k` with `p_k` clamped to `[1e-12, 1 - 1e-12]`.
//!   Targets may be one-hot or multi-hot.
//! * [`OutputHead::SoftmaxWithSparseCe`]: raw logits, loss `-ln softmax(s)_label`.

use std::io::{self, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linalg::Matrix;
use crate::optim::ParamVector;
use crate::scalar::Scalar;

/// Probability clamp used by the sigmoid head's cross-entropy.
pub const PROB_CLAMP: f64 = 1e-12;

const MAGIC: &[u8; 5] = b"MNET1";

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelRange { label: usize, classes: usize },
    #[error("softmax head needs integer labels")]
    LabelKind,
    #[error("cache does not belong to this model or batch")]
    CacheMismatch,
    #[error("bad model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = NetError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation<T> {
    Relu,
    LeakyRelu(T),
}

impl<T: Scalar> Activation<T> {
    /// Leaky ReLU with slope 0.01.
    pub fn leaky() -> Self {
        Activation::LeakyRelu(T::lit(0.01))
    }

    fn apply(&self, z: T) -> T {
        match *self {
            Activation::Relu => z.max(T::zero()),
            Activation::LeakyRelu(slope) => {
                if z > T::zero() {
                    z
                } else {
                    slope * z
                }
            }
        }
    }

    fn derivative(&self, z: T) -> T {
        match *self {
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::LeakyRelu(slope) => {
                if z > T::zero() {
                    T::one()
                } else {
                    slope
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputHead {
    SigmoidWithCategoricalCe,
    SoftmaxWithSparseCe,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec<T> {
    /// Input size, hidden sizes..., number of classes.
    pub layer_sizes: Vec<usize>,
    pub hidden_activation: Activation<T>,
    pub output_head: OutputHead,
    pub init_seed: u64,
}

impl<T: Scalar> MlpSpec<T> {
    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(NetError::InvalidSpec("need at least input and output layers".into()));
        }
        if self.layer_sizes.contains(&0) {
            return Err(NetError::InvalidSpec("layer sizes must be >= 1".into()));
        }
        if let Activation::LeakyRelu(slope) = self.hidden_activation {
            if !(slope > T::zero() && slope < T::one()) {
                return Err(NetError::InvalidSpec(format!("leaky slope {slope} not in (0, 1)")));
            }
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        *self.layer_sizes.last().expect("validated spec")
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }
}

/// Targets for a batch.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels<T> {
    /// One class index per row.
    Sparse(Vec<usize>),
    /// `batch x classes` target matrix (one-hot or multi-hot).
    Dense(Matrix<T>),
}

impl<T: Scalar> Labels<T> {
    pub fn len(&self) -> usize {
        match self {
            Labels::Sparse(v) => v.len(),
            Labels::Dense(m) => m.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check(&self, classes: usize) -> Result<()> {
        match self {
            Labels::Sparse(v) => {
                if let Some(&label) = v.iter().find(|&&l| l >= classes) {
                    return Err(NetError::LabelRange { label, classes });
                }
            }
            Labels::Dense(m) => {
                if m.cols() != classes {
                    return Err(NetError::Dimension {
                        expected: classes,
                        got: m.cols(),
                    });
                }
            }
        }
        Ok(())
    }

    fn target(&self, row: usize, class: usize) -> T {
        match self {
            Labels::Sparse(v) => {
                if v[row] == class {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Labels::Dense(m) => m[(row, class)],
        }
    }

    /// Class counted as correct for accuracy: the label, or the largest target.
    fn class_of(&self, row: usize) -> usize {
        match self {
            Labels::Sparse(v) => v[row],
            Labels::Dense(m) => argmax(m.row(row)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub inputs: Matrix<T>,
    pub labels: Labels<T>,
}

impl<T: Scalar> Batch<T> {
    pub fn new(inputs: Matrix<T>, labels: Labels<T>) -> Result<Self> {
        if inputs.rows() == 0 {
            return Err(NetError::InvalidSpec("empty batch".into()));
        }
        if labels.len() != inputs.rows() {
            return Err(NetError::Dimension {
                expected: inputs.rows(),
                got: labels.len(),
            });
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerLayout {
    fan_in: usize,
    fan_out: usize,
    weight_offset: usize,
    bias_offset: usize,
}

fn layout_for(sizes: &[usize]) -> (Vec<LayerLayout>, usize) {
    let mut offset = 0;
    let layers = sizes
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weight_offset = offset;
            let bias_offset = offset + fan_in * fan_out;
            offset = bias_offset + fan_out;
            LayerLayout {
                fan_in,
                fan_out,
                weight_offset,
                bias_offset,
            }
        })
        .collect();
    (layers, offset)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel<T> {
    spec: MlpSpec<T>,
    layers: Vec<LayerLayout>,
    params: ParamVector<T>,
}

/// Per-layer values kept by [`MlpModel::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    /// `activations[0]` is the input; `activations[l + 1]` is layer `l`'s output.
    activations: Vec<Matrix<T>>,
    /// Pre-activation of each layer.
    pre: Vec<Matrix<T>>,
}

impl<T: Scalar> ForwardCache<T> {
    /// Network outputs: sigmoid probabilities or logits, depending on the head.
    pub fn outputs(&self) -> &Matrix<T> {
        self.activations.last().expect("non-empty cache")
    }

    pub fn logits(&self) -> &Matrix<T> {
        self.pre.last().expect("non-empty cache")
    }
}

impl<T: Scalar> MlpModel<T> {
    /// Glorot-uniform weights from the spec's seed, zero biases.
    pub fn init(spec: MlpSpec<T>) -> Result<Self> {
        spec.validate()?;
        let (layers, total) = layout_for(&spec.layer_sizes);
        let mut params = vec![T::zero(); total];
        let mut rng = ChaCha8Rng::seed_from_u64(spec.init_seed);
        for layer in &layers {
            let limit = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            let block = &mut params[layer.weight_offset..layer.bias_offset];
            for w in block {
                *w = T::lit(rng.random_range(-limit..limit));
            }
        }
        Ok(Self {
            spec,
            layers,
            params: ParamVector::new(params),
        })
    }

    /// Builds a model around existing parameters (flat layout described in the module docs).
    pub fn from_params(spec: MlpSpec<T>, params: Vec<T>) -> Result<Self> {
        spec.validate()?;
        let (layers, total) = layout_for(&spec.layer_sizes);
        if params.len() != total {
            return Err(NetError::Dimension {
                expected: total,
                got: params.len(),
            });
        }
        Ok(Self {
            spec,
            layers,
            params: ParamVector::new(params),
        })
    }

    pub fn spec(&self) -> &MlpSpec<T> {
        &self.spec
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn params(&self) -> &ParamVector<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector<T> {
        &mut self.params
    }

    /// Row-major `fan_out x fan_in` weights of layer `l`.
    pub fn weights(&self, l: usize) -> &[T] {
        let layer = &self.layers[l];
        &self.params.as_slice()[layer.weight_offset..layer.bias_offset]
    }

    pub fn biases(&self, l: usize) -> &[T] {
        let layer = &self.layers[l];
        &self.params.as_slice()[layer.bias_offset..layer.bias_offset + layer.fan_out]
    }

    pub fn weights_mut(&mut self, l: usize) -> &mut [T] {
        let layer = self.layers[l];
        &mut self.params.as_mut_slice()[layer.weight_offset..layer.bias_offset]
    }

    pub fn biases_mut(&mut self, l: usize) -> &mut [T] {
        let layer = self.layers[l];
        &mut self.params.as_mut_slice()[layer.bias_offset..layer.bias_offset + layer.fan_out]
    }

    pub fn forward(&self, inputs: &Matrix<T>) -> Result<ForwardCache<T>> {
        if inputs.cols() != self.spec.input_dim() {
            return Err(NetError::Dimension {
                expected: self.spec.input_dim(),
                got: inputs.cols(),
            });
        }
        let b = inputs.rows();
        let last = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        activations.push(inputs.clone());
        for (l, layer) in self.layers.iter().enumerate() {
            let w = self.weights(l);
            let bias = self.biases(l);
            let input = &activations[l];
            let mut z = Matrix::zeros(b, layer.fan_out);
            for r in 0..b {
                let x = input.row(r);
                for o in 0..layer.fan_out {
                    let wr = &w[o * layer.fan_in..(o + 1) * layer.fan_in];
                    z[(r, o)] = crate::linalg::dot(wr, x) + bias[o];
                }
            }
            let mut a = z.clone();
            for r in 0..b {
                for o in 0..layer.fan_out {
                    a[(r, o)] = if l < last {
                        self.spec.hidden_activation.apply(z[(r, o)])
                    } else {
                        match self.spec.output_head {
                            OutputHead::SigmoidWithCategoricalCe => sigmoid(z[(r, o)]),
                            OutputHead::SoftmaxWithSparseCe => z[(r, o)],
                        }
                    };
                }
            }
            pre.push(z);
            activations.push(a);
        }
        Ok(ForwardCache { activations, pre })
    }

    /// Mean batch loss for the model's head.
    pub fn loss(&self, cache: &ForwardCache<T>, labels: &Labels<T>) -> Result<T> {
        loss(cache.outputs(), labels, self.spec.output_head)
    }

    /// Exact gradient of the mean batch loss, in the flat parameter layout.
    pub fn backward(&self, cache: &ForwardCache<T>, labels: &Labels<T>) -> Result<Vec<T>> {
        let classes = self.spec.classes();
        let outputs = cache.outputs();
        if cache.pre.len() != self.layers.len() || outputs.cols() != classes || outputs.rows() != labels.len() {
            return Err(NetError::CacheMismatch);
        }
        labels.check(classes)?;
        let b = outputs.rows();
        let inv_b = T::one() / T::from_count(b);

        let mut delta = Matrix::zeros(b, classes);
        match self.spec.output_head {
            OutputHead::SigmoidWithCategoricalCe => {
                let lo = T::lit(PROB_CLAMP);
                let hi = T::one() - lo;
                for r in 0..b {
                    for k in 0..classes {
                        let p = outputs[(r, k)];
                        // The clamp is flat outside (lo, hi), so no gradient flows there.
                        if p > lo && p < hi {
                            delta[(r, k)] = -labels.target(r, k) * (T::one() - p) * inv_b;
                        }
                    }
                }
            }
            OutputHead::SoftmaxWithSparseCe => {
                let Labels::Sparse(ref ids) = labels else {
                    return Err(NetError::LabelKind);
                };
                for (r, &label) in ids.iter().enumerate() {
                    let probs = softmax(outputs.row(r));
                    for (k, p) in probs.into_iter().enumerate() {
                        let t = if k == label { T::one() } else { T::zero() };
                        delta[(r, k)] = (p - t) * inv_b;
                    }
                }
            }
        }

        let mut grads = vec![T::zero(); self.params.len()];
        for l in (0..self.layers.len()).rev() {
            let layer = self.layers[l];
            let input = &cache.activations[l];
            {
                let (gw, gb) = grads[layer.weight_offset..layer.bias_offset + layer.fan_out]
                    .split_at_mut(layer.fan_in * layer.fan_out);
                for r in 0..b {
                    let x = input.row(r);
                    for o in 0..layer.fan_out {
                        let d = delta[(r, o)];
                        if d == T::zero() {
                            continue;
                        }
                        gb[o] = gb[o] + d;
                        let row = &mut gw[o * layer.fan_in..(o + 1) * layer.fan_in];
                        for (g, &xi) in row.iter_mut().zip(x) {
                            *g = *g + d * xi;
                        }
                    }
                }
            }
            if l == 0 {
                break;
            }
            let w = self.weights(l);
            let z_prev = &cache.pre[l - 1];
            let mut next = Matrix::zeros(b, layer.fan_in);
            for r in 0..b {
                for i in 0..layer.fan_in {
                    let mut s = T::zero();
                    for o in 0..layer.fan_out {
                        s = s + delta[(r, o)] * w[o * layer.fan_in + i];
                    }
                    next[(r, i)] = s * self.spec.hidden_activation.derivative(z_prev[(r, i)]);
                }
            }
            delta = next;
        }
        Ok(grads)
    }

    /// Writes the model: `MNET1`, layer count and sizes as little-endian
    /// `u32`, then every parameter as a little-endian `f64`.
    pub fn save<W: Write>(&self, out: &mut W) -> Result<()> {
        out.write_all(MAGIC)?;
        let count =
            u32::try_from(self.spec.layer_sizes.len()).map_err(|_| NetError::Format("too many layers".into()))?;
        out.write_all(&count.to_le_bytes())?;
        for &s in &self.spec.layer_sizes {
            let s = u32::try_from(s).map_err(|_| NetError::Format("layer too large".into()))?;
            out.write_all(&s.to_le_bytes())?;
        }
        for p in self.params.as_slice() {
            out.write_all(&p.to_f64_lossy().to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a model written by [`MlpModel::save`]. Activation and head are not
    /// part of the file and must be supplied.
    pub fn load<R: Read>(input: &mut R, hidden_activation: Activation<T>, output_head: OutputHead) -> Result<Self> {
        let mut magic = [0u8; 5];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(NetError::Format("missing MNET1 magic".into()));
        }
        let mut word = [0u8; 4];
        input.read_exact(&mut word)?;
        let count = u32::from_le_bytes(word) as usize;
        if count > 4096 {
            return Err(NetError::Format(format!("implausible layer count {count}")));
        }
        let mut layer_sizes = Vec::with_capacity(count);
        for _ in 0..count {
            input.read_exact(&mut word)?;
            layer_sizes.push(u32::from_le_bytes(word) as usize);
        }
        let spec = MlpSpec {
            layer_sizes,
            hidden_activation,
            output_head,
            init_seed: 0,
        };
        spec.validate()?;
        let (_, total) = layout_for(&spec.layer_sizes);
        let mut params = Vec::with_capacity(total);
        let mut buf = [0u8; 8];
        for _ in 0..total {
            input.read_exact(&mut buf)?;
            params.push(T::lit(f64::from_le_bytes(buf)));
        }
        let mut rest = Vec::new();
        input.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(NetError::Format(format!("{} trailing bytes", rest.len())));
        }
        Self::from_params(spec, params)
    }
}

pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Max-shifted softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&s| (s - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `ln(sum exp(s))` computed with the max shift.
fn log_sum_exp<T: Scalar>(logits: &[T]) -> T {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    max + logits.iter().map(|&s| (s - max).exp()).sum::<T>().ln()
}

pub fn argmax<T: Scalar>(v: &[T]) -> usize {
    v.iter()
        .enumerate()
        .fold(
            (0, T::neg_infinity()),
            |best, (i, &x)| if x > best.1 { (i, x) } else { best },
        )
        .0
}

/// Mean batch loss of `outputs` (sigmoid probabilities or logits) under `head`.
pub fn loss<T: Scalar>(outputs: &Matrix<T>, labels: &Labels<T>, head: OutputHead) -> Result<T> {
    let classes = outputs.cols();
    labels.check(classes)?;
    if labels.len() != outputs.rows() || outputs.rows() == 0 {
        return Err(NetError::Dimension {
            expected: outputs.rows(),
            got: labels.len(),
        });
    }
    let b = outputs.rows();
    let mut total = T::zero();
    match head {
        OutputHead::SigmoidWithCategoricalCe => {
            let lo = T::lit(PROB_CLAMP);
            let hi = T::one() - lo;
            for r in 0..b {
                for k in 0..classes {
                    let t = labels.target(r, k);
                    if t != T::zero() {
                        total = total - t * outputs[(r, k)].max(lo).min(hi).ln();
                    }
                }
            }
        }
        OutputHead::SoftmaxWithSparseCe => {
            let Labels::Sparse(ids) = labels else {
                return Err(NetError::LabelKind);
            };
            for (r, &label) in ids.iter().enumerate() {
                let row = outputs.row(r);
                total = total + log_sum_exp(row) - row[label];
            }
        }
    }
    Ok(total / T::from_count(b))
}

/// Number of rows whose largest output matches the label.
pub fn correct_count<T: Scalar>(outputs: &Matrix<T>, labels: &Labels<T>) -> usize {
    (0..outputs.rows())
        .filter(|&r| argmax(outputs.row(r)) == labels.class_of(r))
        .count()
}
