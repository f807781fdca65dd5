//! Dense tensors and a small fully connected network with exact reverse-mode
//! gradients, both with respect to its parameters (for training) and its
//! inputs (for saliency).
//!
//! Layers store weights row-major with shape `[out_dim, in_dim]`, so a layer
//! computes `z = W x + b` followed by its activation. Hidden layers use ReLU;
//! the derivative at a pre-activation of exactly zero is taken to be zero.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;

/// Row-major dense array of finite `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("{expected} elements for shape {shape:?}"),
                data.len(),
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::usage(format!("tensor element {pos} is not finite")));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Linear => z,
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// Shape `[out_dim, in_dim]`.
    weights: Tensor,
    /// Shape `[out_dim]`.
    biases: Tensor,
    activation: Activation,
}

impl Layer {
    pub fn new(weights: Tensor, biases: Tensor, activation: Activation) -> Result<Self> {
        if weights.shape().len() != 2 {
            return Err(Error::shape("layer weights", "rank 2", format!("{:?}", weights.shape())));
        }
        if biases.shape() != [weights.shape()[0]] {
            return Err(Error::shape(
                "layer biases",
                format!("[{}]", weights.shape()[0]),
                format!("{:?}", biases.shape()),
            ));
        }
        Ok(Self {
            weights,
            biases,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn biases(&self) -> &Tensor {
        &self.biases
    }

    /// Writes `W x + b` into `z`.
    fn affine(&self, x: &[f64], z: &mut Vec<f64>) {
        let n_in = self.in_dim();
        let w = self.weights.as_slice();
        z.clear();
        z.extend(self.biases.as_slice().iter().enumerate().map(|(o, &b)| {
            let row = &w[o * n_in..(o + 1) * n_in];
            b + row.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>()
        }));
    }
}

/// Scalar-output feed-forward network `R(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardNet {
    input_dim: usize,
    layers: Vec<Layer>,
}

/// Per-layer gradients with the same shapes as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl ParamGrads {
    fn zeros_like(net: &RewardNet) -> Self {
        Self {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: net.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
        }
    }

    fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

struct Trace {
    /// Inputs to each layer; `acts[0]` is the network input.
    acts: Vec<Vec<f64>>,
    /// Pre-activations of each layer.
    pre: Vec<Vec<f64>>,
}

impl RewardNet {
    /// Builds a network, checking that consecutive layer dimensions chain and
    /// that the last layer is a single linear output.
    pub fn new(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::usage("network needs at least one layer"));
        }
        let mut prev = input_dim;
        for (i, layer) in layers.iter().enumerate() {
            if layer.in_dim() != prev {
                return Err(Error::format(
                    format!("layers[{i}]"),
                    format!("input dim {} does not match previous output dim {prev}", layer.in_dim()),
                ));
            }
            prev = layer.out_dim();
        }
        let last = layers.len() - 1;
        if prev != 1 || layers[last].activation != Activation::Linear {
            return Err(Error::format(
                format!("layers[{last}]"),
                "final layer must have one linear output",
            ));
        }
        Ok(Self { input_dim, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::shape("network input", self.input_dim, x.len()));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut z = Vec::new();
        for layer in &self.layers {
            layer.affine(&cur, &mut z);
            cur.clear();
            cur.extend(z.iter().map(|&v| layer.activation.apply(v)));
        }
        Ok(cur[0])
    }

    pub fn forward_tensor(&self, x: &Tensor) -> Result<f64> {
        self.forward(x.as_slice())
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        acts.push(x.to_vec());
        for layer in &self.layers {
            let mut z = Vec::new();
            layer.affine(acts.last().unwrap(), &mut z);
            acts.push(z.iter().map(|&v| layer.activation.apply(v)).collect());
            pre.push(z);
        }
        Trace { acts, pre }
    }

    /// Backpropagates `d_out = dL/dR`. Accumulates parameter gradients into
    /// `grads` when given; returns `dL/dx`.
    fn backward(&self, trace: &Trace, d_out: f64, mut grads: Option<&mut ParamGrads>) -> Vec<f64> {
        let mut delta = vec![d_out];
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let z = &trace.pre[li];
            for (d, &zv) in delta.iter_mut().zip(z) {
                *d *= layer.activation.derivative(zv);
            }
            let n_in = layer.in_dim();
            let a_prev = &trace.acts[li];
            if let Some(g) = grads.as_deref_mut() {
                let gw = &mut g.weights[li];
                let gb = &mut g.biases[li];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    let row = &mut gw[o * n_in..(o + 1) * n_in];
                    row.iter_mut().zip(a_prev).for_each(|(w, a)| *w += d * a);
                }
            }
            let w = layer.weights.as_slice();
            let mut prev = vec![0.0; n_in];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &w[o * n_in..(o + 1) * n_in];
                prev.iter_mut().zip(row).for_each(|(p, wi)| *p += d * wi);
            }
            delta = prev;
        }
        delta
    }

    /// `dR/dx` at `x`.
    pub fn input_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let trace = self.trace(x);
        Ok(self.backward(&trace, 1.0, None))
    }

    /// Multiplies the final layer by `c`, so the output becomes `c * R(x)`.
    pub fn scale_output(&mut self, c: f64) {
        let last = self.layers.last_mut().expect("network has layers");
        last.weights.as_mut_slice().iter_mut().for_each(|w| *w *= c);
        last.biases.as_mut_slice().iter_mut().for_each(|b| *b *= c);
    }

    /// Adds `c` to the final bias, so the output becomes `R(x) + c`.
    pub fn shift_output(&mut self, c: f64) {
        let last = self.layers.last_mut().expect("network has layers");
        last.biases.as_mut_slice()[0] += c;
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers.iter_mut().flat_map(|l| {
            [l.weights.as_mut_slice(), l.biases.as_mut_slice()].into_iter()
        })
    }

    /// Mean squared error gradient over `batch`, plus the batch MSE.
    ///
    /// Samples are grouped into fixed chunks that are reduced in order, so the
    /// result does not depend on `exec` or the thread count.
    pub fn mse_gradient(&self, batch: &[(Vec<f64>, f64)], exec: Exec) -> Result<(f64, ParamGrads)> {
        const CHUNK: usize = 16;
        if batch.is_empty() {
            return Err(Error::usage("training batch is empty"));
        }
        for (x, _) in batch {
            self.check_input(x)?;
        }
        let n = batch.len() as f64;
        let n_chunks = batch.len().div_ceil(CHUNK);
        let partials = exec.map_range(n_chunks, |c| {
            let mut grads = ParamGrads::zeros_like(self);
            let mut sse = 0.0;
            for (x, target) in &batch[c * CHUNK..((c + 1) * CHUNK).min(batch.len())] {
                let trace = self.trace(x);
                let err = trace.acts.last().unwrap()[0] - target;
                sse += err * err;
                self.backward(&trace, 2.0 * err / n, Some(&mut grads));
            }
            (sse, grads)
        });
        let mut total = ParamGrads::zeros_like(self);
        let mut sse = 0.0;
        for (s, g) in &partials {
            sse += s;
            total.add_assign(g);
        }
        Ok((sse / n, total))
    }
}

/// Builds a ReLU network with widths `arch` (first = input dim, last = 1).
///
/// Weights are drawn uniformly from `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` with
/// a ChaCha8 stream seeded by `seed`; biases start at zero.
pub fn init_net(arch: &[usize], seed: u64) -> Result<RewardNet> {
    if arch.len() < 2 {
        return Err(Error::usage("architecture needs at least input and output widths"));
    }
    if arch.iter().any(|&w| w == 0) {
        return Err(Error::usage("layer widths must be positive"));
    }
    if *arch.last().unwrap() != 1 {
        return Err(Error::usage("final layer width must be 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(arch.len() - 1);
    for (i, pair) in arch.windows(2).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let limit = 1.0 / (fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit);
        let w: Vec<f64> = (0..fan_in * fan_out).map(|_| dist.sample(&mut rng)).collect();
        let act = if i + 2 == arch.len() {
            Activation::Linear
        } else {
            Activation::Relu
        };
        layers.push(Layer::new(
            Tensor::new(vec![fan_out, fan_in], w)?,
            Tensor::zeros(vec![fan_out]),
            act,
        )?);
    }
    RewardNet::new(arch[0], layers)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// First and second moments, one buffer per parameter tensor in
    /// `[w0, b0, w1, b1, ...]` order. Empty for SGD.
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn sgd(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            step_count: 0,
            learning_rate,
            beta1: 0.0,
            beta2: 0.0,
            epsilon: 0.0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    /// Adam with beta1 0.9, beta2 0.999, epsilon 1e-8.
    pub fn adam(net: &RewardNet, learning_rate: f64) -> Self {
        let buffers: Vec<Vec<f64>> = net
            .layers
            .iter()
            .flat_map(|l| [vec![0.0; l.weights.len()], vec![0.0; l.biases.len()]])
            .collect();
        Self {
            kind: OptimizerKind::Adam,
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            first_moment: buffers.clone(),
            second_moment: buffers,
        }
    }

    fn check_matches(&self, net: &RewardNet) -> Result<()> {
        if self.kind == OptimizerKind::Sgd {
            return Ok(());
        }
        let shapes: Vec<usize> = net
            .layers
            .iter()
            .flat_map(|l| [l.weights.len(), l.biases.len()])
            .collect();
        let ours: Vec<usize> = self.first_moment.iter().map(Vec::len).collect();
        if shapes != ours {
            return Err(Error::shape("optimizer accumulators", format!("{shapes:?}"), format!("{ours:?}")));
        }
        Ok(())
    }

    fn apply(&mut self, net: &mut RewardNet, grads: &ParamGrads) {
        self.step_count += 1;
        let flat_grads = grads
            .weights
            .iter()
            .zip(&grads.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()]);
        match self.kind {
            OptimizerKind::Sgd => {
                let lr = self.learning_rate;
                for (p, g) in net.params_mut().zip(flat_grads) {
                    p.iter_mut().zip(g).for_each(|(p, g)| *p -= lr * g);
                }
            }
            OptimizerKind::Adam => {
                let t = self.step_count as i32;
                let bc1 = 1.0 - self.beta1.powi(t);
                let bc2 = 1.0 - self.beta2.powi(t);
                let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.epsilon, self.learning_rate);
                let moments = self.first_moment.iter_mut().zip(self.second_moment.iter_mut());
                for ((p, g), (m, v)) in net.params_mut().zip(flat_grads).zip(moments) {
                    for i in 0..p.len() {
                        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
    }
}

/// One optimizer step on the batch MSE. Returns the MSE before the update.
pub fn train_step(net: &mut RewardNet, batch: &[(Vec<f64>, f64)], opt: &mut OptimizerState) -> Result<f64> {
    train_step_with(net, batch, opt, Exec::default())
}

pub fn train_step_with(
    net: &mut RewardNet,
    batch: &[(Vec<f64>, f64)],
    opt: &mut OptimizerState,
    exec: Exec,
) -> Result<f64> {
    opt.check_matches(net)?;
    let (mse, grads) = net.mse_gradient(batch, exec)?;
    opt.apply(net, &grads);
    Ok(mse)
}

// Checkpoint wire format.

pub const CHECKPOINT_FORMAT: &str = "reward-lens/v1";

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    input_dim: usize,
    layers: Vec<CheckpointLayer>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointLayer {
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
    act: Activation,
}

impl RewardNet {
    pub fn to_checkpoint_json(&self) -> String {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.to_string(),
            input_dim: self.input_dim,
            layers: self
                .layers
                .iter()
                .map(|l| CheckpointLayer {
                    w: l.weights.as_slice().chunks(l.in_dim()).map(<[f64]>::to_vec).collect(),
                    b: l.biases.as_slice().to_vec(),
                    act: l.activation,
                })
                .collect(),
        };
        serde_json::to_string(&file).expect("checkpoint serializes")
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self> {
        let file: CheckpointFile =
            serde_json::from_str(text).map_err(|e| Error::format("checkpoint", e.to_string()))?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(Error::format(
                "format",
                format!("expected {CHECKPOINT_FORMAT:?}, found {:?}", file.format),
            ));
        }
        let mut layers = Vec::with_capacity(file.layers.len());
        let mut prev = file.input_dim;
        for (i, l) in file.layers.into_iter().enumerate() {
            let rows = l.w.len();
            if let Some((r, row)) = l.w.iter().enumerate().find(|(_, row)| row.len() != prev) {
                return Err(Error::format(
                    format!("layers[{i}].w[{r}]"),
                    format!("row has {} columns, expected {prev}", row.len()),
                ));
            }
            if l.b.len() != rows {
                return Err(Error::format(
                    format!("layers[{i}].b"),
                    format!("{} biases for {rows} rows", l.b.len()),
                ));
            }
            let w = Tensor::new(vec![rows, prev], l.w.into_iter().flatten().collect())
                .map_err(|e| Error::format(format!("layers[{i}].w"), e.to_string()))?;
            let b = Tensor::vector(l.b).map_err(|e| Error::format(format!("layers[{i}].b"), e.to_string()))?;
            layers.push(Layer::new(w, b, l.act)?);
            prev = rows;
        }
        RewardNet::new(file.input_dim, layers)
    }
}
