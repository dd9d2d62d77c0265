//! A small fully-connected network engine: dense layers with ReLU/PReLU,
//! inverted dropout that can stay active at inference, reverse-mode
//! gradients, Adam, and the training losses used by the planner.
//!
//! Parameters live in one flat vector. For every layer the weight matrix
//! (`n_out x n_in`, row-major) is followed by its bias vector (`n_out`).

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::cspace::Config;
use crate::error::{check_dim, Error, Result};

/// Negative-side slope of the PReLU activation. The slope is held fixed so
/// the parameter layout stays weights-then-biases only.
pub const PRELU_SLOPE: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Prelu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Prelu => {
                if z > 0.0 {
                    z
                } else {
                    PRELU_SLOPE * z
                }
            }
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Prelu => {
                if z > 0.0 {
                    1.0
                } else {
                    PRELU_SLOPE
                }
            }
        }
    }
}

/// Architecture of a fully-connected network. The output layer is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    /// Drop probability for each hidden layer.
    pub dropout: Vec<f64>,
}

impl NetSpec {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation, dropout_p: f64) -> Result<Self> {
        let hidden = layer_sizes.len().saturating_sub(2);
        let spec = Self {
            layer_sizes,
            activation,
            dropout: vec![dropout_p; hidden],
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 || self.layer_sizes.contains(&0) {
            return Err(Error::InvalidArgument(
                "a network needs at least two layers of positive width".into(),
            ));
        }
        check_dim(self.layer_sizes.len() - 2, self.dropout.len())?;
        if self.dropout.iter().any(|p| !(0.0..1.0).contains(p)) {
            return Err(Error::InvalidArgument(
                "dropout probability must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// `(weight_offset, bias_offset, n_in, n_out)` for every layer.
    pub fn layout(&self) -> Vec<(usize, usize, usize, usize)> {
        let mut offset = 0;
        self.layer_sizes
            .windows(2)
            .map(|w| {
                let (n_in, n_out) = (w[0], w[1]);
                let entry = (offset, offset + n_in * n_out, n_in, n_out);
                offset += n_in * n_out + n_out;
                entry
            })
            .collect()
    }

    /// Indices of the flat vector that hold weights (not biases).
    pub fn weight_ranges(&self) -> Vec<std::ops::Range<usize>> {
        self.layout().into_iter().map(|(w, b, _, _)| w..b).collect()
    }
}

/// Flat parameter vector of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NetParams {
    pub flat: Vec<f64>,
}

impl NetParams {
    pub fn zeros(spec: &NetSpec) -> Self {
        Self {
            flat: vec![0.0; spec.param_count()],
        }
    }

    /// Uniform `±sqrt(6 / (n_in + n_out))` weights, zero biases.
    pub fn init<R: Rng + ?Sized>(spec: &NetSpec, rng: &mut R) -> Self {
        let mut flat = vec![0.0; spec.param_count()];
        for (w, b, n_in, n_out) in spec.layout() {
            let limit = (6.0 / (n_in + n_out) as f64).sqrt();
            for v in &mut flat[w..b] {
                *v = rng.gen_range(-limit..limit);
            }
        }
        Self { flat }
    }

    pub fn from_layers(spec: &NetSpec, layers: &[(Array2<f64>, Array1<f64>)]) -> Result<Self> {
        check_dim(spec.num_layers(), layers.len())?;
        let mut flat = Vec::with_capacity(spec.param_count());
        for ((w, b), (_, _, n_in, n_out)) in layers.iter().zip(spec.layout()) {
            if w.dim() != (n_out, n_in) || b.len() != n_out {
                return Err(Error::InvalidArgument(
                    "layer shape does not match spec".into(),
                ));
            }
            flat.extend(w.iter());
            flat.extend(b.iter());
        }
        Ok(Self { flat })
    }

    pub fn layers(&self, spec: &NetSpec) -> Vec<(ArrayView2<'_, f64>, ArrayView1<'_, f64>)> {
        spec.layout()
            .into_iter()
            .map(|(w, b, n_in, n_out)| {
                let wv = ArrayView2::from_shape((n_out, n_in), &self.flat[w..b]).unwrap();
                let bv = ArrayView1::from(&self.flat[b..b + n_out]);
                (wv, bv)
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    fn fingerprint(&self) -> u64 {
        self.flat.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, v| {
            (h ^ v.to_bits()).wrapping_mul(0x0100_0000_01b3)
        })
    }
}

/// Flat gradient vector, laid out like [`NetParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Gradient {
    pub flat: Vec<f64>,
}

impl Gradient {
    pub fn zeros(len: usize) -> Self {
        Self {
            flat: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn dot(&self, other: &Gradient) -> f64 {
        self.flat.iter().zip(&other.flat).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Gradient) {
        for (a, b) in self.flat.iter_mut().zip(&other.flat) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.flat.iter_mut().for_each(|v| *v *= alpha);
    }

    /// Concatenates gradients of separately stored parameter blocks.
    pub fn concat(parts: &[&Gradient]) -> Gradient {
        Gradient {
            flat: parts.iter().flat_map(|g| g.flat.iter().copied()).collect(),
        }
    }
}

/// Network plus its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Net {
    pub spec: NetSpec,
    pub params: NetParams,
}

impl Net {
    pub fn new<R: Rng + ?Sized>(spec: NetSpec, rng: &mut R) -> Self {
        let params = NetParams::init(&spec, rng);
        Self { spec, params }
    }

    pub fn forward(&self, input: &[f64], dropout: Dropout<'_>) -> Result<(Vec<f64>, Cache)> {
        forward(&self.spec, &self.params, input, dropout)
    }

    pub fn forward_batch(
        &self,
        input: ArrayView2<'_, f64>,
        dropout: Dropout<'_>,
    ) -> Result<(Array2<f64>, Cache)> {
        forward_batch(&self.spec, &self.params, input, dropout)
    }

    /// Deterministic single-example evaluation.
    pub fn eval(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(input, Dropout::Off)?.0)
    }
}

/// Whether dropout masks are drawn during a forward pass.
pub enum Dropout<'a> {
    Off,
    Sampled(&'a mut dyn RngCore),
}

/// Intermediate values of a forward pass needed by [`backward`].
#[derive(Debug, Clone)]
pub struct Cache {
    fingerprint: u64,
    layer_sizes: Vec<usize>,
    /// Input of every layer (post-activation, post-dropout).
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Array2<f64>>,
    /// Scaled dropout masks of the hidden layers (`None` when not sampled).
    masks: Vec<Option<Array2<f64>>>,
}

impl Cache {
    pub fn batch_size(&self) -> usize {
        self.inputs[0].nrows()
    }
}

/// Single-example forward pass.
pub fn forward(
    spec: &NetSpec,
    params: &NetParams,
    input: &[f64],
    dropout: Dropout<'_>,
) -> Result<(Vec<f64>, Cache)> {
    let x = ArrayView2::from_shape((1, input.len()), input)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let (out, cache) = forward_batch(spec, params, x, dropout)?;
    Ok((out.row(0).to_vec(), cache))
}

/// Forward pass over a batch (one example per row).
pub fn forward_batch(
    spec: &NetSpec,
    params: &NetParams,
    input: ArrayView2<'_, f64>,
    mut dropout: Dropout<'_>,
) -> Result<(Array2<f64>, Cache)> {
    check_dim(spec.input_size(), input.ncols())?;
    check_dim(spec.param_count(), params.len())?;
    let layers = params.layers(spec);
    let last = layers.len() - 1;
    let mut inputs = Vec::with_capacity(layers.len());
    let mut pre = Vec::with_capacity(last);
    let mut masks = Vec::with_capacity(last);
    let mut x = input.to_owned();
    for (l, (w, b)) in layers.iter().enumerate() {
        let mut z = x.dot(&w.t());
        z += b;
        inputs.push(x);
        if l == last {
            x = z;
            break;
        }
        let mut a = z.mapv(|v| spec.activation.apply(v));
        let p = spec.dropout[l];
        let mask = match &mut dropout {
            Dropout::Sampled(rng) if p > 0.0 => {
                let keep = 1.0 / (1.0 - p);
                let m =
                    Array2::from_shape_fn(
                        a.dim(),
                        |_| if rng.gen::<f64>() < p { 0.0 } else { keep },
                    );
                a *= &m;
                Some(m)
            }
            _ => None,
        };
        pre.push(z);
        masks.push(mask);
        x = a;
    }
    let cache = Cache {
        fingerprint: params.fingerprint(),
        layer_sizes: spec.layer_sizes.clone(),
        inputs,
        pre,
        masks,
    };
    Ok((x, cache))
}

/// Result of a backward pass.
#[derive(Debug, Clone)]
pub struct Backprop {
    /// Gradient with respect to the parameters, summed over the batch.
    pub grad: Gradient,
    /// Gradient with respect to the network input, one row per example.
    pub input_grad: Array2<f64>,
}

/// Reverse-mode pass given `d loss / d output` for every example.
pub fn backward(
    spec: &NetSpec,
    params: &NetParams,
    cache: &Cache,
    output_grad: ArrayView2<'_, f64>,
) -> Result<Backprop> {
    if cache.layer_sizes != spec.layer_sizes || cache.fingerprint != params.fingerprint() {
        return Err(Error::StaleCache);
    }
    if output_grad.dim() != (cache.batch_size(), spec.output_size()) {
        return Err(Error::InvalidArgument(format!(
            "output gradient shape {:?} does not match forward pass",
            output_grad.dim()
        )));
    }
    let layers = params.layers(spec);
    let layout = spec.layout();
    let mut grad = vec![0.0; spec.param_count()];
    let mut delta = output_grad.to_owned();
    for l in (0..layers.len()).rev() {
        let (w_off, b_off, n_in, n_out) = layout[l];
        let dw = delta.t().dot(&cache.inputs[l]);
        grad[w_off..w_off + n_in * n_out].copy_from_slice(dw.as_slice().unwrap());
        let db = delta.sum_axis(Axis(0));
        grad[b_off..b_off + n_out].copy_from_slice(db.as_slice().unwrap());
        let mut dx = delta.dot(&layers[l].0);
        if l == 0 {
            return Ok(Backprop {
                grad: Gradient { flat: grad },
                input_grad: dx,
            });
        }
        if let Some(m) = &cache.masks[l - 1] {
            dx *= m;
        }
        let act = spec.activation;
        dx.zip_mut_with(&cache.pre[l - 1], |g, z| *g *= act.derivative(*z));
        delta = dx;
    }
    unreachable!("network has at least one layer")
}

/// Mean squared waypoint error `(1/N) sum ||pred - target||^2`, with the
/// gradient for every prediction.
pub fn mse_path_loss(pred: &[Config], target: &[Config]) -> Result<(f64, Vec<Vec<f64>>)> {
    check_dim(target.len(), pred.len())?;
    if pred.is_empty() {
        return Err(Error::InvalidArgument("empty prediction list".into()));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(pred.len());
    for (p, t) in pred.iter().zip(target) {
        check_dim(t.dim(), p.dim())?;
        let diff: Vec<f64> = p.coords.iter().zip(&t.coords).map(|(a, b)| a - b).collect();
        loss += diff.iter().map(|d| d * d).sum::<f64>();
        grads.push(diff.iter().map(|d| 2.0 * d / n).collect());
    }
    Ok((loss / n, grads))
}

/// Batched form of [`mse_path_loss`]: rows are examples.
pub fn mse_loss_batch(
    pred: ArrayView2<'_, f64>,
    target: ArrayView2<'_, f64>,
) -> (f64, Array2<f64>) {
    let n = pred.nrows().max(1) as f64;
    let diff = &pred - &target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    (loss, diff * (2.0 / n))
}

/// `|| p / ||p|| - q ||^2` with the gradient taken through the normalization.
/// Works for any dimension; [`quaternion_loss`] is the 4-vector case.
pub fn unit_direction_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_dim(target.len(), pred.len())?;
    let norm = pred.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-9 {
        return Err(Error::Singular(norm));
    }
    let u: Vec<f64> = pred.iter().map(|v| v / norm).collect();
    let r: Vec<f64> = u.iter().zip(target).map(|(a, b)| a - b).collect();
    let loss = r.iter().map(|v| v * v).sum();
    // d/dp = (I - u u^T) 2r / ||p||
    let ur: f64 = u.iter().zip(&r).map(|(a, b)| a * b).sum();
    let grad = r
        .iter()
        .zip(&u)
        .map(|(ri, ui)| 2.0 * (ri - ui * ur) / norm)
        .collect();
    Ok((loss, grad))
}

pub fn quaternion_loss(pred_q: &[f64], target_q: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_dim(4, pred_q.len())?;
    check_dim(4, target_q.len())?;
    unit_direction_loss(pred_q, target_q)
}

/// Loss value and gradients of the encoder-decoder objective.
#[derive(Debug, Clone)]
pub struct CaeLoss {
    pub loss: f64,
    pub reconstruction: f64,
    pub enc_grad: Gradient,
    pub dec_grad: Gradient,
}

/// Mean reconstruction error over the batch plus `lambda` times the sum of
/// squared encoder weights (biases excluded).
pub fn cae_loss(enc: &Net, dec: &Net, batch: &[Vec<f64>], lambda: f64) -> Result<CaeLoss> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty point-cloud batch".into()));
    }
    if lambda < 0.0 {
        return Err(Error::InvalidArgument("lambda must be non-negative".into()));
    }
    check_dim(enc.spec.output_size(), dec.spec.input_size())?;
    check_dim(enc.spec.input_size(), dec.spec.output_size())?;
    let width = enc.spec.input_size();
    let mut x = Array2::zeros((batch.len(), width));
    for (i, row) in batch.iter().enumerate() {
        check_dim(width, row.len())?;
        x.row_mut(i).assign(&ArrayView1::from(row.as_slice()));
    }
    let (z, enc_cache) = enc.forward_batch(x.view(), Dropout::Off)?;
    let (x_hat, dec_cache) = dec.forward_batch(z.view(), Dropout::Off)?;
    let (reconstruction, d_out) = mse_loss_batch(x_hat.view(), x.view());
    let dec_bp = backward(&dec.spec, &dec.params, &dec_cache, d_out.view())?;
    let enc_bp = backward(&enc.spec, &enc.params, &enc_cache, dec_bp.input_grad.view())?;
    let mut enc_grad = enc_bp.grad;
    let mut reg = 0.0;
    for range in enc.spec.weight_ranges() {
        for i in range {
            let w = enc.params.flat[i];
            reg += w * w;
            enc_grad.flat[i] += 2.0 * lambda * w;
        }
    }
    Ok(CaeLoss {
        loss: reconstruction + lambda * reg,
        reconstruction,
        enc_grad,
        dec_grad: dec_bp.grad,
    })
}

/// Adam optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grad: &Gradient) -> Result<()> {
        check_dim(self.m.len(), params.len())?;
        check_dim(self.m.len(), grad.len())?;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grad.flat[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

pub fn adam_step(params: &mut NetParams, grad: &Gradient, state: &mut AdamState) -> Result<()> {
    state.step(&mut params.flat, grad)
}

/// Magic string in the checkpoint header.
pub const CHECKPOINT_FORMAT: &str = "neuroplan-params";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Checkpoint header: one JSON line followed by `count` little-endian f64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub spec: NetSpec,
    pub created: u64,
    pub seed: u64,
    pub count: usize,
    pub encoding: String,
}

pub fn write_checkpoint<W: Write>(out: &mut W, net: &Net, seed: u64, created: u64) -> Result<()> {
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        spec: net.spec.clone(),
        created,
        seed,
        count: net.params.len(),
        encoding: "f64-le".into(),
    };
    serde_json::to_writer(&mut *out, &header)?;
    out.write_all(b"\n")?;
    let mut bytes = Vec::with_capacity(net.params.len() * 8);
    for v in &net.params.flat {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&bytes)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(input: &mut R) -> Result<(Net, CheckpointHeader)> {
    let mut buf = Vec::new();
    input.read_to_end(&mut buf)?;
    let nl = buf
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("checkpoint header line missing".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&buf[..nl])?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(Error::Format(format!(
            "unexpected format tag `{}`",
            header.format
        )));
    }
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: header.version,
            expected: CHECKPOINT_VERSION,
        });
    }
    header.spec.validate()?;
    check_dim(header.spec.param_count(), header.count)?;
    let body = &buf[nl + 1..];
    if body.len() != header.count * 8 {
        return Err(Error::Format(format!(
            "expected {} parameter bytes, found {}",
            header.count * 8,
            body.len()
        )));
    }
    let flat = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((
        Net {
            spec: header.spec.clone(),
            params: NetParams { flat },
        },
        header,
    ))
}
