//! Minimal from-scratch network kit sized to the fall-prediction models:
//! one 1D convolution (true convolution, kernel flipped), ReLU, max pooling,
//! two dense layers, logit-space losses, and an adaptive-moment optimizer.
//! Everything is deterministic given the seed.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::{real, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    /// Raw logits; required by the BCE/CE losses.
    Identity,
    /// Sigmoid output in (0, 1); used by the lead-time regressor so its
    /// range contract is structural.
    Sigmoid,
}

/// Fixed topology: Conv1d -> ReLU -> MaxPool -> Flatten -> Dense -> ReLU ->
/// Dense(output) -> output activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Window length m (time steps).
    pub input_steps: usize,
    /// Feature count d (input channels).
    pub input_features: usize,
    /// Convolution filter count.
    pub filters: usize,
    pub kernel_width: usize,
    pub conv_stride: usize,
    pub pool_width: usize,
    pub hidden_width: usize,
    pub output_width: usize,
    pub output_activation: OutputActivation,
}

impl NetworkSpec {
    pub fn conv_out_len(&self) -> usize {
        (self.input_steps - self.kernel_width) / self.conv_stride + 1
    }

    pub fn pool_out_len(&self) -> usize {
        (self.conv_out_len() - self.pool_width) / self.pool_width + 1
    }

    pub fn flat_len(&self) -> usize {
        self.filters * self.pool_out_len()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_steps", self.input_steps),
            ("input_features", self.input_features),
            ("filters", self.filters),
            ("kernel_width", self.kernel_width),
            ("conv_stride", self.conv_stride),
            ("pool_width", self.pool_width),
            ("hidden_width", self.hidden_width),
            ("output_width", self.output_width),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidParams(format!("{name} must be positive")));
            }
        }
        if self.kernel_width > self.input_steps {
            return Err(Error::ShapeMismatch {
                layer: "conv1d".into(),
                expected: format!("kernel_width <= {} input steps", self.input_steps),
                got: format!("kernel_width {}", self.kernel_width),
            });
        }
        if self.pool_width > self.conv_out_len() {
            return Err(Error::ShapeMismatch {
                layer: "max_pool".into(),
                expected: format!("pool_width <= {} conv outputs", self.conv_out_len()),
                got: format!("pool_width {}", self.pool_width),
            });
        }
        Ok(())
    }

    pub fn layout(&self) -> ParamLayout {
        let conv_w = self.filters * self.input_features * self.kernel_width;
        let conv_b = self.filters;
        let fc1_w = self.hidden_width * self.flat_len();
        let fc1_b = self.hidden_width;
        let fc2_w = self.output_width * self.hidden_width;
        let fc2_b = self.output_width;
        let mut segments = Vec::with_capacity(6);
        let mut off = 0;
        for (name, len) in [
            ("conv_w", conv_w),
            ("conv_b", conv_b),
            ("fc1_w", fc1_w),
            ("fc1_b", fc1_b),
            ("fc2_w", fc2_w),
            ("fc2_b", fc2_b),
        ] {
            segments.push(ParamSegment { name, offset: off, len });
            off += len;
        }
        ParamLayout { segments, total: off }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamSegment {
    pub name: &'static str,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub segments: Vec<ParamSegment>,
    pub total: usize,
}

impl ParamLayout {
    pub fn name_of(&self, index: usize) -> &'static str {
        self.segments
            .iter()
            .find(|s| index >= s.offset && index < s.offset + s.len)
            .map(|s| s.name)
            .unwrap_or("out_of_range")
    }

    pub fn range(&self, name: &str) -> std::ops::Range<usize> {
        let s = self
            .segments
            .iter()
            .find(|s| s.name == name)
            .expect("unknown parameter segment");
        s.offset..s.offset + s.len
    }
}

/// Network: topology plus one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub spec: NetworkSpec,
    pub params: Vec<T>,
}

/// Cached forward activations, reused by the backward pass.
#[derive(Debug, Clone)]
pub struct Activations<T> {
    pub conv_pre: Vec<T>,
    pub pool_out: Vec<T>,
    pub pool_argmax: Vec<usize>,
    pub fc1_pre: Vec<T>,
    pub fc2_pre: Vec<T>,
    pub output: Vec<T>,
}

impl<T: Real> Network<T> {
    pub fn zeroed(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Network {
            params: vec![T::zero(); spec.param_count()],
            spec,
        })
    }

    /// Uniform init scaled by 1/sqrt(fan-in), fully determined by the RNG.
    pub fn init_random<R: Rng>(spec: NetworkSpec, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeroed(spec)?;
        let layout = spec.layout();
        let fans = [
            ("conv_w", spec.input_features * spec.kernel_width),
            ("fc1_w", spec.flat_len()),
            ("fc2_w", spec.hidden_width),
        ];
        for (name, fan_in) in fans {
            let scale = 1.0 / (fan_in as f64).sqrt();
            for p in &mut net.params[layout.range(name)] {
                let u: f64 = rng.gen();
                *p = real((2.0 * u - 1.0) * scale);
            }
        }
        Ok(net)
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        let want = self.spec.input_steps * self.spec.input_features;
        if x.len() != want {
            return Err(Error::ShapeMismatch {
                layer: "conv1d".into(),
                expected: format!("{} x {} input", self.spec.input_steps, self.spec.input_features),
                got: format!("{} values", x.len()),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        Ok(self.forward_cached(x)?.output)
    }

    pub fn forward_cached(&self, x: &[T]) -> Result<Activations<T>> {
        self.check_input(x)?;
        let s = &self.spec;
        let layout = s.layout();
        let d = s.input_features;
        let k_w = s.kernel_width;
        let l = s.conv_out_len();
        let l2 = s.pool_out_len();
        let conv_w = &self.params[layout.range("conv_w")];
        let conv_b = &self.params[layout.range("conv_b")];
        let fc1_w = &self.params[layout.range("fc1_w")];
        let fc1_b = &self.params[layout.range("fc1_b")];
        let fc2_w = &self.params[layout.range("fc2_w")];
        let fc2_b = &self.params[layout.range("fc2_b")];

        // True 1D convolution over time: the kernel index is flipped.
        let mut conv_pre = vec![T::zero(); s.filters * l];
        for f in 0..s.filters {
            for p in 0..l {
                let base = p * s.conv_stride;
                let mut acc = conv_b[f];
                for c in 0..d {
                    let w_base = (f * d + c) * k_w;
                    for k in 0..k_w {
                        let row = base + (k_w - 1 - k);
                        acc += conv_w[w_base + k] * x[row * d + c];
                    }
                }
                conv_pre[f * l + p] = acc;
            }
        }

        // ReLU then max pool; ties keep the first index.
        let mut pool_out = vec![T::zero(); s.filters * l2];
        let mut pool_argmax = vec![0usize; s.filters * l2];
        for f in 0..s.filters {
            for p2 in 0..l2 {
                let start = p2 * s.pool_width;
                let mut best = T::zero();
                let mut best_i = f * l + start;
                let mut first = true;
                for j in start..start + s.pool_width {
                    let v = conv_pre[f * l + j].max(T::zero());
                    if first || v > best {
                        best = v;
                        best_i = f * l + j;
                        first = false;
                    }
                }
                pool_out[f * l2 + p2] = best;
                pool_argmax[f * l2 + p2] = best_i;
            }
        }

        let flat = s.flat_len();
        let mut fc1_pre = vec![T::zero(); s.hidden_width];
        for h in 0..s.hidden_width {
            let mut acc = fc1_b[h];
            let row = &fc1_w[h * flat..(h + 1) * flat];
            for j in 0..flat {
                acc += row[j] * pool_out[j];
            }
            fc1_pre[h] = acc;
        }

        let mut fc2_pre = vec![T::zero(); s.output_width];
        for o in 0..s.output_width {
            let mut acc = fc2_b[o];
            let row = &fc2_w[o * s.hidden_width..(o + 1) * s.hidden_width];
            for h in 0..s.hidden_width {
                acc += row[h] * fc1_pre[h].max(T::zero());
            }
            fc2_pre[o] = acc;
        }

        let output = match s.output_activation {
            OutputActivation::Identity => fc2_pre.clone(),
            OutputActivation::Sigmoid => fc2_pre.iter().map(|z| sigmoid(*z)).collect(),
        };

        Ok(Activations {
            conv_pre,
            pool_out,
            pool_argmax,
            fc1_pre,
            fc2_pre,
            output,
        })
    }

    /// Exact analytic gradients of every parameter given dL/d(output).
    /// Max-pool routes gradient to the (first) argmax.
    pub fn backward(&self, x: &[T], acts: &Activations<T>, dout: &[T]) -> Vec<T> {
        let s = &self.spec;
        let layout = s.layout();
        let d = s.input_features;
        let k_w = s.kernel_width;
        let l = s.conv_out_len();
        let flat = s.flat_len();
        let mut grads = vec![T::zero(); layout.total];

        // Through the output activation.
        let mut d2 = vec![T::zero(); s.output_width];
        for o in 0..s.output_width {
            d2[o] = match s.output_activation {
                OutputActivation::Identity => dout[o],
                OutputActivation::Sigmoid => {
                    let y = acts.output[o];
                    dout[o] * y * (T::one() - y)
                }
            };
        }

        let fc2_w = &self.params[layout.range("fc2_w")];
        let fc1_w = &self.params[layout.range("fc1_w")];

        // Dense output layer.
        let mut d_fc1_post = vec![T::zero(); s.hidden_width];
        {
            let r2w = layout.range("fc2_w");
            let r2b = layout.range("fc2_b");
            for o in 0..s.output_width {
                for h in 0..s.hidden_width {
                    let a = acts.fc1_pre[h].max(T::zero());
                    grads[r2w.start + o * s.hidden_width + h] += d2[o] * a;
                    d_fc1_post[h] += d2[o] * fc2_w[o * s.hidden_width + h];
                }
                grads[r2b.start + o] += d2[o];
            }
        }

        // Hidden dense layer through its ReLU.
        let mut d_pool = vec![T::zero(); flat];
        {
            let r1w = layout.range("fc1_w");
            let r1b = layout.range("fc1_b");
            for h in 0..s.hidden_width {
                let gate = if acts.fc1_pre[h] > T::zero() { T::one() } else { T::zero() };
                let dh = d_fc1_post[h] * gate;
                if dh != T::zero() {
                    for j in 0..flat {
                        grads[r1w.start + h * flat + j] += dh * acts.pool_out[j];
                        d_pool[j] += dh * fc1_w[h * flat + j];
                    }
                }
                grads[r1b.start + h] += dh;
            }
        }

        // Un-pool to the argmax, then through the conv ReLU.
        let mut d_conv = vec![T::zero(); s.filters * l];
        for (j, &src) in acts.pool_argmax.iter().enumerate() {
            d_conv[src] += d_pool[j];
        }
        for (i, g) in d_conv.iter_mut().enumerate() {
            if !(acts.conv_pre[i] > T::zero()) {
                *g = T::zero();
            }
        }

        // Convolution weights and biases.
        {
            let rcw = layout.range("conv_w");
            let rcb = layout.range("conv_b");
            for f in 0..s.filters {
                for p in 0..l {
                    let g = d_conv[f * l + p];
                    if g == T::zero() {
                        continue;
                    }
                    let base = p * s.conv_stride;
                    for c in 0..d {
                        let w_base = (f * d + c) * k_w;
                        for k in 0..k_w {
                            let row = base + (k_w - 1 - k);
                            grads[rcw.start + w_base + k] += g * x[row * d + c];
                        }
                    }
                    grads[rcb.start + f] += g;
                }
            }
        }

        grads
    }

    /// Forward, loss, and gradients for one sample.
    pub fn backward_loss(
        &self,
        x: &[T],
        target: &LossTarget<T>,
        kind: LossKind,
    ) -> Result<(T, Vec<T>)> {
        let acts = self.forward_cached(x)?;
        let loss_value = loss(kind, &acts.output, target)?;
        let dout = output_gradient(kind, &acts.output, target)?;
        Ok((loss_value, self.backward(x, &acts, &dout)))
    }
}

pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Bce,
    Ce,
    Mse,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossTarget<T> {
    Binary(bool),
    Class(usize),
    Value(T),
}

fn check_finite<T: Real>(prediction: &[T]) -> Result<()> {
    if prediction.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "network prediction".into(),
        });
    }
    Ok(())
}

/// Scalar loss, always >= 0. BCE and CE operate on raw logits in a
/// log-sum-exp form; MSE operates on the (possibly sigmoid) prediction.
pub fn loss<T: Real>(kind: LossKind, prediction: &[T], target: &LossTarget<T>) -> Result<T> {
    check_finite(prediction)?;
    match (kind, target) {
        (LossKind::Bce, LossTarget::Binary(y)) => {
            let z = prediction[0];
            let y = if *y { T::one() } else { T::zero() };
            // max(z,0) - z*y + ln(1 + exp(-|z|))
            Ok(z.max(T::zero()) - z * y + (T::one() + (-z.abs()).exp()).ln())
        }
        (LossKind::Ce, LossTarget::Class(c)) => {
            if *c >= prediction.len() {
                return Err(Error::InvalidParams(format!(
                    "class {c} out of range for {} logits",
                    prediction.len()
                )));
            }
            let max = prediction.iter().fold(T::neg_infinity(), |a, b| a.max(*b));
            let mut sum = T::zero();
            for z in prediction {
                sum += (*z - max).exp();
            }
            Ok(max + sum.ln() - prediction[*c])
        }
        (LossKind::Mse, LossTarget::Value(t)) => {
            let e = prediction[0] - *t;
            Ok(e * e)
        }
        _ => Err(Error::InvalidParams(
            "loss kind and target kind do not match".into(),
        )),
    }
}

/// dL/d(prediction) for the matching loss.
pub fn output_gradient<T: Real>(
    kind: LossKind,
    prediction: &[T],
    target: &LossTarget<T>,
) -> Result<Vec<T>> {
    check_finite(prediction)?;
    match (kind, target) {
        (LossKind::Bce, LossTarget::Binary(y)) => {
            let y = if *y { T::one() } else { T::zero() };
            Ok(vec![sigmoid(prediction[0]) - y])
        }
        (LossKind::Ce, LossTarget::Class(c)) => {
            let max = prediction.iter().fold(T::neg_infinity(), |a, b| a.max(*b));
            let mut sum = T::zero();
            for z in prediction {
                sum += (*z - max).exp();
            }
            let mut g: Vec<T> = prediction.iter().map(|z| (*z - max).exp() / sum).collect();
            g[*c] -= T::one();
            Ok(g)
        }
        (LossKind::Mse, LossTarget::Value(t)) => {
            Ok(vec![real::<T>(2.0) * (prediction[0] - *t)])
        }
        _ => Err(Error::InvalidParams(
            "loss kind and target kind do not match".into(),
        )),
    }
}

/// Central finite differences on the loss; the independent oracle for the
/// analytic backward pass (uses only `forward` and `loss`).
pub fn numerical_gradient<T: Real>(
    net: &Network<T>,
    x: &[T],
    target: &LossTarget<T>,
    kind: LossKind,
    epsilon: T,
) -> Result<Vec<T>> {
    let mut probe = net.clone();
    let mut grads = vec![T::zero(); net.params.len()];
    for i in 0..net.params.len() {
        let orig = probe.params[i];
        probe.params[i] = orig + epsilon;
        let plus = loss(kind, &probe.forward(x)?, target)?;
        probe.params[i] = orig - epsilon;
        let minus = loss(kind, &probe.forward(x)?, target)?;
        probe.params[i] = orig;
        grads[i] = (plus - minus) / (real::<T>(2.0) * epsilon);
    }
    Ok(grads)
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams<T> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
}

impl<T: Real> Default for AdamParams<T> {
    fn default() -> Self {
        AdamParams {
            learning_rate: real(1e-3),
            beta1: real(0.9),
            beta2: real(0.999),
            epsilon: real(1e-8),
        }
    }
}

/// First and second moment accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            step: 0,
        }
    }
}

/// One adaptive-moment update with bias correction. Rejects non-finite
/// gradients (naming the parameter segment) and guarantees finite parameters
/// afterwards.
pub fn optimize_step<T: Real>(
    params: &mut [T],
    grads: &[T],
    state: &mut AdamState<T>,
    hyper: &AdamParams<T>,
    layout: &ParamLayout,
) -> Result<()> {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    for (i, g) in grads.iter().enumerate() {
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient {
                name: layout.name_of(i).into(),
                index: i,
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = T::one() - hyper.beta1.powi(t);
    let bc2 = T::one() - hyper.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = hyper.beta1 * state.m[i] + (T::one() - hyper.beta1) * g;
        state.v[i] = hyper.beta2 * state.v[i] + (T::one() - hyper.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= hyper.learning_rate * m_hat / (v_hat.sqrt() + hyper.epsilon);
        if !params[i].is_finite() {
            return Err(Error::NonFinite {
                context: format!("parameter `{}` after update", layout.name_of(i)),
            });
        }
    }
    Ok(())
}

const MAGIC: [u8; 4] = *b"FPN1";
const FORMAT_VERSION: u32 = 1;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn spec_bytes(spec: &NetworkSpec) -> Vec<u8> {
    let mut b = Vec::with_capacity(8 * 8 + 1);
    for v in [
        spec.input_steps,
        spec.input_features,
        spec.filters,
        spec.kernel_width,
        spec.conv_stride,
        spec.pool_width,
        spec.hidden_width,
        spec.output_width,
    ] {
        b.extend_from_slice(&(v as u64).to_le_bytes());
    }
    b.push(match spec.output_activation {
        OutputActivation::Identity => 0,
        OutputActivation::Sigmoid => 1,
    });
    b
}

/// Versioned binary serialization: header (magic, version, shapes, spec
/// hash) followed by little-endian 64-bit floats. Round-trips exactly.
pub fn save_network<T: Real, W: Write>(net: &Network<T>, mut w: W) -> Result<()> {
    let sb = spec_bytes(&net.spec);
    w.write_all(&MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(sb.len() as u32).to_le_bytes())?;
    w.write_all(&sb)?;
    w.write_all(&fnv1a(&sb).to_le_bytes())?;
    w.write_all(&(net.params.len() as u64).to_le_bytes())?;
    for p in &net.params {
        w.write_all(&p.to_f64_lossy().to_le_bytes())?;
    }
    Ok(())
}

pub fn load_network<T: Real, R: Read>(mut r: R) -> Result<Network<T>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::BundleCorrupt("bad network magic".into()));
    }
    let mut u32b = [0u8; 4];
    r.read_exact(&mut u32b)?;
    let version = u32::from_le_bytes(u32b);
    if version != FORMAT_VERSION {
        return Err(Error::BundleVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    r.read_exact(&mut u32b)?;
    let sb_len = u32::from_le_bytes(u32b) as usize;
    if sb_len != spec_bytes(&NetworkSpec {
        input_steps: 1,
        input_features: 1,
        filters: 1,
        kernel_width: 1,
        conv_stride: 1,
        pool_width: 1,
        hidden_width: 1,
        output_width: 1,
        output_activation: OutputActivation::Identity,
    })
    .len()
    {
        return Err(Error::BundleCorrupt(format!("bad spec length {sb_len}")));
    }
    let mut sb = vec![0u8; sb_len];
    r.read_exact(&mut sb)?;
    let mut u64b = [0u8; 8];
    r.read_exact(&mut u64b)?;
    let stored_hash = u64::from_le_bytes(u64b);
    if stored_hash != fnv1a(&sb) {
        return Err(Error::BundleCorrupt("spec hash mismatch".into()));
    }
    let mut fields = [0u64; 8];
    for (i, f) in fields.iter_mut().enumerate() {
        *f = u64::from_le_bytes(sb[i * 8..(i + 1) * 8].try_into().unwrap());
    }
    let spec = NetworkSpec {
        input_steps: fields[0] as usize,
        input_features: fields[1] as usize,
        filters: fields[2] as usize,
        kernel_width: fields[3] as usize,
        conv_stride: fields[4] as usize,
        pool_width: fields[5] as usize,
        hidden_width: fields[6] as usize,
        output_width: fields[7] as usize,
        output_activation: match sb[64] {
            0 => OutputActivation::Identity,
            1 => OutputActivation::Sigmoid,
            other => {
                return Err(Error::BundleCorrupt(format!("bad activation tag {other}")))
            }
        },
    };
    spec.validate()?;
    r.read_exact(&mut u64b)?;
    let n = u64::from_le_bytes(u64b) as usize;
    if n != spec.param_count() {
        return Err(Error::BundleCorrupt(format!(
            "parameter count {n} does not match spec ({})",
            spec.param_count()
        )));
    }
    let mut params = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut u64b)?;
        params.push(T::from_f64_lossy(f64::from_le_bytes(u64b)));
    }
    Ok(Network { spec, params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_spec(out: usize, activation: OutputActivation) -> NetworkSpec {
        NetworkSpec {
            input_steps: 12,
            input_features: 3,
            filters: 4,
            kernel_width: 5,
            conv_stride: 1,
            pool_width: 2,
            hidden_width: 6,
            output_width: out,
            output_activation: activation,
        }
    }

    fn random_input(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect()
    }

    #[test]
    fn zero_network_outputs_zero_logits() {
        let net = Network::<f64>::zeroed(small_spec(1, OutputActivation::Identity)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_input(&mut rng, 36);
        assert_eq!(net.forward(&x).unwrap(), vec![0.0]);
    }

    #[test]
    fn hand_convolution_oracle() {
        // 1 channel, kernel [1, -1], input [3, 5, 9] -> conv output [2, 4],
        // max-pool width 2 -> [4].
        let spec = NetworkSpec {
            input_steps: 3,
            input_features: 1,
            filters: 1,
            kernel_width: 2,
            conv_stride: 1,
            pool_width: 2,
            hidden_width: 2,
            output_width: 1,
            output_activation: OutputActivation::Identity,
        };
        let mut net = Network::<f64>::zeroed(spec).unwrap();
        let layout = spec.layout();
        let r = layout.range("conv_w");
        net.params[r.start] = 1.0;
        net.params[r.start + 1] = -1.0;
        let acts = net.forward_cached(&[3.0, 5.0, 9.0]).unwrap();
        assert_eq!(acts.conv_pre, vec![2.0, 4.0]);
        assert_eq!(acts.pool_out, vec![4.0]);
    }

    #[test]
    fn pool_ties_take_the_first_index() {
        let spec = NetworkSpec {
            input_steps: 2,
            input_features: 1,
            filters: 1,
            kernel_width: 1,
            conv_stride: 1,
            pool_width: 2,
            hidden_width: 1,
            output_width: 1,
            output_activation: OutputActivation::Identity,
        };
        let mut net = Network::<f64>::zeroed(spec).unwrap();
        net.params[spec.layout().range("conv_w").start] = 1.0;
        let acts = net.forward_cached(&[7.0, 7.0]).unwrap();
        assert_eq!(acts.pool_argmax, vec![0]);
    }

    #[test]
    fn analytic_loss_values() {
        let ln2 = std::f64::consts::LN_2;
        assert!((loss(LossKind::Bce, &[0.0], &LossTarget::Binary(true)).unwrap() - ln2).abs() < 1e-12);
        assert!((loss(LossKind::Bce, &[0.0], &LossTarget::Binary(false)).unwrap() - ln2).abs() < 1e-12);
        let ln3 = 3.0_f64.ln();
        for c in 0..3 {
            let l = loss(LossKind::Ce, &[0.7, 0.7, 0.7], &LossTarget::Class(c)).unwrap();
            assert!((l - ln3).abs() < 1e-12);
        }
        assert_eq!(loss(LossKind::Mse, &[0.4], &LossTarget::Value(0.4)).unwrap(), 0.0);
    }

    #[test]
    fn losses_are_nonnegative_and_probabilities_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let z: f64 = rng.gen::<f64>() * 40.0 - 20.0;
            assert!(loss(LossKind::Bce, &[z], &LossTarget::Binary(rng.gen())).unwrap() >= 0.0);
            let p = sigmoid(z);
            assert!(p > 0.0 && p < 1.0);
            let logits: Vec<f64> = (0..3).map(|_| rng.gen::<f64>() * 30.0 - 15.0).collect();
            let c = rng.gen_range(0..3);
            assert!(loss(LossKind::Ce, &logits, &LossTarget::Class(c)).unwrap() >= 0.0);
            let g = output_gradient(LossKind::Ce, &logits, &LossTarget::Class(c)).unwrap();
            // softmax components recovered from the gradient are in (0,1)
            for (i, gi) in g.iter().enumerate() {
                let soft = if i == c { gi + 1.0 } else { *gi };
                assert!(soft > 0.0 && soft < 1.0);
            }
        }
    }

    #[test]
    fn non_finite_prediction_is_an_error() {
        assert!(loss(LossKind::Bce, &[f64::NAN], &LossTarget::Binary(true)).is_err());
        assert!(loss(LossKind::Mse, &[f64::INFINITY], &LossTarget::Value(0.0)).is_err());
    }

    fn check_gradients(spec: NetworkSpec, kind: LossKind, target: LossTarget<f64>, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Network::<f64>::init_random(spec, &mut rng).unwrap();
        let x = random_input(&mut rng, spec.input_steps * spec.input_features);
        let (_, analytic) = net.backward_loss(&x, &target, kind).unwrap();
        let numeric = numerical_gradient(&net, &x, &target, kind, 1e-5).unwrap();
        assert_eq!(analytic.len(), net.params.len());
        for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
            let denom = a.abs().max(n.abs()).max(1e-6);
            let rel = (a - n).abs() / denom;
            assert!(
                rel < 1e-4,
                "param {i} ({}) analytic {a} vs numeric {n}",
                spec.layout().name_of(i)
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        check_gradients(small_spec(1, OutputActivation::Identity), LossKind::Bce, LossTarget::Binary(true), 10);
        check_gradients(small_spec(3, OutputActivation::Identity), LossKind::Ce, LossTarget::Class(2), 11);
        check_gradients(small_spec(1, OutputActivation::Sigmoid), LossKind::Mse, LossTarget::Value(0.3), 12);
    }

    #[test]
    fn gradient_is_zero_at_a_perfect_mse_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Network::<f64>::init_random(small_spec(1, OutputActivation::Identity), &mut rng).unwrap();
        let x = random_input(&mut rng, 36);
        let y = net.forward(&x).unwrap()[0];
        let (l, g) = net.backward_loss(&x, &LossTarget::Value(y), LossKind::Mse).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn every_parameter_receives_a_gradient_entry() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = small_spec(1, OutputActivation::Identity);
        let net = Network::<f64>::init_random(spec, &mut rng).unwrap();
        let x = random_input(&mut rng, 36);
        let (_, g) = net.backward_loss(&x, &LossTarget::Binary(false), LossKind::Bce).unwrap();
        assert_eq!(g.len(), spec.param_count());
    }

    #[test]
    fn conv_output_is_translation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = small_spec(1, OutputActivation::Identity);
        let net = Network::<f64>::init_random(spec, &mut rng).unwrap();
        let long = random_input(&mut rng, (spec.input_steps + 1) * spec.input_features);
        let d = spec.input_features;
        let x1 = &long[..spec.input_steps * d];
        let x2 = &long[d..];
        let a1 = net.forward_cached(x1).unwrap();
        let a2 = net.forward_cached(x2).unwrap();
        let l = spec.conv_out_len();
        for f in 0..spec.filters {
            for p in 0..l - 1 {
                let shifted = a1.conv_pre[f * l + p + 1];
                let base = a2.conv_pre[f * l + p];
                assert!((shifted - base).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adam_leaves_parameters_alone_for_zero_gradients() {
        let spec = small_spec(1, OutputActivation::Identity);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut net = Network::<f64>::init_random(spec, &mut rng).unwrap();
        let before = net.params.clone();
        let mut state = AdamState::new(net.params.len());
        let zeros = vec![0.0; net.params.len()];
        optimize_step(&mut net.params, &zeros, &mut state, &AdamParams::default(), &spec.layout()).unwrap();
        assert_eq!(net.params, before);
    }

    #[test]
    fn adam_first_step_approximates_lr_times_sign() {
        let layout = ParamLayout {
            segments: vec![ParamSegment { name: "conv_w", offset: 0, len: 1 }],
            total: 1,
        };
        let hyper = AdamParams::<f64>::default();
        for g in [3.7, -0.02] {
            let mut params = vec![1.0];
            let mut state = AdamState::new(1);
            optimize_step(&mut params, &[g], &mut state, &hyper, &layout).unwrap();
            let step = params[0] - 1.0;
            let expected = -hyper.learning_rate * g.signum();
            assert!(
                (step - expected).abs() < 1e-6,
                "step {step} vs expected {expected} for g={g}"
            );
        }
    }

    #[test]
    fn adam_rejects_non_finite_gradients_by_name() {
        let spec = small_spec(1, OutputActivation::Identity);
        let mut net = Network::<f64>::zeroed(spec).unwrap();
        let mut state = AdamState::new(net.params.len());
        let mut grads = vec![0.0; net.params.len()];
        let bad = spec.layout().range("fc1_b").start;
        grads[bad] = f64::NAN;
        match optimize_step(&mut net.params, &grads, &mut state, &AdamParams::default(), &spec.layout()) {
            Err(Error::NonFiniteGradient { name, .. }) => assert_eq!(name, "fc1_b"),
            other => panic!("expected NonFiniteGradient, got {other:?}"),
        }
    }

    #[test]
    fn training_runs_are_reproducible() {
        let spec = small_spec(1, OutputActivation::Identity);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            let mut net = Network::<f64>::init_random(spec, &mut rng).unwrap();
            let mut state = AdamState::new(net.params.len());
            let hyper = AdamParams::default();
            let layout = spec.layout();
            for _ in 0..50 {
                let x = random_input(&mut rng, 36);
                let y = x.iter().sum::<f64>() > 0.0;
                let (_, g) = net.backward_loss(&x, &LossTarget::Binary(y), LossKind::Bce).unwrap();
                optimize_step(&mut net.params, &g, &mut state, &hyper, &layout).unwrap();
            }
            net.params
        };
        let a = run();
        let b = run();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn separable_toy_problem_trains_below_one_percent_bce() {
        // Class is the sign of the first channel's mean; linearly separable.
        let spec = small_spec(1, OutputActivation::Identity);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut net = Network::<f64>::init_random(spec, &mut rng).unwrap();
        let samples: Vec<(Vec<f64>, bool)> = (0..64)
            .map(|i| {
                let positive = i % 2 == 0;
                let shift = if positive { 1.0 } else { -1.0 };
                let x: Vec<f64> = (0..36)
                    .map(|j| {
                        let noise = rng.gen::<f64>() * 0.2 - 0.1;
                        if j % 3 == 0 {
                            shift + noise
                        } else {
                            noise
                        }
                    })
                    .collect();
                (x, positive)
            })
            .collect();
        let mut state = AdamState::new(net.params.len());
        let hyper = AdamParams { learning_rate: 1e-2, ..Default::default() };
        let layout = spec.layout();
        let mut final_loss = f64::INFINITY;
        for _ in 0..500 {
            let mut acc = vec![0.0; net.params.len()];
            let mut total = 0.0;
            for (x, y) in &samples {
                let (l, g) = net.backward_loss(x, &LossTarget::Binary(*y), LossKind::Bce).unwrap();
                total += l;
                for (a, gi) in acc.iter_mut().zip(&g) {
                    *a += gi / samples.len() as f64;
                }
            }
            optimize_step(&mut net.params, &acc, &mut state, &hyper, &layout).unwrap();
            final_loss = total / samples.len() as f64;
            if final_loss < 0.01 {
                break;
            }
        }
        assert!(final_loss < 0.01, "BCE stuck at {final_loss}");
    }

    #[test]
    fn serialization_round_trips_exactly() {
        let spec = small_spec(3, OutputActivation::Sigmoid);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = Network::<f64>::init_random(spec, &mut rng).unwrap();
        let mut buf = Vec::new();
        save_network(&net, &mut buf).unwrap();
        let back: Network<f64> = load_network(&buf[..]).unwrap();
        assert_eq!(back.spec, net.spec);
        assert_eq!(
            back.params.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            net.params.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn version_mismatch_is_refused() {
        let spec = small_spec(1, OutputActivation::Identity);
        let net = Network::<f64>::zeroed(spec).unwrap();
        let mut buf = Vec::new();
        save_network(&net, &mut buf).unwrap();
        buf[4] = 99; // corrupt the version field
        match load_network::<f64, _>(&buf[..]) {
            Err(Error::BundleVersion { found: 99, .. }) => {}
            other => panic!("expected BundleVersion, got {other:?}"),
        }
    }

    #[test]
    fn shape_mismatch_names_the_layer() {
        let net = Network::<f64>::zeroed(small_spec(1, OutputActivation::Identity)).unwrap();
        match net.forward(&[0.0; 7]) {
            Err(Error::ShapeMismatch { layer, .. }) => assert_eq!(layer, "conv1d"),
            other => panic!("expected ShapeMismatch, got {other:?}"),
        }
    }

    #[test]
    fn f32_network_behaves_like_f64_to_single_precision() {
        let spec = small_spec(1, OutputActivation::Identity);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let net64 = Network::<f64>::init_random(spec, &mut rng).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let net32 = Network::<f32>::init_random(spec, &mut rng).unwrap();
        let x64: Vec<f64> = (0..36).map(|i| ((i * 7) % 13) as f64 / 13.0 - 0.5).collect();
        let x32: Vec<f32> = x64.iter().map(|v| *v as f32).collect();
        let y64 = net64.forward(&x64).unwrap()[0];
        let y32 = net32.forward(&x32).unwrap()[0];
        assert!((y64 - y32 as f64).abs() < 1e-5);
    }
}
