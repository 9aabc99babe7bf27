//! Flat parameter vectors and the two analytic-gradient classifiers.
//!
//! Parameter layout (stable serialization order). Each dense layer is stored
//! row-major with one row per output unit; a row holds the weights for every
//! input followed by the bias (the bias acts as the weight of an implicit
//! appended `1` feature).
//!
//! * `hidden = 0`: softmax regression, `K` rows of `P + 1` values.
//! * `hidden = H > 0`: `H` rows of `P + 1` (input to tanh hidden layer), then
//!   `K` rows of `H + 1` (hidden to output logits).
//!
//! Batch reductions always run in the order the batch lists its samples, so
//! identical inputs give bit-identical outputs.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::error::{Error, Result};

/// Model parameters `w`. Length is fixed at construction and every entry is
/// finite.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::config(format!("parameter {i} is not finite")));
        }
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Euclidean distance to `other`.
    pub fn distance(&self, other: &ParamVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Gradient of the loss with respect to a [`ParamVector`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient(Vec<f64>);

impl Gradient {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Classifier shape: `P` inputs, optional tanh hidden layer of width `H`,
/// `K` classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
}

impl ModelSpec {
    pub fn new(input_dim: usize, hidden_dim: usize, num_classes: usize) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::config("input_dim must be positive"));
        }
        if num_classes < 2 {
            return Err(Error::config("num_classes must be at least 2"));
        }
        Ok(Self {
            input_dim,
            hidden_dim,
            num_classes,
        })
    }

    /// Total parameter count `d`.
    pub fn param_count(&self) -> usize {
        let (p, h, k) = (self.input_dim, self.hidden_dim, self.num_classes);
        if h == 0 {
            (p + 1) * k
        } else {
            (p + 1) * h + (h + 1) * k
        }
    }

    /// Weights uniform in `[-s, s]` with `s = sqrt(6 / (fan_in + fan_out))`
    /// per layer, biases zero.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut w = Vec::with_capacity(self.param_count());
        let mut layer = |w: &mut Vec<f64>, fan_in: usize, fan_out: usize| {
            let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-s, s).expect("finite bounds");
            for _ in 0..fan_out {
                for _ in 0..fan_in {
                    w.push(dist.sample(rng));
                }
                w.push(0.0);
            }
        };
        if self.hidden_dim == 0 {
            layer(&mut w, self.input_dim, self.num_classes);
        } else {
            layer(&mut w, self.input_dim, self.hidden_dim);
            layer(&mut w, self.hidden_dim, self.num_classes);
        }
        ParamVector(w)
    }

    fn check_params(&self, w: &ParamVector) -> Result<()> {
        if w.len() != self.param_count() {
            return Err(Error::config(format!(
                "parameter vector has length {}, model expects {}",
                w.len(),
                self.param_count()
            )));
        }
        Ok(())
    }

    fn check_batch(&self, batch: &Batch<'_>) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::config("batch is empty"));
        }
        if batch.data.dim() != self.input_dim {
            return Err(Error::config(format!(
                "data has {} features, model expects {}",
                batch.data.dim(),
                self.input_dim
            )));
        }
        if batch.data.num_classes() > self.num_classes {
            return Err(Error::data(format!(
                "data has {} classes, model has {}",
                batch.data.num_classes(),
                self.num_classes
            )));
        }
        Ok(())
    }
}

/// Per-sample scratch space, sized once per batch.
struct Scratch {
    hidden: Vec<f64>,
    logits: Vec<f64>,
    dhidden: Vec<f64>,
}

impl Scratch {
    fn new(spec: &ModelSpec) -> Self {
        Self {
            hidden: vec![0.0; spec.hidden_dim],
            logits: vec![0.0; spec.num_classes],
            dhidden: vec![0.0; spec.hidden_dim],
        }
    }
}

#[inline]
fn affine_row(row: &[f64], x: &[f64]) -> f64 {
    let (weights, bias) = row.split_at(x.len());
    weights
        .iter()
        .zip(x)
        .fold(bias[0], |acc, (a, b)| acc + a * b)
}

/// Fill `s.logits` (and `s.hidden` when present).
fn logits_into(spec: &ModelSpec, w: &[f64], x: &[f64], s: &mut Scratch) {
    let p = spec.input_dim;
    if spec.hidden_dim == 0 {
        for (k, row) in w.chunks_exact(p + 1).enumerate() {
            s.logits[k] = affine_row(row, x);
        }
    } else {
        let h = spec.hidden_dim;
        let (w1, w2) = w.split_at((p + 1) * h);
        for (j, row) in w1.chunks_exact(p + 1).enumerate() {
            s.hidden[j] = affine_row(row, x).tanh();
        }
        for (k, row) in w2.chunks_exact(h + 1).enumerate() {
            s.logits[k] = affine_row(row, &s.hidden);
        }
    }
}

/// Overwrite `z` with `softmax(z)`; return `logsumexp(z)`.
fn softmax_in_place(z: &mut [f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
    max + sum.ln()
}

/// Cross-entropy of one sample; `s.logits` keeps the raw logits.
fn sample_loss(spec: &ModelSpec, w: &[f64], x: &[f64], y: u32, s: &mut Scratch) -> f64 {
    logits_into(spec, w, x, s);
    let max = s.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + s.logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    lse - s.logits[y as usize - 1]
}

/// Add one sample's loss gradient into `out`; return its loss.
fn backprop_into(
    spec: &ModelSpec,
    w: &[f64],
    x: &[f64],
    y: u32,
    s: &mut Scratch,
    out: &mut [f64],
) -> f64 {
    logits_into(spec, w, x, s);
    let target = y as usize - 1;
    let z_target = s.logits[target];
    let lse = softmax_in_place(&mut s.logits);
    let loss = lse - z_target;
    // logits now hold probabilities; turn them into dL/dz.
    s.logits[target] -= 1.0;

    let p = spec.input_dim;
    if spec.hidden_dim == 0 {
        for (k, row) in out.chunks_exact_mut(p + 1).enumerate() {
            let dz = s.logits[k];
            let (gw, gb) = row.split_at_mut(p);
            for (g, xi) in gw.iter_mut().zip(x) {
                *g += dz * xi;
            }
            gb[0] += dz;
        }
    } else {
        let h = spec.hidden_dim;
        let split = (p + 1) * h;
        let (w2, (g1, g2)) = (&w[split..], out.split_at_mut(split));
        s.dhidden.iter_mut().for_each(|v| *v = 0.0);
        for (k, (grow, wrow)) in g2
            .chunks_exact_mut(h + 1)
            .zip(w2.chunks_exact(h + 1))
            .enumerate()
        {
            let dz = s.logits[k];
            for j in 0..h {
                grow[j] += dz * s.hidden[j];
                s.dhidden[j] += wrow[j] * dz;
            }
            grow[h] += dz;
        }
        for (j, grow) in g1.chunks_exact_mut(p + 1).enumerate() {
            let a = s.hidden[j];
            let dh = s.dhidden[j] * (1.0 - a * a);
            let (gw, gb) = grow.split_at_mut(p);
            for (g, xi) in gw.iter_mut().zip(x) {
                *g += dh * xi;
            }
            gb[0] += dh;
        }
    }
    loss
}

/// Class probabilities for one feature vector.
pub fn forward(spec: &ModelSpec, w: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
    spec.check_params(w)?;
    if x.len() != spec.input_dim {
        return Err(Error::config(format!(
            "feature vector has length {}, model expects {}",
            x.len(),
            spec.input_dim
        )));
    }
    let mut s = Scratch::new(spec);
    logits_into(spec, w.as_slice(), x, &mut s);
    softmax_in_place(&mut s.logits);
    Ok(s.logits)
}

/// Predicted class in `1..=K`; ties go to the lowest class.
pub fn predict(spec: &ModelSpec, w: &ParamVector, x: &[f64]) -> Result<u32> {
    let probs = forward(spec, w, x)?;
    Ok(argmax(&probs) as u32 + 1)
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy over a batch.
pub fn loss(spec: &ModelSpec, w: &ParamVector, batch: &Batch<'_>) -> Result<f64> {
    Ok(per_sample_losses(spec, w, batch)?.iter().sum::<f64>() / batch.len() as f64)
}

/// Cross-entropy of every sample in the batch, in batch order.
pub fn per_sample_losses(spec: &ModelSpec, w: &ParamVector, batch: &Batch<'_>) -> Result<Vec<f64>> {
    spec.check_params(w)?;
    spec.check_batch(batch)?;
    let mut s = Scratch::new(spec);
    Ok(batch
        .iter()
        .map(|(x, y)| sample_loss(spec, w.as_slice(), x, y, &mut s))
        .collect())
}

/// Mean cross-entropy and its gradient over a batch.
pub fn loss_and_grad(
    spec: &ModelSpec,
    w: &ParamVector,
    batch: &Batch<'_>,
) -> Result<(f64, Gradient)> {
    spec.check_params(w)?;
    spec.check_batch(batch)?;
    let mut s = Scratch::new(spec);
    let mut grad = vec![0.0; spec.param_count()];
    let mut total = 0.0;
    for (x, y) in batch.iter() {
        total += backprop_into(spec, w.as_slice(), x, y, &mut s, &mut grad);
    }
    let n = batch.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((total / n, Gradient(grad)))
}

/// One gradient per sample, in batch order.
pub fn per_sample_grads(
    spec: &ModelSpec,
    w: &ParamVector,
    batch: &Batch<'_>,
) -> Result<Vec<Gradient>> {
    spec.check_params(w)?;
    spec.check_batch(batch)?;
    let mut s = Scratch::new(spec);
    Ok(batch
        .iter()
        .map(|(x, y)| {
            let mut g = vec![0.0; spec.param_count()];
            backprop_into(spec, w.as_slice(), x, y, &mut s, &mut g);
            Gradient(g)
        })
        .collect())
}

/// Call `f(grad, loss)` for every sample in batch order, reusing one buffer.
pub(crate) fn for_each_sample_grad<F>(
    spec: &ModelSpec,
    w: &ParamVector,
    batch: &Batch<'_>,
    mut f: F,
) -> Result<()>
where
    F: FnMut(&[f64], f64),
{
    spec.check_params(w)?;
    spec.check_batch(batch)?;
    let mut s = Scratch::new(spec);
    let mut g = vec![0.0; spec.param_count()];
    for (x, y) in batch.iter() {
        g.iter_mut().for_each(|v| *v = 0.0);
        let l = backprop_into(spec, w.as_slice(), x, y, &mut s, &mut g);
        f(&g, l);
    }
    Ok(())
}

/// Central-difference estimate of the mean-loss gradient.
pub fn finite_diff_grad(
    spec: &ModelSpec,
    w: &ParamVector,
    batch: &Batch<'_>,
    step: f64,
) -> Result<Gradient> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::config("finite-difference step must be positive"));
    }
    spec.check_params(w)?;
    spec.check_batch(batch)?;
    let mut probe = w.clone();
    let mut grad = Vec::with_capacity(w.len());
    for j in 0..w.len() {
        let orig = probe.0[j];
        probe.0[j] = orig + step;
        let plus = loss(spec, &probe, batch)?;
        probe.0[j] = orig - step;
        let minus = loss(spec, &probe, batch)?;
        probe.0[j] = orig;
        grad.push((plus - minus) / (2.0 * step));
    }
    Ok(Gradient(grad))
}
