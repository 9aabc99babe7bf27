//! Local training on one client: plain and proximal mini-batch SGD, plus the
//! two variance probes used for client screening.

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::data::{Batch, Dataset};
use crate::error::{Error, Result};
use crate::math::{self, ModelSpec, ParamVector};
use crate::seed;

/// Which per-sample quantity the variance probe measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceKind {
    /// Mean squared distance of per-sample gradients from their mean.
    Gradient,
    /// Population variance of per-sample cross-entropy losses.
    Loss,
}

/// Which samples the probe looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeScope {
    /// One seeded mini-batch of `min(B, N_q)` samples.
    Batch,
    /// Every sample on the client.
    FullShard,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalConfig {
    pub eta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Proximal coefficient; ignored by plain SGD.
    pub mu: f64,
    /// Per-(client, round) seed for shuffling and probing.
    pub seed: u64,
    /// Round number, used only in error reports.
    pub round: usize,
    pub variance_kind: VarianceKind,
    pub probe_scope: ProbeScope,
}

impl LocalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::config(format!(
                "eta must be non-negative, got {}",
                self.eta
            )));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::config(format!(
                "mu must be non-negative, got {}",
                self.mu
            )));
        }
        Ok(())
    }

    /// Reject proximal steps whose anchor pull alone diverges (`eta * mu >= 2`).
    pub fn validate_prox(&self) -> Result<()> {
        if self.eta * self.mu >= 2.0 {
            return Err(Error::config(format!(
                "eta * mu = {} >= 2 makes the proximal step divergent",
                self.eta * self.mu
            )));
        }
        Ok(())
    }
}

/// One client's view of the training data.
#[derive(Debug, Clone, Copy)]
pub struct ClientShard<'a> {
    pub id: usize,
    pub data: &'a Dataset,
    pub indices: &'a [usize],
}

impl ClientShard<'_> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingPath {
    PlainSgd,
    ProxSgd,
}

/// Result of the pre-training probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    /// `min(B, N_q)`.
    pub effective_batch: usize,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientReport {
    pub client: usize,
    pub updated_params: ParamVector,
    pub n_samples: usize,
    pub effective_batch: usize,
    pub variance: f64,
    /// Mean data loss of each epoch (proximal term excluded).
    pub loss_trace: Vec<f64>,
    pub path_taken: TrainingPath,
}

fn require_samples(shard: &ClientShard<'_>) -> Result<()> {
    if shard.is_empty() {
        return Err(Error::Client {
            client: shard.id,
            reason: "client has no samples".into(),
        });
    }
    Ok(())
}

/// Evaluate the screening probe against the round-start model `w`.
pub fn probe(
    spec: &ModelSpec,
    w: &ParamVector,
    shard: &ClientShard<'_>,
    cfg: &LocalConfig,
) -> Result<Probe> {
    require_samples(shard)?;
    let effective_batch = cfg.batch_size.min(shard.len());
    let indices: Vec<usize> = match cfg.probe_scope {
        ProbeScope::FullShard => shard.indices.to_vec(),
        ProbeScope::Batch => {
            let mut rng = seed::stream(cfg.seed, seed::tags::PROBE, &[]);
            let mut picked: Vec<usize> = index::sample(&mut rng, shard.len(), effective_batch)
                .into_iter()
                .map(|i| shard.indices[i])
                .collect();
            picked.sort_unstable();
            picked
        }
    };
    let batch = Batch::new(shard.data, &indices);
    let variance = match cfg.variance_kind {
        VarianceKind::Gradient => gradient_variance(spec, w, &batch)?,
        VarianceKind::Loss => loss_variance(spec, w, &batch)?,
    };
    Ok(Probe {
        effective_batch,
        variance,
    })
}

/// `(1/n) * sum_i ||g_i - g_mean||^2` over the per-sample gradients.
pub fn gradient_variance(spec: &ModelSpec, w: &ParamVector, batch: &Batch<'_>) -> Result<f64> {
    let (_, mean) = math::loss_and_grad(spec, w, batch)?;
    let mean = mean.as_slice();
    let mut total = 0.0;
    math::for_each_sample_grad(spec, w, batch, |g, _| {
        total += g
            .iter()
            .zip(mean)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    })?;
    Ok(total / batch.len() as f64)
}

/// Population variance of per-sample cross-entropy.
pub fn loss_variance(spec: &ModelSpec, w: &ParamVector, batch: &Batch<'_>) -> Result<f64> {
    let losses = math::per_sample_losses(spec, w, batch)?;
    let n = losses.len() as f64;
    let mean = losses.iter().sum::<f64>() / n;
    Ok(losses.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / n)
}

/// Plain local SGD: `w <- w - eta * grad(batch)`.
pub fn local_sgd(
    spec: &ModelSpec,
    w_global: &ParamVector,
    shard: &ClientShard<'_>,
    cfg: &LocalConfig,
) -> Result<ClientReport> {
    let p = probe(spec, w_global, shard, cfg)?;
    train(spec, w_global, shard, cfg, TrainingPath::PlainSgd, p)
}

/// Proximal local SGD: `w <- w - eta * (grad(batch) + mu * (w - w_global))`,
/// anchored at the round-start model for all epochs.
pub fn local_prox_sgd(
    spec: &ModelSpec,
    w_global: &ParamVector,
    shard: &ClientShard<'_>,
    cfg: &LocalConfig,
) -> Result<ClientReport> {
    let p = probe(spec, w_global, shard, cfg)?;
    train(spec, w_global, shard, cfg, TrainingPath::ProxSgd, p)
}

/// Run `E` epochs along `path`, starting from `w_global`, and package the
/// report with an already computed probe.
pub fn train(
    spec: &ModelSpec,
    w_global: &ParamVector,
    shard: &ClientShard<'_>,
    cfg: &LocalConfig,
    path: TrainingPath,
    probe: Probe,
) -> Result<ClientReport> {
    cfg.validate()?;
    if path == TrainingPath::ProxSgd {
        cfg.validate_prox()?;
    }
    require_samples(shard)?;

    let mut rng = seed::stream(cfg.seed, seed::tags::SHUFFLE, &[]);
    let anchor = w_global.as_slice();
    let mut w = w_global.clone();
    let mut order = shard.indices.to_vec();
    let mut batch_idx = Vec::with_capacity(cfg.batch_size);
    let mut loss_trace = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            batch_idx.clear();
            batch_idx.extend_from_slice(chunk);
            batch_idx.sort_unstable();
            let (loss, grad) = math::loss_and_grad(spec, &w, &Batch::new(shard.data, &batch_idx))?;
            epoch_loss += loss * chunk.len() as f64;
            let mut values = std::mem::take(&mut w).into_inner();
            match path {
                TrainingPath::PlainSgd => {
                    for (v, g) in values.iter_mut().zip(grad.as_slice()) {
                        *v -= cfg.eta * g;
                    }
                }
                TrainingPath::ProxSgd => {
                    for ((v, g), a) in values.iter_mut().zip(grad.as_slice()).zip(anchor) {
                        *v -= cfg.eta * (g + cfg.mu * (*v - a));
                    }
                }
            }
            w = ParamVector::new(values).map_err(|_| Error::Numerical {
                round: cfg.round,
                client: Some(shard.id),
                reason: "parameters became non-finite during local training".into(),
            })?;
        }
        loss_trace.push(epoch_loss / shard.len() as f64);
    }

    Ok(ClientReport {
        client: shard.id,
        updated_params: w,
        n_samples: shard.len(),
        effective_batch: probe.effective_batch,
        variance: probe.variance,
        loss_trace,
        path_taken: path,
    })
}
