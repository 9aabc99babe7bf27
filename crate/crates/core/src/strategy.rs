//! Coordinator-side round logic for FedAvg, FedProx, FedBS and FedPBS.
//!
//! Every strategy follows the same shape: pick the participating clients,
//! decide per client whether it trains with plain or proximal SGD, then
//! combine the returned models with normalized weights. Reductions always
//! walk clients in ascending id order.
//!
//! FedBS probes *every* client each round before selecting, so its per-round
//! probe cost grows with `Q` rather than with the selection size.

use serde::{Deserialize, Serialize};

use crate::client::{
    self, ClientReport, ClientShard, LocalConfig, Probe, TrainingPath, VarianceKind,
};
use crate::data::{Dataset, Partition};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::math::{ModelSpec, ParamVector};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    FedAvg,
    FedProx,
    FedBs,
    FedPbs,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [Self::FedAvg, Self::FedProx, Self::FedBs, Self::FedPbs];

    pub fn name(self) -> &'static str {
        match self {
            Self::FedAvg => "fedavg",
            Self::FedProx => "fedprox",
            Self::FedBs => "fedbs",
            Self::FedPbs => "fedpbs",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown strategy {s:?}")))
    }

    /// Default aggregation rule for this strategy.
    pub fn default_aggregation(self) -> Aggregation {
        match self {
            Self::FedAvg => Aggregation::SampleWeighted,
            Self::FedProx | Self::FedPbs => Aggregation::Uniform,
            Self::FedBs => Aggregation::SoftVariance,
        }
    }

    pub fn default_variance_kind(self) -> VarianceKind {
        match self {
            Self::FedBs => VarianceKind::Gradient,
            _ => VarianceKind::Loss,
        }
    }

    pub fn uses_prox(self) -> bool {
        matches!(self, Self::FedProx | Self::FedPbs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// `beta_q = N_q / sum N`.
    SampleWeighted,
    /// `beta_q = 1 / |S_t|`.
    Uniform,
    /// `beta_q = softmax(-tau * Var)_q` over the selected clients.
    SoftVariance,
}

impl Aggregation {
    pub fn name(self) -> &'static str {
        match self {
            Self::SampleWeighted => "sample_weighted",
            Self::Uniform => "uniform",
            Self::SoftVariance => "soft_variance",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [Self::SampleWeighted, Self::Uniform, Self::SoftVariance]
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::config(format!("unknown aggregation {s:?}")))
    }
}

/// High-variance threshold `delta`: a constant, or a quantile of the current
/// round's variances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ThresholdRule {
    Fixed(f64),
    Quantile(f64),
}

impl ThresholdRule {
    pub fn resolve(self, values: &[f64]) -> f64 {
        match self {
            Self::Fixed(d) => d,
            Self::Quantile(p) => quantile(values, p),
        }
    }
}

/// How FedPBS routes clients to the proximal path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScreenRule {
    /// Stable iff `|B_q| >= B_th` and `V_q <= V_th`.
    Threshold,
    /// Proximal iff `Var_q > delta`.
    Delta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    pub mu: f64,
    pub tau: f64,
    pub delta: ThresholdRule,
    pub batch_threshold: usize,
    pub variance_threshold: f64,
    /// Importance factor per client (indexed by client id).
    pub importance: Vec<f64>,
    pub clients_per_round: usize,
    pub aggregation: Aggregation,
    pub variance_kind: VarianceKind,
    pub screen_rule: ScreenRule,
}

impl StrategyConfig {
    /// Defaults for `kind` over `clients` clients with equal importance.
    pub fn new(kind: StrategyKind, clients: usize) -> Self {
        Self {
            kind,
            mu: 0.01,
            tau: 1.0,
            delta: ThresholdRule::Quantile(0.75),
            batch_threshold: 32,
            variance_threshold: f64::INFINITY,
            importance: vec![1.0 / clients.max(1) as f64; clients],
            clients_per_round: clients,
            aggregation: kind.default_aggregation(),
            variance_kind: kind.default_variance_kind(),
            screen_rule: ScreenRule::Threshold,
        }
    }

    pub fn validate(&self, clients: usize) -> Result<()> {
        if clients == 0 {
            return Err(Error::config("no clients"));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::config(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if self.batch_threshold == 0 {
            return Err(Error::config("batch_threshold must be at least 1"));
        }
        if self.variance_threshold.is_nan() || self.variance_threshold <= 0.0 {
            return Err(Error::config(format!(
                "variance_threshold must be positive, got {}",
                self.variance_threshold
            )));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::config(format!(
                "mu must be non-negative, got {}",
                self.mu
            )));
        }
        if !(1..=clients).contains(&self.clients_per_round) {
            return Err(Error::config(format!(
                "clients_per_round must be in 1..={clients}, got {}",
                self.clients_per_round
            )));
        }
        if self.importance.len() != clients {
            return Err(Error::config(format!(
                "{} importance weights for {clients} clients",
                self.importance.len()
            )));
        }
        if self
            .importance
            .iter()
            .any(|a| !(*a >= 0.0 && a.is_finite()))
            || !self.importance.iter().any(|a| *a > 0.0)
        {
            return Err(Error::config(
                "importance weights must be non-negative with at least one positive",
            ));
        }
        match self.delta {
            ThresholdRule::Quantile(p) if !(p > 0.0 && p <= 1.0) => {
                return Err(Error::config(format!(
                    "delta quantile must be in (0, 1], got {p}"
                )));
            }
            ThresholdRule::Fixed(d) if d.is_nan() => {
                return Err(Error::config("delta is NaN"));
            }
            _ => {}
        }
        Ok(())
    }
}

/// Which clients took part in a round and which were routed to the
/// proximal path.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SelectionOutcome {
    /// Participating client ids, ascending.
    pub selected: Vec<usize>,
    /// Clients flagged by FedPBS screening, ascending; subset of `selected`.
    pub hgv_set: Vec<usize>,
    /// `(client, importance * variance)` for every probed client.
    pub scores: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub params: ParamVector,
    pub selection: SelectionOutcome,
    /// Reports of the participating clients, ascending client id.
    pub reports: Vec<ClientReport>,
    /// `(client, variance)` for every probed client, ascending client id.
    pub variances: Vec<(usize, f64)>,
}

/// Everything a strategy needs to run one round.
pub struct RoundContext<'a> {
    pub spec: &'a ModelSpec,
    pub data: &'a Dataset,
    pub partition: &'a Partition,
    /// Template for local training; `seed` and `round` are filled per client.
    pub local: LocalConfig,
    pub master_seed: u64,
    pub round: usize,
    pub executor: &'a Executor,
}

impl RoundContext<'_> {
    pub fn num_clients(&self) -> usize {
        self.partition.num_clients()
    }

    pub fn shard(&self, q: usize) -> ClientShard<'_> {
        ClientShard {
            id: q,
            data: self.data,
            indices: self.partition.client(q),
        }
    }

    /// Local config for client `q` in this round, with its own seed.
    pub fn local_for(&self, q: usize, kind: VarianceKind, mu: f64) -> LocalConfig {
        LocalConfig {
            seed: seed::derive(
                self.master_seed,
                seed::tags::CLIENT,
                &[q as u64, self.round as u64],
            ),
            round: self.round,
            variance_kind: kind,
            mu,
            ..self.local
        }
    }

    /// Uniformly sample `k` clients for this round; all clients when `k >= Q`.
    pub fn sample_clients(&self, k: usize) -> Vec<usize> {
        sample_clients(self.num_clients(), k, self.master_seed, self.round)
    }
}

pub fn sample_clients(q: usize, k: usize, master_seed: u64, round: usize) -> Vec<usize> {
    if k >= q {
        return (0..q).collect();
    }
    let mut rng = seed::stream(master_seed, seed::tags::SAMPLE, &[round as u64]);
    let mut picked = rand::seq::index::sample(&mut rng, q, k).into_vec();
    picked.sort_unstable();
    picked
}

/// Common round interface.
pub trait Strategy: Send + Sync {
    fn kind(&self) -> StrategyKind;
    fn config(&self) -> &StrategyConfig;
    fn run_round(&self, ctx: &RoundContext<'_>, w: &ParamVector) -> Result<RoundOutcome>;
}

pub struct FedAvg(pub StrategyConfig);
pub struct FedProx(pub StrategyConfig);
pub struct FedBs(pub StrategyConfig);
pub struct FedPbs(pub StrategyConfig);

macro_rules! impl_strategy {
    ($ty:ident, $kind:expr, $round:ident) => {
        impl Strategy for $ty {
            fn kind(&self) -> StrategyKind {
                $kind
            }
            fn config(&self) -> &StrategyConfig {
                &self.0
            }
            fn run_round(&self, ctx: &RoundContext<'_>, w: &ParamVector) -> Result<RoundOutcome> {
                $round(ctx, &self.0, w)
            }
        }
    };
}

impl_strategy!(FedAvg, StrategyKind::FedAvg, fedavg_round);
impl_strategy!(FedProx, StrategyKind::FedProx, fedprox_round);
impl_strategy!(FedBs, StrategyKind::FedBs, fedbs_round);
impl_strategy!(FedPbs, StrategyKind::FedPbs, fedpbs_round);

pub fn build(cfg: StrategyConfig) -> Box<dyn Strategy> {
    match cfg.kind {
        StrategyKind::FedAvg => Box::new(FedAvg(cfg)),
        StrategyKind::FedProx => Box::new(FedProx(cfg)),
        StrategyKind::FedBs => Box::new(FedBs(cfg)),
        StrategyKind::FedPbs => Box::new(FedPbs(cfg)),
    }
}

fn check_prox(ctx: &RoundContext<'_>, cfg: &StrategyConfig) -> Result<()> {
    LocalConfig {
        mu: cfg.mu,
        ..ctx.local
    }
    .validate_prox()
}

/// Probe the given clients against `w`, in parallel.
fn probe_all(
    ctx: &RoundContext<'_>,
    cfg: &StrategyConfig,
    w: &ParamVector,
    ids: &[usize],
) -> Result<Vec<Probe>> {
    ctx.executor
        .map(ids, |q| {
            client::probe(
                ctx.spec,
                w,
                &ctx.shard(q),
                &ctx.local_for(q, cfg.variance_kind, cfg.mu),
            )
        })
        .into_iter()
        .collect()
}

/// Train the given clients along their assigned paths, in parallel.
fn train_all(
    ctx: &RoundContext<'_>,
    cfg: &StrategyConfig,
    w: &ParamVector,
    jobs: &[(usize, TrainingPath, Probe)],
) -> Result<Vec<ClientReport>> {
    let slots: Vec<usize> = (0..jobs.len()).collect();
    ctx.executor
        .map(&slots, |s| {
            let (q, path, probe) = jobs[s];
            client::train(
                ctx.spec,
                w,
                &ctx.shard(q),
                &ctx.local_for(q, cfg.variance_kind, cfg.mu),
                path,
                probe,
            )
        })
        .into_iter()
        .collect()
}

fn finish(
    cfg: &StrategyConfig,
    w: &ParamVector,
    selected: Vec<usize>,
    hgv_set: Vec<usize>,
    reports: Vec<ClientReport>,
    variances: Vec<(usize, f64)>,
) -> Result<RoundOutcome> {
    let beta = aggregation_weights(cfg.aggregation, &reports, cfg.tau);
    let params = aggregate(w, &reports, &beta)?;
    let scores = variances
        .iter()
        .map(|&(q, v)| (q, cfg.importance[q] * v))
        .collect();
    Ok(RoundOutcome {
        params,
        selection: SelectionOutcome {
            selected,
            hgv_set,
            scores,
        },
        reports,
        variances,
    })
}

fn uniform_round(
    ctx: &RoundContext<'_>,
    cfg: &StrategyConfig,
    w: &ParamVector,
    path: TrainingPath,
) -> Result<RoundOutcome> {
    let selected = ctx.sample_clients(cfg.clients_per_round);
    let probes = probe_all(ctx, cfg, w, &selected)?;
    let jobs: Vec<_> = selected
        .iter()
        .zip(&probes)
        .map(|(&q, &p)| (q, path, p))
        .collect();
    let reports = train_all(ctx, cfg, w, &jobs)?;
    let variances = reports.iter().map(|r| (r.client, r.variance)).collect();
    finish(cfg, w, selected, Vec::new(), reports, variances)
}

/// FedAvg: sampled clients run plain local SGD.
pub fn fedavg_round(
    ctx: &RoundContext<'_>,
    cfg: &StrategyConfig,
    w: &ParamVector,
) -> Result<RoundOutcome> {
    uniform_round(ctx, cfg, w, TrainingPath::PlainSgd)
}

/// FedProx: sampled clients run proximal local SGD with `mu`.
pub fn fedprox_round(
    ctx: &RoundContext<'_>,
    cfg: &StrategyConfig,
    w: &ParamVector,
) -> Result<RoundOutcome> {
    check_prox(ctx, cfg)?;
    uniform_round(ctx, cfg, w, TrainingPath::ProxSgd)
}

/// FedBS: probe every client, keep the `clients_per_round` lowest
/// importance-weighted variances, train them with plain SGD.
pub fn fedbs_round(
    ctx: &RoundContext<'_>,
    cfg: &StrategyConfig,
    w: &ParamVector,
) -> Result<RoundOutcome> {
    let all: Vec<usize> = (0..ctx.num_clients()).collect();
    let probes = probe_all(ctx, cfg, w, &all)?;
    let scores: Vec<f64> = probes
        .iter()
        .enumerate()
        .map(|(q, p)| cfg.importance[q] * p.variance)
        .collect();
    let selected = select_lowest(&scores, cfg.clients_per_round);
    let jobs: Vec<_> = selected
        .iter()
        .map(|&q| (q, TrainingPath::PlainSgd, probes[q]))
        .collect();
    let reports = train_all(ctx, cfg, w, &jobs)?;
    let variances = probes
        .iter()
        .enumerate()
        .map(|(q, p)| (q, p.variance))
        .collect();
    finish(cfg, w, selected, Vec::new(), reports, variances)
}

/// FedPBS: sample clients, screen each on effective batch size and
/// variance, send unstable ones down the proximal path.
pub fn fedpbs_round(
    ctx: &RoundContext<'_>,
    cfg: &StrategyConfig,
    w: &ParamVector,
) -> Result<RoundOutcome> {
    check_prox(ctx, cfg)?;
    let selected = ctx.sample_clients(cfg.clients_per_round);
    let probes = probe_all(ctx, cfg, w, &selected)?;
    let variances: Vec<(usize, f64)> = selected
        .iter()
        .zip(&probes)
        .map(|(&q, p)| (q, p.variance))
        .collect();

    let hgv_set: Vec<usize> = match cfg.screen_rule {
        ScreenRule::Threshold => selected
            .iter()
            .zip(&probes)
            .filter(|(_, p)| {
                !(p.effective_batch >= cfg.batch_threshold && p.variance <= cfg.variance_threshold)
            })
            .map(|(&q, _)| q)
            .collect(),
        ScreenRule::Delta => detect_hgv(&variances, cfg.delta),
    };

    let jobs: Vec<_> = selected
        .iter()
        .zip(&probes)
        .map(|(&q, &p)| {
            let path = if hgv_set.binary_search(&q).is_ok() {
                TrainingPath::ProxSgd
            } else {
                TrainingPath::PlainSgd
            };
            (q, path, p)
        })
        .collect();
    let reports = train_all(ctx, cfg, w, &jobs)?;
    finish(cfg, w, selected, hgv_set, reports, variances)
}

/// Clients whose variance strictly exceeds the threshold, ascending id.
pub fn detect_hgv(variances: &[(usize, f64)], rule: ThresholdRule) -> Vec<usize> {
    let values: Vec<f64> = variances.iter().map(|&(_, v)| v).collect();
    let delta = rule.resolve(&values);
    let mut out: Vec<usize> = variances
        .iter()
        .filter(|&&(_, v)| v > delta)
        .map(|&(q, _)| q)
        .collect();
    out.sort_unstable();
    out
}

/// Sort ascending and take the element at `ceil(p * n) - 1`.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let idx = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[idx]
}

/// Median with the two middle values averaged for even counts.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Ids of the `k` smallest scores, ties to the lower id, returned ascending.
/// For a sum of per-client scores this is the exact constrained minimizer.
pub fn select_lowest(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut picked: Vec<usize> = order.into_iter().take(k).collect();
    picked.sort_unstable();
    picked
}

/// `beta_q = exp(-tau * Var_q) / sum_j exp(-tau * Var_j)`, computed relative to
/// the smallest variance so large `tau * Var` does not underflow.
pub fn soft_weights(variances: &[f64], tau: f64) -> Vec<f64> {
    let min = variances.iter().copied().fold(f64::INFINITY, f64::min);
    let e: Vec<f64> = variances.iter().map(|v| (-tau * (v - min)).exp()).collect();
    let sum: f64 = e.iter().sum();
    e.into_iter().map(|x| x / sum).collect()
}

pub fn aggregation_weights(mode: Aggregation, reports: &[ClientReport], tau: f64) -> Vec<f64> {
    match mode {
        Aggregation::Uniform => vec![1.0 / reports.len() as f64; reports.len()],
        Aggregation::SampleWeighted => {
            let total: usize = reports.iter().map(|r| r.n_samples).sum();
            reports
                .iter()
                .map(|r| r.n_samples as f64 / total as f64)
                .collect()
        }
        Aggregation::SoftVariance => {
            let v: Vec<f64> = reports.iter().map(|r| r.variance).collect();
            soft_weights(&v, tau)
        }
    }
}

/// `sum_q beta_q * w_q`, summed in ascending client id whatever the report
/// order. When every report carries the same model, that model is returned
/// unchanged.
pub fn aggregate(w: &ParamVector, reports: &[ClientReport], beta: &[f64]) -> Result<ParamVector> {
    let first = reports
        .first()
        .ok_or_else(|| Error::config("no client reports to aggregate"))?;
    if reports
        .iter()
        .all(|r| r.updated_params == first.updated_params)
    {
        return Ok(first.updated_params.clone());
    }
    let mut order: Vec<usize> = (0..reports.len()).collect();
    order.sort_by_key(|&i| reports[i].client);
    let mut out = vec![0.0; w.len()];
    for i in order {
        for (o, v) in out.iter_mut().zip(reports[i].updated_params.as_slice()) {
            *o += beta[i] * v;
        }
    }
    ParamVector::new(out)
}
