//! Experiment driver: data preparation, the round loop, evaluation and sweeps.

use std::time::Instant;

use serde::Serialize;

use crate::client::LocalConfig;
use crate::config::{DataSource, ExperimentConfig, ImportanceSetting, VarianceThresholdSetting};
use crate::data::{
    dirichlet_partition, load_csv, load_ucihar, synth_clusters, Batch, Dataset, DirichletSpec,
    Partition,
};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::math::{self, ModelSpec, ParamVector};
use crate::seed;
use crate::strategy::{self, RoundContext, StrategyConfig, StrategyKind};

/// Train/test data plus the client partition of the training set.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    pub partition: Partition,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub global_loss: f64,
    pub global_accuracy: f64,
    pub selected: Vec<usize>,
    pub hgv: Vec<usize>,
    /// `(client, variance)` for every client probed in this round.
    pub per_client_variance: Vec<(usize, f64)>,
    /// Wall-clock time of the round; informational, not serialized.
    #[serde(skip)]
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub records: Vec<RoundRecord>,
    pub final_model: ParamVector,
    pub config: ExperimentConfig,
    /// The variance threshold FedPBS used, when screening by threshold.
    pub variance_threshold: Option<f64>,
    pub client_sizes: Vec<usize>,
}

impl ExperimentResult {
    pub fn final_record(&self) -> &RoundRecord {
        self.records.last().expect("at least the initial record")
    }
}

/// Load the configured train and test sets (no standardization).
pub fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match &cfg.data {
        DataSource::UciHar { dir } => load_ucihar(dir),
        DataSource::Csv {
            path,
            label_column,
            test_path,
        } => {
            let train = load_csv(path, label_column)?;
            let test = match test_path {
                Some(p) => load_csv(p, label_column)?,
                None => train.clone(),
            };
            if test.dim() != train.dim() {
                return Err(Error::data(format!(
                    "test set has {} features, training set {}",
                    test.dim(),
                    train.dim()
                )));
            }
            if train.label_values() != test.label_values() {
                return Err(Error::data(
                    "test set labels differ from training set labels",
                ));
            }
            Ok((train, test))
        }
        DataSource::Synthetic {
            dim,
            classes,
            per_class,
            test_per_class,
            spread,
        } => {
            let train_seed = seed::derive(cfg.seed, seed::tags::SYNTH, &[0]);
            let test_seed = seed::derive(cfg.seed, seed::tags::SYNTH, &[1]);
            Ok((
                synth_clusters(*dim, *classes, *per_class, *spread, train_seed)?,
                synth_clusters(*dim, *classes, *test_per_class, *spread, test_seed)?,
            ))
        }
    }
}

/// Standardize (if configured) and partition already-loaded data.
pub fn prepare_from(
    cfg: &ExperimentConfig,
    mut train: Dataset,
    mut test: Dataset,
) -> Result<Prepared> {
    if cfg.standardize {
        let reference = train.clone();
        train.standardize_with(&reference)?;
        test.standardize_with(&reference)?;
    }
    let spec = DirichletSpec {
        alpha: cfg.alpha,
        clients: cfg.clients,
        seed: seed::derive(cfg.seed, seed::tags::PARTITION, &[]),
    };
    let mut partition = dirichlet_partition(&train, &spec)?;
    if cfg.rebalance {
        partition = partition.rebalance_min_one()?;
    } else if let Some(q) = partition.first_empty() {
        return Err(Error::config(format!(
            "client {q} received no samples at alpha = {}; enable rebalance or raise alpha",
            cfg.alpha
        )));
    }
    Ok(Prepared {
        train,
        test,
        partition,
    })
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let (train, test) = load_data(cfg)?;
    prepare_from(cfg, train, test)
}

/// Mean cross-entropy and accuracy of `w` on `data`.
pub fn evaluate(spec: &ModelSpec, w: &ParamVector, data: &Dataset) -> Result<(f64, f64)> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let batch = Batch::new(data, &idx);
    let loss = math::loss(spec, w, &batch)?;
    let mut correct = 0usize;
    for (x, y) in batch.iter() {
        if math::predict(spec, w, x)? == y {
            correct += 1;
        }
    }
    Ok((loss, correct as f64 / data.len() as f64))
}

fn model_spec(cfg: &ExperimentConfig, data: &Dataset) -> Result<ModelSpec> {
    ModelSpec::new(data.dim(), cfg.hidden, data.num_classes())
}

fn local_template(cfg: &ExperimentConfig) -> LocalConfig {
    LocalConfig {
        eta: cfg.eta,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        mu: cfg.strategy.mu,
        seed: 0,
        round: 0,
        variance_kind: cfg
            .strategy
            .variance_kind
            .unwrap_or_else(|| cfg.strategy.kind.default_variance_kind()),
        probe_scope: cfg.probe_scope,
    }
}

/// Fill in data-dependent strategy settings; the variance threshold is left
/// at infinity when it still needs calibrating.
fn strategy_config(cfg: &ExperimentConfig, partition: &Partition) -> Result<StrategyConfig> {
    let s = &cfg.strategy;
    let q = partition.num_clients();
    let importance = match &s.importance {
        ImportanceSetting::SampleShare => {
            let sizes = partition.sizes();
            let total: usize = sizes.iter().sum();
            sizes.iter().map(|&n| n as f64 / total as f64).collect()
        }
        ImportanceSetting::Explicit(v) => v.clone(),
    };
    let out = StrategyConfig {
        kind: s.kind,
        mu: s.mu,
        tau: s.tau,
        delta: s.delta,
        batch_threshold: s.batch_threshold,
        variance_threshold: match s.variance_threshold {
            VarianceThresholdSetting::Fixed(v) => v,
            VarianceThresholdSetting::Calibrate => f64::INFINITY,
        },
        importance,
        clients_per_round: s.clients_per_round.unwrap_or(q),
        aggregation: s
            .aggregation
            .unwrap_or_else(|| s.kind.default_aggregation()),
        variance_kind: s
            .variance_kind
            .unwrap_or_else(|| s.kind.default_variance_kind()),
        screen_rule: s.screen_rule,
    };
    out.validate(q)?;
    Ok(out)
}

/// Median of every client's variance probe against `w0` with round-0 seeds.
fn calibrate_threshold(
    ctx: &RoundContext<'_>,
    cfg: &StrategyConfig,
    w0: &ParamVector,
) -> Result<f64> {
    let all: Vec<usize> = (0..ctx.num_clients()).collect();
    let probes: Vec<f64> = ctx
        .executor
        .map(&all, |q| {
            crate::client::probe(
                ctx.spec,
                w0,
                &ctx.shard(q),
                &ctx.local_for(q, cfg.variance_kind, cfg.mu),
            )
            .map(|p| p.variance)
        })
        .into_iter()
        .collect::<Result<_>>()?;
    let m = strategy::median(&probes);
    // A zero median would flag every client with any variance at all.
    Ok(if m > 0.0 { m } else { f64::MIN_POSITIVE })
}

/// Run one experiment end to end.
pub fn run_experiment(cfg: &ExperimentConfig, executor: &Executor) -> Result<ExperimentResult> {
    let prepared = prepare(cfg)?;
    run_prepared(cfg, &prepared, executor)
}

/// Run the round loop on data that is already loaded and partitioned.
pub fn run_prepared(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    executor: &Executor,
) -> Result<ExperimentResult> {
    cfg.validate()?;
    let Prepared {
        train,
        test,
        partition,
    } = prepared;
    if partition.num_clients() != cfg.clients {
        return Err(Error::config(format!(
            "partition has {} clients, config {}",
            partition.num_clients(),
            cfg.clients
        )));
    }
    let spec = model_spec(cfg, train)?;
    let local = local_template(cfg);
    local.validate()?;
    let mut scfg = strategy_config(cfg, partition)?;

    let mut w = spec.init_params(&mut seed::stream(cfg.seed, seed::tags::INIT, &[]));
    let ctx_for = |round: usize| RoundContext {
        spec: &spec,
        data: train,
        partition,
        local,
        master_seed: cfg.seed,
        round,
        executor,
    };

    let screens_by_threshold =
        scfg.kind == StrategyKind::FedPbs && scfg.screen_rule == strategy::ScreenRule::Threshold;
    let variance_threshold = if screens_by_threshold {
        if cfg.strategy.variance_threshold == VarianceThresholdSetting::Calibrate {
            scfg.variance_threshold = calibrate_threshold(&ctx_for(0), &scfg, &w)?;
        }
        Some(scfg.variance_threshold)
    } else {
        None
    };
    let strategy = strategy::build(scfg);

    let (loss0, acc0) = evaluate(&spec, &w, test)?;
    let mut records = vec![RoundRecord {
        round: 0,
        global_loss: loss0,
        global_accuracy: acc0,
        selected: Vec::new(),
        hgv: Vec::new(),
        per_client_variance: Vec::new(),
        wall_ms: 0.0,
    }];

    for r in 0..cfg.rounds {
        let start = Instant::now();
        let outcome = strategy.run_round(&ctx_for(r), &w)?;
        w = outcome.params;
        let t = r + 1;
        if t % cfg.eval_every == 0 || t == cfg.rounds {
            let (global_loss, global_accuracy) = evaluate(&spec, &w, test)?;
            if !global_loss.is_finite() {
                return Err(Error::Numerical {
                    round: r,
                    client: None,
                    reason: "global loss is not finite".into(),
                });
            }
            records.push(RoundRecord {
                round: t,
                global_loss,
                global_accuracy,
                selected: outcome.selection.selected,
                hgv: outcome.selection.hgv_set,
                per_client_variance: outcome.variances,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            });
        }
    }

    Ok(ExperimentResult {
        records,
        final_model: w,
        config: cfg.clone(),
        variance_threshold,
        client_sizes: partition.sizes(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub strategy: StrategyKind,
    pub seed: u64,
    pub final_accuracy: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub alpha: f64,
    pub strategy: StrategyKind,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_loss: f64,
    pub std_loss: f64,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Run every `(alpha, strategy, seed)` cell of the grid on top of `base`.
/// Rows come back in grid order; a failing cell aborts with its coordinates.
pub fn sweep(
    base: &ExperimentConfig,
    alphas: &[f64],
    strategies: &[StrategyKind],
    seeds: &[u64],
    executor: &Executor,
) -> Result<(Vec<SweepRow>, Vec<SweepSummary>)> {
    if alphas.is_empty() || strategies.is_empty() || seeds.is_empty() {
        return Err(Error::config(
            "sweep needs at least one alpha, strategy and seed",
        ));
    }
    // File-backed data is loaded once; synthetic data depends on the seed.
    let cached = match base.data {
        DataSource::Synthetic { .. } => None,
        _ => Some(load_data(base)?),
    };
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for &alpha in alphas {
        for &kind in strategies {
            let mut acc = Vec::new();
            let mut loss = Vec::new();
            for &s in seeds {
                let mut cfg = base.clone();
                cfg.alpha = alpha;
                cfg.strategy.kind = kind;
                cfg.seed = s;
                let cell = || -> Result<ExperimentResult> {
                    cfg.validate()?;
                    let (train, test) = match &cached {
                        Some((a, b)) => (a.clone(), b.clone()),
                        None => load_data(&cfg)?,
                    };
                    let prepared = prepare_from(&cfg, train, test)?;
                    run_prepared(&cfg, &prepared, executor)
                };
                let result = cell().map_err(|e| Error::SweepCell {
                    alpha,
                    strategy: kind.name().to_string(),
                    seed: s,
                    source: Box::new(e),
                })?;
                let last = result.final_record();
                acc.push(last.global_accuracy);
                loss.push(last.global_loss);
                rows.push(SweepRow {
                    alpha,
                    strategy: kind,
                    seed: s,
                    final_accuracy: last.global_accuracy,
                    final_loss: last.global_loss,
                });
            }
            let (mean_accuracy, std_accuracy) = mean_std(&acc);
            let (mean_loss, std_loss) = mean_std(&loss);
            summaries.push(SweepSummary {
                alpha,
                strategy: kind,
                mean_accuracy,
                std_accuracy,
                mean_loss,
                std_loss,
            });
        }
    }
    Ok((rows, summaries))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_uses_sample_deviation() {
        assert_eq!(mean_std(&[3.0]), (3.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn evaluate_counts_correct_predictions() {
        // Bias-only model predicting class 2 everywhere.
        let data = Dataset::new(vec![0.0; 4], vec![1, 2, 2, 2], 1, 2).unwrap();
        let spec = ModelSpec::new(1, 0, 2).unwrap();
        let w = ParamVector::new(vec![0.0, 0.0, 0.0, 1.0]).unwrap();
        let (loss, acc) = evaluate(&spec, &w, &data).unwrap();
        assert_eq!(acc, 0.75);
        assert!(loss > 0.0);
    }
}
