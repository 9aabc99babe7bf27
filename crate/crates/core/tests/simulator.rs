use fedpbs_core::config::{DataSource, VarianceThresholdSetting};
use fedpbs_core::data::{synth_clusters, Dataset};
use fedpbs_core::math::{self, ModelSpec, ParamVector};
use fedpbs_core::output;
use fedpbs_core::sim::{self, evaluate, run_experiment};
use fedpbs_core::strategy::Aggregation;
use fedpbs_core::{seed, Error, Executor, ExperimentConfig, StrategyKind};

fn blobs(dim: usize, classes: usize, per_class: usize, spread: f64) -> ExperimentConfig {
    ExperimentConfig {
        data: DataSource::Synthetic {
            dim,
            classes,
            per_class,
            test_per_class: per_class / 2,
            spread,
        },
        ..Default::default()
    }
}

fn small(kind: StrategyKind) -> ExperimentConfig {
    let mut c = blobs(4, 3, 40, 0.4);
    c.clients = 4;
    c.alpha = 0.5;
    c.hidden = 5;
    c.epochs = 2;
    c.batch_size = 8;
    c.eta = 0.05;
    c.rounds = 4;
    c.seed = 11;
    c.strategy.kind = kind;
    c
}

#[test]
fn one_round_with_zero_step_keeps_initial_model() {
    let mut c = small(StrategyKind::FedAvg);
    c.clients = 1;
    c.rounds = 1;
    c.eta = 0.0;
    let r = run_experiment(&c, &Executor::sequential()).unwrap();
    let p = sim::prepare(&c).unwrap();
    let spec = ModelSpec::new(4, 5, 3).unwrap();
    let w0 = spec.init_params(&mut seed::stream(c.seed, seed::tags::INIT, &[]));
    assert_eq!(r.final_model, w0);
    let (loss, acc) = evaluate(&spec, &w0, &p.test).unwrap();
    assert_eq!(r.final_record().global_accuracy, acc);
    assert_eq!(r.final_record().global_loss, loss);
    assert_eq!(r.records.len(), 2);
}

#[test]
fn reruns_serialize_identically_for_every_strategy() {
    for kind in StrategyKind::ALL {
        let c = small(kind);
        let a = output::result_json(&run_experiment(&c, &Executor::sequential()).unwrap());
        let b = output::result_json(&run_experiment(&c, &Executor::sequential()).unwrap());
        let par = run_experiment(&c, &Executor::with_threads(4).unwrap()).unwrap();
        assert_eq!(a, b, "{}", kind.name());
        assert_eq!(
            a,
            output::result_json(&par),
            "{} with 4 threads",
            kind.name()
        );
    }
}

#[test]
fn records_follow_the_evaluation_schedule() {
    let mut c = small(StrategyKind::FedPbs);
    c.rounds = 7;
    c.eval_every = 3;
    let r = run_experiment(&c, &Executor::sequential()).unwrap();
    let rounds: Vec<usize> = r.records.iter().map(|x| x.round).collect();
    assert_eq!(rounds, vec![0, 3, 6, 7]);
    for rec in &r.records {
        assert!((0.0..=1.0).contains(&rec.global_accuracy));
        assert!(rec.global_loss.is_finite() && rec.global_loss >= 0.0);
        assert!(rec.hgv.iter().all(|q| rec.selected.contains(q)));
    }
    assert!(r.variance_threshold.unwrap() > 0.0);

    c.rounds = 10;
    c.eval_every = 1;
    let r = run_experiment(&c, &Executor::sequential()).unwrap();
    assert_eq!(r.records.len(), 11);
}

#[test]
fn resolved_config_is_byte_stable() {
    let c = small(StrategyKind::FedBs);
    let r = run_experiment(&c, &Executor::sequential()).unwrap();
    let text = r.config.to_text();
    assert_eq!(ExperimentConfig::parse(&text).unwrap().to_text(), text);
}

/// Pooled data on one client trained for many epochs: the reference a
/// federated run on an IID split should get close to.
fn centralized_accuracy(c: &ExperimentConfig) -> f64 {
    let mut central = c.clone();
    central.clients = 1;
    central.rounds = 1;
    central.epochs = 60;
    central.strategy.kind = StrategyKind::FedAvg;
    run_experiment(&central, &Executor::sequential())
        .unwrap()
        .final_record()
        .global_accuracy
}

#[test]
fn fedavg_on_separable_blobs_matches_centralized_training() {
    let mut c = blobs(4, 4, 150, 0.15);
    c.hidden = 0;
    c.alpha = 100.0;
    c.eta = 0.05;
    c.epochs = 2;
    c.batch_size = 16;
    c.rounds = 30;
    c.strategy.kind = StrategyKind::FedAvg;
    let oracle = centralized_accuracy(&c);
    assert!(oracle > 0.99, "centralized accuracy {oracle}");
    let fed = run_experiment(&c, &Executor::with_threads(4).unwrap()).unwrap();
    let acc = fed.final_record().global_accuracy;
    assert!(acc > 0.95, "federated accuracy {acc}");
    assert!(oracle - acc <= 0.05);
}

#[test]
fn loss_drops_for_every_strategy_with_reference_step_sizes() {
    for kind in StrategyKind::ALL {
        let mut c = blobs(6, 4, 60, 0.3);
        c.hidden = 8;
        c.rounds = 10;
        c.strategy.kind = kind;
        let r = run_experiment(&c, &Executor::with_threads(4).unwrap()).unwrap();
        let first = r.records[0].global_loss;
        let last = r.final_record().global_loss;
        assert!(last < first, "{}: {first} -> {last}", kind.name());
    }
}

#[test]
fn zero_model_on_balanced_binary_set() {
    let data = Dataset::new(vec![0.3, -1.0, 2.0, 0.5], vec![1, 2, 1, 2], 1, 2).unwrap();
    let spec = ModelSpec::new(1, 0, 2).unwrap();
    let (loss, acc) = evaluate(&spec, &ParamVector::zeros(spec.param_count()), &data).unwrap();
    assert!((loss - 2f64.ln()).abs() < 1e-15);
    // Ties go to class 1, which holds half the samples.
    assert_eq!(acc, 0.5);
}

#[test]
fn duplicated_test_set_scores_identically() {
    let data = synth_clusters(3, 3, 20, 0.5, 9).unwrap();
    let idx: Vec<usize> = (0..data.len()).chain(0..data.len()).collect();
    let doubled = data.subset(&idx).unwrap();
    let spec = ModelSpec::new(3, 4, 3).unwrap();
    let w = spec.init_params(&mut seed::stream(1, "test", &[]));
    let (l1, a1) = evaluate(&spec, &w, &data).unwrap();
    let (l2, a2) = evaluate(&spec, &w, &doubled).unwrap();
    assert!((l1 - l2).abs() < 1e-14);
    assert_eq!(a1, a2);
}

#[test]
fn converged_model_is_perfect_on_separable_blobs() {
    let data = synth_clusters(2, 2, 50, 0.1, 3).unwrap();
    let spec = ModelSpec::new(2, 0, 2).unwrap();
    let idx: Vec<usize> = (0..data.len()).collect();
    let batch = fedpbs_core::data::Batch::new(&data, &idx);
    let mut w = ParamVector::zeros(spec.param_count());
    for _ in 0..500 {
        let (_, g) = math::loss_and_grad(&spec, &w, &batch).unwrap();
        let next: Vec<f64> = w
            .as_slice()
            .iter()
            .zip(g.as_slice())
            .map(|(v, g)| v - 0.5 * g)
            .collect();
        w = ParamVector::new(next).unwrap();
    }
    assert_eq!(evaluate(&spec, &w, &data).unwrap().1, 1.0);
}

#[test]
fn empty_client_without_rebalancing_is_named() {
    let mut c = small(StrategyKind::FedAvg);
    c.clients = 8;
    c.alpha = 0.01;
    c.rebalance = false;
    let err = (0..20)
        .find_map(|s| {
            c.seed = s;
            sim::prepare(&c).err()
        })
        .expect("some seed leaves a client empty");
    assert!(matches!(err, Error::Config(_)));
    assert!(err.to_string().contains("client"));
    c.rebalance = true;
    let p = sim::prepare(&c).unwrap();
    assert!(p.partition.sizes().iter().all(|&n| n >= 1));
}

#[test]
fn sweep_counts_and_single_cell_equivalence() {
    let base = small(StrategyKind::FedAvg);
    let exec = Executor::sequential();
    let (rows, summary) = sim::sweep(
        &base,
        &[0.5],
        &[StrategyKind::FedPbs, StrategyKind::FedBs],
        &[1, 2, 3],
        &exec,
    )
    .unwrap();
    assert_eq!((rows.len(), summary.len()), (6, 2));

    for s in &summary {
        let acc: Vec<f64> = rows
            .iter()
            .filter(|r| r.strategy == s.strategy)
            .map(|r| r.final_accuracy)
            .collect();
        let mean = acc.iter().sum::<f64>() / 3.0;
        let std = (acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 2.0).sqrt();
        assert!((s.mean_accuracy - mean).abs() < 1e-15);
        assert!((s.std_accuracy - std).abs() < 1e-15);
    }

    let (one, _) = sim::sweep(
        &base,
        &[base.alpha],
        &[base.strategy.kind],
        &[base.seed],
        &exec,
    )
    .unwrap();
    let direct = run_experiment(&base, &exec).unwrap();
    assert_eq!(one[0].final_accuracy, direct.final_record().global_accuracy);
    assert_eq!(one[0].final_loss, direct.final_record().global_loss);
}

#[test]
fn sweep_errors_name_the_cell() {
    let mut base = small(StrategyKind::FedProx);
    base.eta = 1.0;
    base.strategy.mu = 3.0;
    let err = sim::sweep(
        &base,
        &[0.5],
        &[StrategyKind::FedAvg, StrategyKind::FedProx],
        &[4],
        &Executor::sequential(),
    )
    .unwrap_err();
    match &err {
        Error::SweepCell { strategy, seed, .. } => {
            assert_eq!(strategy, "fedprox");
            assert_eq!(*seed, 4);
        }
        other => panic!("unexpected {other}"),
    }
    assert!(matches!(err.root(), Error::Config(_)));
}

#[test]
fn fixed_threshold_and_soft_aggregation_modes_run() {
    let mut c = small(StrategyKind::FedPbs);
    c.strategy.variance_threshold = VarianceThresholdSetting::Fixed(1e-300);
    c.strategy.aggregation = Some(Aggregation::SoftVariance);
    let r = run_experiment(&c, &Executor::sequential()).unwrap();
    assert_eq!(r.variance_threshold, Some(1e-300));
    // Every selected client fails a threshold this small.
    for rec in &r.records[1..] {
        assert_eq!(rec.hgv, rec.selected);
    }
}
