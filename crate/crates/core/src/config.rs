//! Flat `key = value` experiment configuration.
//!
//! One setting per line, `#` starts a comment, unknown keys are rejected and
//! every key is optional. Serialization writes every key in a fixed order
//! with shortest round-trip float formatting, so parse -> write -> parse is
//! the identity on the resolved config.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::client::{ProbeScope, VarianceKind};
use crate::error::{Error, Result};
use crate::strategy::{Aggregation, ScreenRule, StrategyKind, ThresholdRule};

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    UciHar {
        dir: PathBuf,
    },
    Csv {
        path: PathBuf,
        label_column: String,
        test_path: Option<PathBuf>,
    },
    Synthetic {
        dim: usize,
        classes: usize,
        per_class: usize,
        test_per_class: usize,
        spread: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VarianceThresholdSetting {
    Fixed(f64),
    /// Median of all clients' round-0 variances against the initial model.
    Calibrate,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ImportanceSetting {
    /// `N_q / N`.
    SampleShare,
    Explicit(Vec<f64>),
}

/// Strategy settings before data-dependent defaults are filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategySettings {
    pub kind: StrategyKind,
    pub mu: f64,
    pub tau: f64,
    pub delta: ThresholdRule,
    pub batch_threshold: usize,
    pub variance_threshold: VarianceThresholdSetting,
    pub importance: ImportanceSetting,
    /// `None` means every client participates.
    pub clients_per_round: Option<usize>,
    pub aggregation: Option<Aggregation>,
    pub variance_kind: Option<VarianceKind>,
    pub screen_rule: ScreenRule,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub standardize: bool,
    pub hidden: usize,
    pub clients: usize,
    pub alpha: f64,
    pub rebalance: bool,
    pub strategy: StrategySettings,
    pub eta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub probe_scope: ProbeScope,
    pub rounds: usize,
    pub eval_every: usize,
    pub seed: u64,
}

pub const DEFAULT_UCIHAR_DIR: &str = "data/UCI HAR Dataset";

/// All accepted keys, in serialization order.
pub const KEYS: &[&str] = &[
    "data",
    "data_dir",
    "csv_path",
    "csv_label_column",
    "csv_test_path",
    "synth_dim",
    "synth_classes",
    "synth_per_class",
    "synth_test_per_class",
    "synth_spread",
    "standardize",
    "hidden",
    "clients",
    "alpha",
    "rebalance",
    "strategy",
    "mu",
    "tau",
    "delta",
    "batch_threshold",
    "variance_threshold",
    "importance",
    "clients_per_round",
    "aggregation",
    "variance_kind",
    "screen_rule",
    "probe_scope",
    "eta",
    "epochs",
    "batch_size",
    "rounds",
    "eval_every",
    "seed",
];

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSource::UciHar {
                dir: PathBuf::from(DEFAULT_UCIHAR_DIR),
            },
            standardize: false,
            hidden: 64,
            clients: 10,
            alpha: 0.2,
            rebalance: true,
            strategy: StrategySettings {
                kind: StrategyKind::FedPbs,
                mu: 0.01,
                tau: 1.0,
                delta: ThresholdRule::Quantile(0.75),
                batch_threshold: 32,
                variance_threshold: VarianceThresholdSetting::Calibrate,
                importance: ImportanceSetting::SampleShare,
                clients_per_round: None,
                aggregation: None,
                variance_kind: None,
                screen_rule: ScreenRule::Threshold,
            },
            eta: 1e-3,
            epochs: 20,
            batch_size: 64,
            probe_scope: ProbeScope::Batch,
            rounds: 100,
            eval_every: 1,
            seed: 0,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::config(format!(
            "{key}: expected true/false, got {value:?}"
        ))),
    }
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn path_text(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_default()
}

fn parse_threshold_rule(key: &str, value: &str) -> Result<ThresholdRule> {
    if let Some(pct) = value.strip_prefix('p') {
        let pct: f64 = parse_num(key, pct)?;
        return Ok(ThresholdRule::Quantile(pct / 100.0));
    }
    Ok(ThresholdRule::Fixed(parse_num(key, value)?))
}

fn threshold_rule_text(rule: ThresholdRule) -> String {
    match rule {
        ThresholdRule::Fixed(d) => d.to_string(),
        ThresholdRule::Quantile(p) => format!("p{}", p * 100.0),
    }
}

impl ExperimentConfig {
    /// Parse a config document on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut pairs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            pairs.push((key.trim().to_string(), value.trim().to_string()));
        }
        self.apply_pairs(&pairs)
    }

    /// Apply `key=value` overrides.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        let mut pairs = Vec::new();
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::config(format!("override {o:?} is not key=value")))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        self.apply_pairs(&pairs)
    }

    fn apply_pairs(&mut self, pairs: &[(String, String)]) -> Result<()> {
        for (k, _) in pairs {
            if !KEYS.contains(&k.as_str()) {
                return Err(Error::config(format!("unknown key {k:?}")));
            }
        }
        // `data` decides the variant; apply it before its sub-keys.
        let mut sorted: Vec<&(String, String)> = pairs.iter().collect();
        sorted.sort_by_key(|(k, _)| (k != "data") as u8);
        for (k, v) in sorted {
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Set one key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let s = &mut self.strategy;
        match key {
            "data" => {
                self.data = match value {
                    "ucihar" => DataSource::UciHar {
                        dir: PathBuf::from(DEFAULT_UCIHAR_DIR),
                    },
                    "csv" => DataSource::Csv {
                        path: PathBuf::new(),
                        label_column: "label".into(),
                        test_path: None,
                    },
                    "synthetic" => DataSource::Synthetic {
                        dim: 10,
                        classes: 6,
                        per_class: 200,
                        test_per_class: 100,
                        spread: 0.5,
                    },
                    _ => {
                        return Err(Error::config(format!(
                            "data: expected ucihar, csv or synthetic, got {value:?}"
                        )))
                    }
                };
            }
            "data_dir"
            | "csv_path"
            | "csv_label_column"
            | "csv_test_path"
            | "synth_dim"
            | "synth_classes"
            | "synth_per_class"
            | "synth_test_per_class"
            | "synth_spread" => self.set_data_key(key, value)?,
            "standardize" => self.standardize = parse_bool(key, value)?,
            "hidden" => self.hidden = parse_num(key, value)?,
            "clients" => self.clients = parse_num(key, value)?,
            "alpha" => self.alpha = parse_num(key, value)?,
            "rebalance" => self.rebalance = parse_bool(key, value)?,
            "strategy" => s.kind = StrategyKind::parse(value)?,
            "mu" => s.mu = parse_num(key, value)?,
            "tau" => s.tau = parse_num(key, value)?,
            "delta" => s.delta = parse_threshold_rule(key, value)?,
            "batch_threshold" => s.batch_threshold = parse_num(key, value)?,
            "variance_threshold" => {
                s.variance_threshold = if value == "calibrate" {
                    VarianceThresholdSetting::Calibrate
                } else {
                    VarianceThresholdSetting::Fixed(parse_num(key, value)?)
                }
            }
            "importance" => {
                s.importance = if value == "samples" {
                    ImportanceSetting::SampleShare
                } else {
                    ImportanceSetting::Explicit(
                        value
                            .split(',')
                            .map(|v| parse_num(key, v.trim()))
                            .collect::<Result<_>>()?,
                    )
                }
            }
            "clients_per_round" => {
                s.clients_per_round = if value == "all" {
                    None
                } else {
                    Some(parse_num(key, value)?)
                }
            }
            "aggregation" => {
                s.aggregation = if value == "default" {
                    None
                } else {
                    Some(Aggregation::parse(value)?)
                }
            }
            "variance_kind" => {
                s.variance_kind = match value {
                    "default" => None,
                    "gradient" => Some(VarianceKind::Gradient),
                    "loss" => Some(VarianceKind::Loss),
                    _ => {
                        return Err(Error::config(format!(
                            "variance_kind: unknown value {value:?}"
                        )))
                    }
                }
            }
            "screen_rule" => {
                s.screen_rule = match value {
                    "threshold" => ScreenRule::Threshold,
                    "delta" => ScreenRule::Delta,
                    _ => {
                        return Err(Error::config(format!(
                            "screen_rule: unknown value {value:?}"
                        )))
                    }
                }
            }
            "probe_scope" => {
                self.probe_scope = match value {
                    "batch" => ProbeScope::Batch,
                    "full_shard" => ProbeScope::FullShard,
                    _ => {
                        return Err(Error::config(format!(
                            "probe_scope: unknown value {value:?}"
                        )))
                    }
                }
            }
            "eta" => self.eta = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "rounds" => self.rounds = parse_num(key, value)?,
            "eval_every" => self.eval_every = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            _ => return Err(Error::config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    fn set_data_key(&mut self, key: &str, value: &str) -> Result<()> {
        match (&mut self.data, key) {
            (DataSource::UciHar { dir }, "data_dir") => *dir = PathBuf::from(value),
            (DataSource::Csv { path, .. }, "csv_path") => *path = PathBuf::from(value),
            (DataSource::Csv { label_column, .. }, "csv_label_column") => {
                *label_column = value.to_string()
            }
            (DataSource::Csv { test_path, .. }, "csv_test_path") => *test_path = opt_path(value),
            (DataSource::Synthetic { dim, .. }, "synth_dim") => *dim = parse_num(key, value)?,
            (DataSource::Synthetic { classes, .. }, "synth_classes") => {
                *classes = parse_num(key, value)?
            }
            (DataSource::Synthetic { per_class, .. }, "synth_per_class") => {
                *per_class = parse_num(key, value)?
            }
            (DataSource::Synthetic { test_per_class, .. }, "synth_test_per_class") => {
                *test_per_class = parse_num(key, value)?
            }
            (DataSource::Synthetic { spread, .. }, "synth_spread") => {
                *spread = parse_num(key, value)?
            }
            // Keys belonging to another data source are accepted and ignored
            // when empty, so a resolved file always re-parses.
            (_, _) if value.is_empty() => {}
            _ => {
                return Err(Error::config(format!(
                    "{key} does not apply to data = {}",
                    self.data_kind()
                )))
            }
        }
        Ok(())
    }

    pub fn data_kind(&self) -> &'static str {
        match self.data {
            DataSource::UciHar { .. } => "ucihar",
            DataSource::Csv { .. } => "csv",
            DataSource::Synthetic { .. } => "synthetic",
        }
    }

    /// Every key with its resolved value, in [`KEYS`] order. Keys that belong
    /// to an inactive data source have empty values.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let s = &self.strategy;
        KEYS.iter()
            .map(|&k| {
                let v = match k {
                    "data" => self.data_kind().to_string(),
                    "data_dir" => match &self.data {
                        DataSource::UciHar { dir } => dir.display().to_string(),
                        _ => String::new(),
                    },
                    "csv_path" => match &self.data {
                        DataSource::Csv { path, .. } => path.display().to_string(),
                        _ => String::new(),
                    },
                    "csv_label_column" => match &self.data {
                        DataSource::Csv { label_column, .. } => label_column.clone(),
                        _ => String::new(),
                    },
                    "csv_test_path" => match &self.data {
                        DataSource::Csv { test_path, .. } => path_text(test_path),
                        _ => String::new(),
                    },
                    "synth_dim"
                    | "synth_classes"
                    | "synth_per_class"
                    | "synth_test_per_class"
                    | "synth_spread" => match &self.data {
                        DataSource::Synthetic {
                            dim,
                            classes,
                            per_class,
                            test_per_class,
                            spread,
                        } => match k {
                            "synth_dim" => dim.to_string(),
                            "synth_classes" => classes.to_string(),
                            "synth_per_class" => per_class.to_string(),
                            "synth_test_per_class" => test_per_class.to_string(),
                            _ => spread.to_string(),
                        },
                        _ => String::new(),
                    },
                    "standardize" => self.standardize.to_string(),
                    "hidden" => self.hidden.to_string(),
                    "clients" => self.clients.to_string(),
                    "alpha" => self.alpha.to_string(),
                    "rebalance" => self.rebalance.to_string(),
                    "strategy" => s.kind.name().to_string(),
                    "mu" => s.mu.to_string(),
                    "tau" => s.tau.to_string(),
                    "delta" => threshold_rule_text(s.delta),
                    "batch_threshold" => s.batch_threshold.to_string(),
                    "variance_threshold" => match s.variance_threshold {
                        VarianceThresholdSetting::Calibrate => "calibrate".into(),
                        VarianceThresholdSetting::Fixed(v) => v.to_string(),
                    },
                    "importance" => match &s.importance {
                        ImportanceSetting::SampleShare => "samples".into(),
                        ImportanceSetting::Explicit(v) => {
                            v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
                        }
                    },
                    "clients_per_round" => {
                        s.clients_per_round.map_or("all".into(), |c| c.to_string())
                    }
                    "aggregation" => s.aggregation.map_or("default".into(), |a| a.name().into()),
                    "variance_kind" => match s.variance_kind {
                        None => "default".into(),
                        Some(VarianceKind::Gradient) => "gradient".into(),
                        Some(VarianceKind::Loss) => "loss".into(),
                    },
                    "screen_rule" => match s.screen_rule {
                        ScreenRule::Threshold => "threshold".into(),
                        ScreenRule::Delta => "delta".into(),
                    },
                    "probe_scope" => match self.probe_scope {
                        ProbeScope::Batch => "batch".into(),
                        ProbeScope::FullShard => "full_shard".into(),
                    },
                    "eta" => self.eta.to_string(),
                    "epochs" => self.epochs.to_string(),
                    "batch_size" => self.batch_size.to_string(),
                    "rounds" => self.rounds.to_string(),
                    "eval_every" => self.eval_every.to_string(),
                    "seed" => self.seed.to_string(),
                    other => unreachable!("key {other} missing from to_pairs"),
                };
                (k, v)
            })
            .collect()
    }

    /// The resolved document: one `key = value` line per key.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.to_pairs() {
            if v.is_empty() {
                let _ = writeln!(out, "{k} =");
            } else {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }

    /// Check everything that does not need the data.
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::config("rounds must be at least 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every must be at least 1"));
        }
        if self.clients == 0 {
            return Err(Error::config("clients must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::config(format!(
                "eta must be non-negative, got {}",
                self.eta
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be at least 1"));
        }
        if let VarianceThresholdSetting::Fixed(v) = self.strategy.variance_threshold {
            if v.is_nan() || v <= 0.0 {
                return Err(Error::config(format!(
                    "variance_threshold must be positive, got {v}"
                )));
            }
        }
        if let Some(c) = self.strategy.clients_per_round {
            if c == 0 || c > self.clients {
                return Err(Error::config(format!(
                    "clients_per_round must be in 1..={}, got {c}",
                    self.clients
                )));
            }
        }
        if let ImportanceSetting::Explicit(v) = &self.strategy.importance {
            if v.len() != self.clients {
                return Err(Error::config(format!(
                    "importance lists {} weights for {} clients",
                    v.len(),
                    self.clients
                )));
            }
        }
        if self.strategy.kind.uses_prox() && self.eta * self.strategy.mu >= 2.0 {
            return Err(Error::config(format!(
                "eta * mu = {} >= 2 makes the proximal step divergent",
                self.eta * self.strategy.mu
            )));
        }
        if let DataSource::Synthetic {
            dim,
            classes,
            per_class,
            test_per_class,
            spread,
        } = self.data
        {
            if dim == 0
                || classes < 2
                || per_class == 0
                || test_per_class == 0
                || spread.is_nan()
                || spread <= 0.0
            {
                return Err(Error::config("invalid synthetic data settings"));
            }
        }
        Ok(())
    }
}
