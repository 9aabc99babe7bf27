//! Deterministic federated-learning simulator.
//!
//! A softmax-regression or one-hidden-layer MLP is trained across simulated
//! clients whose data is split by a Dirichlet label-skew partition. Four
//! coordinator strategies are provided: FedAvg, FedProx, FedBS (probe every
//! client, keep the lowest-variance ones) and FedPBS (screen sampled clients
//! on batch size and variance, send unstable ones through proximal SGD).
//!
//! Every random draw comes from a named substream of one master seed, and all
//! reductions run in client-id order, so results do not depend on the number
//! of worker threads.

pub mod client;
pub mod config;
pub mod data;
mod error;
pub mod exec;
pub mod math;
pub mod output;
pub mod seed;
pub mod sim;
pub mod strategy;

pub use client::{ClientReport, ClientShard, LocalConfig, ProbeScope, TrainingPath, VarianceKind};
pub use config::{DataSource, ExperimentConfig};
pub use error::{Error, Result};
pub use exec::Executor;
pub use math::{Gradient, ModelSpec, ParamVector};
pub use sim::{evaluate, run_experiment, sweep, ExperimentResult, RoundRecord};
pub use strategy::{Aggregation, Strategy, StrategyConfig, StrategyKind};
