//! CSV and JSON writers for experiment and sweep results.
//!
//! CSV floats use `{:.16e}` (17 significant digits, exact round-trip); JSON
//! floats use serde_json's shortest round-trip form.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::ser::{SerializeMap, Serializer};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::sim::{ExperimentResult, RoundRecord, SweepRow, SweepSummary};

fn f(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn rounds_csv(records: &[RoundRecord]) -> String {
    let mut out = String::from("round,global_loss,global_accuracy,n_selected,n_hgv\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.round,
            f(r.global_loss),
            f(r.global_accuracy),
            r.selected.len(),
            r.hgv.len()
        );
    }
    out
}

/// Per-round wall-clock times; kept apart from the deterministic outputs.
pub fn timing_csv(records: &[RoundRecord]) -> String {
    let mut out = String::from("round,wall_ms\n");
    for r in records {
        let _ = writeln!(out, "{},{:.3}", r.round, r.wall_ms);
    }
    out
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("alpha,strategy,seed,final_accuracy,final_loss\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.alpha,
            r.strategy.name(),
            r.seed,
            f(r.final_accuracy),
            f(r.final_loss)
        );
    }
    out
}

pub fn summary_csv(rows: &[SweepSummary]) -> String {
    let mut out = String::from("alpha,strategy,mean_accuracy,std_accuracy,mean_loss,std_loss\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.alpha,
            r.strategy.name(),
            f(r.mean_accuracy),
            f(r.std_accuracy),
            f(r.mean_loss),
            f(r.std_loss)
        );
    }
    out
}

struct ConfigEcho<'a>(&'a ExperimentConfig);

impl Serialize for ConfigEcho<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let pairs = self.0.to_pairs();
        let mut map = s.serialize_map(Some(pairs.len()))?;
        for (k, v) in &pairs {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

#[derive(Serialize)]
struct ResultJson<'a> {
    config: ConfigEcho<'a>,
    variance_threshold: Option<f64>,
    client_sizes: &'a [usize],
    records: &'a [RoundRecord],
    final_model: &'a [f64],
}

/// Deterministic JSON form of a result: identical inputs give identical bytes.
pub fn result_json(result: &ExperimentResult) -> String {
    let doc = ResultJson {
        config: ConfigEcho(&result.config),
        variance_threshold: result.variance_threshold,
        client_sizes: &result.client_sizes,
        records: &result.records,
        final_model: result.final_model.as_slice(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("result serializes");
    s.push('\n');
    s
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Write `rounds.csv`, `result.json`, `timing.csv` and `config.resolved`
/// into `dir`.
pub fn write_run(dir: &Path, result: &ExperimentResult) -> Result<()> {
    write_file(&dir.join("rounds.csv"), &rounds_csv(&result.records))?;
    write_file(&dir.join("result.json"), &result_json(result))?;
    write_file(&dir.join("timing.csv"), &timing_csv(&result.records))?;
    write_file(&dir.join("config.resolved"), &result.config.to_text())
}

pub fn write_sweep(dir: &Path, rows: &[SweepRow], summaries: &[SweepSummary]) -> Result<()> {
    write_file(&dir.join("sweep.csv"), &sweep_csv(rows))?;
    write_file(&dir.join("summary.csv"), &summary_csv(summaries))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(round: usize, loss: f64) -> RoundRecord {
        RoundRecord {
            round,
            global_loss: loss,
            global_accuracy: 0.5,
            selected: vec![0, 2],
            hgv: vec![2],
            per_client_variance: vec![(0, 0.1), (2, 0.3)],
            wall_ms: 1.0,
        }
    }

    #[test]
    fn rounds_csv_round_trips_floats() {
        let loss = 0.1 + 0.2;
        let csv = rounds_csv(&[record(3, loss)]);
        let line = csv.lines().nth(1).unwrap();
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[0], "3");
        assert_eq!(cols[1].parse::<f64>().unwrap(), loss);
        assert_eq!(&cols[3..], &["2", "1"]);
    }

    #[test]
    fn write_creates_directories() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b/c.txt");
        write_file(&p, "x").unwrap();
        assert_eq!(fs::read_to_string(p).unwrap(), "x");
    }
}
