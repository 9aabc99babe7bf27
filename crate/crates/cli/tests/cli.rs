use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
data = synthetic
synth_dim = 4
synth_classes = 3
synth_per_class = 30
synth_test_per_class = 10
clients = 4
hidden = 4
epochs = 2
batch_size = 8
eta = 0.05
rounds = 6
eval_every = 2
";

fn fedpbs(args: &[&str], threads: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedpbs"))
        .args(args)
        .env("FEDPBS_THREADS", threads)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path) -> String {
    let p = dir.join("small.cfg");
    fs::write(&p, SMALL).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn run_writes_all_outputs_with_expected_row_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("run");
    let o = fedpbs(&["run", "-c", &cfg, "-o", out.to_str().unwrap()], "1");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rounds = fs::read_to_string(out.join("rounds.csv")).unwrap();
    let mut lines = rounds.lines();
    assert_eq!(
        lines.next(),
        Some("round,global_loss,global_accuracy,n_selected,n_hgv")
    );
    // rounds / eval_every + 1 rows.
    assert_eq!(lines.count(), 6 / 2 + 1);
    assert!(!rounds.contains('\r'));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("result.json")).unwrap()).unwrap();
    assert_eq!(json["records"].as_array().unwrap().len(), 4);
    assert_eq!(json["config"]["rounds"], "6");
    assert!(!json["final_model"].as_array().unwrap().is_empty());

    // The resolved config reproduces the run byte for byte.
    let again = dir.path().join("again");
    let resolved = out.join("config.resolved");
    let o = fedpbs(
        &[
            "run",
            "-c",
            resolved.to_str().unwrap(),
            "-o",
            again.to_str().unwrap(),
        ],
        "3",
    );
    assert!(o.status.success());
    assert_eq!(
        rounds,
        fs::read_to_string(again.join("rounds.csv")).unwrap()
    );
    assert_eq!(
        fs::read_to_string(out.join("result.json")).unwrap(),
        fs::read_to_string(again.join("result.json")).unwrap()
    );
    assert_eq!(
        fs::read_to_string(&resolved).unwrap(),
        fs::read_to_string(again.join("config.resolved")).unwrap()
    );
}

#[test]
fn seed_override_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let mut outputs = Vec::new();
    for (name, seed) in [("a", "seed=9"), ("b", "seed=9"), ("c", "seed=10")] {
        let out = dir.path().join(name);
        let o = fedpbs(
            &[
                "run",
                "-c",
                &cfg,
                "--set",
                seed,
                "-o",
                out.to_str().unwrap(),
            ],
            "2",
        );
        assert!(o.status.success());
        outputs.push(fs::read_to_string(out.join("rounds.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_ne!(outputs[0], outputs[2]);
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("x");
    let out = out.to_str().unwrap();

    let o = fedpbs(&["run", "-c", &cfg, "--set", "etaa=0.1", "-o", out], "1");
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("etaa"));

    let o = fedpbs(
        &[
            "run",
            "--set",
            "data=ucihar",
            "--set",
            "data_dir=/nonexistent/har",
            "-o",
            out,
        ],
        "1",
    );
    assert_eq!(o.status.code(), Some(3));

    let bad_csv = dir.path().join("bad.csv");
    fs::write(&bad_csv, "a,label\n1.0,1\nnot-a-number,2\n").unwrap();
    let o = fedpbs(
        &[
            "run",
            "--set",
            "data=csv",
            "--set",
            &format!("csv_path={}", bad_csv.display()),
            "-o",
            out,
        ],
        "1",
    );
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );

    // A step this large overflows a linear model's parameters.
    let o = fedpbs(
        &[
            "run",
            "-c",
            &cfg,
            "--set",
            "eta=1e308",
            "--set",
            "hidden=0",
            "--set",
            "strategy=fedavg",
            "-o",
            out,
        ],
        "1",
    );
    assert_eq!(
        o.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );

    let o = fedpbs(&["run", "-c", &cfg, "-o", out], "zero");
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_writes_grid_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("sweep");
    let o = fedpbs(
        &[
            "sweep",
            "-c",
            &cfg,
            "--set",
            "rounds=2",
            "--alphas",
            "0.2,0.5,1.0",
            "--strategies",
            "fedpbs,fedbs,fedprox",
            "--seeds",
            "1,2,3",
            "-o",
            out.to_str().unwrap(),
        ],
        "4",
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let sweep = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows: Vec<Vec<String>> = sweep
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    assert_eq!(
        sweep.lines().next(),
        Some("alpha,strategy,seed,final_accuracy,final_loss")
    );
    assert_eq!(rows.len(), 27);

    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(
        summary.lines().next(),
        Some("alpha,strategy,mean_accuracy,std_accuracy,mean_loss,std_loss")
    );
    let summary: Vec<Vec<String>> = summary
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    assert_eq!(summary.len(), 9);
    for s in &summary {
        let acc: Vec<f64> = rows
            .iter()
            .filter(|r| r[0] == s[0] && r[1] == s[1])
            .map(|r| r[3].parse().unwrap())
            .collect();
        assert_eq!(acc.len(), 3);
        let mean = acc.iter().sum::<f64>() / 3.0;
        let std = (acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 2.0).sqrt();
        assert!((s[2].parse::<f64>().unwrap() - mean).abs() < 1e-15);
        assert!((s[3].parse::<f64>().unwrap() - std).abs() < 1e-15);
    }

    let o = fedpbs(
        &[
            "sweep",
            "-c",
            &cfg,
            "--alphas",
            "0.2",
            "--strategies",
            "moon",
            "--seeds",
            "1",
            "-o",
            out.to_str().unwrap(),
        ],
        "1",
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn partition_report_conserves_class_totals() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("parts.csv");
    let o = fedpbs(
        &[
            "partition-report",
            "-c",
            &cfg,
            "--set",
            "alpha=0.05",
            "-o",
            out.to_str().unwrap(),
        ],
        "1",
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("client,class_1,class_2,class_3"));
    let mut sums = [0usize; 3];
    let mut clients = 0;
    for line in lines {
        let cols: Vec<usize> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(cols[0], clients);
        for k in 0..3 {
            sums[k] += cols[k + 1];
        }
        clients += 1;
    }
    assert_eq!(clients, 4);
    assert_eq!(sums, [30, 30, 30]);
}
