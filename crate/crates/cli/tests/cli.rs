use std::path::Path;
use std::process::{Command, Output};

use separ_core::harness::dataset::write_dataset;
use separ_core::samplers::sample_matrix_t;

fn separ(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_separ")).args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn dataset(dir: &Path) -> String {
    let path = dir.join("data.csv");
    write_dataset(&path, &sample_matrix_t(600, 3, 3, 9.0, 4).unwrap()).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn norm_report_shows_statistic_mixture_and_p_value() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let out = separ(&["test", "--p1", "3", "--p2", "3", "--method", "norm", &data]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("[norm]"));
    assert!(text.contains("*chi2(25) + ") && text.contains("*chi2(9)"), "{text}");
    assert!(text.contains("p-value"));
    assert!(!text.contains("[wald]"));
}

#[test]
fn both_runs_norm_and_wald() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let out = separ(&["test", "--p1", "3", "--p2", "3", "--method", "both", &data]);
    let text = stdout(&out);
    assert_eq!(out.status.code(), Some(0));
    assert!(text.contains("[norm]") && text.contains("[wald]") && !text.contains("[lrt]"), "{text}");
}

#[test]
fn json_output_is_structured() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let out = separ(&["test", "--p1", "3", "--p2", "3", "--method", "all", "--format", "json", "--level", "0.05", &data]);
    assert_eq!(out.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["n"], 600);
    let reports = doc["reports"].as_array().unwrap();
    let methods: Vec<&str> = reports.iter().map(|r| r["method"].as_str().unwrap()).collect();
    assert_eq!(methods, ["norm", "wald", "lrt"]);
    assert_eq!(reports[0]["null_law"]["kind"], "mixture");
    assert_eq!(reports[2]["null_law"]["df"], 34);
    for r in reports {
        let p = r["p_value"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&p));
        assert_eq!(r["reject_at"][0][1].as_bool().unwrap(), p < 0.05);
    }
}

#[test]
fn rejection_is_not_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("alt.csv");
    let sample = separ_core::samplers::local_alternative(&sample_matrix_t(2000, 3, 3, f64::INFINITY, 2).unwrap(), 40.0);
    write_dataset(&path, &sample).unwrap();
    let out = separ(&["test", "--p1", "3", "--p2", "3", "--method", "norm", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("0.05: reject"), "{}", stdout(&out));
}

#[test]
fn malformed_csv_exits_2_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "a,b,c,d\n1,2,3,4\n1,2,three,4\n").unwrap();
    let out = separ(&["test", "--p1", "2", "--p2", "2", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));

    std::fs::write(&path, "1,2,3,4\n1,2,3\n").unwrap();
    let out = separ(&["test", "--p1", "2", "--p2", "2", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 2"));

    let out = separ(&["test", "--p1", "2", "--p2", "2", "/nonexistent/data.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn singular_covariance_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("flat.csv");
    // Last coordinate is constant, so the sample covariance is singular.
    let rows: String = (0..50).map(|i| format!("{},{},{},0\n", i % 7, (i * i) % 11, (i * 3) % 5)).collect();
    std::fs::write(&path, rows).unwrap();
    let out = separ(&["test", "--p1", "2", "--p2", "2", "--method", "norm", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn simulate_writes_deterministic_csv() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("grid.toml");
    std::fs::write(
        &config,
        "dims = [[2, 2]]\nsample_sizes = [120]\nnus = [\"inf\", 6]\ntaus = [0, 4]\nreplicates = 20\nlevel = 0.05\nmethods = [\"norm\", \"lrt\"]\nmaster_seed = 3\n",
    )
    .unwrap();
    let out_a = dir.path().join("a.csv");
    let run = |out: &Path| separ(&["simulate", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(run(&out_a).status.code(), Some(0));
    let text = std::fs::read_to_string(&out_a).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("p1,p2,nu,n,tau,method,rejections,replicates,rate,failures,seed"));
    assert_eq!(lines.count(), 2 * 2 * 2);

    let stdout_run = separ(&["simulate", "--config", config.to_str().unwrap()]);
    assert_eq!(stdout(&stdout_run), text);

    let reseeded = separ(&["simulate", "--config", config.to_str().unwrap(), "--seed", "4"]);
    assert!(stdout(&reseeded).lines().nth(1).unwrap().ends_with(",4"));
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("grid.toml");
    std::fs::write(&config, "dims = [[3, 3]]\nreplicates = 0\n").unwrap();
    let out = separ(&["simulate", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn verify_haar_passes() {
    let out = separ(&["verify", "--suite", "haar", "--seed", "1", "--draws", "200000"]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert_eq!(stdout(&out).lines().filter(|l| l.starts_with("[PASS]")).count(), 3);
}

#[test]
fn verify_failure_exits_4() {
    let out = separ(&["verify", "--suite", "haar", "--seed", "1", "--draws", "50"]);
    assert_eq!(out.status.code(), Some(4), "{}", stdout(&out));
    assert!(stdout(&out).contains("[FAIL]"));
}
