use assert_cmd::Command;
use predicates::prelude::*;

fn racam() -> Command {
    let mut c = Command::cargo_bin("racam").unwrap();
    c.env_remove("RACAM_CONFIG");
    c
}

#[test]
fn gemm_writes_report_and_candidate_log() {
    let dir = tempfile::tempdir().unwrap();
    racam()
        .args([
            "--preset",
            "desk_small",
            "--mode",
            "gemm",
            "--shape",
            "8x16x8",
            "--out",
        ])
        .arg(dir.path())
        .assert()
        .success()
        .stdout(predicate::str::contains("best mapping"));
    let csv = std::fs::read_to_string(dir.path().join("candidates.csv")).unwrap();
    // version stamp, header, then one row per candidate
    assert_eq!(csv.lines().count(), 2 + 1458);
    assert!(csv.lines().next().unwrap().starts_with("# racam "));
    assert!(dir.path().join("report.json").exists());
    assert!(dir.path().join("summary.txt").exists());
}

#[test]
fn precision_sweep_has_three_rows() {
    let dir = tempfile::tempdir().unwrap();
    racam()
        .args([
            "--preset",
            "desk_small",
            "--mode",
            "sweep",
            "--sweep",
            "precision",
            "--shape",
            "4x32x4",
            "--precisions",
            "8,4,2",
            "--out",
        ])
        .arg(dir.path())
        .assert()
        .success();
    let csv = std::fs::read_to_string(dir.path().join("sweep_precision.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows[0], "precision,mapping,pim_ns,io_ns,total_ns,latency_ratio");
    assert_eq!(rows.len(), 4);
}

#[test]
fn config_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.toml");
    let desk = racam_core::config::preset("desk_small").unwrap();
    std::fs::write(&path, desk.render()).unwrap();
    racam()
        .env("RACAM_CONFIG", &path)
        .args(["--shape", "2x4x2"])
        .assert()
        .success()
        .stdout(predicate::str::contains(desk.hash()));
}

#[test]
fn llm_scenario_reports_throughput() {
    let dir = tempfile::tempdir().unwrap();
    racam()
        .args([
            "--preset",
            "racam_full",
            "--mode",
            "llm",
            "--model",
            "llama3-8b",
            "--scenario",
            "context_understanding",
            "--out",
        ])
        .arg(dir.path())
        .assert()
        .success()
        .stdout(predicate::str::contains("tok/s"));
    let kernels = std::fs::read_to_string(dir.path().join("kernels.csv")).unwrap();
    let mut lines = kernels.lines();
    assert!(lines.next().unwrap().starts_with("# racam "));
    assert_eq!(
        lines.next().unwrap(),
        "stage,role,m,k,n,count,mapping,pim_ns,io_ns,total_ns"
    );
    let stream = std::fs::read_to_string(dir.path().join("stream.csv")).unwrap();
    // both stages, through the last of the 32 layers
    assert!(stream.contains("\nprefill,0,") && stream.contains("\ndecode,31,"));
}

#[test]
fn bad_input_fails_with_a_diagnostic() {
    racam()
        .args(["--mode", "gemm", "--shape", "8x0x8"])
        .assert()
        .failure()
        .stderr(predicate::str::contains("racam:"));
    racam()
        .args(["--mode", "gemm", "--shape", "8x8x8", "--ablate", "xx"])
        .assert()
        .failure();
    racam()
        .args(["--preset", "nope", "--shape", "8x8x8"])
        .assert()
        .failure();
    racam().args(["--mode", "sweep"]).assert().failure();
}

#[test]
fn ablation_flags_show_in_the_summary() {
    racam()
        .args([
            "--preset",
            "desk_small",
            "--shape",
            "4x8x4",
            "--ablate",
            "lb,bu",
            "--log-trace",
        ])
        .assert()
        .success()
        .stdout(predicate::str::contains("ablation lb+bu"));
}
