use std::path::Path;
use std::process::{Command, Output};

use tempfile::tempdir;

use snspp::diagnostics::{read_trace, RunSummary};
use snspp::experiment::SweepRow;
use snspp::monitor::RunStatus;

fn snspp(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_snspp"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("SNSPP_OUT_DIR")
        .output()
        .unwrap()
}

fn ok(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status.code(),
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
}

fn files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    v.sort();
    v
}

fn summary(path: &Path) -> RunSummary {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn sweep_rows(path: &Path) -> Vec<SweepRow> {
    csv::Reader::from_path(path)
        .unwrap()
        .deserialize()
        .map(|r| r.unwrap())
        .collect()
}

#[test]
fn run_writes_one_trace_per_method_and_seed() {
    let dir = tempdir().unwrap();
    let o = snspp(
        &[
            "run",
            "--method",
            "snspp,svrg",
            "--seeds",
            "1,2",
            "--budget-epochs",
            "5",
        ],
        dir.path(),
    );
    ok(&o);
    let traces = files(&dir.path().join("traces"));
    assert_eq!(
        traces,
        ["snspp_seed1.csv", "snspp_seed2.csv", "svrg_seed1.csv", "svrg_seed2.csv"]
    );
    assert_eq!(files(&dir.path().join("summaries")).len(), 4);
    assert!(dir.path().join("config.toml").exists());
    for t in &traces {
        let recs = read_trace(&dir.path().join("traces").join(t)).unwrap();
        assert!(recs.len() >= 2);
        assert_eq!((recs[0].s, recs[0].k, recs[0].grad_evals), (0, 0, 0));
        assert!(recs.windows(2).all(|w| w[0].grad_evals <= w[1].grad_evals));
        // Budget of 5 epochs over N = 100 samples, overshoot at most one outer iteration.
        assert!(recs.last().unwrap().grad_evals <= 5 * 100 + 2 * 100);
    }
}

#[test]
fn rerun_gives_byte_identical_summaries() {
    let (a, b) = (tempdir().unwrap(), tempdir().unwrap());
    let args = ["run", "--seeds", "3", "--budget-epochs", "3", "--workers", "2"];
    ok(&snspp(&args, a.path()));
    ok(&snspp(&args, b.path()));
    let names = files(&a.path().join("summaries"));
    assert_eq!(names.len(), 5);
    for n in names {
        let x = std::fs::read(a.path().join("summaries").join(&n)).unwrap();
        let y = std::fs::read(b.path().join("summaries").join(&n)).unwrap();
        assert_eq!(x, y, "{n} differs");
    }
}

#[test]
fn written_config_reproduces_the_run() {
    let (a, b) = (tempdir().unwrap(), tempdir().unwrap());
    ok(&snspp(
        &["run", "--method", "saga", "--alpha", "0.05", "--budget-epochs", "2"],
        a.path(),
    ));
    let cfg = a.path().join("config.toml");
    ok(&snspp(&["run", "--config", cfg.to_str().unwrap()], b.path()));
    let x = std::fs::read(a.path().join("summaries/saga_seed0.json")).unwrap();
    let y = std::fs::read(b.path().join("summaries/saga_seed0.json")).unwrap();
    assert_eq!(x, y);
}

#[test]
fn stop_rule_terminates_every_method() {
    let dir = tempdir().unwrap();
    ok(&snspp(
        &["run", "--stop-rel", "1e-4", "--budget-epochs", "5000"],
        dir.path(),
    ));
    for n in files(&dir.path().join("summaries")) {
        let s = summary(&dir.path().join("summaries").join(&n));
        assert_eq!(s.status, RunStatus::Stopped, "{n}");
        assert!(s.epochs_to_threshold.is_some(), "{n}");
    }
}

#[test]
fn sweep_has_one_row_per_cell() {
    let dir = tempdir().unwrap();
    ok(&snspp(
        &[
            "sweep",
            "--method",
            "svrg,saga",
            "--alpha",
            "0.01,0.02",
            "--batch",
            "1,5",
            "--seeds",
            "0,1",
            "--budget-epochs",
            "50",
        ],
        dir.path(),
    ));
    let rows = sweep_rows(&dir.path().join("sweep.csv"));
    assert_eq!(rows.len(), 2 * 2 * 2);
    assert!(rows.iter().all(|r| r.seeds == 2));
}

#[test]
fn single_cell_sweep_matches_run() {
    let (a, b) = (tempdir().unwrap(), tempdir().unwrap());
    let common = [
        "--method",
        "svrg",
        "--alpha",
        "0.2",
        "--batch",
        "5",
        "--seeds",
        "4",
        "--stop-rel",
        "1e-4",
    ];
    let mut sweep_args = vec!["sweep"];
    sweep_args.extend(common);
    ok(&snspp(&sweep_args, a.path()));
    let mut run_args = vec!["run"];
    run_args.extend(common);
    ok(&snspp(&run_args, b.path()));
    let rows = sweep_rows(&a.path().join("sweep.csv"));
    assert_eq!(rows.len(), 1);
    let s = summary(&b.path().join("summaries/svrg_seed4.json"));
    assert_eq!(rows[0].reached, 1);
    assert_eq!(Some(rows[0].mean_epochs), s.epochs_to_threshold);
}

#[test]
fn tiny_step_is_censored() {
    let dir = tempdir().unwrap();
    ok(&snspp(
        &[
            "sweep",
            "--method",
            "svrg",
            "--alpha",
            "1e-8",
            "--seeds",
            "0,1",
            "--budget-epochs",
            "10",
        ],
        dir.path(),
    ));
    let rows = sweep_rows(&dir.path().join("sweep.csv"));
    assert_eq!(rows.len(), 1);
    assert!(rows[0].censored);
    assert_eq!(rows[0].reached, 0);
    assert!(rows[0].mean_epochs >= 10.0);
}

#[test]
fn estimate_optimum_writes_record() {
    let dir = tempdir().unwrap();
    ok(&snspp(&["estimate-optimum"], dir.path()));
    let rec: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("optimum.json")).unwrap()).unwrap();
    assert!(rec["fnat_norm"].as_f64().unwrap() <= 1e-10);
    assert_eq!(rec["dataset_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn verify_passes_on_default_problem() {
    let dir = tempdir().unwrap();
    let o = snspp(&["verify", "--instances", "10"], dir.path());
    ok(&o);
    assert!(String::from_utf8_lossy(&o.stdout).contains("PASS dual gradient identity"));
}

#[test]
fn bad_input_exits_with_code_two() {
    let dir = tempdir().unwrap();
    let o = snspp(&["run", "--method", "nope"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = snspp(&["run", "--config", "/nonexistent/x.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = snspp(&["run", "--alpha", "-1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}
