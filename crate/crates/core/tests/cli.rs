use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use evstop::ingest::write_records_jsonl;
use evstop::{Error, LogLikTable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::Value;
use tempfile::TempDir;

fn evstop(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evstop"))
        .args(args)
        .current_dir(cwd)
        .env_remove("EVSTOP_OUTPUT_DIR")
        .output()
        .expect("spawn evstop")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn write_tables(path: &Path, tables: &[LogLikTable]) {
    let mut buf = Vec::new();
    write_records_jsonl(tables, &mut buf).unwrap();
    fs::write(path, buf).unwrap();
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn series_table(id: &str, series: &[f64]) -> LogLikTable {
    LogLikTable::new(id, None, series.iter().map(|v| vec![*v]).collect()).unwrap()
}

fn ar1(rho: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: f64 = rng.sample::<f64, _>(StandardNormal) / (1.0 - rho * rho).sqrt();
    (0..n)
        .map(|_| {
            let v = x;
            x = rho * x + rng.sample::<f64, _>(StandardNormal);
            v
        })
        .collect()
}

#[test]
fn all_null_input_exhausts_every_chain() {
    let dir = TempDir::new().unwrap();
    let tables: Vec<LogLikTable> = (0..4)
        .map(|c| {
            let row = vec![-0.7, -1.2, -0.3];
            LogLikTable::new(format!("c{c}"), Some(row.clone()), vec![row; 30]).unwrap()
        })
        .collect();
    write_tables(&dir.path().join("null.jsonl"), &tables);
    let out = evstop(
        &["run", "null.jsonl", "--mode", "de-warmstart", "--thinning", "off", "--output-dir", "out"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let decisions = read_json(&dir.path().join("out/decisions.json"));
    for chain in decisions["chains"].as_array().unwrap() {
        assert_eq!(chain["verdict"], "budget_exhausted");
        assert!(chain["retained_sample_indices"].as_array().unwrap().is_empty());
    }
    let report = read_json(&dir.path().join("out/report.json"));
    assert_eq!(report["total_samples_used"], 0);
}

#[test]
fn alternative_dump_rejects_after_five_steps() {
    let dir = TempDir::new().unwrap();
    let sim = evstop(
        &["simulate", "--kind", "lognormal-alt", "--mu", "1", "--sigma", "0", "--m", "3"]
            .into_iter()
            .chain(["--chains", "6", "--budget", "40", "--reps", "10", "--dump", "alt"])
            .collect::<Vec<_>>(),
        dir.path(),
    );
    assert_eq!(code(&sim), 0, "{}", String::from_utf8_lossy(&sim.stderr));
    let out = evstop(
        &["run", "alt", "--mode", "de-warmstart", "--thinning", "off", "--alpha", "0.01", "--output-dir", "out"],
        dir.path(),
    );
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("log_e >= 4.60517"));
    let decisions = read_json(&dir.path().join("out/decisions.json"));
    let chains = decisions["chains"].as_array().unwrap();
    assert_eq!(chains.len(), 6);
    for chain in chains {
        assert_eq!(chain["verdict"], "rejected_h0");
        assert_eq!(chain["steps_consumed"], 5);
        assert_eq!(chain["retained_sample_indices"].as_array().unwrap().len(), 5);
    }
    let csv = fs::read_to_string(dir.path().join("out/trajectories.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "chain_id,tested_index,log_e,threshold_log");
    assert_eq!(csv.lines().count(), 1 + 6 * 5);
}

#[test]
fn report_is_idempotent() {
    let dir = TempDir::new().unwrap();
    let sim = evstop(
        &["simulate", "--kind", "gaussian-model", "--m", "20", "--chains", "4", "--budget", "60", "--dump", "g"],
        dir.path(),
    );
    assert_eq!(code(&sim), 0);
    let run = evstop(&["run", "g", "--mode", "first-sample", "--output-dir", "out"], dir.path());
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let args = [
        "report",
        "--decisions",
        "out/decisions.json",
        "--records",
        "g/records.jsonl",
        "--report-records",
        "g/report.jsonl",
    ];
    let a = evstop(&args, dir.path());
    let b = evstop(&args, dir.path());
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    assert!(stdout(&a).contains("Single chain"));
    let mut json_args = args.to_vec();
    json_args.push("--json");
    let ja = evstop(&json_args, dir.path());
    let jb = evstop(&json_args, dir.path());
    assert_eq!(ja.stdout, jb.stdout);
    let doc: Value = serde_json::from_slice(&ja.stdout).unwrap();
    assert_eq!(doc["chains"], 4);
    assert_eq!(doc["full_budget"], 240);
}

#[test]
fn gaussian_dump_round_trips_through_run() {
    let dir = TempDir::new().unwrap();
    let sim = evstop(
        &["simulate", "--kind", "gaussian_model", "--m", "30", "--chains", "3", "--budget", "50", "--dump", "g"],
        dir.path(),
    );
    assert_eq!(code(&sim), 0);
    let summary: Value = serde_json::from_slice(&sim.stdout).unwrap();
    assert_eq!(summary["chains"], 3);
    let out = evstop(
        &["run", "g/records.jsonl", "--report-records", "g/report.jsonl", "--mode", "de-warmstart", "--output-dir", "out"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&dir.path().join("out/report.json"));
    assert_eq!(report["chains"], 3);
    assert_eq!(report["per_chain"].as_array().unwrap().len(), 3);
    assert!(report["ensemble_lppd"].as_f64().unwrap().is_finite());
    assert!(fs::read_to_string(dir.path().join("out/report.txt")).unwrap().contains("Full chain"));
}

#[test]
fn simulate_with_zero_sigma_never_rejects() {
    let dir = TempDir::new().unwrap();
    let out = evstop(
        &["simulate", "--kind", "exact_null", "--sigma", "0", "--alpha", "0.05", "--reps", "500", "--budget", "50"],
        dir.path(),
    );
    assert_eq!(code(&out), 0);
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["rejection_rate"], 0.0);
}

#[test]
fn simulate_null_rate_is_below_alpha() {
    let dir = TempDir::new().unwrap();
    let out = evstop(
        &["simulate", "--kind", "exact_null", "--sigma", "1", "--alpha", "0.05", "--reps", "2000"],
        dir.path(),
    );
    assert_eq!(code(&out), 0);
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(doc["rejection_rate"].as_f64().unwrap() <= 0.05);
}

#[test]
fn thin_reports_autocorrelation() {
    let dir = TempDir::new().unwrap();
    write_tables(&dir.path().join("white.jsonl"), &[series_table("w", &ar1(0.0, 10_000, 3))]);
    write_tables(&dir.path().join("ar.jsonl"), &[series_table("a", &ar1(0.5, 100_000, 4))]);
    write_tables(&dir.path().join("flat.jsonl"), &[series_table("f", &[-1.0; 50])]);

    for (file, target) in [("white.jsonl", 1.0), ("ar.jsonl", 3.0)] {
        let out = evstop(&["thin", file, "--json"], dir.path());
        assert_eq!(code(&out), 0);
        let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
        let tau = doc[0]["iac_time"].as_f64().unwrap();
        assert!((tau - target).abs() <= 0.15 * target, "{file}: {tau}");
        assert_eq!(doc[0]["recommended_interval"].as_u64().unwrap(), tau.ceil() as u64);
    }
    assert!(stdout(&evstop(&["thin", "white.jsonl"], dir.path())).contains("iac_time"));

    let flat = evstop(&["thin", "flat.jsonl"], dir.path());
    assert_eq!(code(&flat), 2);
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = TempDir::new().unwrap();
    let row = vec![-1.0, -2.0];
    write_tables(
        &dir.path().join("ok.jsonl"),
        &[LogLikTable::new("a", Some(row.clone()), vec![row; 10]).unwrap()],
    );
    fs::write(
        dir.path().join("dup.jsonl"),
        "{\"chain\":\"a\",\"kind\":\"sample\",\"index\":1,\"loglik\":[0.1]}\n\
         {\"chain\":\"a\",\"kind\":\"sample\",\"index\":1,\"loglik\":[0.2]}\n",
    )
    .unwrap();
    fs::write(dir.path().join("garbage.jsonl"), "{not json\n").unwrap();

    assert_eq!(code(&evstop(&["run", "ok.jsonl", "--output-dir", "o"], dir.path())), 0);
    assert_eq!(code(&evstop(&["run", "dup.jsonl", "--output-dir", "o"], dir.path())), 2);
    assert_eq!(code(&evstop(&["run", "garbage.jsonl", "--output-dir", "o"], dir.path())), 2);
    assert_eq!(code(&evstop(&["run", "ok.jsonl", "--alpha", "1.5", "--output-dir", "o"], dir.path())), 3);
    assert_eq!(code(&evstop(&["run", "missing.jsonl", "--output-dir", "o"], dir.path())), 3);
    assert_eq!(code(&evstop(&["run", "ok.jsonl", "--thinning", "sometimes"], dir.path())), 3);
    assert_eq!(code(&evstop(&["frobnicate"], dir.path())), 3);
    assert_eq!(code(&evstop(&["--help"], dir.path())), 0);
    // no CLI path reaches an internal fault, so check the mapping directly
    assert_eq!(Error::Invariant("x".into()).class().exit_code(), 4);
    assert_eq!(Error::Usage("x".into()).class().exit_code(), 4);
}

#[test]
fn report_rejects_mismatched_chains() {
    let dir = TempDir::new().unwrap();
    let row = vec![-1.0];
    let table = |id: &str| LogLikTable::new(id, Some(row.clone()), vec![row.clone(); 10]).unwrap();
    write_tables(&dir.path().join("ab.jsonl"), &[table("a"), table("b")]);
    write_tables(&dir.path().join("ac.jsonl"), &[table("a"), table("c")]);
    assert_eq!(code(&evstop(&["run", "ab.jsonl", "--output-dir", "o"], dir.path())), 0);
    let out = evstop(&["report", "--decisions", "o/decisions.json", "--records", "ac.jsonl"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("mismatch"));
}

#[test]
fn output_dir_comes_from_environment() {
    let dir = TempDir::new().unwrap();
    let row = vec![-1.0];
    write_tables(
        &dir.path().join("t.jsonl"),
        &[LogLikTable::new("a", Some(row.clone()), vec![row; 5]).unwrap()],
    );
    let out = Command::new(env!("CARGO_BIN_EXE_evstop"))
        .args(["run", "t.jsonl"])
        .current_dir(dir.path())
        .env("EVSTOP_OUTPUT_DIR", "from-env")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    for file in ["decisions.json", "trajectories.csv", "report.json", "report.txt"] {
        assert!(dir.path().join("from-env").join(file).exists(), "{file}");
    }
}

#[test]
fn csv_input_is_accepted() {
    let dir = TempDir::new().unwrap();
    fs::write(
        dir.path().join("t.csv"),
        "chain,kind,index,ll0,ll1\nc,warmstart,0,-1.0,-1.0\nc,sample,1,-0.5,-0.5\nc,sample,2,-0.5,-0.5\n",
    )
    .unwrap();
    let out = evstop(&["run", "t.csv", "--mode", "de-warmstart", "--thinning", "off", "--output-dir", "o"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let decisions = read_json(&dir.path().join("o/decisions.json"));
    assert_eq!(decisions["chains"][0]["steps_consumed"], 2);
}
