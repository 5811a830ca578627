use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use csma_mpr::meanfield::aggregate_throughput;
use csma_mpr::{AllOrNothingMpr, ClassSpec, Scenario, UtilizationVector};

const MANIFEST_PREFIX: &str = "# csma-mpr manifest: ";

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csma-mpr")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

/// Header plus data rows of a CSV body, after checking the manifest line.
fn csv_rows(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with(MANIFEST_PREFIX));
    let header: Vec<String> = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

fn column<'a>(header: &[String], row: &'a [String], name: &str) -> &'a str {
    &row[header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))]
}

fn scenario_file(dir: &Path, name: &str, rates: [f64; 2], q: &str, extra: &str) -> PathBuf {
    let path = dir.join(name);
    let text = format!(
        "kappa = 10\n\n[[classes]]\ncount = 20\narrival_rate = {}\ntx_prob = 0.025\n\n\
         [[classes]]\ncount = 10\narrival_rate = {}\ntx_prob = 0.05\n\n[mpr]\nq = {q}\n{extra}",
        rates[0], rates[1]
    );
    std::fs::write(&path, text).unwrap();
    path
}

fn light(dir: &Path) -> PathBuf {
    scenario_file(dir, "light.toml", [0.001, 0.001], "[0.78, 0.57]", "")
}

#[test]
fn analyze_stable_emits_delays_per_class() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["analyze", "--config", light(dir.path()).to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (h, rows) = csv_rows(&stdout(&o));
    assert_eq!(rows.len(), 2);
    for r in &rows {
        assert_eq!(column(&h, r, "state"), "STABLE");
        let rho: f64 = column(&h, r, "rho").parse().unwrap();
        let sd: f64 = column(&h, r, "service_delay").parse().unwrap();
        assert!((sd - rho / 0.001).abs() < 1e-9 * sd);
        assert!(column(&h, r, "total_delay").parse::<f64>().unwrap() > sd);
    }
}

#[test]
fn analyze_zero_traffic_omits_delays() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario_file(dir.path(), "zero.toml", [0.0, 0.0], "[0.78, 0.57]", "");
    let o = run(&["analyze", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let (h, rows) = csv_rows(&stdout(&o));
    for r in &rows {
        assert_eq!(column(&h, r, "state"), "STABLE");
        assert_eq!(column(&h, r, "rho").parse::<f64>().unwrap(), 0.0);
        assert_eq!(column(&h, r, "service_delay"), "");
        assert_eq!(column(&h, r, "total_delay"), "");
    }
}

#[test]
fn analyze_overload_reports_unstable_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario_file(dir.path(), "hot.toml", [0.01, 0.01], "[0.78, 0.57]", "");
    let o = run(&["analyze", "--config", cfg.to_str().unwrap(), "--format", "json"]);
    assert_eq!(code(&o), 0);
    let doc: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let rows = doc["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 1);
    let r = &rows[0];
    assert_eq!(r["state"], "UNSTABLE");
    assert!(r["lambda_total"].as_f64().unwrap() > r["f_max"].as_f64().unwrap());
    for key in ["lambda_0", "gamma_star", "gamma_0"] {
        assert!(r[key].is_number(), "{key}");
    }
    assert_eq!(doc["manifest"]["request"]["subcommand"], "analyze");
}

#[test]
fn non_unimodal_law_is_a_solver_error_unless_the_fallback_is_requested() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario_file(dir.path(), "mm.toml", [0.001, 0.001], "[0.98, 0.88, 0.32]", "");
    let cfg = cfg.to_str().unwrap();
    assert_eq!(code(&run(&["analyze", "--config", cfg])), 3);
    let o = run(&["analyze", "--config", cfg, "--grid-fallback"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (h, rows) = csv_rows(&stdout(&o));
    assert_eq!(column(&h, &rows[0], "multimodal"), "true");
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = scenario_file(dir.path(), "bad.toml", [0.001, 0.001], "[0.78, 1.5]", "");
    let o = run(&["analyze", "--config", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("invalid configuration"));
    assert_eq!(code(&run(&["analyze", "--config", "/nonexistent/x.toml"])), 2);
    assert_eq!(code(&run(&["analyze"])), 2);
    assert_eq!(code(&run(&["frobnicate"])), 2);
}

#[test]
fn fig4_preset_predicts_throughput_per_grid_point() {
    let o = run(&["analyze", "--preset", "fig4"]);
    assert_eq!(code(&o), 0);
    let (h, rows) = csv_rows(&stdout(&o));
    assert_eq!(rows.len(), 60);
    let saturated: Vec<_> = rows.iter().filter(|r| column(&h, r, "saturated") == "true").collect();
    assert_eq!(saturated.len(), 15);
    for r in saturated {
        let p1: f64 = column(&h, r, "p1").parse().unwrap();
        let s = Scenario::finite(
            vec![ClassSpec::count(10, 1.0, p1), ClassSpec::count(10, 1.0, 0.2)],
            10,
            AllOrNothingMpr::new(vec![0.96, 0.89]),
        );
        let expected = aggregate_throughput(&s, &UtilizationVector::ones(2));
        let got: f64 = column(&h, r, "aggregate_throughput").parse().unwrap();
        assert!((got - expected).abs() < 1e-12, "p1={p1}");
    }
}

#[test]
fn repeated_seed_gives_identical_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["simulate", "--config", light(dir.path()).to_str().unwrap(), "--horizon", "50000", "--seeds", "1,1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (h, rows) = csv_rows(&stdout(&o));
    let per_seed: Vec<_> = rows.iter().filter(|r| column(&h, r, "seed") == "1").collect();
    assert_eq!(per_seed.len(), 6);
    assert_eq!(per_seed[..3], per_seed[3..]);
    let pooled: Vec<_> = rows.iter().filter(|r| column(&h, r, "seed") == "all").collect();
    assert_eq!(pooled.len(), 3);
    assert_eq!(column(&h, pooled[0], "throughput_stderr"), "0.0");
}

#[test]
fn horizon_not_exceeding_warmup_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = light(dir.path());
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--horizon", "10", "--warmup", "20"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("warmup"));
}

#[test]
fn qprob_single_sample_flags_degenerate_interval() {
    let o = run(&["qprob", "--samples", "1", "--users", "1,2", "--snr-db", "6"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (h, rows) = csv_rows(&stdout(&o));
    assert_eq!(rows.len(), 8);
    for r in &rows {
        let q: f64 = column(&h, r, "q_hat").parse().unwrap();
        assert!(q == 0.0 || q == 1.0);
        assert_eq!(column(&h, r, "ci_half_width"), "0.0");
        assert_eq!(column(&h, r, "degenerate_ci"), "true");
    }
    for name in ["decoder", "snr_db", "K", "R", "L", "samples", "seed"] {
        assert!(h.iter().any(|c| c == name), "{name}");
    }
}

#[test]
fn qprob_rejects_zero_users_and_unknown_decoders() {
    assert_eq!(code(&run(&["qprob", "--users", "0"])), 2);
    assert_eq!(code(&run(&["qprob", "--decoder", "MMSE"])), 2);
}

#[test]
fn qprob_decoder_filter_uses_shared_draws() {
    let all = run(&["qprob", "--samples", "300", "--users", "2"]);
    let one = run(&["qprob", "--samples", "300", "--users", "2", "--decoder", "SCF"]);
    let (h, rows_all) = csv_rows(&stdout(&all));
    let (_, rows_one) = csv_rows(&stdout(&one));
    assert_eq!(rows_one.len(), 1);
    let scf = rows_all.iter().find(|r| column(&h, r, "decoder") == "SCF").unwrap();
    assert_eq!(&rows_one[0], scf);
}

#[test]
fn table1_flag_emits_28_rows() {
    let o = run(&["qprob", "--table1", "--samples", "64"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (h, rows) = csv_rows(&stdout(&o));
    assert_eq!(rows.len(), 28);
    let k2: Vec<_> = rows.iter().filter(|r| column(&h, r, "K") == "2").collect();
    assert_eq!(k2.len(), 12);
}

#[test]
fn design_reports_probabilities_and_infeasibility() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario_file(dir.path(), "d.toml", [0.001, 0.001], "[0.78, 0.57]", "[design]\ndelay_targets = [500.0, 500.0]\n");
    let o = run(&["design", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (h, rows) = csv_rows(&stdout(&o));
    assert_eq!(rows.len(), 2);
    for r in &rows {
        let p: f64 = column(&h, r, "tx_prob").parse().unwrap();
        let x: f64 = column(&h, r, "attempt_probability").parse().unwrap();
        assert!(x < p && p <= 1.0);
    }

    let o = run(&["design", "--config", cfg.to_str().unwrap(), "--targets", "0.01,500"]);
    assert_eq!(code(&o), 4);
    let err = stderr(&o);
    assert!(err.contains("infeasible") && err.contains("f_max") && err.contains("state=STABLE"), "{err}");

    let hot = scenario_file(dir.path(), "hot.toml", [0.01, 0.01], "[0.78, 0.57]", "");
    let o = run(&["design", "--config", hot.to_str().unwrap(), "--targets", "500,500"]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("state=UNSTABLE"));
}

#[test]
fn unknown_preset_exits_with_2() {
    assert_eq!(code(&run(&["reproduce", "fig11"])), 2);
    assert_eq!(code(&run(&["analyze", "--preset", "fig3"])), 2);
}

#[test]
fn reproduce_writes_paired_files_that_replay_identically() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run(&["reproduce", "fig8", "--horizon", "20000", "--seeds", "1,2", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for part in ["analytic", "simulated"] {
        let path = out.join(format!("fig8_{part}.csv"));
        let body = std::fs::read_to_string(&path).unwrap();
        let (h, rows) = csv_rows(&body);
        assert!(!rows.is_empty());
        assert!(h.iter().any(|c| c == "total_delay"));
        let again = run(&["replay", path.to_str().unwrap()]);
        assert_eq!(code(&again), 0, "{}", stderr(&again));
        let data = |t: &str| t.lines().skip(1).collect::<Vec<_>>().join("\n");
        assert_eq!(data(&stdout(&again)), data(&body), "{part}");
    }
}

#[test]
fn json_outputs_replay_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = light(dir.path());
    let out = dir.path().join("json");
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--horizon", "30000", "--seeds", "4", "--format", "json", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let path = out.join("simulate.json");
    let first: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let again = run(&["replay", path.to_str().unwrap(), "--format", "json"]);
    let second: serde_json::Value = serde_json::from_slice(&again.stdout).unwrap();
    assert_eq!(first["rows"], second["rows"]);
    assert_eq!(first["manifest"]["request"], second["manifest"]["request"]);
    assert_eq!(first["manifest"]["request"]["seeds"], serde_json::json!([4]));
}

#[test]
fn replay_rejects_files_without_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("plain.csv");
    std::fs::write(&path, "a,b\n1,2\n").unwrap();
    assert_eq!(code(&run(&["replay", path.to_str().unwrap()])), 2);
}

#[test]
fn thread_cap_must_be_a_positive_integer() {
    let o = Command::new(env!("CARGO_BIN_EXE_csma-mpr"))
        .args(["qprob", "--samples", "10"])
        .env("CSMA_MPR_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_csma-mpr"))
        .args(["qprob", "--samples", "10"])
        .env("CSMA_MPR_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
}
