use std::path::Path;
use std::process::{Command, Output};

fn dleaf(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dleaf")).arg("--out-dir").arg(out).args(args).output().expect("spawn dleaf")
}

fn report(out: &Path, sub: &str) -> serde_json::Value {
    let text = std::fs::read_to_string(out.join(sub).join("report.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn help_lists_flags_with_defaults() {
    let out = Command::new(env!("CARGO_BIN_EXE_dleaf")).args(["run", "--help"]).output().unwrap();
    assert!(out.status.success());
    let help = String::from_utf8(out.stdout).unwrap();
    for flag in [
        "--model-config",
        "--dleaf-config",
        "--seed",
        "--out-dir",
        "--json",
        "--gamma",
        "--heads",
        "--window",
        "--alpha",
        "--beta",
        "--renormalize",
        "--detection-metric",
        "--head-metric",
        "--no-dleaf",
    ] {
        assert!(help.contains(flag), "missing {flag}");
    }
    for default in ["[default: 0.8]", "[default: 4]", "[default: 0-25]", "[default: liae]", "[default: iaf]", "DLEAF_OUT_DIR"] {
        assert!(help.contains(default), "missing {default}");
    }
}

#[test]
fn no_dleaf_matches_gamma_zero() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(dleaf(&a, &["run", "--no-dleaf"]).status.success());
    assert!(dleaf(&b, &["run", "--gamma", "0"]).status.success());
    assert_eq!(report(&a, "run")["result"]["tokens"], report(&b, "run")["result"]["tokens"]);
    let trace_a = std::fs::read(a.join("run/trace.ndjson")).unwrap();
    let trace_b = std::fs::read(b.join("run/trace.ndjson")).unwrap();
    assert_eq!(trace_a, trace_b);
}

#[test]
fn fixed_seed_gives_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        assert!(dleaf(out, &["--seed", "9", "run"]).status.success());
    }
    for file in ["report.json", "trace.ndjson", "intervention_log.json"] {
        assert_eq!(std::fs::read(a.join("run").join(file)).unwrap(), std::fs::read(b.join("run").join(file)).unwrap(), "{file}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.join("run/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["parameters"]["model"]["rng_seed"], 9);
}

#[test]
fn json_flag_prints_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dleaf(dir.path(), &["--json", "dpo-check", "--instances", "2"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["subcommand"], "dpo-check");
    assert_eq!(v["passed"], true);
    assert_eq!(v["manifest"], "manifest.json");
    assert!(v["result"]["max_fd_relative_error"].as_f64().unwrap() < 1e-5);
}

#[test]
fn failed_check_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dleaf(dir.path(), &["dpo-check", "--instances", "2", "--eps", "0.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAILED"));
}

#[test]
fn malformed_input_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let items = dir.path().join("pope.ndjson");
    std::fs::write(&items, "{\"image_id\":\"a\",\"turn\":0,\"object\":\"cat\",\"gold\":\"yes\",\"pred\":\"yes\"}\n{not json}\n").unwrap();
    let out = dleaf(dir.path(), &["score", "pope", "--items", items.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("pope.ndjson:2"), "{err}");
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dleaf(dir.path(), &["analyze", "--trace", "/nonexistent/trace.ndjson"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bad_flag_values_are_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(dleaf(dir.path(), &["run", "--gamma", "1.5"]).status.code(), Some(2));
    assert_eq!(dleaf(dir.path(), &["run", "--heads", "8"]).status.code(), Some(2));
    assert_eq!(dleaf(dir.path(), &["run", "--window", "x"]).status.code(), Some(2));
    assert_eq!(dleaf(dir.path(), &["frobnicate"]).status.code(), Some(2));
}

#[test]
fn out_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_dleaf"))
        .env("DLEAF_OUT_DIR", dir.path())
        .args(["score", "pope", "--items"])
        .arg(write_pope(dir.path()))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(report(dir.path(), "score-pope")["result"]["f1"], 0.75);
}

fn write_pope(dir: &Path) -> std::path::PathBuf {
    let mut lines = String::new();
    let mut push = |gold: &str, pred: &str, n: usize| {
        for _ in 0..n {
            lines.push_str(&format!("{{\"image_id\":\"i\",\"turn\":0,\"object\":\"o\",\"gold\":\"{gold}\",\"pred\":\"{pred}\"}}\n"));
        }
    };
    push("yes", "yes", 3);
    push("no", "yes", 1);
    push("yes", "no", 1);
    push("no", "no", 5);
    let path = dir.join("items.ndjson");
    std::fs::write(&path, lines).unwrap();
    path
}

#[test]
fn sweep_has_one_row_per_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = dleaf(dir.path(), &["sweep", "--axis", "heads", "--values", "1,2,4,8", "--steps", "40"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = report(dir.path(), "sweep")["result"]["rows"].as_array().unwrap().clone();
    let values: Vec<&str> = rows.iter().map(|r| r["value"].as_str().unwrap()).collect();
    assert_eq!(values, ["1", "2", "4", "8"]);
    let table = std::fs::read_to_string(dir.path().join("sweep/sweep.tsv")).unwrap();
    assert_eq!(table.lines().count(), 5);
}

#[test]
fn config_files_are_used_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.toml");
    std::fs::write(&model, "num_layers = 3\nmax_new_tokens = 4\n").unwrap();
    let dleaf_cfg = dir.path().join("dleaf.toml");
    std::fs::write(&dleaf_cfg, "gamma = 0.3\nheads = 2\nwindow = \"all\"\n").unwrap();
    let out = dleaf(
        dir.path(),
        &["run", "--model-config", model.to_str().unwrap(), "--dleaf-config", dleaf_cfg.to_str().unwrap(), "--heads", "3"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["parameters"]["dleaf"]["gamma"], 0.3);
    assert_eq!(manifest["parameters"]["dleaf"]["heads_to_correct"], 3);
    assert_eq!(manifest["parameters"]["model"]["num_layers"], 3);
    assert_eq!(report(dir.path(), "run")["result"]["tokens"].as_array().unwrap().len(), 4);
}

#[test]
fn planted_trace_feeds_analyze() {
    let dir = tempfile::tempdir().unwrap();
    assert!(dleaf(dir.path(), &["run", "--task", "planted", "--steps", "30", "--write-trace"]).status.success());
    let trace = dir.path().join("run/trace.ndjson");
    let labels = dir.path().join("run/labels.ndjson");
    let out = dleaf(dir.path(), &["analyze", "--trace", trace.to_str().unwrap(), "--labels", labels.to_str().unwrap(), "--top-k", "20"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(dir.path(), "analyze");
    assert!(r["result"]["analysis"]["liae_test"]["p_value"].as_f64().unwrap() < 0.001);
    let hist: u64 = r["result"]["analysis"]["head_histogram"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(hist, 20);
}
