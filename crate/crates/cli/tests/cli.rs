mod common;

use std::path::Path;

use common::{nestmax, ok, path, pipeline, read_dir, write_config};
use serde_json::json;

#[test]
fn outputs_do_not_depend_on_workers() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let one = pipeline(a.path(), "1");
    let four = pipeline(b.path(), "4");
    assert_eq!(one.keys().collect::<Vec<_>>(), four.keys().collect::<Vec<_>>());
    for (name, bytes) in &one {
        assert!(bytes == &four[name], "{name} differs");
    }
    for expected in ["sim/sample.csv", "fit/margins.csv", "fit/summary.json", "fit/acf.csv", "extremal/extremal.csv",
        "diagnose/trace.csv", "diagnose/diagnostics.json", "predict/quantiles.csv", "predict/provenance.json"]
    {
        assert!(one.contains_key(expected), "missing {expected}");
    }
    let quantiles = String::from_utf8(one["predict/quantiles.csv"].clone()).unwrap();
    assert!(quantiles.lines().any(|l| l.ends_with("1-year")), "{quantiles}");
    let extremal = String::from_utf8(one["extremal/extremal.csv"].clone()).unwrap();
    assert!(extremal.lines().any(|l| l.starts_with("empirical,")));
}

#[test]
fn chain_count_follows_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), json!({}));
    let sim = dir.path().join("sim");
    ok(nestmax(&["simulate", "--config", path(&cfg), "--out", path(&sim)]));
    let fit = dir.path().join("fit");
    let sample = sim.join("sample.csv");
    ok(nestmax(&["fit", "--config", path(&cfg), "--data", path(&sample), "--out", path(&fit), "--chains", "3", "--unit-frechet"]));
    let files = read_dir(&fit);
    for c in 0..3 {
        assert!(files.contains_key(&format!("chain_{c}.csv")));
    }
    assert!(!files.contains_key("chain_3.csv"));
    assert!(!files.contains_key("margins.csv"));
    let summary: serde_json::Value = serde_json::from_slice(&files["summary.json"]).unwrap();
    assert_eq!(summary["chains"].as_array().unwrap().len(), 3);
}

#[test]
fn empty_pair_list_gives_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), json!({"extremal": {"pairs": []}}));
    let out = dir.path().join("ext");
    ok(nestmax(&["extremal", "--config", path(&cfg), "--out", path(&out)]));
    let csv = std::fs::read_to_string(out.join("extremal.csv")).unwrap();
    assert_eq!(csv.trim_end(), "kind,leaf_a,leaf_b,site_i,site_j,distance,theta,ci_low,ci_high");
}

#[test]
fn invalid_configuration_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), json!({"unexpected": 1}));
    let out = dir.path().join("out");
    let res = nestmax(&["simulate", "--config", path(&cfg), "--out", path(&out)]);
    assert_eq!(res.status.code(), Some(2));
    assert!(!out.exists());
    let bad_alpha = write_config(dir.path(), json!({"tree": {"alpha": 1.5, "children": [{"leaf": "a", "tau": 1.0}]}}));
    let res = nestmax(&["simulate", "--config", path(&bad_alpha), "--out", path(&out)]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn missing_input_exits_with_3_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), json!({}));
    let out = dir.path().join("out");
    let missing = dir.path().join("nope.csv");
    let res = nestmax(&["fit", "--config", path(&cfg), "--data", path(&missing), "--out", path(&out)]);
    assert_eq!(res.status.code(), Some(3));
    assert!(!out.exists());
    let res = nestmax(&["simulate", "--config", path(&dir.path().join("absent.json")), "--out", path(&out)]);
    assert_eq!(res.status.code(), Some(3));
}

#[test]
fn failing_command_leaves_no_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), json!({}));
    let out = dir.path().join("out");
    let res = nestmax(&["predict", "--config", path(&cfg), "--out", path(&out)]);
    assert_eq!(res.status.code(), Some(2));
    assert!(!out.exists());
    let res = nestmax(&["simulate", "--config", path(&cfg), "--out", path(&out), "--workers", "0"]);
    assert_eq!(res.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn shipped_preset_parses() {
    let preset = Path::new(env!("CARGO_MANIFEST_DIR")).join("presets/t1_study.json");
    let (config, _) = nestmax_cli::config::RunConfig::load(&preset).unwrap();
    assert_eq!(config.dependence_tree().unwrap().n_nodes(), 3);
    assert_eq!(config.mcmc.unwrap().iterations, 200_000);
}
