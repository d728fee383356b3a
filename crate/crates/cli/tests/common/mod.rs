#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::json;

pub fn nestmax(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nestmax")).args(args).output().expect("binary runs")
}

pub fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn write_config(dir: &Path, extra: serde_json::Value) -> PathBuf {
    let mut config = json!({
        "tree": {"alpha": 0.6, "children": [
            {"alpha": 0.5, "children": [{"leaf": "a", "tau": 1.5}]},
            {"alpha": 0.8, "children": [{"leaf": "b", "tau": 1.5}]}
        ]},
        "knots": {"regular": {"nx": 3, "ny": 3, "bounds": [0, 4, 0, 4]}},
        "sites": {"regular": {"nx": 3, "ny": 3, "bounds": [0, 4, 0, 4]}},
        "seed": 11,
        "simulate": {"n_rep": 30},
        "mcmc": {"iterations": 300, "burn_in": 100, "thinning": 2, "max_lag": 10,
                 "starts": [{"alphas": [0.3, 0.3, 0.3]}, {"alphas": [0.8, 0.8, 0.8]}]},
        "extremal": {"leaf_pairs": [["a", "b"]], "ci": {"bootstrap": {"resamples": 40}}},
        "predict": {"p_grid": [0.5, 0.9, 0.9167], "n_sim": 4}
    });
    if let (Some(base), Some(extra)) = (config.as_object_mut(), extra.as_object()) {
        for (k, v) in extra {
            base.insert(k.clone(), v.clone());
        }
    }
    let p = dir.join("config.json");
    std::fs::write(&p, serde_json::to_vec_pretty(&config).unwrap()).unwrap();
    p
}

pub fn read_dir(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

pub fn ok(out: Output) -> Output {
    assert!(out.status.success(), "failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

/// Runs every command once and returns all produced files keyed by `command/file`.
pub fn pipeline(root: &Path, workers: &str) -> BTreeMap<String, Vec<u8>> {
    let config = write_config(root, json!({}));
    let cfg = path(&config);
    let dir = |n: &str| root.join(n);
    ok(nestmax(&["simulate", "--config", cfg, "--out", path(&dir("sim")), "--workers", workers]));
    let sample = dir("sim").join("sample.csv");
    ok(nestmax(&["fit", "--config", cfg, "--data", path(&sample), "--out", path(&dir("fit")), "--workers", workers]));
    let c0 = dir("fit").join("chain_0.csv");
    let c1 = dir("fit").join("chain_1.csv");
    let chains = ["--chain", path(&c0), "--chain", path(&c1)];
    let mut args = vec!["extremal", "--config", cfg, "--data", path(&sample), "--out"];
    let ext = dir("extremal");
    args.extend([path(&ext), "--workers", workers]);
    args.extend(chains);
    ok(nestmax(&args));
    for cmd in ["diagnose", "predict"] {
        let out = dir(cmd);
        let mut args = vec![cmd, "--config", cfg, "--out", path(&out), "--workers", workers];
        args.extend(chains);
        ok(nestmax(&args));
    }
    let mut all = BTreeMap::new();
    for cmd in ["sim", "fit", "extremal", "diagnose", "predict"] {
        for (name, bytes) in read_dir(&dir(cmd)) {
            all.insert(format!("{cmd}/{name}"), bytes);
        }
    }
    all
}
