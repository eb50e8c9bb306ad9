//! End-to-end runs of the `sgb` binary: every subcommand, the rerun
//! byte-identity guarantee, and the exit-code contract.

use std::path::Path;
use std::process::{Command, Output};

fn sgb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgb"))
        .args(args)
        .env("SGB_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write(path: &Path, contents: &str) {
    std::fs::write(path, contents).unwrap();
}

fn assert_identical(a: &Path, b: &Path, name: &str) {
    let x = std::fs::read(a.join(name)).unwrap();
    let y = std::fs::read(b.join(name)).unwrap();
    assert_eq!(x, y, "{name} differs between reruns");
}

fn json_file(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

const PHANTOM_CONFIG: &str = r#"{
  "kind": "halves",
  "nx": 6, "ny": 4,
  "compartments": [[784.0, 77.0], [1216.0, 96.0]],
  "seed": 1,
  "snr_db": 40.0,
  "sequence": { "len": 60 }
}"#;

#[test]
fn phantom_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("phantom.json");
    write(&cfg, PHANTOM_CONFIG);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let r = sgb(&[
            "phantom",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    }
    for name in [
        "config.json",
        "truth.json",
        "data.map",
        "clean.map",
        "weights.map",
        "compartments.csv",
        "schema.json",
    ] {
        assert_identical(&a, &b, name);
    }
    // The data map starts with the documented header line.
    let bytes = std::fs::read(a.join("data.map")).unwrap();
    let nl = bytes.iter().position(|&c| c == b'\n').unwrap();
    let header: serde_json::Value = serde_json::from_slice(&bytes[..nl]).unwrap();
    assert_eq!(header["rows"], 60);
    assert_eq!(header["cols"], 24);
    assert_eq!(header["channels"], 1);
    assert_eq!(header["dtype"], "f64le");
    assert_eq!(bytes.len() - nl - 1, 60 * 24 * 8);
}

#[test]
fn train_then_demix_with_projection() {
    let dir = tempfile::tempdir().unwrap();
    let train_cfg = dir.path().join("train.json");
    write(
        &train_cfg,
        r#"{
  "grid": { "t1_range": [10.0, 6000.0], "t2_range": [4.0, 4000.0],
            "n_t1": 14, "n_t2": 14, "round_ms": false, "strict": true },
  "sequence": { "len": 60 },
  "subspace_dim": 6,
  "train": { "hidden": 32, "epochs": 40, "batch_size": 16, "seed": 7 }
}"#,
    );
    let tr = dir.path().join("tr");
    let r = sgb(&[
        "train-surrogate",
        "--config",
        train_cfg.to_str().unwrap(),
        "--out",
        tr.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(tr.join("surrogate.mlp").exists());
    let report = json_file(&tr.join("report.json"));
    assert_eq!(report["subspace_dim"], 6);
    assert!(report["test_nrmse"].as_f64().unwrap().is_finite());

    let ph_cfg = dir.path().join("phantom.json");
    write(&ph_cfg, PHANTOM_CONFIG);
    let ph = dir.path().join("ph");
    let r = sgb(&[
        "phantom",
        "--config",
        ph_cfg.to_str().unwrap(),
        "--out",
        ph.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));

    let dx_cfg = dir.path().join("demix.json");
    write(
        &dx_cfg,
        &format!(
            r#"{{
  "model": {{ "kind": "surrogate", "path": "{}" }},
  "input": {{ "data": "{}", "raster": [6, 4], "truth": "{}" }},
  "solver": {{ "alpha": 1e-2, "beta": 0.9, "max_outer": 8 }}
}}"#,
            tr.join("surrogate.mlp").display(),
            ph.join("data.map").display(),
            ph.join("truth.json").display()
        ),
    );
    let dx = dir.path().join("dx");
    let r = sgb(&[
        "demix",
        "--config",
        dx_cfg.to_str().unwrap(),
        "--out",
        dx.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let result = json_file(&dx.join("result.json"));
    assert!(result["n_spikes"].as_u64().unwrap() >= 1);
    // 60 time points were projected into the surrogate's 6 dimensions.
    assert_eq!(result["compressed_input"], true);
    let metrics = json_file(&dx.join("metrics.json"));
    assert!(metrics["mape_percent"].as_f64().unwrap().is_finite());
    assert!(dx.join("measure.json").exists());
    assert!(dx.join("tsmi.json").exists());
    assert!(dx.join("trace.csv").exists());
}

#[test]
fn study_mode_merges_by_seed_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("study.json");
    write(
        &cfg,
        r#"{
  "model": { "kind": "epg", "sequence": { "len": 40 } },
  "study": {
    "phantom": {
      "kind": "halves",
      "nx": 5, "ny": 4,
      "compartments": [[784.0, 77.0], [1216.0, 96.0]],
      "sequence": { "len": 40 }
    },
    "seeds": [1, 2],
    "snrs_db": [30.0, null]
  },
  "solver": { "alpha": 5e-2, "beta": 0.5, "max_outer": 6 }
}"#,
    );
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let r = sgb(&[
            "demix",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    }
    let runs = std::fs::read_to_string(a.join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 5, "header + 4 runs:\n{runs}");
    assert!(runs.starts_with("snr_db,seed,"));
    // The noiseless SNR level is encoded as inf.
    assert!(runs.contains("inf,"), "{runs}");
    let summary = json_file(&a.join("summary.json"));
    assert_eq!(summary.as_array().unwrap().len(), 2);
    // Workers may race, but outputs are merged in (SNR, seed) order.
    assert_identical(&a, &b, "runs.csv");
    assert_identical(&a, &b, "summary.csv");
    assert_identical(&a, &b, "summary.json");
}

#[test]
fn certificate_verdict_is_not_an_exit_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cert.json");
    write(
        &cfg,
        r#"{
  "model": { "kind": "analytic", "len": 60, "dt_ms": 15.0 },
  "truth": {
    "thetas": [[800.0, 80.0], [2500.0, 600.0]],
    "weights": [[1.0, 0.5, 0.0, 0.0], [0.0, 0.5, 1.0, 0.8]]
  },
  "beta": 1e-3,
  "options": { "grid": { "t1_range": [10.0, 4000.0], "t2_range": [4.0, 2000.0],
                         "n_t1": 25, "n_t2": 25, "round_ms": false, "strict": true } }
}"#,
    );
    let out = dir.path().join("ct");
    let r = sgb(&[
        "certificate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    // This configuration is degenerate; that is a result, not a failure.
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let report = json_file(&out.join("report.json"));
    assert!(["Nondegenerate", "Degenerate", "RankDeficient"]
        .contains(&report["verdict"].as_str().unwrap()));
    assert_eq!(report["spike_g"].as_array().unwrap().len(), 2);
    let heatmap = std::fs::read_to_string(out.join("heatmap.csv")).unwrap();
    assert!(heatmap.starts_with("t1_ms,t2_ms,g\n"));
    assert!(heatmap.lines().count() > 100);
}

#[test]
fn failures_exit_nonzero_with_error_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    write(
        &cfg,
        r#"{ "model": { "kind": "analytic", "len": 60, "dt_ms": 15.0 },
             "input": { "data": "/nonexistent/data.map" } }"#,
    );
    let out = dir.path().join("out");
    let r = sgb(&[
        "demix",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(!r.status.success());
    let err = json_file(&out.join("error.json"));
    assert!(err["error"].as_str().unwrap().contains("/nonexistent/data.map"));

    // demix without a config is an error too.
    let r = sgb(&["demix", "--out", out.to_str().unwrap()]);
    assert!(!r.status.success());

    // A missing --out fails before any computation.
    let r = sgb(&["phantom"]);
    assert!(!r.status.success());
}

#[test]
fn seed_and_threads_flags() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let r = sgb(&[
        "phantom",
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "9",
        "--threads",
        "2",
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    // The override lands in the recorded configuration.
    let cfg = json_file(&out.join("config.json"));
    assert_eq!(cfg["seed"], 9);
}
