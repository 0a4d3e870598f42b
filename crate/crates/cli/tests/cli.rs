//! End-to-end runs of the `sosgen` binary on small desk-scale datasets.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use sosgen_cli::commands::{evaluate_datasets, run_predictor, SweepIndexEntry, SWEEP_INDEX};
use sosgen_cli::config::{ExperimentConfig, PredictorConfig};
use sosgen_core::dataio::{read_sample, DatasetManifest};
use sosgen_core::geometry::make_desk_scale;
use sosgen_core::metrics::SsimConfig;
use tempfile::TempDir;

fn sosgen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sosgen"))
        .args(args)
        .env("SOSGEN_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn ok(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("status line is JSON")
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().rev().find(|l| l.starts_with('{')).expect("JSON status on stderr");
    serde_json::from_str(line).unwrap()
}

/// Relative path and contents of every file under `dir`.
fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn small(count: usize) -> Value {
    json!({"scale": "desk8", "count": count, "seed": 42, "generator": {"kind": "ellipsoids"}})
}

#[test]
fn generate_twice_gives_identical_bytes() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "cfg.json", &small(3));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&sosgen(&["--config", s(&cfg), "--out", s(&a), "--workers", "1", "generate"]));
    ok(&sosgen(&["--config", s(&cfg), "--out", s(&b), "--workers", "2", "generate"]));
    let (ta, tb) = (tree(&a), tree(&b));
    assert!(ta.iter().any(|(p, _)| p.ends_with("manifest.json")));
    assert_eq!(ta.len(), tb.len());
    for ((pa, da), (pb, db)) in ta.iter().zip(&tb) {
        assert_eq!(pa, pb);
        assert!(da == db, "{} differs", pa.display());
    }
    let (m, _) = DatasetManifest::read(&a).unwrap();
    assert_eq!(m.samples.len(), 3);
    m.check_files(&a).unwrap();
}

#[test]
fn regeneration_from_the_manifest_is_bit_exact() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "cfg.json", &small(10));
    let d = tmp.path().join("d");
    ok(&sosgen(&["--config", s(&cfg), "--out", s(&d), "generate"]));
    ok(&sosgen(&["verify", "--dataset", s(&d), "--count", "10"]));
    // tamper with one container: verify must notice
    let (m, _) = DatasetManifest::read(&d).unwrap();
    let victim = d.join(&m.samples[4].file);
    let mut bytes = fs::read(&victim).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    fs::write(&victim, bytes).unwrap();
    let out = sosgen(&["verify", "--dataset", s(&d), "--count", "10"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_json(&out)["failures"][0]["id"], json!(m.samples[4].id));
}

#[test]
fn snr_sweep_produces_one_dataset_per_target() {
    let tmp = TempDir::new().unwrap();
    let mut c = small(2);
    c["sweeps"] = json!([{"kind": "snr", "targets_db": [10.0, 15.0, 20.0]}]);
    c["corruption"] = json!({"noise_seed": 9});
    let cfg = write_config(tmp.path(), "cfg.json", &c);
    let out = tmp.path().join("sweep");
    ok(&sosgen(&["--config", s(&cfg), "--out", s(&out), "sweep"]));
    let index: Vec<SweepIndexEntry> = serde_json::from_slice(&fs::read(out.join(SWEEP_INDEX)).unwrap()).unwrap();
    assert_eq!(index.len(), 3);
    let mut targets = Vec::new();
    for e in &index {
        let (m, dir) = DatasetManifest::read(out.join(&e.dir)).unwrap();
        assert_eq!(m.samples.len(), 2);
        m.check_files(&dir).unwrap();
        for entry in &m.samples {
            assert_eq!(entry.tags["awgn_target_snr_db"], json!(e.value));
        }
        targets.push(e.value);
    }
    assert_eq!(targets, vec![10.0, 15.0, 20.0]);
    // noisier targets move the data further from the clean base
    let (base, bdir) = DatasetManifest::read(out.join("base")).unwrap();
    let clean = read_sample(bdir.join(&base.samples[0].file)).unwrap().rf;
    let dist: Vec<f64> = index
        .iter()
        .map(|e| {
            let rf = read_sample(out.join(&e.dir).join(&base.samples[0].file)).unwrap().rf;
            (&rf - &clean).iter().map(|v| v * v).sum::<f64>()
        })
        .collect();
    assert!(dist[0] > dist[1] && dist[1] > dist[2], "{dist:?}");
}

#[test]
fn evaluating_ground_truth_against_itself_is_error_free() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "cfg.json", &small(2));
    let d = tmp.path().join("d");
    ok(&sosgen(&["--config", s(&cfg), "--out", s(&d), "generate"]));
    let ev = tmp.path().join("eval");
    ok(&sosgen(&["--out", s(&ev), "evaluate", "--gt", s(&d), "--pred", s(&d)]));
    let csv = fs::read_to_string(ev.join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 2);
    for row in rows {
        for (h, v) in header.iter().zip(&row) {
            match *h {
                "rmse" | "mae" | "mape" | "rmse_inclusion" | "rmse_background" if !v.is_empty() => {
                    assert_eq!(v.parse::<f64>().unwrap(), 0.0, "{h}")
                }
                "ssim" => assert!((v.parse::<f64>().unwrap() - 1.0).abs() < 1e-9),
                _ => {}
            }
        }
    }
    assert!(ev.join("summary.json").exists());
    assert!(ev.join("boxplot.png").exists());
}

#[test]
fn schema_violations_exit_with_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let mut c = small(1);
    c["colour"] = json!("blue");
    let cfg = write_config(tmp.path(), "bad.json", &c);
    let out = sosgen(&["--config", s(&cfg), "--out", s(&tmp.path().join("x")), "generate"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["status"], json!("error"));
    assert_eq!(err["error"]["kind"], json!("config"));
    assert!(!tmp.path().join("x").exists());

    let cfg = write_config(tmp.path(), "bad2.json", &json!({"count": -3}));
    assert_eq!(sosgen(&["--config", s(&cfg), "--out", "unused", "generate"]).status.code(), Some(2));
}

#[test]
fn outputs_never_overwrite() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path().join("taken");
    fs::create_dir(&d).unwrap();
    fs::write(d.join("keep.txt"), "mine").unwrap();
    let cfg = write_config(tmp.path(), "cfg.json", &small(1));
    let out = sosgen(&["--config", s(&cfg), "--out", s(&d), "generate"]);
    assert!(!out.status.success());
    assert_eq!(stderr_json(&out)["status"], json!("error"));
    assert_eq!(fs::read_to_string(d.join("keep.txt")).unwrap(), "mine");
    assert_eq!(fs::read_dir(&d).unwrap().count(), 1);
}

#[test]
fn unstable_samples_are_reported_and_the_run_continues() {
    let tmp = TempDir::new().unwrap();
    let mut setup = serde_json::to_value(make_desk_scale(8).unwrap()).unwrap();
    let dt = setup["grid"]["dt"].as_f64().unwrap();
    setup["grid"]["dt"] = json!(2.0 * dt);
    let mut c = small(3);
    c["setup"] = setup;
    let cfg = write_config(tmp.path(), "cfg.json", &c);
    let d = tmp.path().join("d");
    let out = sosgen(&["--config", s(&cfg), "--out", s(&d), "generate"]);
    assert_eq!(out.status.code(), Some(3));
    let report = stderr_json(&out);
    assert_eq!(report["status"], json!("failed_samples"));
    let failures = report["failures"].as_array().unwrap();
    assert!(!failures.is_empty());
    assert!(failures.iter().all(|f| f["kind"] == json!("stability")), "{failures:?}");
    assert!(d.join("failures.json").exists());
    // samples whose media stay under the limit are still written
    let (m, dir) = DatasetManifest::read(&d).unwrap();
    assert_eq!(m.samples.len() + failures.len(), 3);
    m.check_files(&dir).unwrap();
}

#[test]
fn predictor_subprocess_contract() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "cfg.json", &small(2));
    let d = tmp.path().join("d");
    ok(&sosgen(&["--config", s(&cfg), "--out", s(&d), "generate"]));
    let bin = env!("CARGO_BIN_EXE_sosgen").to_string();

    let p = PredictorConfig {
        command: vec![bin.clone(), "predict-oracle".into(), "--offset".into(), "5".into()],
    };
    let pred = tmp.path().join("pred");
    run_predictor(&p, &d, &pred).unwrap();
    let reports = evaluate_datasets(&d, &pred, &SsimConfig::default()).unwrap();
    assert_eq!(reports.len(), 2);
    for r in &reports {
        assert!((r.rmse - 5.0).abs() < 1e-3, "{}", r.rmse);
        assert!((r.mae - 5.0).abs() < 1e-3);
    }

    // a program that exits non-zero, and one that writes nothing
    let failing = PredictorConfig {
        command: vec![bin.clone(), "predict-oracle".into(), "--offset".into(), "not-a-number".into()],
    };
    let err = run_predictor(&failing, &d, &tmp.path().join("p2")).unwrap_err();
    assert_eq!(err.kind(), "predictor");
    let silent = PredictorConfig {
        command: vec![bin, "--help".into()],
    };
    let err = run_predictor(&silent, &d, &tmp.path().join("p3")).unwrap_err();
    assert_eq!(err.kind(), "predictor");
}

#[test]
fn beamform_writes_an_image_per_sample() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "cfg.json", &small(1));
    let d = tmp.path().join("d");
    ok(&sosgen(&["--config", s(&cfg), "--out", s(&d), "generate"]));
    let b = tmp.path().join("b");
    ok(&sosgen(&["--out", s(&b), "beamform", "--dataset", s(&d)]));
    let (m, dir) = DatasetManifest::read(&b).unwrap();
    assert_eq!(m.samples.len(), 1);
    let rec = read_sample(dir.join(&m.samples[0].file)).unwrap();
    let n = make_desk_scale(8).unwrap().fov.pixels;
    assert_eq!(rec.gt.dim(), (n, n));
    assert!(rec.gt.iter().all(|v| *v <= 0.0 && *v >= -45.0));
    assert!(fs::read_dir(&b).unwrap().any(|e| e.unwrap().path().extension().is_some_and(|x| x == "png")));
}

#[test]
fn manifests_match_the_published_schema() {
    let schema: Value = serde_json::from_str(include_str!("../../../docs/manifest.schema.json")).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let tmp = TempDir::new().unwrap();
    for (k, generator) in [json!({"kind": "ellipsoids"}), json!({"kind": "layered"})].into_iter().enumerate() {
        let mut c = small(1);
        c["generator"] = generator;
        c["corruption"] = json!({"awgn_target_snr_db": 12.0, "phase_range_rad": 0.5, "noise_seed": 1});
        let cfg = write_config(tmp.path(), &format!("cfg{k}.json"), &c);
        let (d, n) = (tmp.path().join(format!("d{k}")), tmp.path().join(format!("n{k}")));
        ok(&sosgen(&["--config", s(&cfg), "--out", s(&d), "generate"]));
        ok(&sosgen(&["--config", s(&cfg), "--out", s(&n), "corrupt", "--dataset", s(&d)]));
        for dir in [&d, &n] {
            let manifest: Value = serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap();
            let errors: Vec<String> = validator.iter_errors(&manifest).map(|e| e.to_string()).collect();
            assert!(errors.is_empty(), "{errors:?}");
        }
    }
}

#[test]
fn example_configs_load_and_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/examples");
    let mut n = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            let cfg = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 5);
}
