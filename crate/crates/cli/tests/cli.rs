use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use pamnet::chem_io::to_xyz;
use pamnet::harness::synthetic::{inverse_distance_sum, random_molecules};
use serde_json::Value;
use tempfile::TempDir;

fn pamnet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pamnet"))
        .args(args)
        .arg("--out-dir")
        .arg(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn pamnet")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Writes `n` molecules as XYZ files plus a labels CSV; returns (data dir, labels path).
fn dataset(root: &Path, n: usize, seed: u64) -> (String, String) {
    let data = root.join("data");
    fs::create_dir_all(&data).unwrap();
    let mut labels = String::from("id,value\n");
    for s in random_molecules(n, 3, 6, seed).unwrap() {
        fs::write(data.join(format!("{}.xyz", s.id)), to_xyz(&s)).unwrap();
        labels.push_str(&format!("{},{}\n", s.id, inverse_distance_sum(&s, 5.0)));
    }
    let label_path = root.join("labels.csv");
    fs::write(&label_path, labels).unwrap();
    (data.display().to_string(), label_path.display().to_string())
}

fn tiny_config(root: &Path, head: &str) -> String {
    let path = root.join("config.json");
    let cfg = serde_json::json!({
        "model": {
            "hidden_dim": 8, "n_layers": 2, "head": head,
            "n_radial_global": 4, "n_radial_local": 4, "n_spherical": 3, "n_radial_angular": 3
        },
        "train": { "batch_size": 4, "initial_lr": 0.005, "warmup_epochs": 0.0, "max_epochs": 3 },
        "split": [0.5, 0.25, 0.25]
    });
    fs::write(&path, cfg.to_string()).unwrap();
    path.display().to_string()
}

#[test]
fn featurize_dumps_structures_and_summary() {
    let tmp = TempDir::new().unwrap();
    let (data, _) = dataset(tmp.path(), 3, 1);
    let out = pamnet(tmp.path(), &["featurize", &data, "--dump-json"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("\"id\": \"mol0\""));
    let summary = read_json(&tmp.path().join("featurize.json"));
    let rows = summary["structures"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    for r in rows {
        let n = r["n_atoms"].as_u64().unwrap();
        // every pair is within 5 Å in these small molecules
        assert_eq!(r["global_edges"].as_u64().unwrap(), n * (n - 1));
    }
}

#[test]
fn train_eval_predict_round_trip() {
    let tmp = TempDir::new().unwrap();
    let (data, labels) = dataset(tmp.path(), 12, 2);
    let cfg = tiny_config(tmp.path(), "scalar");
    let run = tmp.path().join("run");
    let out = pamnet(&run, &["train", "--config", &cfg, "--data", &data, "--labels", &labels]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["model.ckpt", "model.json", "history.csv", "train_report.json"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let history = fs::read_to_string(run.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 4);
    let report = read_json(&run.join("train_report.json"));
    assert_eq!(report["epochs"], 3);
    assert!(report["test"]["overall"]["mae"].as_f64().unwrap().is_finite());

    let ckpt = run.join("model.ckpt").display().to_string();
    let out = pamnet(&run, &["eval", "--checkpoint", &ckpt, "--data", &data, "--labels", &labels]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let eval = read_json(&run.join("eval.json"));
    assert_eq!(eval["overall"]["n"], 12);

    let out = pamnet(&run, &["predict", "--checkpoint", &ckpt, "--data", &data]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(run.join("predictions.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("id,prediction"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 12);
    assert!(rows.iter().all(|r| r.split(',').nth(1).unwrap().parse::<f64>().unwrap().is_finite()));
}

#[test]
fn vector_head_predictions_have_components() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    fs::create_dir_all(&data).unwrap();
    let mut labels = String::from("id,value,vy,vz\n");
    for s in random_molecules(8, 3, 5, 3).unwrap() {
        fs::write(data.join(format!("{}.xyz", s.id)), to_xyz(&s)).unwrap();
        let p = s.positions[0];
        labels.push_str(&format!("{},{},{},{}\n", s.id, p[0], p[1], p[2]));
    }
    fs::write(tmp.path().join("labels.csv"), labels).unwrap();
    let cfg = tiny_config(tmp.path(), "vector");
    let data = data.display().to_string();
    let labels = tmp.path().join("labels.csv").display().to_string();
    let out = pamnet(tmp.path(), &["train", "--config", &cfg, "--data", &data, "--labels", &labels]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt = tmp.path().join("model.ckpt").display().to_string();
    let out = pamnet(tmp.path(), &["predict", "--checkpoint", &ckpt, "--data", &data, "--output", "-"]);
    assert_eq!(code(&out), 0);
    let csv = String::from_utf8(out.stdout).unwrap();
    assert_eq!(csv.lines().next(), Some("id,prediction,ux,uy,uz"));
    for line in csv.lines().skip(1) {
        let v: Vec<f64> = line.split(',').skip(1).map(|x| x.parse().unwrap()).collect();
        let n = (v[1] * v[1] + v[2] * v[2] + v[3] * v[3]).sqrt();
        assert!((v[0] - n).abs() <= 1e-12 * n.max(1.0));
    }
}

#[test]
fn smoke_training_reports_failed_expectation() {
    let tmp = TempDir::new().unwrap();
    let out = pamnet(tmp.path(), &["train", "--smoke", "--max-steps", "3", "--expect-train-mae", "1e-30"]);
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&tmp.path().join("train_report.json"));
    assert_eq!(report["steps"], 3);
    assert_eq!(report["passed"], false);
}

#[test]
fn profile_writes_rows_and_checks_expectations() {
    let tmp = TempDir::new().unwrap();
    let (data, _) = dataset(tmp.path(), 4, 4);
    let out = pamnet(tmp.path(), &["profile", "--data", &data]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(tmp.path().join("profile.csv")).unwrap();
    assert_eq!(
        csv.lines().next(),
        Some("id,n_atoms,k_g,k_l,global_msgs,local_base_msgs,local_angle_msgs,dimenet_style_msgs")
    );
    assert_eq!(csv.lines().count(), 5);
    let summary = read_json(&tmp.path().join("profile.json"));
    let mean = summary["summary"]["mean_pamnet_msgs"].as_f64().unwrap();
    let exact = format!("{mean}");
    let out = pamnet(tmp.path(), &["profile", "--data", &data, "--expect-pamnet", &exact]);
    assert_eq!(code(&out), 0);
    let out = pamnet(tmp.path(), &["profile", "--data", &data, "--expect-pamnet", "1e9"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn sweep_on_generated_boxes() {
    let tmp = TempDir::new().unwrap();
    let args = ["sweep", "--boxes", "2", "--box-atoms", "60", "--box-side", "8", "--d", "1,2,3"];
    let out = pamnet(tmp.path(), &args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&tmp.path().join("sweep.json"));
    assert_eq!(report["points"].as_array().unwrap().len(), 3);
    assert!(report["ratio"].as_f64().unwrap() > 1.0);
    assert_eq!(fs::read_to_string(tmp.path().join("sweep.csv")).unwrap().lines().count(), 4);
    let out = pamnet(tmp.path(), &[&args[..], &["--expect-ratio", "100", "--ratio-tolerance", "0.1"]].concat());
    assert_eq!(code(&out), 1);
}

#[test]
fn symmetry_and_attention_on_fresh_model() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(tmp.path(), "vector_magnitude");
    let args = ["check-symmetry", "--config", &cfg, "--n-molecules", "3", "--n-transforms", "4"];
    let out = pamnet(tmp.path(), &args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&tmp.path().join("symmetry.json"));
    assert_eq!(report["passed"], true);
    assert_eq!(report["equivariance"]["passed"], true);
    assert!(report["invariance"]["max_deviation"].as_f64().unwrap() < 1e-9);

    let (data, _) = dataset(tmp.path(), 3, 5);
    let out = pamnet(tmp.path(), &["report-attention", "--config", &cfg, "--data", &data]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let att = read_json(&tmp.path().join("attention.json"));
    let (g, l) = (
        att["attention"]["mean_global"].as_f64().unwrap(),
        att["attention"]["mean_local"].as_f64().unwrap(),
    );
    assert!((g + l - 1.0).abs() < 1e-9);

    let out = pamnet(tmp.path(), &["report-attention", "--config", &cfg, "--data", &data, "--no-local-mp"]);
    assert_eq!(code(&out), 0);
    let att = read_json(&tmp.path().join("attention.json"));
    assert_eq!(att["attention"]["mean_global"], 1.0);
}

#[test]
fn bad_inputs_exit_with_code_two() {
    let tmp = TempDir::new().unwrap();
    let (data, labels) = dataset(tmp.path(), 3, 6);
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"modle": {}}"#).unwrap();
    let out = pamnet(tmp.path(), &["featurize", &data, "--config", bad.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("modle"));

    fs::write(&labels, "id,value\nmol0,1.0\n").unwrap();
    let out = pamnet(tmp.path(), &["train", "--data", &data, "--labels", &labels]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no label"));

    let out = pamnet(tmp.path(), &["eval", "--checkpoint", "/nonexistent.ckpt", "--data", &data, "--labels", &labels]);
    assert_eq!(code(&out), 2);
}
