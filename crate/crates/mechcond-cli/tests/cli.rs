use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../mechcond/fixtures").join(name)
}

fn mechcond(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mechcond")).args(args).env("MECHCOND_THREADS", "1").output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

#[test]
fn simulate_then_condition_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture("two_mode.json");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = mechcond(&["simulate", "--config", s(&cfg), "--out", s(out), "--seed", "11"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(std::fs::read(a.join("bundle.bin")).unwrap(), std::fs::read(b.join("bundle.bin")).unwrap());
    let m = json(&a.join("manifest.json"));
    assert_eq!(m["seeds"][0], 11);
    assert_eq!(m["threads"], 1);

    let cond = dir.path().join("cond");
    let o = mechcond(&[
        "condition",
        "--config",
        s(&cfg),
        "--trace",
        s(&a.join("bundle.bin")),
        "--subset",
        "1",
        "--out",
        s(&cond),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&cond.join("report.json"));
    assert_eq!(r["provenance"], "simulated");
    let model = json(&cond.join("model_report.json"));
    let (v, vm) = (r["V_dq_dq"].as_f64().unwrap(), model["V_dq_dq"].as_f64().unwrap());
    assert!((v / vm - 1.0).abs() < 0.2, "single record {v} vs model {vm}");
    for f in ["phase_pred.csv", "phase_retro.csv", "phase_relative.csv", "filter_h_q_causal.csv"] {
        assert!(cond.join(f).exists(), "{f}");
    }
    let head = std::fs::read_to_string(cond.join("phase_pred.csv")).unwrap();
    assert!(head.starts_with("q,p\n"));
}

#[test]
fn condition_on_a_plain_trace_infers_from_the_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture("two_mode.json");
    let sim = dir.path().join("sim");
    assert!(mechcond(&["simulate", "--config", s(&cfg), "--out", s(&sim), "--seed", "3", "--csv"]).status.success());
    let csv = std::fs::read_to_string(sim.join("bundle.csv")).unwrap();
    let mut trace = String::from("t_s,y\n");
    for line in csv.lines().skip(1) {
        let mut it = line.split(',');
        trace += &format!("{},{}\n", it.next().unwrap(), it.next().unwrap());
    }
    let tp = dir.path().join("trace.csv");
    std::fs::write(&tp, trace).unwrap();
    let out = dir.path().join("cond");
    let o = mechcond(&["condition", "--config", s(&cfg), "--trace", s(&tp), "--subset", "1,2", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&out.join("report.json"));
    assert_eq!(r["provenance"], "inferred-from-data");
    assert_eq!(r["subset"], serde_json::json!([0, 1]));
}

#[test]
fn bad_subsets_fail() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture("two_mode.json");
    let t = dir.path().join("missing.bin");
    for subset in ["", "0", "3"] {
        let o =
            mechcond(&["condition", "--config", s(&cfg), "--trace", s(&t), "--subset", subset, "--out", s(dir.path())]);
        assert!(!o.status.success(), "subset {subset:?} accepted");
    }
}

#[test]
fn simulate_requires_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let o = mechcond(&["simulate", "--config", s(&fixture("two_mode.json")), "--out", s(dir.path())]);
    assert!(!o.status.success());
}

#[test]
fn criteria_prints_json() {
    let o = mechcond(&[
        "criteria",
        "--c",
        "1e4",
        "--q",
        "1e5",
        "--n-th",
        "1e6",
        "--eta",
        "0.5",
        "--modes",
        "2",
        "--zipper-photons",
        "160",
    ]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["regime"]["quantum_squeezing"]["satisfied"], false);
    let n = v["zipper"]["threshold_photons"].as_f64().unwrap();
    assert!((80.0..320.0).contains(&n), "{n}");
    let odd = mechcond(&["criteria", "--c", "1", "--q", "10", "--n-th", "1", "--modes", "3"]);
    let v: serde_json::Value = serde_json::from_slice(&odd.stdout).unwrap();
    assert!(v["regime"]["entanglement"].is_null());
}

#[test]
fn factorize_model_spectrum_passes_its_checks() {
    let dir = tempfile::tempdir().unwrap();
    let o = mechcond(&["factorize", "--config", s(&fixture("two_mode.json")), "--out", s(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let f = json(&dir.path().join("factor.json"));
    assert!(f["residual"].as_f64().unwrap() <= 1e-6);
    assert!(f["anticausal_fraction"].as_f64().unwrap() <= 1e-8);
}

#[test]
fn sweep_writes_rows_for_every_cell() {
    let dir = tempfile::tempdir().unwrap();
    let o = mechcond(&[
        "sweep",
        "--config",
        s(&fixture("two_mode.json")),
        "--out",
        s(dir.path()),
        "--c-range",
        "1:100:3",
        "--n-range",
        "1e3:1e3:1",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("cooperativity,n_th,modes,v_dq_dq,squeezed,threshold_c,threshold_satisfied"));
}

#[test]
fn fit_recovers_a_simulated_record() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture("two_mode.json");
    let sim = dir.path().join("sim");
    assert!(mechcond(&["simulate", "--config", s(&cfg), "--out", s(&sim), "--seed", "5"]).status.success());
    let out = dir.path().join("fit");
    let o = mechcond(&[
        "fit",
        "--config",
        s(&cfg),
        "--trace",
        s(&sim.join("bundle.bin")),
        "--out",
        s(&out),
        "--segment",
        "8192",
        "--band",
        "150e3:400e3",
    ]);
    assert!(o.status.code().is_some_and(|c| c == 0 || c == 2), "{}", String::from_utf8_lossy(&o.stderr));
    let m = json(&out.join("model.json"));
    let f = m["modes"][0]["f_hz"].as_f64().unwrap();
    assert!((f / 244e3 - 1.0).abs() < 0.01, "{f}");
}
