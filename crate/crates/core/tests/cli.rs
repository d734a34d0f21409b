use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kcm-lab"))
}

fn json_line(out: &std::process::Output) -> serde_json::Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn spectrum_example_has_positive_gap() {
    let out = bin().args(["spectrum", "--model", "fa1f", "--n", "6", "--q", "0.5", "--bc", "infected,infected"]).output().unwrap();
    let v = json_line(&out);
    assert!(v["summary"]["gap"].as_f64().unwrap() > 0.0);
    assert_eq!(v["kind"], "spectrum");
    assert_eq!(v["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn exact_duality_example() {
    let out = bin().args(["duality", "--lambda", "1", "--B", "0", "--Bprime", "0,1", "--t", "0.5", "--exact"]).output().unwrap();
    let v = json_line(&out);
    assert!(v["summary"]["abs_diff"].as_f64().unwrap() <= 1e-8);
}

#[test]
fn unknown_flag_exits_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.jsonl");
    let out = bin()
        .args(["spectrum", "--model", "fa1f", "--n", "6", "--q", "0.5", "--frobnicate", "1", "--output"])
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(!path.exists());
}

#[test]
fn bad_config_line_exits_2_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("x.cfg");
    let path = dir.path().join("out.jsonl");
    std::fs::write(&cfg, format!("kind = spectrum\nmodel = fa1f\nn = 6\nq = 2\noutput = {}\n", path.display())).unwrap();
    let out = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 4"));
    assert!(!path.exists());
}

#[test]
fn runtime_failure_exits_1() {
    // 2^24 states exceeds the enumeration cap only once the chain is built
    let out = bin().args(["spectrum", "--model", "fa1f", "--n", "24", "--q", "0.5"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn run_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("f.cfg");
    let path = dir.path().join("front.csv");
    std::fs::write(
        &cfg,
        format!("kind = front\nmodel = fa1f\nq = 0.5\nhorizon = 10\nsample_dt = 2\nreplicas = 5\nseed = 9\noutput = {}\n", path.display()),
    )
    .unwrap();
    let run = || {
        let out = bin().args(["run", "--config"]).arg(&cfg).env("KCM_LAB_WORKERS", "2").output().unwrap();
        json_line(&out);
        std::fs::read(&path).unwrap()
    };
    let a = run();
    assert_eq!(a, run());
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("# {") && text.contains("\"seed\":9"));
}

#[test]
fn tampered_rate_fails_reversibility() {
    let dir = tempfile::tempdir().unwrap();
    let ledger = dir.path().join("ledger.jsonl");
    let out = bin().args(["verify", "--only", "1", "--tamper", "1e-3", "--ledger"]).arg(&ledger).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("[FAIL]  1 reversibility"));
    let line: serde_json::Value = serde_json::from_str(std::fs::read_to_string(&ledger).unwrap().trim()).unwrap();
    assert_eq!(line["pass"], false);
}

#[test]
fn verify_emits_a_ledger_line_per_criterion() {
    let dir = tempfile::tempdir().unwrap();
    let ledger = dir.path().join("ledger.jsonl");
    let out = bin().args(["verify", "--suite", "quick", "--only", "1,2,3,5", "--ledger"]).arg(&ledger).output().unwrap();
    assert!(out.status.success());
    let text = std::fs::read_to_string(&ledger).unwrap();
    let ids: Vec<u64> = text.lines().map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["id"].as_u64().unwrap()).collect();
    assert_eq!(ids, [1, 2, 3, 5]);
}
