use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bgtplanner"))
}

#[test]
fn run_writes_outputs_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "policy = \"uniform\"\nhorizon = 30\nmin_horizon = 20\nt0 = 2\n").unwrap();
    let out = dir.path().join("out");
    let res = bin().arg("run").arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(summary["summary"]["policy"], "uniform");
    assert_eq!(summary["summary"]["rounds_executed"], 30);
    for f in ["metrics.csv", "ledger.csv", "summary.csv"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
}

#[test]
fn bad_config_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "horizon = 5\nmin_horizon = 9\n").unwrap();
    let res = bin().arg("validate").arg(&cfg).output().unwrap();
    assert_eq!(res.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&res.stderr).unwrap();
    assert_eq!(err["error"], "config");

    let res = bin().arg("run").arg(dir.path().join("missing.toml")).output().unwrap();
    assert_ne!(res.status.code(), Some(0));
}

#[test]
fn sweep_writes_one_csv() {
    let dir = tempfile::tempdir().unwrap();
    for (name, policy) in [("a", "no_noise"), ("b", "uniform")] {
        std::fs::write(
            dir.path().join(format!("{name}.toml")),
            format!("policy = \"{policy}\"\nhorizon = 20\nmin_horizon = 15\nt0 = 1\n"),
        )
        .unwrap();
    }
    let out = dir.path().join("sweep");
    let pattern = dir.path().join("*.toml");
    let res = bin()
        .args(["sweep", pattern.to_str().unwrap(), "--seeds", "2", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 3);
}
