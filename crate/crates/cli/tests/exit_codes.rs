use std::process::{Command, Output};

fn tsipw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsipw"))
        .args(args)
        .env("RUST_LOG", "off")
        .output()
        .expect("run tsipw")
}

fn write_config(dir: &std::path::Path) -> String {
    let path = dir.join("cfg.toml");
    std::fs::write(
        &path,
        "t_star = [2, 4]\n[bootstrap]\nenabled = false\n[simulation]\nn = 200\ntau = 4\n\
         [simulation.guard_rails]\nmin_at_risk = 0\n",
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn missing_config_exits_2_and_names_the_path() {
    let out = tsipw(&["simulate", "--config", "/nonexistent/cfg.toml", "--out", "/tmp/x.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/cfg.toml"));
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[bootstrap]\nreplicatez = 3\n").unwrap();
    let out = tsipw(&["estimate", "--config", cfg.to_str().unwrap(), "--data", "x.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_data_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let data = dir.path().join("d.csv");
    std::fs::write(&data, "id,time,a,l0,l,r,y,c,d\np1,0,2,0,0,0,,0,0\n").unwrap();
    let out = tsipw(&["estimate", "--config", &cfg, "--data", data.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn outcome_time_beyond_data_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let data = dir.path().join("d.csv");
    let s = |p: &std::path::Path| p.to_str().unwrap().to_string();
    assert!(tsipw(&["simulate", "--config", &cfg, "--out", &s(&data), "--tau", "3"]).status.success());
    let out = tsipw(&["estimate", "--config", &cfg, "--data", &s(&data), "--out-dir", &s(dir.path())]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn simulate_then_estimate_writes_both_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let data = dir.path().join("d.csv");
    let s = |p: &std::path::Path| p.to_str().unwrap().to_string();
    assert!(tsipw(&["simulate", "--config", &cfg, "--out", &s(&data), "--n", "300"]).status.success());
    let rows = std::fs::read_to_string(&data).unwrap();
    let ids: std::collections::BTreeSet<&str> =
        rows.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ids.len(), 300);
    let out = tsipw(&["estimate", "--config", &cfg, "--data", &s(&data), "--out-dir", &s(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    assert!(json.contains("\"schema_version\": 1"));
    assert!(json.contains("\"bootstrap\": null"));
    assert!(dir.path().join("report.csv").exists());
}
