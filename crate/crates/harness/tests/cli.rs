use std::path::Path;
use std::process::Command;

fn landau(args: &[&str], threads: &str) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_landau"))
        .args(args)
        .env("LANDAU_THREADS", threads)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stdout).into_owned())
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const LORENTZ: &str = r#"{"schema_version": 1, "name": "lz", "scenario": "lorentz_selftest",
    "grid": {"n": 8, "half_width": 2.0}}"#;

#[test]
fn passing_run_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", LORENTZ);
    let out = dir.path().join("out");
    let (code, stdout) = landau(&["lorentz-selftest", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "3"], "1");
    assert_eq!(code, 0, "{stdout}");
    assert!(stdout.contains("lz [PASS]"));
    let report = std::fs::read_to_string(out.join("lz/report.json")).unwrap();
    assert!(report.contains("\"seed\": 3"));
}

#[test]
fn failed_check_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    // a Maxwellian does not decay, so the rate fit is declined
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"schema_version": 1, "name": "flat", "scenario": "rates",
            "grid": {"n": 8, "half_width": 4.0},
            "solver": {"gamma": -1.0, "t_end": 0.02, "snapshot_interval": 0.01}}"#,
    );
    let out = dir.path().join("out");
    let (code, stdout) = landau(&["run", "--config", &cfg, "--out", out.to_str().unwrap()], "1");
    assert_eq!(code, 2, "{stdout}");
    assert!(out.join("flat/diagnostics.csv").exists());
}

#[test]
fn bad_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &LORENTZ.replace("\"grid\"", "\"gird\": 0, \"grid\""));
    let (code, _) = landau(&["run", "--config", &cfg, "--out", dir.path().to_str().unwrap()], "1");
    assert_eq!(code, 1);
    let (code, _) = landau(&["run", "--config", "/nonexistent.json"], "1");
    assert_eq!(code, 1);
}

#[test]
fn list_of_configs_on_two_workers() {
    let dir = tempfile::tempdir().unwrap();
    let second = LORENTZ.replace("\"lz\"", "\"lz2\"");
    let cfg = write(dir.path(), "c.json", &format!("[{LORENTZ}, {second}]"));
    let out = dir.path().join("out");
    let (code, stdout) = landau(&["run", "--config", &cfg, "--out", out.to_str().unwrap()], "2");
    assert_eq!(code, 0, "{stdout}");
    assert!(out.join("lz/lorentz.csv").exists() && out.join("lz2/lorentz.csv").exists());
    // order of the printed summaries follows the config list
    assert!(stdout.find("lz [").unwrap() < stdout.find("lz2 [").unwrap());
}

#[test]
fn execution_error_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    // the conservation scenario needs a solver block
    let cfg = write(dir.path(), "c.json", &LORENTZ.replace("lorentz_selftest", "conservation"));
    let (code, _) = landau(&["run", "--config", &cfg, "--out", dir.path().to_str().unwrap()], "1");
    assert_eq!(code, 1);
}
