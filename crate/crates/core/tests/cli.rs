use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use diskflow::cli::{parse_config, resolve, PRESETS};
use diskflow::error::Error;

fn diskflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diskflow")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    let out = dir.join("out");
    fs::write(&path, format!("output_dir = {:?}\n{body}", out.to_str().unwrap())).unwrap();
    path.to_str().unwrap().to_string()
}

const HEAT: &str = r#"
[grid]
n_points = 256
r_max = 60.0

[time]
dt = 0.05
growth = 0.0
t_end = 20.0

[initial_data]
preset = "unit-kick-k0"

[experiment]
kind = "mode-heat"
check = false

[norms]
p = [1.0, 2.0]
"#;

fn data_rows(text: &str) -> Vec<Vec<f64>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(", ").map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn mode_heat_run_conserves_mass() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "heat.toml", HEAT);
    let out = diskflow(&["run", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("experiment = mode-heat\n"));
    let text = fs::read_to_string(dir.path().join("out/heat.txt")).unwrap();
    assert!(text.starts_with("# diskflow "));
    let columns = text.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(columns, "t, ell, mass, norm_1, norm_2");
    let rows = data_rows(&text);
    let m0 = rows[0][2];
    assert!(rows.iter().all(|r| ((r[2] - m0) / m0).abs() <= 1e-10));
    assert!((rows.last().unwrap()[0] - 20.0).abs() < 1e-12);
}

#[test]
fn every_output_echoes_the_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "heat.toml", HEAT);
    assert!(diskflow(&["run", &cfg]).status.success());
    for name in ["heat.txt", "summary.txt"] {
        let text = fs::read_to_string(dir.path().join("out").join(name)).unwrap();
        let header: Vec<&str> = text.lines().take_while(|l| l.starts_with('#')).collect();
        assert!(header.iter().any(|l| l.contains("preset = \"unit-kick-k0\"")));
        assert!(header.iter().any(|l| l.contains("n_points = 256")));
        // defaults filled by the preset appear too
        assert!(header.iter().any(|l| l.starts_with("# m = ")));
    }
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "heat.toml", HEAT);
    let read = || {
        assert!(diskflow(&["run", &cfg]).status.success());
        ["heat.txt", "summary.txt"].map(|n| fs::read(dir.path().join("out").join(n)).unwrap())
    };
    let first = read();
    assert_eq!(first, read());
}

#[test]
fn failing_check_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"
[grid]
n_points = 128
r_max = 8.0

[initial_data]
preset = "translating-disk"

[experiment]
kind = "compare-asymptotic"
check = true
"#;
    let out = diskflow(&["run", &write_config(dir.path(), "bad.toml", body)]);
    assert_eq!(out.status.code(), Some(2));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("check translation-asymptotics: fail"));
    assert!(stdout.contains("check added-mass: pass"));
    assert!(String::from_utf8(out.stderr).unwrap().contains("warning: r_max"));
}

#[test]
fn passing_checks_exit_0() {
    let dir = tempfile::tempdir().unwrap();
    let out = diskflow(&["run", &write_config(dir.path(), "heat.toml", &HEAT.replace("check = false", "check = true"))]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("check mass-conservation: pass"));
}

fn single_line_error(body: &str) -> String {
    let dir = tempfile::tempdir().unwrap();
    let out = diskflow(&["run", &write_config(dir.path(), "c.toml", body)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    err
}

#[test]
fn malformed_configs_exit_1_naming_the_key() {
    assert!(single_line_error(&HEAT.replace("n_points = 256", "n_points = \"many\"")).contains("grid.n_points"));
    assert!(single_line_error(&HEAT.replace("r_max = 60.0", "r_max = 60.0\nr_min = 1.0")).contains("r_min"));
    assert!(single_line_error(&HEAT.replace("unit-kick-k0", "no-such-preset")).contains("no-such-preset"));
    assert!(single_line_error(&HEAT.replace("dt = 0.05", "dt = -1.0")).contains("dt"));
    assert!(single_line_error(&HEAT.replace("[norms]", "[norms")).contains("line"));
}

#[test]
fn missing_file_exits_1() {
    let out = diskflow(&["run", "/nonexistent/config.toml"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bad_thread_count_exits_1() {
    let out = Command::new(env!("CARGO_BIN_EXE_diskflow")).env("DISKFLOW_THREADS", "lots").arg("list-presets").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().contains("DISKFLOW_THREADS"));
}

#[test]
fn list_presets_names_all_shipped_data() {
    let out = diskflow(&["list-presets"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let names: Vec<&str> = text.lines().map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(
        names,
        ["unit-kick-k0", "w-bump-k1", "translating-disk", "neutral-buoyancy", "higher-modes-only", "ns-small-q32", "kato-small"]
    );
    assert_eq!(PRESETS.len(), names.len());
}

#[test]
fn print_expected() {
    let out = diskflow(&["print-expected", "ns-diff", "2", "1.5"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let e: f64 = text.lines().next().unwrap().strip_prefix("exponent = ").unwrap().parse().unwrap();
    assert!((e + 1.0 / 3.0).abs() < 1e-15);
    assert!(text.contains("log_correction = false"));
    let out = diskflow(&["print-expected", "semigroup", "inf", "1"]);
    assert!(String::from_utf8(out.stdout).unwrap().starts_with("exponent = -1.0"));
    let out = diskflow(&["print-expected", "gradient", "1.5", "1", "--regime", "long"]);
    assert_eq!(out.status.code(), Some(1));
    let out = diskflow(&["print-expected", "curl", "2", "1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn shipped_configs_resolve() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = resolve(parse_config(&fs::read_to_string(&path).unwrap()).unwrap());
        assert!(cfg.is_ok(), "{}: {:?}", path.display(), cfg.err());
        n += 1;
    }
    assert!(n >= 7);
}

#[test]
fn resolve_rejects_mismatched_presets() {
    let text = HEAT.replace("unit-kick-k0", "translating-disk");
    assert!(matches!(resolve(parse_config(&text).unwrap()), Err(Error::Config { .. })));
    let text = HEAT.replace("preset = \"unit-kick-k0\"", "");
    assert!(matches!(resolve(parse_config(&text).unwrap()), Err(Error::Config { .. })));
}
