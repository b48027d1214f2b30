use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spinshelve"))
        .current_dir(dir)
        .env_remove("SPINSHELVE_PRESETS")
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn protocol(name: &str) -> String {
    format!("{}/../../protocols/{name}.pseq", env!("CARGO_MANIFEST_DIR"))
}

fn read_csv(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn simulate_shows_overshoot_at_readout_onset() {
    let tmp = TempDir::new().unwrap();
    let o = run(tmp.path(), &["simulate", "--preset", "room_temperature", "--pseq", &protocol("fig2_recovery"), "--tau", "150ns"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = read_csv(&tmp.path().join("out/trajectory.csv"));
    let pl = |lo: f64, hi: f64| -> Vec<f64> { rows.iter().filter(|r| r[0] >= lo && r[0] <= hi).map(|r| r[6]).collect() };
    let early = pl(0.0, 50.0).into_iter().fold(0.0, f64::max);
    let late = pl(2000.0, 3000.0);
    let steady = late.iter().sum::<f64>() / late.len() as f64;
    assert!(early > 1.3 * steady, "peak {early} vs steady {steady}");
    let meta: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("out/trajectory.json")).unwrap()).unwrap();
    assert_eq!(meta["bindings"]["tau"], 150.0);
    assert!(meta["overshoot_ratio"].as_f64().unwrap() > 1.3);
    assert_eq!(meta["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn simulate_rejects_bad_input() {
    let tmp = TempDir::new().unwrap();
    let o = run(tmp.path(), &["simulate", "--preset", "missing/nowhere.toml", "--pseq", "fig2_recovery", "--tau", "150ns"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("missing/nowhere.toml"), "{}", stderr(&o));

    let o = run(tmp.path(), &["simulate", "--pseq", "fig2_recovery", "--tau", "150ns", "--dt", "0"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("span"), "{}", stderr(&o));

    let o = run(tmp.path(), &["simulate", "--pseq", "no_such.pseq"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("no_such.pseq"));
    assert!(!tmp.path().join("out").exists(), "nothing is written on failure");
}

#[test]
fn experiment_names_and_missing_keys() {
    let tmp = TempDir::new().unwrap();
    let o = run(tmp.path(), &["experiment", "spin-echo"]);
    assert_eq!(code(&o), 2);
    for name in ["pl-recovery", "init-time", "rabi-buffer", "t1", "odmr-spectrum"] {
        assert!(stderr(&o).contains(name), "{}", stderr(&o));
    }

    let o = run(tmp.path(), &["experiment", "odmr-spectrum"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("hyperfine_a_mhz"), "{}", stderr(&o));

    let o = run(tmp.path(), &["experiment", "odmr-spectrum", "--hyperfine-a", "47"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).starts_with("14 resolved dips"), "{}", stdout(&o));
}

#[test]
fn experiment_headlines() {
    let tmp = TempDir::new().unwrap();
    let o = run(tmp.path(), &["experiment", "pl-recovery"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).starts_with("T_IS ≈ 24.0 ns") || stdout(&o).starts_with("T_IS ≈ 24.1 ns"), "{}", stdout(&o));

    let o = run(tmp.path(), &["experiment", "init-time"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let line = stdout(&o);
    let a: f64 = line
        .split("a ≈ ")
        .nth(1)
        .and_then(|r| r.split(',').next())
        .and_then(|v| v.parse().ok())
        .unwrap_or_else(|| panic!("{line}"));
    assert!((-1.05..=-0.85).contains(&a), "{line}");
    assert!(tmp.path().join("out/init-time/report.json").is_file());
}

#[test]
fn experiment_outputs_are_deterministic_and_reproducible() {
    let tmp = TempDir::new().unwrap();
    let args = |out: &'static str| ["experiment", "pl-recovery", "--noise", "--shots", "1000000", "--seed", "7", "--out", out];
    assert_eq!(code(&run(tmp.path(), &args("a"))), 0);
    assert_eq!(code(&run(tmp.path(), &[&args("b")[..], &["--jobs", "2"]].concat())), 0);
    for file in ["report.json", "fig2c_overshoot_vs_tau.csv"] {
        let a = fs::read(tmp.path().join("a/pl-recovery").join(file)).unwrap();
        let b = fs::read(tmp.path().join("b/pl-recovery").join(file)).unwrap();
        assert!(a == b, "{file} differs between runs");
    }
    assert!(tmp.path().join("a/pl-recovery/run_info.json").is_file());

    let o = run(tmp.path(), &["rerun", "a/pl-recovery/report.json", "--out", "c"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        fs::read(tmp.path().join("a/pl-recovery/report.json")).unwrap(),
        fs::read(tmp.path().join("c/report.json")).unwrap()
    );
}

#[test]
fn gnuplot_scripts_accompany_tables() {
    let tmp = TempDir::new().unwrap();
    let o = run(tmp.path(), &["experiment", "pl-recovery", "--gnuplot"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let gp = fs::read_to_string(tmp.path().join("out/pl-recovery/fig2c_overshoot_vs_tau.gp")).unwrap();
    assert!(gp.contains("'fig2c_overshoot_vs_tau.csv'"));
    assert!(gp.contains("for [i=2:5]"));
}

#[test]
fn fit_simulated_decay() {
    let tmp = TempDir::new().unwrap();
    let o = run(tmp.path(), &["simulate", "--pseq", "fig2_recovery", "--tau", "150ns", "--out", "sim"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run(tmp.path(), &["fit", "exp_decay", "sim/trajectory.csv", "--x", "t_ns", "--y", "pl", "--range", "20:2900"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let printed: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(printed["model"], "exp_decay");
    assert_eq!(printed["formula"], "y0 + A*exp(-t/T)");
    assert_eq!(printed["converged"], true);
    let saved = fs::read_to_string(tmp.path().join("out/trajectory.exp_decay.fit.json")).unwrap();
    assert_eq!(saved, stdout(&o));
}

#[test]
fn fit_input_errors() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("one.csv"), "x,y\n1,2\n").unwrap();
    fs::write(tmp.path().join("bad.csv"), "1,2\n2,3\n3,oops\n4,5\n").unwrap();

    let o = run(tmp.path(), &["fit", "stretched_exp", "one.csv"]);
    assert_eq!(code(&o), 2);
    for m in ["exp_decay", "exp_recovery", "damped_sin", "double_gaussian", "power_law", "linear"] {
        assert!(stderr(&o).contains(m), "{}", stderr(&o));
    }

    let o = run(tmp.path(), &["fit", "exp_decay", "one.csv"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("at least"), "{}", stderr(&o));

    let o = run(tmp.path(), &["fit", "linear", "bad.csv"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("row 3"), "{}", stderr(&o));
}

#[test]
fn fit_non_convergence_still_emits_the_result() {
    let tmp = TempDir::new().unwrap();
    let rows: String = (0..40).map(|i| format!("{i},{}\n", u8::from(i > 20))).collect();
    fs::write(tmp.path().join("step.csv"), rows).unwrap();
    let o = run(tmp.path(), &["fit", "exp_decay", "step.csv"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let printed: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(printed["converged"], false);
    assert!(tmp.path().join("out/step.exp_decay.fit.json").is_file());
}

#[test]
fn compile_timelines() {
    let tmp = TempDir::new().unwrap();
    let o = run(tmp.path(), &["compile", &protocol("fig2_recovery"), "--bind", "tau=150ns"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let tl: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let laser = tl["channels"]["laser"].as_array().unwrap();
    assert_eq!(laser.len(), 4);
    let times: Vec<f64> = laser.iter().map(|e| e[0].as_f64().unwrap()).collect();
    assert_eq!(times, [0.0, 3000.0, 3150.0, 6150.0]);

    let o = run(tmp.path(), &["compile", "fig2_recovery", "--out", "unbound"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("`tau`"), "{}", stderr(&o));

    let o = run(tmp.path(), &["compile", "fig2_recovery", "--sweep", "tau=2ns:150ns:2ns", "--out", "sweep"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read_dir(tmp.path().join("sweep")).unwrap().count(), 75);

    // buffer is unbound: the sweep fails before any file is written
    let o = run(tmp.path(), &["compile", "fig4a_rabi", "--sweep", "tau=2ns:10ns:2ns", "--out", "partial"]);
    assert_eq!(code(&o), 1);
    assert!(!tmp.path().join("partial").exists());
}

#[test]
fn calibrate_reproduces_shipped_rates() {
    let tmp = TempDir::new().unwrap();
    let o = run(tmp.path(), &["calibrate", "--write", "rt.toml"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let fresh = spinshelve::config::Preset::load(&tmp.path().join("rt.toml")).unwrap();
    let shipped = spinshelve::config::Preset::builtin("room_temperature").unwrap();
    let (a, b) = (fresh.system.rates, shipped.system.rates);
    for (x, y) in [(a.k_r, b.k_r), (a.gamma0, b.gamma0), (a.kappa0, b.kappa0), (a.k_sl_0to1, b.k_sl_0to1)] {
        assert!(((x - y) / y).abs() < 1e-6, "{x} vs {y}");
    }
}
