use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sbd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sbd"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn stationary_three_particles() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("table.csv");
    let o = sbd(&[
        "stationary",
        "--n",
        "3",
        "--rho",
        "1",
        "--kernel",
        "constant:a=1,b=1",
        "--z",
        "0.5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "state,log_weight,probability,potential");
    assert!(lines[1].starts_with("1:3,"));
    let p: f64 = lines[1].split(',').nth(2).unwrap().parse().unwrap();
    assert!((p - 3.0 / 11.0).abs() < 1e-15);
    let summary = json(&dir.path().join("table.json"));
    assert_eq!(summary["p_n"], 3);
    assert_eq!(summary["z"], 0.5);
}

#[test]
fn equilibrium_reports_critical_values() {
    let o = sbd(&["equilibrium", "--kernel", "power_db:q=4", "--rho", "2"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["regime"], "supercritical");
    assert!((v["rho_s"].as_f64().unwrap() - 1.2020569031595942).abs() < 1e-9);
    assert_eq!(v["z"], 1.0);
}

#[test]
fn simulate_is_reproducible_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        let o = sbd(&[
            "simulate",
            "--kernel",
            "constant:a=1,b=1",
            "--rho",
            "1",
            "--n",
            "60",
            "--replicas",
            "6",
            "--horizon",
            "2",
            "--grid-points",
            "5",
            "--seed",
            "9",
            "--threads",
            threads,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(&out).unwrap()
    };
    let a = run("a.csv", "1");
    let b = run("b.csv", "3");
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("replica,t,i,c_i\n0,0.0,1,1.0\n"));
    let summary = json(&dir.path().join("a.json"));
    assert_eq!(summary["seed"], 9);
    assert!(summary["jump_count"].as_u64().unwrap() > 0);
}

#[test]
fn ode_writes_long_csv_and_drift() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ode.csv");
    let o = sbd(&[
        "ode",
        "--kernel",
        "constant:a=1,b=1",
        "--rho",
        "1",
        "--truncation",
        "16",
        "--horizon",
        "1",
        "--grid-points",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 16);
    let summary = json(&dir.path().join("ode.json"));
    assert!(summary["relative_mass_drift"].as_f64().unwrap() < 1e-8);
}

#[test]
fn experiment_writes_results_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("potential.toml");
    fs::write(&cfg, "kind = \"potential\"\nrho = 1.0\nn_grid = [10, 20]\n[kernel]\nfamily = \"constant\"\nparams = { a = 1.0, b = 1.0 }\n").unwrap();
    let out = dir.path().join("res");
    let o = sbd(&[
        "potential",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("potential.csv").exists());
    assert!(out.join("config.toml").exists());
    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["seed_source"], "cli");
}

#[test]
fn exit_codes() {
    // unknown kernel family: configuration error
    let o = sbd(&["equilibrium", "--kernel", "cubic:a=1", "--rho", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("kernel.family"));
    // enumeration cap
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.csv");
    let o = sbd(&[
        "stationary",
        "--n",
        "80",
        "--rho",
        "1",
        "--kernel",
        "constant:a=1,b=1",
        "--z",
        "0.5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(4));
    // no equilibrium for linear coagulation at any mass: numerical failure
    let o = sbd(&["equilibrium", "--kernel", "linear_coag:slope=1,b=1", "--rho", "1"]);
    assert_eq!(o.status.code(), Some(3));
    // mismatched experiment kind
    let cfg = dir.path().join("lln.toml");
    fs::write(&cfg, "kind = \"lln\"\nrho = 1.0\nn_grid = [10]\n[kernel]\nfamily = \"constant\"\nparams = { a = 1.0, b = 1.0 }\n").unwrap();
    let o = sbd(&["moment", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
