use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::DVector;
use pdp_cli::io::{
    load_demos, read_json, read_runrecord, read_trajectory, write_trajectory, DemoManifest, TrialMetadata,
};
use pdp_core::envs::{make_env, EnvOverrides};
use pdp_core::ocp::stationarity;
use pdp_core::Trajectory;
use tempfile::TempDir;

fn pdp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pdp"))
        .args(args)
        .output()
        .expect("pdp runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn run_ok(cfg: &Path, out: &Path, extra: &[&str]) -> String {
    let mut args = vec!["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = pdp(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

const SYSID: &str = r#"
mode = "sysid"
env = "cartpole"
seed = 7
trials = 3
lr = 1e-3
iters = 25

[theta0]
kind = "perturb"
fraction = 0.3

[data]
count = 3
"#;

#[test]
fn runs_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "sysid.toml", SYSID);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_ok(&cfg, &a, &[]);
    run_ok(&cfg, &b, &["--workers", "3"]);
    for trial in 0..3 {
        for file in ["runrecord.csv", "theta.csv", "trajectory.csv", "metadata.json"] {
            let rel = format!("trial_{trial:03}/{file}");
            assert_eq!(
                fs::read(a.join(&rel)).unwrap(),
                fs::read(b.join(&rel)).unwrap(),
                "{rel} differs"
            );
        }
    }
    let c = dir.path().join("c");
    run_ok(&cfg, &c, &["--seed", "8"]);
    assert_ne!(
        fs::read(a.join("trial_000/runrecord.csv")).unwrap(),
        fs::read(c.join("trial_000/runrecord.csv")).unwrap()
    );
}

#[test]
fn run_writes_consistent_artefacts() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "sysid.toml", SYSID);
    let out = dir.path().join("run");
    let stdout = run_ok(&cfg, &out, &["--trials", "1"]);
    assert_eq!(stdout.lines().count(), 1);
    let rows = read_runrecord(&out.join("trial_000/runrecord.csv")).unwrap();
    assert_eq!(rows.len(), 26);
    assert!(rows.iter().enumerate().all(|(k, r)| r.iter == k && r.converged));
    assert!(rows
        .iter()
        .all(|r| r.wall_ms_forward == 0.0 && r.wall_ms_backward == 0.0));
    let meta: TrialMetadata = read_json(&out.join("trial_000/metadata.json")).unwrap();
    assert_eq!(meta.initial_loss, rows[0].loss);
    assert_eq!(meta.final_loss, rows[25].loss);
    assert_eq!(meta.theta_names, ["cart_mass", "pole_mass", "pole_length"]);
    assert_eq!(meta.theta_true.as_deref(), Some(&[0.5, 0.5, 1.0][..]));
    assert!(meta.final_loss < meta.initial_loss);
    assert!(out.join("config.toml").exists());
}

#[test]
fn zero_iterations_give_one_row() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "sysid.toml", &SYSID.replace("iters = 25", "iters = 0"));
    let out = dir.path().join("run");
    run_ok(&cfg, &out, &["--trials", "1"]);
    let rows = read_runrecord(&out.join("trial_000/runrecord.csv")).unwrap();
    assert_eq!(rows.len(), 1);
}

#[test]
fn ioc_trials_all_reduce_loss() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "ioc.toml",
        r#"
mode = "ioc"
env = "pendulum"
seed = 7
trials = 5
lr = 1e-4
iters = 20

[theta0]
kind = "perturb"
fraction = 0.2

[data]
count = 2
horizon = [15, 20]
"#,
    );
    let out = dir.path().join("ioc");
    let stdout = run_ok(&cfg, &out, &[]);
    assert_eq!(stdout.lines().count(), 5);
    for trial in 0..5 {
        let rows = read_runrecord(&out.join(format!("trial_{trial:03}/runrecord.csv"))).unwrap();
        assert!(rows[rows.len() - 1].loss < rows[0].loss, "trial {trial}");
    }
}

#[test]
fn gen_demos_writes_optimal_trajectories() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "demos.toml",
        "mode = \"ioc\"\nenv = \"cartpole\"\nseed = 3\nlr = 1e-4\niters = 10\n\n[data]\ncount = 5\n",
    );
    let out = dir.path().join("demos");
    let o = pdp(&["gen-demos", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (manifest, demos) = load_demos(&out.join("manifest.json")).unwrap();
    assert_eq!(demos.len(), 5);
    assert_eq!(
        fs::read_dir(&out)
            .unwrap()
            .filter(|e| e.as_ref().unwrap().path().extension().unwrap() == "csv")
            .count(),
        5
    );
    let env = make_env("cartpole", &EnvOverrides::default()).unwrap();
    assert_eq!(manifest.theta_dyn, env.theta_dyn);
    let theta = env.theta_true();
    for d in demos.iter() {
        assert!((40..=50).contains(&d.horizon()));
        let sys = env.ioc_system(d.states[0].clone(), d.horizon()).unwrap();
        let (_, res) = stationarity(&sys, d, &theta).unwrap();
        assert!(res <= 1e-6, "demo residual {res}");
    }

    let learn = write_config(
        dir.path(),
        "learn.toml",
        &format!(
            "mode = \"ioc\"\nenv = \"cartpole\"\nlr = 1e-4\niters = 3\n\n[theta0]\nkind = \"perturb\"\nfraction = 0.1\n\n[data]\nfile = {:?}\n",
            out.join("manifest.json")
        ),
    );
    let run_dir = dir.path().join("from_file");
    run_ok(&learn, &run_dir, &[]);
    let meta: TrialMetadata = read_json(&run_dir.join("trial_000/metadata.json")).unwrap();
    assert_eq!(meta.horizons, demos.iter().map(Trajectory::horizon).collect::<Vec<_>>());
}

#[test]
fn gen_demos_accepts_zero_count() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "sysid.toml", &SYSID.replace("count = 3", "count = 0"));
    let out = dir.path().join("none");
    let o = pdp(&["gen-demos", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: DemoManifest = read_json(&out.join("manifest.json")).unwrap();
    assert!(manifest.demos.is_empty());
    let o = pdp(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("data.count"));
}

#[test]
fn trajectory_files_round_trip() {
    let dir = TempDir::new().unwrap();
    let states = (0..4)
        .map(|t| DVector::from_vec(vec![0.1 * t as f64, 1.0 / 3.0, -2.5e-300]))
        .collect();
    let controls = (0..3)
        .map(|t| DVector::from_vec(vec![t as f64 / 7.0, f64::MIN_POSITIVE]))
        .collect();
    let traj = Trajectory::new(states, controls).unwrap();
    let path = dir.path().join("traj.csv");
    write_trajectory(&path, &traj).unwrap();
    assert_eq!(read_trajectory(&path).unwrap(), traj);
}

#[test]
fn invalid_configs_fail_with_field_names() {
    let dir = TempDir::new().unwrap();
    let cases = [
        ("mode = \"ioc\"\nenv = \"acrobot\"\nlr = 1e-4\niters = 1\n", "acrobot"),
        ("mode = \"ioc\"\nenv = \"pendulum\"\nlr = -1.0\niters = 1\n", "lr"),
        (
            "mode = \"ioc\"\nenv = \"pendulum\"\nlr = 1e-4\niters = 1\ncolour = 3\n",
            "colour",
        ),
        ("mode = \"ioc\"\nenv = \"pendulum\"\nlr = 1e-4\n", "iters"),
    ];
    for (i, (text, needle)) in cases.iter().enumerate() {
        let cfg = write_config(dir.path(), &format!("bad{i}.toml"), text);
        let o = pdp(&[
            "run",
            cfg.to_str().unwrap(),
            "--out",
            dir.path().join("x").to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(2), "case {i}");
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains(needle), "case {i}: {err}");
    }
    let o = pdp(&["run", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn check_gradients_passes_for_pendulum() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "p.toml",
        "mode = \"ioc\"\nenv = \"pendulum\"\nlr = 1e-4\niters = 1\n",
    );
    let o = pdp(&["check-gradients", cfg.to_str().unwrap(), "--points", "3"]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{stdout}");
    assert!(stdout.contains("pendulum/dynamics") && stdout.contains("pendulum/ioc"));
    assert!(!stdout.contains("[FAIL]"));
}

#[test]
fn default_output_goes_under_env_root() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "sysid.toml", &SYSID.replace("iters = 25", "iters = 1"));
    let o = Command::new(env!("CARGO_BIN_EXE_pdp"))
        .args(["run", cfg.to_str().unwrap(), "--trials", "1"])
        .env("PDP_OUT_DIR", dir.path().join("root"))
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("root/cartpole_sysid/trial_000/runrecord.csv").exists());
}
