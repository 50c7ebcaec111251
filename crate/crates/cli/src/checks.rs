//! Finite-difference verification of every environment, parameterization and
//! learning-mode gradient.

use std::sync::Arc;

use anyhow::Result;
use nalgebra::DVector;
use pdp_core::diffkit::{
    fd_check_scalar, fd_check_vector, fd_gradient, fd_jacobian, DiffScalarFn, DiffVectorFn, FdConfig, FdReport,
};
use pdp_core::envs::{quat, Env};
use pdp_core::linalg::rel_err;
use pdp_core::modes::{ioc_gradient, sysid_gradient, ControlLoss, ControlTask, DemoSet, ImitationLoss, TrajectoryLoss};
use pdp_core::policies::{LagrangePolicy, Mlp, MlpPolicy, NeuralDynamics, NeuralObjective, Policy};
use pdp_core::solvers::{solve_ilqr, solve_ilqr_from, SolverOpts};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Relative tolerance of end-to-end gradients against re-solved finite differences.
pub const END_TO_END_TOL: f64 = 1e-3;
/// Step of the end-to-end finite differences.
pub const END_TO_END_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckLine {
    pub name: String,
    pub report: FdReport,
}

impl CheckLine {
    pub fn passes(&self) -> bool {
        self.report.passes()
    }
}

fn accumulate(name: String, reports: impl IntoIterator<Item = Result<FdReport>>) -> Result<CheckLine> {
    let mut total = FdReport::default();
    for r in reports {
        total = total.merge(r?);
    }
    Ok(CheckLine { name, report: total })
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, amp: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-amp..=amp)).collect()
}

/// Random state near the environment's operating region, with a random unit
/// quaternion for the rigid-body environments.
pub fn random_state(env: &Env, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut x: Vec<f64> = env
        .spec
        .x0
        .iter()
        .zip(&env.spec.goal)
        .map(|(a, g)| a + (g - a) * rng.random_range(0.0..=1.0) + rng.random_range(-0.5..=0.5))
        .collect();
    let q_range = match env.spec.name {
        "quadrotor" => Some(6..10),
        "rocket" => Some(7..11),
        _ => None,
    };
    if let Some(range) = q_range {
        let mut q = uniform(rng, 4, 1.0);
        q[0] += 2.0;
        quat::normalize(&mut q);
        x[range].copy_from_slice(&q);
    }
    x
}

/// Parameters scaled by independent factors in `[0.8, 1.2]`.
pub fn jitter(theta: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    theta.iter().map(|t| t * rng.random_range(0.8..=1.2)).collect()
}

/// Dynamics and both costs at `points` random points.
pub fn env_checks(env: &Env, points: usize, rng: &mut ChaCha8Rng) -> Result<Vec<CheckLine>> {
    let (n, m) = (env.spec.n, env.spec.m);
    let mut dyn_reports = Vec::new();
    let mut stage_reports = Vec::new();
    let mut terminal_reports = Vec::new();
    for _ in 0..points {
        let x = random_state(env, rng);
        let u = uniform(rng, m, 2.0);
        let w = uniform(rng, n, 1.0);
        let pd = jitter(&env.theta_dyn, rng);
        let po = jitter(&env.theta_obj, rng);
        dyn_reports.push(fd_check_vector(env.dynamics.as_ref(), &w, &x, &u, &pd).map_err(Into::into));
        stage_reports.push(fd_check_scalar(env.stage_cost.as_ref(), &x, &u, &po).map_err(Into::into));
        terminal_reports.push(fd_check_scalar(env.terminal_cost.as_ref(), &x, &[], &po).map_err(Into::into));
    }
    let name = env.spec.name;
    Ok(vec![
        accumulate(format!("{name}/dynamics"), dyn_reports)?,
        accumulate(format!("{name}/stage_cost"), stage_reports)?,
        accumulate(format!("{name}/terminal_cost"), terminal_reports)?,
    ])
}

fn policy_report(policy: &dyn Policy, t: f64, x: &[f64], theta: &[f64]) -> Result<FdReport> {
    let (ux, ue) = policy.jacobians(t, x, theta)?;
    let cfg = FdConfig::default();
    let fx = fd_jacobian(|z| policy.control(t, z, theta).expect("valid point"), x, &cfg)?;
    let fe = fd_jacobian(|z| policy.control(t, x, z).expect("valid point"), theta, &cfg)?;
    Ok(FdReport {
        first_order: rel_err(ux.as_slice(), fx.as_slice()).max(rel_err(ue.as_slice(), fe.as_slice())),
        second_order: 0.0,
        points: 1,
    })
}

/// Lagrange and network parameterizations for an `n`-state, `m`-input system.
pub fn parameterization_checks(n: usize, m: usize, points: usize, rng: &mut ChaCha8Rng) -> Result<Vec<CheckLine>> {
    let horizon = 20.0;
    let lagrange = LagrangePolicy::new(n, m, 5, horizon)?;
    let policy_net = Mlp::new(&[n, n, m])?;
    let mlp_policy = MlpPolicy::new(policy_net.clone());
    let objective = NeuralObjective::new(Mlp::new(&[n, n, 1])?, m)?;
    let dynamics = NeuralDynamics::new(Mlp::new(&[n + m, 4, n])?, n, m)?;
    let (mut lag, mut pol, mut obj, mut dyns) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for _ in 0..points {
        let x = uniform(rng, n, 1.0);
        let u = uniform(rng, m, 1.0);
        let t = rng.random_range(0.0..=horizon);
        lag.push(policy_report(
            &lagrange,
            t,
            &x,
            &uniform(rng, lagrange.num_params(), 2.0),
        ));
        pol.push(policy_report(&mlp_policy, t, &x, &policy_net.init(rng)));
        let theta = objective.terminal().dims().r;
        let p = uniform(rng, theta, 1.0);
        obj.push(fd_check_scalar(&objective, &x, &u, &p).map_err(Into::into));
        let p = dynamics.net().init(rng);
        let w = uniform(rng, n, 1.0);
        dyns.push(fd_check_vector(&dynamics, &w, &x, &u, &p).map_err(Into::into));
    }
    Ok(vec![
        accumulate("lagrange(N=5)/policy".into(), lag)?,
        accumulate(format!("mlp({n}-{n}-{m})/policy"), pol)?,
        accumulate(format!("mlp({n}-{n}-1)/objective"), obj)?,
        accumulate(format!("mlp({}-4-{n})/dynamics", n + m), dyns)?,
    ])
}

/// Worst relative error of analytic against central-difference gradients.
fn compare(analytic: &DVector<f64>, numeric: &DVector<f64>) -> f64 {
    rel_err(analytic.as_slice(), numeric.as_slice())
}

/// End-to-end gradient of the IOC imitation loss on one short demo, against
/// finite differences that re-solve the optimal control problem.
pub fn ioc_end_to_end(env: &Env, horizon: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    let opts = SolverOpts {
        tol: 1e-11,
        max_iters: 500,
        ..SolverOpts::default()
    };
    let x0 = DVector::from_vec(env.sample_x0(rng).as_slice().to_vec());
    let sys = env.ioc_system(x0, horizon)?;
    let demo = solve_ilqr(&sys, &env.theta_true(), &opts)?.traj;
    let theta = jitter(&env.theta_true(), rng);
    let g = ioc_gradient(&sys, &demo, &theta, &opts, Some(&demo.controls))?;
    let loss = ImitationLoss::new(demo.clone());
    let numeric = fd_gradient(
        |p| {
            let sol = solve_ilqr_from(&sys, p, &opts, Some(&g.traj.controls)).expect("solvable");
            loss.eval(&sol.traj, p).expect("same horizon").value
        },
        &theta,
        &FdConfig::with_step(END_TO_END_STEP)?,
    )?;
    Ok(compare(&g.grad, &numeric))
}

/// End-to-end SysID gradient on random-input data.
pub fn sysid_end_to_end(env: &Env, horizon: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    let f = env.dynamics.as_ref();
    let x0 = env.sample_x0(rng);
    let u: Vec<DVector<f64>> = (0..horizon)
        .map(|_| DVector::from_vec(uniform(rng, env.spec.m, 1.0)))
        .collect();
    let data = pdp_core::envs::rollout(
        f,
        x0.as_slice(),
        pdp_core::envs::Controls::OpenLoop(&u),
        &env.theta_dyn,
        horizon,
    )?;
    let data = DemoSet::new(vec![data])?;
    let theta = jitter(&env.theta_dyn, rng);
    let (_, grad) = sysid_gradient(f, &data, &theta)?;
    let numeric = fd_gradient(
        |p| sysid_gradient(f, &data, p).expect("finite rollout").0,
        &theta,
        &FdConfig::with_step(END_TO_END_STEP)?,
    )?;
    Ok(compare(&grad, &numeric))
}

/// End-to-end control gradient of a Lagrange policy against the environment objective.
pub fn control_end_to_end(env: &Env, horizon: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    let policy = LagrangePolicy::new(env.spec.n, env.spec.m, 5, horizon as f64)?;
    let loss = ControlLoss::new(
        Arc::clone(&env.stage_cost) as Arc<dyn DiffScalarFn>,
        Arc::clone(&env.terminal_cost),
        env.theta_obj.clone(),
    )?;
    let x0 = env.nominal_x0();
    let task = ControlTask {
        dynamics: env.dynamics.as_ref() as &dyn DiffVectorFn,
        dyn_params: &env.theta_dyn,
        x0: x0.as_slice(),
        horizon,
        policy: &policy,
        loss: &loss,
    };
    let theta = uniform(rng, policy.num_params(), 0.5);
    let (_, grad, _) = task.gradient(&theta)?;
    let numeric = fd_gradient(
        |p| task.gradient(p).expect("finite rollout").0,
        &theta,
        &FdConfig::with_step(END_TO_END_STEP)?,
    )?;
    Ok(compare(&grad, &numeric))
}
