mod common;

use common::{LqInstance, M, N};
use nalgebra::{DMatrix, DVector};
use pdp_core::envs::{make_env, table2_objective, table2_terminal, EnvOverrides};
use pdp_core::ocp::{compute_costates, objective_value, pmp_residual, stationarity};
use pdp_core::solvers::{solve_ilqr, solve_ilqr_from, solve_lqr, LqrProblem, LqrStage, SolverOpts};
use pdp_core::Trajectory;

fn lqr_problem(inst: &LqInstance, p: &[f64]) -> LqrProblem {
    let mut stage = LqrStage::from_dynamics(inst.dynamics.a(p), inst.dynamics.b(p));
    stage.q = inst.stage.hessian_x(p);
    stage.r = inst.stage.hessian_u();
    stage.q_lin = inst.stage.linear_x(p);
    LqrProblem {
        stages: vec![stage; inst.horizon],
        q_final: inst.terminal.hessian_x(p),
        q_final_lin: inst.terminal.linear_x(p),
        x0: inst.x0.clone(),
    }
}

fn max_gap(a: &Trajectory, b: &Trajectory) -> f64 {
    (a.stacked() - b.stacked()).amax()
}

#[test]
fn lqr_matches_dense_optimality_system() {
    for horizon in [1, 4, 10] {
        let inst = LqInstance::standard(horizon);
        let prob = lqr_problem(&inst, &inst.theta);
        let sol = solve_lqr(&prob).unwrap();
        let dense = inst.kkt_trajectory(&inst.theta);
        assert!(max_gap(&sol.traj, &dense) <= 1e-10);
        let (c_riccati, c_dense) = (prob.cost(&sol.traj), prob.cost(&dense));
        assert!((c_riccati - c_dense).abs() <= 1e-8 * c_dense.abs().max(1.0));
        let sys = inst.system();
        let via_models = objective_value(&sys, &sol.traj, &inst.theta).unwrap();
        assert!((via_models - c_riccati).abs() <= 1e-10 * c_riccati.abs().max(1.0));
    }
}

#[test]
fn lqr_feedback_reproduces_its_trajectory() {
    let inst = LqInstance::standard(12);
    let prob = lqr_problem(&inst, &inst.theta);
    let sol = solve_lqr(&prob).unwrap();
    let mut x = inst.x0.clone();
    for t in 0..inst.horizon {
        let u = &sol.gains.k_mat[t] * &x + &sol.gains.k_ff[t];
        assert!((&u - &sol.traj.controls[t]).amax() <= 1e-10);
        x = &prob.stages[t].a * &x + &prob.stages[t].b * &u;
        assert!((&x - &sol.traj.states[t + 1]).amax() <= 1e-10);
    }
}

#[test]
fn lqr_costates_satisfy_pontryagin() {
    let inst = LqInstance::standard(10);
    let sol = solve_lqr(&lqr_problem(&inst, &inst.theta)).unwrap();
    let sys = inst.system();
    let lam = compute_costates(&sys, &sol.traj, &inst.theta).unwrap();
    for (t, l) in sol.costates().iter().enumerate() {
        assert!((l - lam.at(t + 1)).amax() <= 1e-10);
    }
    assert!(pmp_residual(&sys, &sol.traj, &lam, &inst.theta).unwrap() <= 1e-9);
}

#[test]
fn lqr_rejects_indefinite_input_cost() {
    let inst = LqInstance::standard(5);
    let mut prob = lqr_problem(&inst, &inst.theta);
    prob.stages[3].r = -DMatrix::identity(M, M);
    prob.stages[3].q = DMatrix::zeros(N, N);
    assert!(solve_lqr(&prob).is_err());
}

#[test]
fn ilqr_solves_linear_quadratic_problem_in_one_step() {
    let inst = LqInstance::standard(10);
    let sys = inst.system();
    let sol = solve_ilqr(&sys, &inst.theta, &SolverOpts::default()).unwrap();
    let dense = inst.kkt_trajectory(&inst.theta);
    assert!(sol.converged());
    assert!(sol.iterations <= 1, "took {} iterations", sol.iterations);
    assert!(max_gap(&sol.traj, &dense) <= 1e-8);
}

#[test]
fn pendulum_swing_up_converges() {
    let ov = EnvOverrides {
        theta_obj: Some(vec![10.0, 1.0]),
        ..EnvOverrides::default()
    };
    let env = make_env("pendulum", &ov).unwrap();
    let sys = env.ioc_system(env.nominal_x0(), 40).unwrap();
    let theta = env.theta_true();
    let opts = SolverOpts::default();
    let sol = solve_ilqr(&sys, &theta, &opts).unwrap();
    assert!(
        sol.converged() && sol.iterations <= 100,
        "{:?} after {}",
        sol.status,
        sol.iterations
    );
    assert!(sol.residual <= 1e-6);
    let (lam, res) = stationarity(&sys, &sol.traj, &theta).unwrap();
    assert!(res <= 10.0 * opts.tol);
    for t in 1..=40 {
        assert!((lam.at(t) - sol.costates.at(t)).amax() <= 1e-10);
    }
    assert!((sol.traj.states[40][0] - std::f64::consts::PI).abs() < 0.05);
}

#[test]
fn ilqr_converges_on_every_environment() {
    for name in ["cartpole", "robotarm2", "quadrotor", "rocket"] {
        let env = make_env(name, &EnvOverrides::default()).unwrap();
        let sys = env.ioc_system(env.nominal_x0(), 30).unwrap();
        let theta = env.theta_true();
        let sol = solve_ilqr(&sys, &theta, &SolverOpts::default()).unwrap();
        assert!(sol.converged(), "{name}: {:?} residual {}", sol.status, sol.residual);
        let (_, res) = stationarity(&sys, &sol.traj, &theta).unwrap();
        assert!(res <= 1e-7, "{name}: residual {res}");
        assert!(sol.traj.defect(sys.dynamics(), &theta) <= 1e-12);
    }
}

#[test]
fn cost_is_monotone_in_iteration_budget() {
    let env = make_env("cartpole", &EnvOverrides::default()).unwrap();
    let sys = env.ioc_system(env.nominal_x0(), 30).unwrap();
    let theta = env.theta_true();
    let zero = vec![DVector::zeros(1); 30];
    let mut last = objective_value(&sys, &sys.rollout(&zero, &theta).unwrap(), &theta).unwrap();
    for budget in 1..12 {
        let opts = SolverOpts {
            max_iters: budget,
            ..SolverOpts::default()
        };
        let sol = solve_ilqr_from(&sys, &theta, &opts, Some(&zero)).unwrap();
        assert!(sol.cost <= last + 1e-12, "budget {budget}: {} > {last}", sol.cost);
        last = sol.cost;
    }
}

#[test]
fn objective_is_sum_of_stage_costs() {
    let env = make_env("cartpole", &EnvOverrides::default()).unwrap();
    let sys = env.ioc_system(env.nominal_x0(), 15).unwrap();
    let theta = env.theta_true();
    let controls: Vec<DVector<f64>> = (0..15)
        .map(|t| DVector::from_element(1, (t as f64 * 0.7).sin()))
        .collect();
    let traj = sys.rollout(&controls, &theta).unwrap();
    let (w, goal) = (&env.theta_obj, &env.spec.goal);
    let mut expect = 0.0;
    for t in 0..15 {
        expect += table2_objective(traj.states[t].as_slice(), traj.controls[t].as_slice(), w, goal).unwrap();
    }
    expect += table2_terminal(traj.states[15].as_slice(), w, goal).unwrap();
    let got = objective_value(&sys, &traj, &theta).unwrap();
    assert!((got - expect).abs() <= 1e-12 * expect.abs().max(1.0));
}

#[test]
fn invalid_solver_options_are_rejected() {
    let inst = LqInstance::standard(3);
    let sys = inst.system();
    for opts in [
        SolverOpts {
            shrink: 1.0,
            ..SolverOpts::default()
        },
        SolverOpts {
            tol: 0.0,
            ..SolverOpts::default()
        },
        SolverOpts {
            max_iters: 0,
            ..SolverOpts::default()
        },
    ] {
        assert!(solve_ilqr(&sys, &inst.theta, &opts).is_err());
    }
}
