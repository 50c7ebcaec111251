//! Benchmark systems: pendulum, cart-pole, two-link arm, quadrotor and
//! rocket, Euler-discretized, with weighted goal-distance objectives.

mod models;
mod objective;
pub mod quat;

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, FRAC_PI_6, PI};

use nalgebra::DVector;
use rand_core::RngCore;

pub use models::{CartPole, ContinuousModel, Euler, Pendulum, Quadrotor, RobotArm2, Rocket};
pub use objective::{table2_objective, table2_terminal, Features, WeightedObjective};
pub use quat::attitude_error;

use crate::diffkit::{DiffScalarFn, DiffVectorFn, FixedParams, ParamSlice, ScalarParamSlice};
use crate::error::{check_dim, Error, Result};
use crate::ocp::{ParamOCSystem, Trajectory};
use crate::policies::Policy;

pub const ENV_NAMES: [&str; 5] = ["pendulum", "cartpole", "robotarm2", "quadrotor", "rocket"];

pub const DEFAULT_DT: f64 = 0.1;
pub const DEFAULT_GRAVITY: f64 = 9.81;

/// Optional replacements for an environment's defaults.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EnvOverrides {
    pub dt: Option<f64>,
    pub gravity: Option<f64>,
    pub theta_dyn: Option<Vec<f64>>,
    pub theta_obj: Option<Vec<f64>>,
    pub goal: Option<Vec<f64>>,
    pub x0: Option<Vec<f64>>,
    /// Quadrotor yaw-torque constant.
    pub torque_coeff: Option<f64>,
}

/// Static description of an environment.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub name: &'static str,
    pub n: usize,
    pub m: usize,
    pub dyn_names: &'static [&'static str],
    pub obj_names: &'static [&'static str],
    pub goal: Vec<f64>,
    pub dt: f64,
    pub gravity: f64,
    /// Nominal initial state.
    pub x0: Vec<f64>,
    /// Half-widths of the uniform box around `x0` used for random initial states.
    pub x0_spread: Vec<f64>,
}

/// A fully wired environment: discrete dynamics with `r = |θ_dyn|` and
/// stage/terminal objectives with `r = |θ_obj|`.
#[derive(Clone)]
pub struct Env {
    pub spec: EnvSpec,
    pub dynamics: Arc<dyn DiffVectorFn>,
    pub stage_cost: Arc<dyn DiffScalarFn>,
    pub terminal_cost: Arc<dyn DiffScalarFn>,
    pub theta_dyn: Vec<f64>,
    pub theta_obj: Vec<f64>,
}

impl core::fmt::Debug for Env {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Env")
            .field("spec", &self.spec)
            .field("theta_dyn", &self.theta_dyn)
            .field("theta_obj", &self.theta_obj)
            .finish()
    }
}

fn uniform01(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

impl Env {
    pub fn r_dyn(&self) -> usize {
        self.theta_dyn.len()
    }

    pub fn r_obj(&self) -> usize {
        self.theta_obj.len()
    }

    /// `[θ_dyn; θ_obj]`.
    pub fn theta_true(&self) -> Vec<f64> {
        self.theta_dyn.iter().chain(&self.theta_obj).copied().collect()
    }

    /// System whose parameter is `[θ_dyn; θ_obj]`.
    pub fn ioc_system(&self, x0: DVector<f64>, horizon: usize) -> Result<ParamOCSystem> {
        let (rd, total) = (self.r_dyn(), self.r_dyn() + self.r_obj());
        ParamOCSystem::new(
            Arc::new(ParamSlice::new(self.dynamics.clone(), 0, total)),
            Arc::new(ScalarParamSlice::new(self.stage_cost.clone(), rd, total)),
            Arc::new(ScalarParamSlice::new(self.terminal_cost.clone(), rd, total)),
            horizon,
            x0,
        )
    }

    /// System whose parameter is `θ_obj`, with the dynamics frozen at `θ_dyn`.
    pub fn objective_system(&self, x0: DVector<f64>, horizon: usize) -> Result<ParamOCSystem> {
        let frozen: Arc<dyn DiffVectorFn> = Arc::new(FixedParams::new(self.dynamics.clone(), &self.theta_dyn)?);
        ParamOCSystem::new(
            Arc::new(ParamSlice::new(frozen, 0, self.r_obj())),
            self.stage_cost.clone(),
            self.terminal_cost.clone(),
            horizon,
            x0,
        )
    }

    /// Uniform sample from the box `x0 ± x0_spread`, projected onto the state manifold.
    pub fn sample_x0(&self, rng: &mut impl RngCore) -> DVector<f64> {
        let mut x: Vec<f64> = self
            .spec
            .x0
            .iter()
            .zip(&self.spec.x0_spread)
            .map(|(c, s)| c + s * (2.0 * uniform01(rng) - 1.0))
            .collect();
        match self.spec.name {
            "quadrotor" => quat::normalize(&mut x[6..10]),
            "rocket" => quat::normalize(&mut x[7..11]),
            _ => {}
        }
        DVector::from_vec(x)
    }

    pub fn nominal_x0(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.spec.x0)
    }
}

fn identity_quat() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

fn wire<C: ContinuousModel + 'static>(
    spec: EnvSpec,
    model: C,
    features: Features,
    theta_dyn: Vec<f64>,
    theta_obj: Vec<f64>,
    ov: &EnvOverrides,
) -> Result<Env> {
    let mut spec = spec;
    if let Some(dt) = ov.dt {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(alloc::format!("dt must be positive, got {dt}")));
        }
        spec.dt = dt;
    }
    if let Some(goal) = &ov.goal {
        check_dim("goal", spec.n, goal.len())?;
        spec.goal = goal.clone();
    }
    if let Some(x0) = &ov.x0 {
        check_dim("x0", spec.n, x0.len())?;
        spec.x0 = x0.clone();
    }
    let theta_dyn = ov.theta_dyn.clone().unwrap_or(theta_dyn);
    let theta_obj = ov.theta_obj.clone().unwrap_or(theta_obj);
    check_dim("theta_dyn", spec.dyn_names.len(), theta_dyn.len())?;
    let stage = WeightedObjective::new(features, spec.goal.clone(), spec.m);
    stage.check_weights(&theta_obj)?;
    let terminal = stage.terminal();
    Ok(Env {
        dynamics: Arc::new(Euler { model, dt: spec.dt }),
        stage_cost: Arc::new(stage),
        terminal_cost: Arc::new(terminal),
        spec,
        theta_dyn,
        theta_obj,
    })
}

/// Builds a named environment with optional overrides.
pub fn make_env(name: &str, ov: &EnvOverrides) -> Result<Env> {
    let gravity = ov.gravity.unwrap_or(DEFAULT_GRAVITY);
    let dt = DEFAULT_DT;
    match name {
        "pendulum" => wire(
            EnvSpec {
                name: "pendulum",
                n: 2,
                m: 1,
                dyn_names: &["mass", "length", "damping"],
                obj_names: &["w_angle", "w_rate"],
                goal: vec![PI, 0.0],
                dt,
                gravity,
                x0: vec![0.0, 0.0],
                x0_spread: vec![FRAC_PI_6, 0.5],
            },
            Pendulum { gravity },
            Features::PerState,
            vec![1.0, 1.0, 0.05],
            vec![1.0, 1.0],
            ov,
        ),
        "cartpole" => wire(
            EnvSpec {
                name: "cartpole",
                n: 4,
                m: 1,
                dyn_names: &["cart_mass", "pole_mass", "pole_length"],
                obj_names: &["w_x", "w_angle", "w_dx", "w_dangle"],
                goal: vec![0.0, PI, 0.0, 0.0],
                dt,
                gravity,
                x0: vec![0.0, 0.0, 0.0, 0.0],
                x0_spread: vec![0.5, FRAC_PI_6, 0.2, 0.2],
            },
            CartPole { gravity },
            Features::PerState,
            vec![0.5, 0.5, 1.0],
            vec![1.0, 6.0, 0.1, 0.1],
            ov,
        ),
        // The arm moves in the horizontal plane unless gravity is overridden.
        "robotarm2" => wire(
            EnvSpec {
                name: "robotarm2",
                n: 4,
                m: 2,
                dyn_names: &["l1", "m1", "l2", "m2"],
                obj_names: &["w_q1", "w_q2", "w_dq1", "w_dq2"],
                goal: vec![FRAC_PI_2, 0.0, 0.0, 0.0],
                dt,
                gravity: ov.gravity.unwrap_or(0.0),
                x0: vec![0.0, 0.0, 0.0, 0.0],
                x0_spread: vec![FRAC_PI_6, FRAC_PI_6, 0.2, 0.2],
            },
            RobotArm2 {
                gravity: ov.gravity.unwrap_or(0.0),
            },
            Features::PerState,
            vec![1.0, 1.0, 1.0, 1.0],
            vec![1.0, 1.0, 0.1, 0.1],
            ov,
        ),
        "quadrotor" => {
            let mut goal = vec![0.0; 13];
            goal[6..10].copy_from_slice(&identity_quat());
            let mut x0 = vec![0.0; 13];
            x0[..3].copy_from_slice(&[-2.0, -1.0, 2.0]);
            x0[6..10].copy_from_slice(&identity_quat());
            let mut spread = vec![0.0; 13];
            spread[..3].copy_from_slice(&[1.0, 1.0, 1.0]);
            spread[7..10].copy_from_slice(&[0.1, 0.1, 0.1]);
            wire(
                EnvSpec {
                    name: "quadrotor",
                    n: 13,
                    m: 4,
                    dyn_names: &["mass", "wing_length", "Jxx", "Jyy", "Jzz", "Jxy", "Jxz", "Jyz"],
                    obj_names: &["w_position", "w_velocity", "w_attitude", "w_angular_rate"],
                    goal,
                    dt,
                    gravity,
                    x0,
                    x0_spread: spread,
                },
                Quadrotor {
                    gravity,
                    torque_coeff: ov.torque_coeff.unwrap_or(0.01),
                },
                Features::Quadrotor,
                vec![1.0, 0.4, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0],
                vec![1.0, 1.0, 5.0, 1.0],
                ov,
            )
        }
        "rocket" => {
            let mut goal = vec![0.0; 14];
            goal[0] = 1.0;
            goal[7..11].copy_from_slice(&identity_quat());
            let mut x0 = vec![0.0; 14];
            x0[0] = 1.0;
            x0[1..4].copy_from_slice(&[10.0, -4.0, 3.0]);
            x0[4..7].copy_from_slice(&[-1.0, 0.5, 0.0]);
            x0[7..11].copy_from_slice(&identity_quat());
            let mut spread = vec![0.0; 14];
            spread[1..4].copy_from_slice(&[1.0, 1.0, 1.0]);
            spread[8..11].copy_from_slice(&[0.05, 0.05, 0.05]);
            wire(
                EnvSpec {
                    name: "rocket",
                    n: 14,
                    m: 3,
                    dyn_names: &["m0", "Jxx", "Jyy", "Jzz", "Jxy", "Jxz", "Jyz", "length"],
                    obj_names: &["w_position", "w_velocity", "w_tilt", "w_side_thrust", "w_fuel"],
                    goal,
                    dt,
                    gravity,
                    x0,
                    x0_spread: spread,
                },
                Rocket { gravity },
                Features::Rocket,
                vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0],
                vec![1.0, 1.0, 5.0, 1.0, 1.0],
                ov,
            )
        }
        other => Err(Error::UnknownEnv {
            name: String::from(other),
            valid: ENV_NAMES.join(", "),
        }),
    }
}

/// Control source for [`rollout`].
#[derive(Clone, Copy)]
pub enum Controls<'a> {
    OpenLoop(&'a [DVector<f64>]),
    Policy { policy: &'a dyn Policy, theta: &'a [f64] },
}

/// Integrates the discrete dynamics for `horizon` steps.
///
/// Fails with [`Error::Diverged`] carrying the index of the last finite state.
pub fn rollout(
    f: &dyn DiffVectorFn,
    x0: &[f64],
    controls: Controls<'_>,
    theta_dyn: &[f64],
    horizon: usize,
) -> Result<Trajectory> {
    let d = f.dims();
    check_dim("x0", d.n, x0.len())?;
    check_dim("theta_dyn", d.r, theta_dyn.len())?;
    if let Controls::OpenLoop(u) = controls {
        check_dim("controls", horizon, u.len())?;
    }
    let mut states = Vec::with_capacity(horizon + 1);
    let mut us = Vec::with_capacity(horizon);
    states.push(DVector::from_column_slice(x0));
    for t in 0..horizon {
        let u = match controls {
            Controls::OpenLoop(u) => u[t].clone(),
            Controls::Policy { policy, theta } => policy.control(t as f64, states[t].as_slice(), theta)?,
        };
        check_dim("control width", d.m, u.len())?;
        let next = f.value(states[t].as_slice(), u.as_slice(), theta_dyn);
        if next.iter().chain(u.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Diverged { last_finite: t });
        }
        us.push(u);
        states.push(next);
    }
    Ok(Trajectory { states, controls: us })
}
