//! Builds environments, data and learning problems from a [`RunConfig`].

use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use nalgebra::DVector;
use pdp_core::diffkit::{DiffScalarFn, DiffVectorFn, FixedParams, ParamSlice};
use pdp_core::envs::{make_env, rollout, Controls, Env, EnvOverrides};
use pdp_core::modes::{
    run_control, run_ioc, run_sysid, Clock, ControlLoss, ControlTask, DemoSet, DescentOpts, NoClock, RunRecord,
};
use pdp_core::policies::{LagrangePolicy, Mlp, MlpPolicy, NeuralDynamics, NeuralObjective, Policy};
use pdp_core::solvers::{solve_ilqr, solve_ilqr_from, SolverOpts};
use pdp_core::{ParamOCSystem, Trajectory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ModeName, Parameterization, RunConfig, Theta0Spec};
use crate::io::load_demos;

/// Demos that fail to solve are redrawn this many times before giving up.
pub const MAX_DEMO_ATTEMPTS: usize = 10;

/// Wall clock relative to its creation.
#[derive(Clone, Copy, Debug)]
pub struct StdClock(Instant);

impl StdClock {
    pub fn new() -> Self {
        Self(Instant::now())
    }
}

impl Default for StdClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for StdClock {
    fn now_ms(&self) -> f64 {
        self.0.elapsed().as_secs_f64() * 1e3
    }
}

/// RNG for data generation (`stream = 0`) or for trial `k` (`stream = k + 1`).
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Parameter layout of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct ThetaLayout {
    pub names: Vec<String>,
    /// Ground truth, for physical parameters.
    pub truth: Option<Vec<f64>>,
}

/// Outcome of one trial.
#[derive(Clone, Debug)]
pub struct TrialResult {
    pub trial: usize,
    pub record: RunRecord,
    /// Trajectory at the final parameters: the first demo re-solved (IOC),
    /// the first data trajectory re-simulated (SysID) or the closed loop (control).
    pub final_traj: Option<Trajectory>,
    pub wall_ms: f64,
}

enum Problem {
    Ioc {
        sys: ParamOCSystem,
    },
    Sysid {
        model: Arc<dyn DiffVectorFn>,
    },
    Control {
        policy: Box<dyn Policy>,
        loss: ControlLoss,
        x0: DVector<f64>,
    },
}

/// A validated configuration with its environment.
pub struct Experiment {
    pub cfg: RunConfig,
    pub env: Env,
    pub solver: SolverOpts,
}

impl Experiment {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let env = make_env(&cfg.env, &EnvOverrides::from(&cfg.overrides)).context("env_overrides")?;
        let solver = SolverOpts::from(cfg.solver);
        Ok(Self { cfg, env, solver })
    }

    fn mlp(&self, input: usize, output: usize) -> Result<Mlp> {
        let Parameterization::Mlp { hidden } = &self.cfg.parameterization else {
            bail!("parameterization is not a network");
        };
        let mut widths = vec![input];
        widths.extend(hidden);
        widths.push(output);
        Ok(Mlp::new(&widths)?)
    }

    fn problem(&self) -> Result<Problem> {
        let env = &self.env;
        let (n, m) = (env.spec.n, env.spec.m);
        let x0 = env.nominal_x0();
        Ok(match (self.cfg.mode, &self.cfg.parameterization) {
            (ModeName::Ioc, Parameterization::Physical) => Problem::Ioc {
                sys: env.ioc_system(x0, 1)?,
            },
            (ModeName::Ioc, Parameterization::Mlp { .. }) => {
                let obj = NeuralObjective::new(self.mlp(n, 1)?, m)?;
                let r = obj.terminal().dims().r;
                let frozen: Arc<dyn DiffVectorFn> = Arc::new(FixedParams::new(env.dynamics.clone(), &env.theta_dyn)?);
                let stage: Arc<dyn DiffScalarFn> = Arc::new(obj.clone());
                let terminal: Arc<dyn DiffScalarFn> = Arc::new(obj.terminal());
                Problem::Ioc {
                    sys: ParamOCSystem::new(Arc::new(ParamSlice::new(frozen, 0, r)), stage, terminal, 1, x0)?,
                }
            }
            (ModeName::Sysid, Parameterization::Physical) => Problem::Sysid {
                model: env.dynamics.clone(),
            },
            (ModeName::Sysid, Parameterization::Mlp { .. }) => {
                let net = self.mlp(n + m, n)?;
                Problem::Sysid {
                    model: Arc::new(NeuralDynamics::new(net, n, m)?),
                }
            }
            (ModeName::Control, p) => {
                let horizon = self.cfg.control_horizon();
                let policy: Box<dyn Policy> = match p {
                    Parameterization::Lagrange { degree } => {
                        Box::new(LagrangePolicy::new(n, m, *degree, horizon as f64)?)
                    }
                    _ => Box::new(MlpPolicy::new(self.mlp(n, m)?)),
                };
                let loss = ControlLoss::new(env.stage_cost.clone(), env.terminal_cost.clone(), env.theta_obj.clone())?;
                Problem::Control { policy, loss, x0 }
            }
            (mode, p) => bail!(
                "parameterization {} is not available in {} mode",
                p.label(),
                mode.as_str()
            ),
        })
    }

    pub fn theta_layout(&self) -> Result<ThetaLayout> {
        let spec = &self.env.spec;
        let physical = self.cfg.parameterization == Parameterization::Physical;
        let numbered = |r: usize, prefix: &str| ThetaLayout {
            names: (0..r).map(|i| format!("{prefix}{i}")).collect(),
            truth: None,
        };
        Ok(match self.problem()? {
            Problem::Ioc { .. } if physical => ThetaLayout {
                names: spec
                    .dyn_names
                    .iter()
                    .chain(spec.obj_names)
                    .map(|s| s.to_string())
                    .collect(),
                truth: Some(self.env.theta_true()),
            },
            Problem::Ioc { sys } => numbered(sys.r(), "v_"),
            Problem::Sysid { .. } if physical => ThetaLayout {
                names: spec.dyn_names.iter().map(|s| s.to_string()).collect(),
                truth: Some(self.env.theta_dyn.clone()),
            },
            Problem::Sysid { model } => numbered(model.dims().r, "net_"),
            Problem::Control { policy, .. } => numbered(policy.num_params(), "pi_"),
        })
    }

    /// Initial guess, drawing any randomness from `rng`.
    pub fn theta0(&self, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let layout = self.theta_layout()?;
        let r = layout.names.len();
        let theta = match &self.cfg.theta0 {
            Theta0Spec::Explicit { values } => {
                if values.len() != r {
                    bail!("theta0.values: expected {r} values, found {}", values.len());
                }
                values.clone()
            }
            Theta0Spec::Perturb { fraction } => {
                let truth = layout.truth.context("theta0.kind: perturb needs a ground truth")?;
                truth
                    .iter()
                    .map(|t| t * (1.0 + if rng.random::<bool>() { *fraction } else { -*fraction }))
                    .collect()
            }
            Theta0Spec::Random { low, high } => (0..r).map(|_| rng.random_range(*low..=*high)).collect(),
            Theta0Spec::Default => match (layout.truth, &self.cfg.parameterization) {
                (Some(t), _) => t,
                (None, Parameterization::Mlp { .. }) => {
                    let (n, m) = (self.env.spec.n, self.env.spec.m);
                    let net = match self.cfg.mode {
                        ModeName::Ioc => self.mlp(n, 1)?,
                        ModeName::Sysid => self.mlp(n + m, n)?,
                        ModeName::Control => self.mlp(n, m)?,
                    };
                    net.init(rng)
                }
                (None, _) => vec![0.0; r],
            },
        };
        Ok(theta)
    }

    /// Demonstrations (IOC) or random-input data (SysID) under the ground truth.
    pub fn generate_data(&self, count: usize, rng: &mut ChaCha8Rng) -> Result<DemoSet> {
        let env = &self.env;
        let [lo, hi] = self.cfg.data.horizon_range(self.cfg.mode);
        let amp = self.cfg.data.input_amplitude;
        let mut demos = Vec::with_capacity(count);
        for i in 0..count {
            let mut last_err = None;
            let mut found = None;
            for _ in 0..MAX_DEMO_ATTEMPTS {
                let x0 = env.sample_x0(rng);
                let horizon = rng.random_range(lo..=hi);
                let attempt = match self.cfg.mode {
                    ModeName::Sysid => {
                        let u: Vec<DVector<f64>> = (0..horizon)
                            .map(|_| DVector::from_fn(env.spec.m, |_, _| rng.random_range(-amp..=amp)))
                            .collect();
                        rollout(
                            env.dynamics.as_ref(),
                            x0.as_slice(),
                            Controls::OpenLoop(&u),
                            &env.theta_dyn,
                            horizon,
                        )
                        .map_err(anyhow::Error::from)
                    }
                    _ => {
                        let sys = env.ioc_system(x0, horizon)?;
                        match solve_ilqr(&sys, &env.theta_true(), &self.solver) {
                            Ok(sol) if sol.converged() => Ok(sol.traj),
                            Ok(sol) => Err(anyhow::anyhow!(
                                "iLQR stopped with {:?} (residual {:.3e})",
                                sol.status,
                                sol.residual
                            )),
                            Err(e) => Err(e.into()),
                        }
                    }
                };
                match attempt {
                    Ok(t) => {
                        found = Some(t);
                        break;
                    }
                    Err(e) => last_err = Some(e),
                }
            }
            match found {
                Some(t) => demos.push(t),
                None => {
                    let e = last_err.expect("at least one attempt");
                    return Err(e.context(format!(
                        "demo {i}: no usable trajectory after {MAX_DEMO_ATTEMPTS} attempts"
                    )));
                }
            }
        }
        Ok(DemoSet::new(demos)?)
    }

    /// Loads the configured demo file or generates data from stream 0 of the seed.
    pub fn data(&self) -> Result<(DemoSet, String)> {
        if self.cfg.mode == ModeName::Control {
            return Ok((DemoSet::default(), "none".into()));
        }
        match &self.cfg.data.file {
            Some(path) => {
                let (manifest, demos) = load_demos(path)?;
                if manifest.env != self.cfg.env {
                    bail!(
                        "data.file: demos are for `{}`, config is for `{}`",
                        manifest.env,
                        self.cfg.env
                    );
                }
                Ok((demos, path.display().to_string()))
            }
            None => {
                let demos = self.generate_data(self.cfg.data.count, &mut rng_for(self.cfg.seed, 0))?;
                Ok((demos, format!("generated(seed={})", self.cfg.seed)))
            }
        }
    }

    pub fn run_trial(&self, data: &DemoSet, trial: usize) -> Result<TrialResult> {
        let start = Instant::now();
        let mut rng = rng_for(self.cfg.seed, trial as u64 + 1);
        let theta0 = self.theta0(&mut rng)?;
        let opts = DescentOpts {
            lr: self.cfg.lr,
            iters: self.cfg.iters,
            halve_on_increase: self.cfg.halve_on_increase,
        };
        let std_clock = StdClock::new();
        let clock: &dyn Clock = if self.cfg.timing { &std_clock } else { &NoClock };
        let env = &self.env;
        let (record, final_traj) = match self.problem()? {
            Problem::Ioc { sys } => {
                let rec = run_ioc(&sys, data, &theta0, &self.solver, &opts, clock)?;
                let demo = &data.as_slice()[0];
                let final_traj = sys
                    .with_initial(demo.states[0].clone(), demo.horizon())
                    .and_then(|s| solve_ilqr_from(&s, rec.final_theta(), &self.solver, Some(&demo.controls)))
                    .map(|sol| sol.traj)
                    .ok();
                (rec, final_traj)
            }
            Problem::Sysid { model } => {
                let rec = run_sysid(model.as_ref(), data, &theta0, &opts, clock)?;
                let d = &data.as_slice()[0];
                let final_traj = rollout(
                    model.as_ref(),
                    d.states[0].as_slice(),
                    Controls::OpenLoop(&d.controls),
                    rec.final_theta(),
                    d.horizon(),
                )
                .ok();
                (rec, final_traj)
            }
            Problem::Control { policy, loss, x0 } => {
                let task = ControlTask {
                    dynamics: env.dynamics.as_ref(),
                    dyn_params: &env.theta_dyn,
                    x0: x0.as_slice(),
                    horizon: self.cfg.control_horizon(),
                    policy: policy.as_ref(),
                    loss: &loss,
                };
                let rec = run_control(&task, &theta0, &opts, clock)?;
                let final_traj = task.rollout(rec.final_theta()).ok();
                (rec, final_traj)
            }
        };
        Ok(TrialResult {
            trial,
            record,
            final_traj,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }
}
