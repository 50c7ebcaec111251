//! Gradient-descent learning loops: inverse optimal control, system
//! identification and control/planning.
//!
//! Every loop evaluates the loss and its exact gradient at `θ_k`, records a
//! row, and steps `θ_{k+1} = θ_k − η ∇L(θ_k)`. A run of `iters` updates
//! therefore has `iters + 1` rows.

mod loss;

use alloc::vec::Vec;

use nalgebra::DVector;

pub use loss::{ControlLoss, ImitationLoss, LossEval, TrajectoryLoss};

use crate::auxsys::{build_aux, policy_sensitivity, solve_aux, sysid_sensitivity, PolicyJacobians, Sensitivity};
use crate::diffkit::DiffVectorFn;
use crate::envs::{rollout, Controls};
use crate::error::{check_dim, Error, Result};
use crate::linalg::inf_norm;
use crate::ocp::{ParamOCSystem, Trajectory};
use crate::policies::Policy;
use crate::solvers::{solve_ilqr_from, SolverOpts};

/// Most consecutive learning-rate halvings tried by the increase safeguard.
pub const MAX_HALVINGS: usize = 30;

/// `dL/dθ = (∂L/∂ξ)(∂ξ/∂θ) + ∂L/∂θ`, with `∂L/∂ξ` stacked as states then
/// controls, time-major.
pub fn chain_gradient(d_xi: &[f64], sens: &Sensitivity, d_theta: &[f64]) -> Result<DVector<f64>> {
    let r = sens.num_params();
    check_dim("direct gradient", r, d_theta.len())?;
    let rows: usize = sens.x.iter().chain(&sens.u).map(|b| b.nrows()).sum();
    check_dim("stacked loss gradient", rows, d_xi.len())?;
    let mut g = DVector::from_column_slice(d_theta);
    let mut off = 0;
    for block in sens.x.iter().chain(&sens.u) {
        let k = block.nrows();
        g += block.tr_mul(&DVector::from_column_slice(&d_xi[off..off + k]));
        off += k;
    }
    Ok(g)
}

/// Demonstrations or recorded data, each with its own `x0` and horizon.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DemoSet {
    demos: Vec<Trajectory>,
}

impl DemoSet {
    pub fn new(demos: Vec<Trajectory>) -> Result<Self> {
        for d in &demos {
            check_dim("demo states", d.horizon() + 1, d.states.len())?;
            if d.horizon() == 0 {
                return Err(Error::InvalidArgument(
                    "demos need a horizon of at least one step".into(),
                ));
            }
        }
        Ok(Self { demos })
    }

    pub fn len(&self) -> usize {
        self.demos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demos.is_empty()
    }

    pub fn as_slice(&self) -> &[Trajectory] {
        &self.demos
    }

    pub fn iter(&self) -> core::slice::Iter<'_, Trajectory> {
        self.demos.iter()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Ioc,
    SysId,
    Control,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Ioc => "ioc",
            Mode::SysId => "sysid",
            Mode::Control => "control",
        }
    }
}

/// Millisecond wall clock. The core crate has no time source of its own.
pub trait Clock {
    fn now_ms(&self) -> f64;
}

/// Clock that always reads zero, keeping records free of timing noise.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now_ms(&self) -> f64 {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DescentOpts {
    /// Learning rate `η`.
    pub lr: f64,
    pub iters: usize,
    /// Halve `η` whenever a step would raise the loss or fail numerically.
    pub halve_on_increase: bool,
}

impl DescentOpts {
    pub fn new(lr: f64, iters: usize) -> Self {
        Self {
            lr,
            iters,
            halve_on_increase: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(alloc::format!(
                "learning rate must be finite and non-negative, got {}",
                self.lr
            )));
        }
        Ok(())
    }
}

/// One row of a [`RunRecord`], describing `θ_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    pub loss: f64,
    pub grad_inf_norm: f64,
    pub theta: Vec<f64>,
    /// Every forward solve behind this row reached its tolerance.
    pub converged: bool,
    /// The step into this row was skipped, so `θ` repeats the previous row.
    pub failed: bool,
    pub wall_ms_forward: f64,
    pub wall_ms_backward: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub mode: Mode,
    pub opts: DescentOpts,
    /// Forward solver settings, for inverse optimal control runs.
    pub solver: Option<SolverOpts>,
    pub rows: Vec<IterRecord>,
    pub failed_iterations: usize,
}

impl RunRecord {
    pub fn theta0(&self) -> &[f64] {
        &self.rows[0].theta
    }

    pub fn final_theta(&self) -> &[f64] {
        &self.rows[self.rows.len() - 1].theta
    }

    pub fn initial_loss(&self) -> f64 {
        self.rows[0].loss
    }

    pub fn final_loss(&self) -> f64 {
        self.rows[self.rows.len() - 1].loss
    }

    pub fn losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.loss).collect()
    }
}

/// Loss, gradient and bookkeeping at one `θ`.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub grad: DVector<f64>,
    pub converged: bool,
    pub wall_ms_forward: f64,
    pub wall_ms_backward: f64,
}

fn recoverable(e: &Error) -> bool {
    matches!(
        e,
        Error::Diverged { .. }
            | Error::NotPositiveDefinite { .. }
            | Error::SingularControlHessian { .. }
            | Error::SingularRiccati { .. }
    )
}

fn checked(ev: Evaluation) -> Result<Evaluation> {
    if ev.loss.is_finite() && ev.grad.iter().all(|g| g.is_finite()) {
        Ok(ev)
    } else {
        Err(Error::Diverged { last_finite: 0 })
    }
}

/// Plain gradient descent around an evaluation closure.
///
/// A step whose evaluation fails with a numerical error is retried
/// `retries` times with half the step each time, then skipped: `θ` is kept,
/// the next row is flagged `failed` and the failure counter grows. With
/// `halve_on_increase` a numerical failure halves `η` like a loss increase.
/// Other errors abort the run. The evaluation at `θ0` must succeed.
pub fn descend(
    mode: Mode,
    theta0: &[f64],
    opts: &DescentOpts,
    retries: usize,
    mut eval: impl FnMut(&[f64]) -> Result<Evaluation>,
) -> Result<RunRecord> {
    opts.validate()?;
    let mut theta = DVector::from_column_slice(theta0);
    let mut cur = checked(eval(theta.as_slice())?)?;
    check_dim("gradient", theta.len(), cur.grad.len())?;
    let mut lr = opts.lr;
    let mut rows = Vec::with_capacity(opts.iters + 1);
    let mut failed_iterations = 0;
    let mut failed = false;
    for k in 0..=opts.iters {
        rows.push(IterRecord {
            iter: k,
            loss: cur.loss,
            grad_inf_norm: inf_norm(cur.grad.as_slice()),
            theta: theta.as_slice().to_vec(),
            converged: cur.converged,
            failed,
            wall_ms_forward: cur.wall_ms_forward,
            wall_ms_backward: cur.wall_ms_backward,
        });
        if k == opts.iters {
            break;
        }
        failed = false;
        let mut step = lr;
        let (mut halvings, mut retried) = (0, 0);
        loop {
            let cand = &theta - &cur.grad * step;
            match eval(cand.as_slice()).and_then(checked) {
                Ok(next) if opts.halve_on_increase && next.loss > cur.loss => {
                    if halvings == MAX_HALVINGS {
                        failed = true;
                        break;
                    }
                    halvings += 1;
                    lr *= 0.5;
                    step = lr;
                }
                Ok(next) => {
                    theta = cand;
                    cur = next;
                    break;
                }
                Err(e) if recoverable(&e) && opts.halve_on_increase && halvings < MAX_HALVINGS => {
                    halvings += 1;
                    lr *= 0.5;
                    step = lr;
                }
                Err(e) if recoverable(&e) => {
                    if retried == retries {
                        failed = true;
                        break;
                    }
                    retried += 1;
                    step *= 0.5;
                }
                Err(e) => return Err(e),
            }
        }
        if failed {
            failed_iterations += 1;
        }
    }
    Ok(RunRecord {
        mode,
        opts: *opts,
        solver: None,
        rows,
        failed_iterations,
    })
}

/// Loss, gradient and the optimal trajectory for one demonstration.
#[derive(Clone, Debug)]
pub struct IocGradient {
    pub loss: f64,
    pub grad: DVector<f64>,
    pub traj: Trajectory,
    pub converged: bool,
}

/// Imitation loss `‖ξ_θ − ξ^d‖²` of one demo and its gradient, with `ξ_θ`
/// solved by iLQR from `sys` re-initialized at the demo's `x0` and horizon.
pub fn ioc_gradient(
    sys: &ParamOCSystem,
    demo: &Trajectory,
    theta: &[f64],
    solver: &SolverOpts,
    warm: Option<&[DVector<f64>]>,
) -> Result<IocGradient> {
    let sys = sys.with_initial(demo.states[0].clone(), demo.horizon())?;
    let sol = solve_ilqr_from(&sys, theta, solver, warm)?;
    let aux = build_aux(&sys, &sol.traj, theta)?;
    let sens = solve_aux(&aux)?;
    let ev = ImitationLoss::new(demo.clone()).eval(&sol.traj, theta)?;
    Ok(IocGradient {
        loss: ev.value,
        grad: chain_gradient(ev.d_xi.as_slice(), &sens, ev.d_theta.as_slice())?,
        converged: sol.converged(),
        traj: sol.traj,
    })
}

/// Inverse optimal control: fits `θ` so the optimal trajectories reproduce
/// the demonstrations. Loss and gradient are means over demos. iLQR starts
/// from each demo's own controls and is then warm-started from the previous
/// iteration's solution.
///
/// A solver failure on any demo skips the step and restarts every solve from
/// the demo controls.
pub fn run_ioc(
    sys: &ParamOCSystem,
    demos: &DemoSet,
    theta0: &[f64],
    solver: &SolverOpts,
    opts: &DescentOpts,
    clock: &dyn Clock,
) -> Result<RunRecord> {
    if demos.is_empty() {
        return Err(Error::InvalidArgument(
            "inverse optimal control needs at least one demo".into(),
        ));
    }
    check_dim("theta0", sys.r(), theta0.len())?;
    let scale = 1.0 / demos.len() as f64;
    let mut warm: Vec<Option<Vec<DVector<f64>>>> = demos.iter().map(|d| Some(d.controls.clone())).collect();
    let mut record = descend(Mode::Ioc, theta0, opts, 0, |theta| {
        let mut ev = Evaluation {
            loss: 0.0,
            grad: DVector::zeros(theta.len()),
            converged: true,
            wall_ms_forward: 0.0,
            wall_ms_backward: 0.0,
        };
        let mut next_warm = Vec::with_capacity(demos.len());
        for (demo, w) in demos.iter().zip(&warm) {
            let t0 = clock.now_ms();
            let demo_sys = sys.with_initial(demo.states[0].clone(), demo.horizon())?;
            let sol = solve_ilqr_from(&demo_sys, theta, solver, w.as_deref());
            let sol = match sol {
                Ok(s) => s,
                Err(e) => {
                    for (w, d) in warm.iter_mut().zip(demos.iter()) {
                        *w = Some(d.controls.clone());
                    }
                    return Err(e);
                }
            };
            let t1 = clock.now_ms();
            let aux = build_aux(&demo_sys, &sol.traj, theta)?;
            let sens = solve_aux(&aux)?;
            let l = ImitationLoss::new(demo.clone()).eval(&sol.traj, theta)?;
            ev.grad += chain_gradient(l.d_xi.as_slice(), &sens, l.d_theta.as_slice())? * scale;
            let t2 = clock.now_ms();
            ev.loss += l.value * scale;
            ev.converged &= sol.converged();
            ev.wall_ms_forward += t1 - t0;
            ev.wall_ms_backward += t2 - t1;
            next_warm.push(Some(sol.traj.controls));
        }
        warm = next_warm;
        Ok(ev)
    })?;
    record.solver = Some(*solver);
    Ok(record)
}

/// SysID loss `Σ_i ‖ξ_θ^i − ξ^i‖²` summed over the data trajectories and its
/// gradient, rolling each one out under its recorded controls.
pub fn sysid_gradient(f: &dyn DiffVectorFn, data: &DemoSet, theta: &[f64]) -> Result<(f64, DVector<f64>)> {
    let (loss, grad, _) = sysid_eval(f, data, theta, &NoClock)?;
    Ok((loss, grad))
}

fn sysid_eval(
    f: &dyn DiffVectorFn,
    data: &DemoSet,
    theta: &[f64],
    clock: &dyn Clock,
) -> Result<(f64, DVector<f64>, [f64; 2])> {
    let mut loss = 0.0;
    let mut grad = DVector::zeros(theta.len());
    let mut ms = [0.0; 2];
    for d in data.iter() {
        let t0 = clock.now_ms();
        let traj = rollout(
            f,
            d.states[0].as_slice(),
            Controls::OpenLoop(&d.controls),
            theta,
            d.horizon(),
        )?;
        let t1 = clock.now_ms();
        let sens = sysid_sensitivity(f, &traj, theta)?;
        let l = ImitationLoss::new(d.clone()).eval(&traj, theta)?;
        grad += chain_gradient(l.d_xi.as_slice(), &sens, l.d_theta.as_slice())?;
        loss += l.value;
        ms[0] += t1 - t0;
        ms[1] += clock.now_ms() - t1;
    }
    Ok((loss, grad, ms))
}

/// System identification of the dynamics parameters from recorded
/// state/control data. A diverging rollout halves the step once, then skips.
pub fn run_sysid(
    f: &dyn DiffVectorFn,
    data: &DemoSet,
    theta0: &[f64],
    opts: &DescentOpts,
    clock: &dyn Clock,
) -> Result<RunRecord> {
    if data.is_empty() {
        return Err(Error::InvalidArgument(
            "system identification needs at least one trajectory".into(),
        ));
    }
    check_dim("theta0", f.dims().r, theta0.len())?;
    descend(Mode::SysId, theta0, opts, 1, |theta| {
        let (loss, grad, ms) = sysid_eval(f, data, theta, clock)?;
        Ok(Evaluation {
            loss,
            grad,
            converged: true,
            wall_ms_forward: ms[0],
            wall_ms_backward: ms[1],
        })
    })
}

/// Closed-loop planning problem: fixed dynamics, a parameterized policy and
/// a loss on the resulting trajectory.
#[derive(Clone, Copy)]
pub struct ControlTask<'a> {
    pub dynamics: &'a dyn DiffVectorFn,
    pub dyn_params: &'a [f64],
    pub x0: &'a [f64],
    pub horizon: usize,
    pub policy: &'a dyn Policy,
    pub loss: &'a dyn TrajectoryLoss,
}

impl ControlTask<'_> {
    pub fn rollout(&self, theta: &[f64]) -> Result<Trajectory> {
        rollout(
            self.dynamics,
            self.x0,
            Controls::Policy {
                policy: self.policy,
                theta,
            },
            self.dyn_params,
            self.horizon,
        )
    }

    /// Loss, gradient and the closed-loop trajectory at `θ`.
    pub fn gradient(&self, theta: &[f64]) -> Result<(f64, DVector<f64>, Trajectory)> {
        let (loss, grad, traj, _) = self.eval(theta, &NoClock)?;
        Ok((loss, grad, traj))
    }

    fn eval(&self, theta: &[f64], clock: &dyn Clock) -> Result<(f64, DVector<f64>, Trajectory, [f64; 2])> {
        check_dim("policy theta", self.policy.num_params(), theta.len())?;
        let t0 = clock.now_ms();
        let traj = self.rollout(theta)?;
        let t1 = clock.now_ms();
        let pj = PolicyJacobians::along(self.policy, &traj, theta)?;
        let sens = policy_sensitivity(self.dynamics, self.dyn_params, &traj, &pj)?;
        let l = self.loss.eval(&traj, theta)?;
        let grad = chain_gradient(l.d_xi.as_slice(), &sens, l.d_theta.as_slice())?;
        let t2 = clock.now_ms();
        Ok((l.value, grad, traj, [t1 - t0, t2 - t1]))
    }
}

/// Control/planning: tunes policy parameters against the task loss.
/// A diverging rollout halves the step once, then skips.
pub fn run_control(task: &ControlTask<'_>, theta0: &[f64], opts: &DescentOpts, clock: &dyn Clock) -> Result<RunRecord> {
    descend(Mode::Control, theta0, opts, 1, |theta| {
        let (loss, grad, _, ms) = task.eval(theta, clock)?;
        Ok(Evaluation {
            loss,
            grad,
            converged: true,
            wall_ms_forward: ms[0],
            wall_ms_backward: ms[1],
        })
    })
}
