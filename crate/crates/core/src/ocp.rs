//! Parameterized optimal control systems, trajectories and costates.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use nalgebra::DVector;

use crate::diffkit::{DiffScalarFn, DiffVectorFn};
use crate::error::{check_dim, Error, Result};
use crate::linalg::inf_norm;

/// Tolerance (∞-norm) below which a trajectory counts as dynamically feasible.
pub const FEASIBILITY_TOL: f64 = 1e-8;

/// Discrete-time system `x_{t+1} = f(x_t, u_t, θ)` with objective
/// `J(θ) = Σ_{t<T} c(x_t, u_t, θ) + h(x_T, θ)`.
///
/// The terminal cost is declared with `m = 0` and is always called with an
/// empty control slice.
#[derive(Clone)]
pub struct ParamOCSystem {
    dynamics: Arc<dyn DiffVectorFn>,
    stage_cost: Arc<dyn DiffScalarFn>,
    terminal_cost: Arc<dyn DiffScalarFn>,
    horizon: usize,
    x0: DVector<f64>,
}

impl core::fmt::Debug for ParamOCSystem {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        let d = self.dynamics.dims();
        f.debug_struct("ParamOCSystem")
            .field("n", &d.n)
            .field("m", &d.m)
            .field("r", &d.r)
            .field("horizon", &self.horizon)
            .field("x0", &self.x0.as_slice())
            .finish()
    }
}

impl ParamOCSystem {
    pub fn new(
        dynamics: Arc<dyn DiffVectorFn>,
        stage_cost: Arc<dyn DiffScalarFn>,
        terminal_cost: Arc<dyn DiffScalarFn>,
        horizon: usize,
        x0: DVector<f64>,
    ) -> Result<Self> {
        let d = dynamics.dims();
        if d.n == 0 || d.m == 0 || d.r == 0 {
            return Err(Error::InvalidArgument(alloc::format!(
                "system dimensions must be positive, got n={} m={} r={}",
                d.n,
                d.m,
                d.r
            )));
        }
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        check_dim("dynamics output", d.n, dynamics.out_dim())?;
        let c = stage_cost.dims();
        check_dim("stage cost n", d.n, c.n)?;
        check_dim("stage cost m", d.m, c.m)?;
        check_dim("stage cost r", d.r, c.r)?;
        let h = terminal_cost.dims();
        check_dim("terminal cost n", d.n, h.n)?;
        check_dim("terminal cost m", 0, h.m)?;
        check_dim("terminal cost r", d.r, h.r)?;
        check_dim("x0", d.n, x0.len())?;
        Ok(Self {
            dynamics,
            stage_cost,
            terminal_cost,
            horizon,
            x0,
        })
    }

    pub fn n(&self) -> usize {
        self.dynamics.dims().n
    }

    pub fn m(&self) -> usize {
        self.dynamics.dims().m
    }

    pub fn r(&self) -> usize {
        self.dynamics.dims().r
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }

    pub fn dynamics(&self) -> &dyn DiffVectorFn {
        &*self.dynamics
    }

    pub fn stage_cost(&self) -> &dyn DiffScalarFn {
        &*self.stage_cost
    }

    pub fn terminal_cost(&self) -> &dyn DiffScalarFn {
        &*self.terminal_cost
    }

    /// Same functions with a different initial state and horizon.
    pub fn with_initial(&self, x0: DVector<f64>, horizon: usize) -> Result<Self> {
        Self::new(
            self.dynamics.clone(),
            self.stage_cost.clone(),
            self.terminal_cost.clone(),
            horizon,
            x0,
        )
    }

    pub fn step(&self, x: &[f64], u: &[f64], theta: &[f64]) -> DVector<f64> {
        self.dynamics.value(x, u, theta)
    }

    pub(crate) fn check_theta(&self, theta: &[f64]) -> Result<()> {
        check_dim("theta", self.r(), theta.len())
    }

    pub(crate) fn check_traj(&self, traj: &Trajectory) -> Result<()> {
        check_dim("states", self.horizon + 1, traj.states.len())?;
        check_dim("controls", self.horizon, traj.controls.len())?;
        for x in &traj.states {
            check_dim("state width", self.n(), x.len())?;
        }
        for u in &traj.controls {
            check_dim("control width", self.m(), u.len())?;
        }
        Ok(())
    }

    /// Rolls the dynamics forward from `x0` under open-loop controls.
    pub fn rollout(&self, controls: &[DVector<f64>], theta: &[f64]) -> Result<Trajectory> {
        self.check_theta(theta)?;
        check_dim("controls", self.horizon, controls.len())?;
        let mut states = Vec::with_capacity(self.horizon + 1);
        states.push(self.x0.clone());
        for (t, u) in controls.iter().enumerate() {
            check_dim("control width", self.m(), u.len())?;
            let next = self.step(states[t].as_slice(), u.as_slice(), theta);
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged { last_finite: t });
            }
            states.push(next);
        }
        Ok(Trajectory {
            states,
            controls: controls.to_vec(),
        })
    }
}

/// State sequence `x_{0:T}` and control sequence `u_{0:T-1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn new(states: Vec<DVector<f64>>, controls: Vec<DVector<f64>>) -> Result<Self> {
        check_dim("states", controls.len() + 1, states.len())?;
        Ok(Self { states, controls })
    }

    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    /// States then controls, time-major: `[x_0; …; x_T; u_0; …; u_{T-1}]`.
    pub fn stacked(&self) -> DVector<f64> {
        let it = self.states.iter().chain(&self.controls).flat_map(|v| v.iter().copied());
        DVector::from_iterator(self.stacked_len(), it)
    }

    pub fn stacked_len(&self) -> usize {
        self.states.iter().chain(&self.controls).map(|v| v.len()).sum()
    }

    /// Largest one-step defect `‖x_{t+1} − f(x_t, u_t, θ)‖∞`.
    pub fn defect(&self, f: &dyn DiffVectorFn, theta: &[f64]) -> f64 {
        (0..self.horizon())
            .map(|t| {
                let next = f.value(self.states[t].as_slice(), self.controls[t].as_slice(), theta);
                inf_norm((next - &self.states[t + 1]).as_slice())
            })
            .fold(0.0, f64::max)
    }

    pub fn is_feasible(&self, f: &dyn DiffVectorFn, theta: &[f64]) -> bool {
        self.defect(f, theta) <= FEASIBILITY_TOL
    }
}

/// Costates `λ_1, …, λ_T`.
#[derive(Clone, Debug, PartialEq)]
pub struct CostateSeq {
    costates: Vec<DVector<f64>>,
}

impl CostateSeq {
    pub fn new(costates: Vec<DVector<f64>>) -> Self {
        Self { costates }
    }

    pub fn len(&self) -> usize {
        self.costates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.costates.is_empty()
    }

    /// `λ_t` for `1 ≤ t ≤ T`.
    pub fn at(&self, t: usize) -> &DVector<f64> {
        assert!(
            t >= 1 && t <= self.costates.len(),
            "costate index {t} out of 1..={}",
            self.costates.len()
        );
        &self.costates[t - 1]
    }

    pub fn as_slice(&self) -> &[DVector<f64>] {
        &self.costates
    }
}

/// Named slice of a parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ThetaSegment {
    pub name: String,
    pub len: usize,
}

/// Parameter vector with optional named segments (e.g. `dyn`, `obj`).
#[derive(Clone, Debug, PartialEq)]
pub struct ThetaVector {
    pub values: DVector<f64>,
    segments: Vec<ThetaSegment>,
}

impl ThetaVector {
    pub fn new(values: DVector<f64>) -> Self {
        Self {
            values,
            segments: Vec::new(),
        }
    }

    pub fn with_segments(values: DVector<f64>, segments: Vec<ThetaSegment>) -> Result<Self> {
        let total: usize = segments.iter().map(|s| s.len).sum();
        check_dim("theta segments", values.len(), total)?;
        Ok(Self { values, segments })
    }

    pub fn segments(&self) -> &[ThetaSegment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        let mut offset = 0;
        for s in &self.segments {
            if s.name == name {
                return Some(&self.values.as_slice()[offset..offset + s.len]);
            }
            offset += s.len;
        }
        None
    }
}

/// `Σ_{t<T} c(x_t, u_t, θ) + h(x_T, θ)`.
pub fn objective_value(sys: &ParamOCSystem, traj: &Trajectory, theta: &[f64]) -> Result<f64> {
    sys.check_traj(traj)?;
    sys.check_theta(theta)?;
    let c = sys.stage_cost();
    let running: f64 = traj
        .controls
        .iter()
        .zip(&traj.states)
        .map(|(u, x)| c.eval_f64(x.as_slice(), u.as_slice(), theta))
        .sum();
    Ok(running
        + sys
            .terminal_cost()
            .eval_f64(traj.states[sys.horizon()].as_slice(), &[], theta))
}

/// Backward costate recursion `λ_T = h_x`, `λ_t = c_x + F_t'λ_{t+1}`.
pub fn compute_costates(sys: &ParamOCSystem, traj: &Trajectory, theta: &[f64]) -> Result<CostateSeq> {
    sys.check_traj(traj)?;
    sys.check_theta(theta)?;
    let (n, horizon) = (sys.n(), sys.horizon());
    let mut out = alloc::vec![DVector::zeros(n); horizon];
    let xt = traj.states[horizon].as_slice();
    out[horizon - 1] = sys.terminal_cost().gradient(xt, &[], theta).rows(0, n).into_owned();
    for t in (1..horizon).rev() {
        let (x, u) = (traj.states[t].as_slice(), traj.controls[t].as_slice());
        let cx = sys.stage_cost().gradient(x, u, theta).rows(0, n).into_owned();
        let fx = sys.dynamics().state_control_jacobians(x, u, theta).fx;
        out[t - 1] = cx + fx.tr_mul(&out[t]);
    }
    Ok(CostateSeq::new(out))
}

/// `max_t ‖c_u + G_t'λ_{t+1}‖∞`, the violation of the input equation.
pub fn pmp_residual(sys: &ParamOCSystem, traj: &Trajectory, costates: &CostateSeq, theta: &[f64]) -> Result<f64> {
    sys.check_traj(traj)?;
    sys.check_theta(theta)?;
    check_dim("costates", sys.horizon(), costates.len())?;
    let (n, m) = (sys.n(), sys.m());
    let mut worst = 0.0f64;
    for t in 0..sys.horizon() {
        let (x, u) = (traj.states[t].as_slice(), traj.controls[t].as_slice());
        let cu = sys.stage_cost().gradient(x, u, theta).rows(n, m).into_owned();
        let fu = sys.dynamics().state_control_jacobians(x, u, theta).fu;
        worst = worst.max(inf_norm((cu + fu.tr_mul(costates.at(t + 1))).as_slice()));
    }
    Ok(worst)
}

/// Costates followed by the input-equation residual.
pub fn stationarity(sys: &ParamOCSystem, traj: &Trajectory, theta: &[f64]) -> Result<(CostateSeq, f64)> {
    let lam = compute_costates(sys, traj, theta)?;
    let res = pmp_residual(sys, traj, &lam, theta)?;
    Ok((lam, res))
}
