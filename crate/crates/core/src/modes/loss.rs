use alloc::sync::Arc;
use alloc::vec::Vec;

use nalgebra::DVector;

use crate::diffkit::DiffScalarFn;
use crate::error::{check_dim, Result};
use crate::ocp::Trajectory;

/// Loss value with its gradients against the stacked trajectory and against
/// `θ` directly.
#[derive(Clone, Debug, PartialEq)]
pub struct LossEval {
    pub value: f64,
    /// Stacked as in [`Trajectory::stacked`].
    pub d_xi: DVector<f64>,
    pub d_theta: DVector<f64>,
}

/// Differentiable loss `L(ξ, θ)`.
pub trait TrajectoryLoss: Send + Sync {
    fn eval(&self, traj: &Trajectory, theta: &[f64]) -> Result<LossEval>;
}

/// `‖ξ − ξ_ref‖²` over all states and controls.
#[derive(Clone, Debug)]
pub struct ImitationLoss {
    reference: Trajectory,
    stacked: DVector<f64>,
}

impl ImitationLoss {
    pub fn new(reference: Trajectory) -> Self {
        let stacked = reference.stacked();
        Self { reference, stacked }
    }

    pub fn reference(&self) -> &Trajectory {
        &self.reference
    }
}

impl TrajectoryLoss for ImitationLoss {
    fn eval(&self, traj: &Trajectory, theta: &[f64]) -> Result<LossEval> {
        check_dim("horizon", self.reference.horizon(), traj.horizon())?;
        let diff = traj.stacked() - &self.stacked;
        check_dim("stacked trajectory", self.stacked.len(), diff.len())?;
        Ok(LossEval {
            value: diff.norm_squared(),
            d_xi: diff * 2.0,
            d_theta: DVector::zeros(theta.len()),
        })
    }
}

/// Control objective `Σ_t c(x_t, u_t) + h(x_T)` with its own fixed weights.
#[derive(Clone)]
pub struct ControlLoss {
    stage: Arc<dyn DiffScalarFn>,
    terminal: Arc<dyn DiffScalarFn>,
    weights: Vec<f64>,
}

impl ControlLoss {
    pub fn new(stage: Arc<dyn DiffScalarFn>, terminal: Arc<dyn DiffScalarFn>, weights: Vec<f64>) -> Result<Self> {
        check_dim("stage weights", stage.dims().r, weights.len())?;
        check_dim("terminal weights", terminal.dims().r, weights.len())?;
        check_dim("terminal input", 0, terminal.dims().m)?;
        Ok(Self {
            stage,
            terminal,
            weights,
        })
    }

    pub fn value(&self, traj: &Trajectory) -> f64 {
        let p = &self.weights;
        let running: f64 = (0..traj.horizon())
            .map(|t| {
                self.stage
                    .eval_f64(traj.states[t].as_slice(), traj.controls[t].as_slice(), p)
            })
            .sum();
        running + self.terminal.eval_f64(traj.states[traj.horizon()].as_slice(), &[], p)
    }
}

impl TrajectoryLoss for ControlLoss {
    fn eval(&self, traj: &Trajectory, theta: &[f64]) -> Result<LossEval> {
        let d = self.stage.dims();
        let horizon = traj.horizon();
        let p = &self.weights;
        let mut d_xi = DVector::zeros(traj.stacked_len());
        check_dim("stacked trajectory", (horizon + 1) * d.n + horizon * d.m, d_xi.len())?;
        let u_off = (horizon + 1) * d.n;
        let mut value = 0.0;
        for t in 0..horizon {
            let (x, u) = (traj.states[t].as_slice(), traj.controls[t].as_slice());
            value += self.stage.eval_f64(x, u, p);
            let g = self.stage.gradient(x, u, p);
            d_xi.rows_mut(t * d.n, d.n).copy_from(&g.rows(0, d.n));
            d_xi.rows_mut(u_off + t * d.m, d.m).copy_from(&g.rows(d.n, d.m));
        }
        let xt = traj.states[horizon].as_slice();
        value += self.terminal.eval_f64(xt, &[], p);
        let g = self.terminal.gradient(xt, &[], p);
        d_xi.rows_mut(horizon * d.n, d.n).copy_from(&g.rows(0, d.n));
        Ok(LossEval {
            value,
            d_xi,
            d_theta: DVector::zeros(theta.len()),
        })
    }
}
