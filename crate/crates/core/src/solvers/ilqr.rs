use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::diffkit::SecondOrder;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{inf_norm, symmetrize};
use crate::ocp::{objective_value, CostateSeq, ParamOCSystem, Trajectory};

/// iLQR settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOpts {
    pub max_iters: usize,
    /// Stop once the input-equation residual is at most this.
    pub tol: f64,
    /// Line-search step shrink factor, in `(0, 1)`.
    pub shrink: f64,
    /// Smallest diagonal shift added to `Q_uu`.
    pub reg_floor: f64,
    /// Below this residual the costate-weighted dynamics curvature is added
    /// to the quadratic model; above it the model is Gauss-Newton.
    /// `0.0` keeps Gauss-Newton throughout.
    pub exact_hessian_below: f64,
}

impl Default for SolverOpts {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-8,
            shrink: 0.5,
            reg_floor: 1e-9,
            exact_hessian_below: 1e-2,
        }
    }
}

impl SolverOpts {
    pub fn validate(&self) -> Result<()> {
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::InvalidArgument(alloc::format!(
                "shrink must lie in (0, 1), got {}",
                self.shrink
            )));
        }
        if !(self.tol > 0.0) || !(self.reg_floor >= 0.0) || self.max_iters == 0 {
            return Err(Error::InvalidArgument(
                "tol, reg_floor and max_iters must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IlqrStatus {
    Converged,
    MaxIterations,
    /// No step reduced the cost even with maximal regularization.
    StepRejected,
}

#[derive(Clone, Debug)]
pub struct IlqrSolution {
    pub traj: Trajectory,
    pub costates: CostateSeq,
    pub cost: f64,
    pub residual: f64,
    pub iterations: usize,
    pub status: IlqrStatus,
}

impl IlqrSolution {
    pub fn converged(&self) -> bool {
        self.status == IlqrStatus::Converged
    }
}

/// Quadratic model of one stage around the nominal trajectory.
struct StageModel {
    fx: DMatrix<f64>,
    fu: DMatrix<f64>,
    cx: DVector<f64>,
    cu: DVector<f64>,
    hxx: DMatrix<f64>,
    huu: DMatrix<f64>,
    hux: DMatrix<f64>,
}

struct Expansion {
    stages: Vec<StageModel>,
    vx_final: DVector<f64>,
    vxx_final: DMatrix<f64>,
    costates: CostateSeq,
    residual: f64,
}

fn expand(sys: &ParamOCSystem, traj: &Trajectory, theta: &[f64], exact_below: f64) -> Expansion {
    let (n, m, horizon) = (sys.n(), sys.m(), sys.horizon());
    let xt = traj.states[horizon].as_slice();
    let vx_final = sys.terminal_cost().gradient(xt, &[], theta).rows(0, n).into_owned();
    let vxx_final = sys
        .terminal_cost()
        .second_partials(xt, &[], theta, SecondOrder::StateControl)
        .view((0, 0), (n, n))
        .into_owned();

    let mut stages = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let (x, u) = (traj.states[t].as_slice(), traj.controls[t].as_slice());
        let jac = sys.dynamics().state_control_jacobians(x, u, theta);
        let g = sys.stage_cost().gradient(x, u, theta);
        let h = sys.stage_cost().second_partials(x, u, theta, SecondOrder::StateControl);
        stages.push(StageModel {
            fx: jac.fx,
            fu: jac.fu,
            cx: g.rows(0, n).into_owned(),
            cu: g.rows(n, m).into_owned(),
            hxx: h.view((0, 0), (n, n)).into_owned(),
            huu: h.view((n, n), (m, m)).into_owned(),
            hux: h.view((n, 0), (m, n)).into_owned(),
        });
    }

    let mut lam = vec![DVector::zeros(n); horizon];
    lam[horizon - 1] = vx_final.clone();
    let mut residual = 0.0f64;
    for t in (0..horizon).rev() {
        let st = &stages[t];
        residual = residual.max(inf_norm((&st.cu + st.fu.tr_mul(&lam[t])).as_slice()));
        if t > 0 {
            lam[t - 1] = &st.cx + st.fx.tr_mul(&lam[t]);
        }
    }

    if residual < exact_below {
        for t in 0..horizon {
            let (x, u) = (traj.states[t].as_slice(), traj.controls[t].as_slice());
            let w = sys
                .dynamics()
                .weighted_second_partials(lam[t].as_slice(), x, u, theta, SecondOrder::StateControl);
            let st = &mut stages[t];
            st.hxx += w.view((0, 0), (n, n));
            st.huu += w.view((n, n), (m, m));
            st.hux += w.view((n, 0), (m, n));
        }
    }

    Expansion {
        stages,
        vx_final,
        vxx_final,
        costates: CostateSeq::new(lam),
        residual,
    }
}

struct BackwardPass {
    gains: Vec<DMatrix<f64>>,
    ff: Vec<DVector<f64>>,
    /// Linear and quadratic coefficients of the predicted cost change in α.
    dv: (f64, f64),
}

fn backward(exp: &Expansion, mu: f64) -> Option<BackwardPass> {
    let horizon = exp.stages.len();
    let mut vx = exp.vx_final.clone();
    let mut vxx = exp.vxx_final.clone();
    let mut gains = Vec::with_capacity(horizon);
    let mut ff = Vec::with_capacity(horizon);
    let mut dv = (0.0, 0.0);
    for st in exp.stages.iter().rev() {
        let qx = &st.cx + st.fx.tr_mul(&vx);
        let qu = &st.cu + st.fu.tr_mul(&vx);
        let vxx_fu = &vxx * &st.fu;
        let qxx = &st.hxx + st.fx.tr_mul(&(&vxx * &st.fx));
        let mut quu = &st.huu + st.fu.tr_mul(&vxx_fu);
        let qux = &st.hux + vxx_fu.tr_mul(&st.fx);
        symmetrize(&mut quu);
        for i in 0..quu.nrows() {
            quu[(i, i)] += mu;
        }
        let chol = quu.clone().cholesky()?;
        let k_mat = -chol.solve(&qux);
        let k_ff = -chol.solve(&qu);
        dv.0 += k_ff.dot(&qu);
        dv.1 += 0.5 * k_ff.dot(&(&quu * &k_ff));
        let kq = k_mat.tr_mul(&quu);
        vx = qx + &kq * &k_ff + k_mat.tr_mul(&qu) + qux.tr_mul(&k_ff);
        vxx = qxx + &kq * &k_mat + k_mat.tr_mul(&qux) + qux.tr_mul(&k_mat);
        symmetrize(&mut vxx);
        gains.push(k_mat);
        ff.push(k_ff);
    }
    gains.reverse();
    ff.reverse();
    Some(BackwardPass { gains, ff, dv })
}

fn forward(
    sys: &ParamOCSystem,
    nominal: &Trajectory,
    bp: &BackwardPass,
    alpha: f64,
    theta: &[f64],
) -> Option<Trajectory> {
    let horizon = sys.horizon();
    let mut states = Vec::with_capacity(horizon + 1);
    let mut controls = Vec::with_capacity(horizon);
    states.push(nominal.states[0].clone());
    for t in 0..horizon {
        let dx = &states[t] - &nominal.states[t];
        let u = &nominal.controls[t] + &bp.ff[t] * alpha + &bp.gains[t] * dx;
        let next = sys.step(states[t].as_slice(), u.as_slice(), theta);
        if next.iter().chain(u.iter()).any(|v| !v.is_finite()) {
            return None;
        }
        controls.push(u);
        states.push(next);
    }
    Some(Trajectory { states, controls })
}

/// iLQR from all-zero controls.
pub fn solve_ilqr(sys: &ParamOCSystem, theta: &[f64], opts: &SolverOpts) -> Result<IlqrSolution> {
    solve_ilqr_from(sys, theta, opts, None)
}

/// iLQR from the given initial controls (zeros when `None`).
///
/// Fails with [`Error::Diverged`] when the initial rollout is not finite.
/// Line-search candidates that are not finite are simply rejected.
pub fn solve_ilqr_from(
    sys: &ParamOCSystem,
    theta: &[f64],
    opts: &SolverOpts,
    init: Option<&[DVector<f64>]>,
) -> Result<IlqrSolution> {
    opts.validate()?;
    sys.check_theta(theta)?;
    let controls = match init {
        Some(u) => {
            check_dim("initial controls", sys.horizon(), u.len())?;
            u.to_vec()
        }
        None => vec![DVector::zeros(sys.m()); sys.horizon()],
    };
    let mut traj = sys.rollout(&controls, theta)?;
    let mut cost = objective_value(sys, &traj, theta)?;
    if !cost.is_finite() {
        return Err(Error::Diverged { last_finite: 0 });
    }
    let mut mu = opts.reg_floor;
    let mut iterations = 0;
    loop {
        let exp = expand(sys, &traj, theta, opts.exact_hessian_below);
        let finish = |status, exp: Expansion, traj: Trajectory, iterations| {
            Ok(IlqrSolution {
                traj,
                costates: exp.costates,
                cost,
                residual: exp.residual,
                iterations,
                status,
            })
        };
        if exp.residual <= opts.tol {
            return finish(IlqrStatus::Converged, exp, traj, iterations);
        }
        if iterations >= opts.max_iters {
            return finish(IlqrStatus::MaxIterations, exp, traj, iterations);
        }
        iterations += 1;

        let mut accepted = None;
        while accepted.is_none() {
            let Some(bp) = backward(&exp, mu) else {
                mu = (mu * 10.0).max(1e-6);
                if mu > 1e12 {
                    break;
                }
                continue;
            };
            let mut alpha = 1.0;
            while alpha > 1e-10 {
                if let Some(cand) = forward(sys, &traj, &bp, alpha, theta) {
                    let new_cost = objective_value(sys, &cand, theta)?;
                    let expected = alpha * bp.dv.0 + alpha * alpha * bp.dv.1;
                    let roundoff = 1e-12 * cost.abs().max(1.0);
                    let negligible = expected.abs() < roundoff && new_cost <= cost + roundoff;
                    if new_cost.is_finite() && (new_cost < cost || (negligible && alpha == 1.0)) {
                        accepted = Some((cand, new_cost));
                        break;
                    }
                }
                alpha *= opts.shrink;
            }
            if accepted.is_none() {
                mu = (mu * 10.0).max(1e-6);
                if mu > 1e12 {
                    break;
                }
            }
        }
        match accepted {
            Some((cand, new_cost)) => {
                traj = cand;
                cost = new_cost;
                mu = (mu * 0.1).max(opts.reg_floor);
            }
            None => return finish(IlqrStatus::StepRejected, exp, traj, iterations),
        }
    }
}
