//! Trajectory sensitivities `∂ξ/∂θ` from the auxiliary control system.
//!
//! Differentiating the Pontryagin conditions of a stationary trajectory
//! with respect to `θ` gives a linear two-point boundary problem in
//! `X_t = ∂x_t/∂θ`, `U_t = ∂u_t/∂θ` and `Λ_t = ∂λ_t/∂θ`. It is the
//! optimality system of an LQR problem whose coefficients are the
//! Hamiltonian second derivatives along the trajectory; [`solve_aux`]
//! solves it with a backward Riccati sweep and a forward rollout. The
//! terminal term of that problem is `½X_T'H_T^{xx}X_T + tr(X_T'H_T^{xe})`.
//!
//! [`sysid_sensitivity`] and [`policy_sensitivity`] are the reduced forward
//! recursions for open-loop rollouts and closed-loop policies.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, Dyn, LU};

use crate::diffkit::{hamiltonian_blocks, DiffVectorFn, SecondOrder};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{lu_with_condition, symmetrize};
use crate::ocp::{compute_costates, pmp_residual, ParamOCSystem, Trajectory};
use crate::policies::Policy;

/// Residual above which [`build_aux`] marks its output as degraded.
pub const STATIONARITY_WARN: f64 = 1e-4;

/// Largest accepted 1-norm condition estimate of `H_t^{uu}`.
pub const MAX_HUU_CONDITION: f64 = 1e12;

/// Coefficients of one step of the auxiliary system.
#[derive(Clone, Debug, PartialEq)]
pub struct AuxStep {
    pub f: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub hxx: DMatrix<f64>,
    pub hxu: DMatrix<f64>,
    pub hux: DMatrix<f64>,
    pub huu: DMatrix<f64>,
    pub hxe: DMatrix<f64>,
    pub hue: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuxCoefficients {
    steps: Vec<AuxStep>,
    hxx_final: DMatrix<f64>,
    hxe_final: DMatrix<f64>,
    /// Input-equation residual of the trajectory the coefficients came from.
    pub pmp_residual: f64,
    /// Set when `pmp_residual` exceeds [`STATIONARITY_WARN`]; the resulting
    /// sensitivity is then only approximate.
    pub degraded: bool,
}

impl AuxCoefficients {
    /// Assembles coefficients directly, enforcing `H^{ux} = (H^{xu})'` and
    /// symmetric `H^{xx}`, `H^{uu}`, `H_T^{xx}`.
    pub fn new(mut steps: Vec<AuxStep>, mut hxx_final: DMatrix<f64>, hxe_final: DMatrix<f64>) -> Result<Self> {
        let first = steps
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty auxiliary horizon".into()))?;
        let (n, m, r) = (first.f.nrows(), first.g.ncols(), first.e.ncols());
        for st in &mut steps {
            check_dim("F", n, st.f.nrows())?;
            check_dim("F", n, st.f.ncols())?;
            check_dim("G rows", n, st.g.nrows())?;
            check_dim("G cols", m, st.g.ncols())?;
            check_dim("E rows", n, st.e.nrows())?;
            check_dim("E cols", r, st.e.ncols())?;
            check_dim("Hxx", n * n, st.hxx.len())?;
            check_dim("Hxu", n * m, st.hxu.len())?;
            check_dim("Huu", m * m, st.huu.len())?;
            check_dim("Hxe", n * r, st.hxe.len())?;
            check_dim("Hue", m * r, st.hue.len())?;
            symmetrize(&mut st.hxx);
            symmetrize(&mut st.huu);
            st.hux = st.hxu.transpose();
        }
        check_dim("H_T^xx", n * n, hxx_final.len())?;
        check_dim("H_T^xe", n * r, hxe_final.len())?;
        symmetrize(&mut hxx_final);
        Ok(Self {
            steps,
            hxx_final,
            hxe_final,
            pmp_residual: 0.0,
            degraded: false,
        })
    }

    pub fn steps(&self) -> &[AuxStep] {
        &self.steps
    }

    pub fn hxx_final(&self) -> &DMatrix<f64> {
        &self.hxx_final
    }

    pub fn hxe_final(&self) -> &DMatrix<f64> {
        &self.hxe_final
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        let st = &self.steps[0];
        (st.f.nrows(), st.g.ncols(), st.e.ncols())
    }
}

/// `X_{0:T}` (each `n×r`) and `U_{0:T-1}` (each `m×r`).
#[derive(Clone, Debug, PartialEq)]
pub struct Sensitivity {
    pub x: Vec<DMatrix<f64>>,
    pub u: Vec<DMatrix<f64>>,
    /// Steps whose `H^{uu}` is invertible but not positive definite.
    pub indefinite_steps: Vec<usize>,
}

impl Sensitivity {
    pub fn zeros(n: usize, m: usize, r: usize, horizon: usize) -> Self {
        Self {
            x: vec![DMatrix::zeros(n, r); horizon + 1],
            u: vec![DMatrix::zeros(m, r); horizon],
            indefinite_steps: Vec::new(),
        }
    }

    pub fn horizon(&self) -> usize {
        self.u.len()
    }

    pub fn num_params(&self) -> usize {
        self.x[0].ncols()
    }

    /// Rows stacked as states then controls, time-major.
    pub fn stacked(&self) -> DMatrix<f64> {
        let r = self.num_params();
        let rows: usize = self.x.iter().chain(&self.u).map(|b| b.nrows()).sum();
        let mut out = DMatrix::zeros(rows, r);
        let mut off = 0;
        for b in self.x.iter().chain(&self.u) {
            out.view_mut((off, 0), (b.nrows(), r)).copy_from(b);
            off += b.nrows();
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.x.iter().chain(&self.u).map(|b| b.amax()).fold(0.0, f64::max)
    }
}

/// Backward-sweep quantities: `P_t`, `W_t` for `t = 0..=T` and the
/// per-step intermediates `A, R, M, Q, N` for `t < T`.
#[derive(Clone, Debug)]
pub struct RiccatiState {
    pub p: Vec<DMatrix<f64>>,
    pub w: Vec<DMatrix<f64>>,
    pub a: Vec<DMatrix<f64>>,
    pub r: Vec<DMatrix<f64>>,
    pub m: Vec<DMatrix<f64>>,
    pub q: Vec<DMatrix<f64>>,
    pub n: Vec<DMatrix<f64>>,
}

/// `U_t^x = ∂u_t/∂x_t` and `U_t^e = ∂u_t/∂θ` along a closed-loop rollout.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyJacobians {
    pub ux: Vec<DMatrix<f64>>,
    pub ue: Vec<DMatrix<f64>>,
}

impl PolicyJacobians {
    /// Evaluates the policy Jacobians at every `(t, x_t)` of `traj`.
    pub fn along(policy: &dyn Policy, traj: &Trajectory, theta: &[f64]) -> Result<Self> {
        let mut ux = Vec::with_capacity(traj.horizon());
        let mut ue = Vec::with_capacity(traj.horizon());
        for t in 0..traj.horizon() {
            let (jx, je) = policy.jacobians(t as f64, traj.states[t].as_slice(), theta)?;
            ux.push(jx);
            ue.push(je);
        }
        Ok(Self { ux, ue })
    }
}

/// Evaluates the auxiliary-system coefficients along `traj`.
///
/// Costates are recomputed from the costate recursion. A trajectory whose
/// input-equation residual exceeds [`STATIONARITY_WARN`] still produces
/// coefficients, with `degraded` set.
pub fn build_aux(sys: &ParamOCSystem, traj: &Trajectory, theta: &[f64]) -> Result<AuxCoefficients> {
    let lam = compute_costates(sys, traj, theta)?;
    let residual = pmp_residual(sys, traj, &lam, theta)?;
    let (n, r) = (sys.n(), sys.r());
    let mut steps = Vec::with_capacity(sys.horizon());
    for t in 0..sys.horizon() {
        let (x, u) = (traj.states[t].as_slice(), traj.controls[t].as_slice());
        let jac = sys.dynamics().jacobians(x, u, theta);
        let hb = hamiltonian_blocks(sys.stage_cost(), sys.dynamics(), lam.at(t + 1).as_slice(), x, u, theta)?;
        steps.push(AuxStep {
            f: jac.fx,
            g: jac.fu,
            e: jac.fp,
            hxx: hb.hxx,
            hxu: hb.hxu,
            hux: hb.hux,
            huu: hb.huu,
            hxe: hb.hxe,
            hue: hb.hue,
        });
    }
    let xt = traj.states[sys.horizon()].as_slice();
    let hfin = sys.terminal_cost().second_partials(xt, &[], theta, SecondOrder::Mixed);
    let mut aux = AuxCoefficients::new(
        steps,
        hfin.view((0, 0), (n, n)).into_owned(),
        hfin.view((0, n), (n, r)).into_owned(),
    )?;
    aux.pmp_residual = residual;
    aux.degraded = residual > STATIONARITY_WARN;
    Ok(aux)
}

/// Solves the auxiliary system; see [`solve_aux_with_riccati`].
pub fn solve_aux(aux: &AuxCoefficients) -> Result<Sensitivity> {
    solve_aux_with_riccati(aux).map(|(s, _)| s)
}

type Lu = LU<f64, Dyn, Dyn>;

fn solve_lu(lu: &Lu, rhs: &DMatrix<f64>, err: Error) -> Result<DMatrix<f64>> {
    lu.solve(rhs).ok_or(err)
}

/// Backward Riccati sweep from `(P_T, W_T) = (H_T^{xx}, H_T^{xe})`, then the
/// forward pass from `X_0 = 0`.
///
/// Fails with [`Error::SingularControlHessian`] when `H_t^{uu}` is singular
/// or its condition estimate exceeds [`MAX_HUU_CONDITION`], and with
/// [`Error::SingularRiccati`] when `I + P_{t+1}R_t` is singular.
pub fn solve_aux_with_riccati(aux: &AuxCoefficients) -> Result<(Sensitivity, RiccatiState)> {
    let horizon = aux.horizon();
    let (n, _m, r) = aux.dims();
    let eye = DMatrix::<f64>::identity(n, n);

    let mut p = vec![DMatrix::zeros(n, n); horizon + 1];
    let mut w = vec![DMatrix::zeros(n, r); horizon + 1];
    p[horizon] = aux.hxx_final.clone();
    w[horizon] = aux.hxe_final.clone();
    let mut huu_lu: Vec<Option<Lu>> = (0..horizon).map(|_| None).collect();
    let mut ipr_lu: Vec<Option<Lu>> = (0..horizon).map(|_| None).collect();
    let mut st_a = vec![DMatrix::zeros(0, 0); horizon];
    let mut st_r = vec![DMatrix::zeros(0, 0); horizon];
    let mut st_m = vec![DMatrix::zeros(0, 0); horizon];
    let mut st_q = vec![DMatrix::zeros(0, 0); horizon];
    let mut st_n = vec![DMatrix::zeros(0, 0); horizon];
    let mut indefinite_steps = Vec::new();

    for t in (0..horizon).rev() {
        let s = &aux.steps[t];
        let (lu, cond) = lu_with_condition(&s.huu);
        if !(cond <= MAX_HUU_CONDITION) {
            return Err(Error::SingularControlHessian { t, cond });
        }
        if s.huu.clone().cholesky().is_none() {
            indefinite_steps.push(t);
        }
        let sing = || Error::SingularControlHessian { t, cond };
        let inv_hux = solve_lu(&lu, &s.hux, sing())?;
        let inv_hue = solve_lu(&lu, &s.hue, sing())?;
        let inv_gt = solve_lu(&lu, &s.g.transpose(), sing())?;

        let a = &s.f - &s.g * &inv_hux;
        let mut rr = &s.g * &inv_gt;
        symmetrize(&mut rr);
        let mm = &s.e - &s.g * &inv_hue;
        let mut q = &s.hxx - &s.hxu * &inv_hux;
        symmetrize(&mut q);
        let nn = &s.hxe - &s.hxu * &inv_hue;

        let p_next = &p[t + 1];
        let ipr = &eye + p_next * &rr;
        let ilu = ipr.lu();
        let riccati_err = || Error::SingularRiccati { t };
        let pa = solve_lu(&ilu, &(p_next * &a), riccati_err())?;
        let wm = solve_lu(&ilu, &(&w[t + 1] + p_next * &mm), riccati_err())?;
        let mut pt = &q + a.tr_mul(&pa);
        symmetrize(&mut pt);
        p[t] = pt;
        w[t] = a.tr_mul(&wm) + &nn;

        huu_lu[t] = Some(lu);
        ipr_lu[t] = Some(ilu);
        st_a[t] = a;
        st_r[t] = rr;
        st_m[t] = mm;
        st_q[t] = q;
        st_n[t] = nn;
    }
    indefinite_steps.sort_unstable();

    let mut sens = Sensitivity::zeros(n, aux.dims().1, r, horizon);
    sens.indefinite_steps = indefinite_steps;
    for t in 0..horizon {
        let s = &aux.steps[t];
        let xt = &sens.x[t];
        let p_next = &p[t + 1];
        let inner = p_next * (&st_a[t] * xt) + p_next * &st_m[t] + &w[t + 1];
        let ipr = ipr_lu[t].as_ref().expect("factored in backward sweep");
        let inner = solve_lu(ipr, &inner, Error::SingularRiccati { t })?;
        let rhs = &s.hux * xt + &s.hue + s.g.tr_mul(&inner);
        let huu = huu_lu[t].as_ref().expect("factored in backward sweep");
        let ut = -solve_lu(huu, &rhs, Error::SingularControlHessian { t, cond: f64::INFINITY })?;
        let next = &s.f * xt + &s.g * &ut + &s.e;
        sens.u[t] = ut;
        sens.x[t + 1] = next;
    }

    let ric = RiccatiState {
        p,
        w,
        a: st_a,
        r: st_r,
        m: st_m,
        q: st_q,
        n: st_n,
    };
    Ok((sens, ric))
}

/// Largest ∞-norm violation of the differentiated Pontryagin conditions by
/// `sens`, with `Λ_t = P_t X_t + W_t`.
///
/// Checks the dynamics, costate, input and boundary equations.
pub fn diff_pmp_residual(aux: &AuxCoefficients, sens: &Sensitivity, ric: &RiccatiState) -> f64 {
    let horizon = aux.horizon();
    let lam: Vec<DMatrix<f64>> = (0..=horizon).map(|t| &ric.p[t] * &sens.x[t] + &ric.w[t]).collect();
    let mut worst = sens.x[0].amax();
    for t in 0..horizon {
        let s = &aux.steps[t];
        let dyn_res = &sens.x[t + 1] - (&s.f * &sens.x[t] + &s.g * &sens.u[t] + &s.e);
        let input_res = &s.hux * &sens.x[t] + &s.huu * &sens.u[t] + &s.hue + s.g.tr_mul(&lam[t + 1]);
        worst = worst.max(dyn_res.amax()).max(input_res.amax());
        if t > 0 {
            let co_res = &lam[t] - (&s.hxx * &sens.x[t] + &s.hxu * &sens.u[t] + &s.hxe + s.f.tr_mul(&lam[t + 1]));
            worst = worst.max(co_res.amax());
        }
    }
    let fin = &lam[horizon] - (&aux.hxx_final * &sens.x[horizon] + &aux.hxe_final);
    worst.max(fin.amax())
}

/// Open-loop rollout sensitivity: `X_{t+1} = F_t X_t + E_t`, `X_0 = 0`, `U ≡ 0`.
pub fn sysid_sensitivity(f: &dyn DiffVectorFn, traj: &Trajectory, theta: &[f64]) -> Result<Sensitivity> {
    let d = f.dims();
    check_dim("theta", d.r, theta.len())?;
    let mut sens = Sensitivity::zeros(d.n, d.m, d.r, traj.horizon());
    for t in 0..traj.horizon() {
        check_dim("state width", d.n, traj.states[t].len())?;
        check_dim("control width", d.m, traj.controls[t].len())?;
        let jac = f.jacobians(traj.states[t].as_slice(), traj.controls[t].as_slice(), theta);
        sens.x[t + 1] = &jac.fx * &sens.x[t] + jac.fp;
    }
    Ok(sens)
}

/// Closed-loop sensitivity: `U_t = U_t^x X_t + U_t^e`,
/// `X_{t+1} = F_t X_t + G_t U_t`, `X_0 = 0`.
///
/// `dyn_params` are the (fixed) dynamics parameters; the sensitivity is with
/// respect to the policy parameters only.
pub fn policy_sensitivity(
    f: &dyn DiffVectorFn,
    dyn_params: &[f64],
    traj: &Trajectory,
    pj: &PolicyJacobians,
) -> Result<Sensitivity> {
    let d = f.dims();
    check_dim("dynamics theta", d.r, dyn_params.len())?;
    check_dim("policy jacobians", traj.horizon(), pj.ue.len())?;
    check_dim("policy jacobians", traj.horizon(), pj.ux.len())?;
    let r = pj.ue.first().map_or(0, |b| b.ncols());
    let mut sens = Sensitivity::zeros(d.n, d.m, r, traj.horizon());
    for t in 0..traj.horizon() {
        check_dim("U^x rows", d.m, pj.ux[t].nrows())?;
        check_dim("U^x cols", d.n, pj.ux[t].ncols())?;
        check_dim("U^e rows", d.m, pj.ue[t].nrows())?;
        check_dim("U^e cols", r, pj.ue[t].ncols())?;
        let jac = f.state_control_jacobians(traj.states[t].as_slice(), traj.controls[t].as_slice(), dyn_params);
        let ut = &pj.ux[t] * &sens.x[t] + &pj.ue[t];
        sens.x[t + 1] = &jac.fx * &sens.x[t] + &jac.fu * &ut;
        sens.u[t] = ut;
    }
    Ok(sens)
}
