use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::linalg::symmetrize;
use crate::ocp::Trajectory;

/// One stage of a time-varying LQR problem.
///
/// Stage cost `½x'Qx + ½u'Ru + x'Su + q'x + r'u`, dynamics
/// `x_{t+1} = A x_t + B u_t + d`.
#[derive(Clone, Debug, PartialEq)]
pub struct LqrStage {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub d: DVector<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub q_lin: DVector<f64>,
    pub r_lin: DVector<f64>,
}

impl LqrStage {
    /// Stage with zero cost, zero drift and the given dynamics.
    pub fn from_dynamics(a: DMatrix<f64>, b: DMatrix<f64>) -> Self {
        let (n, m) = (a.nrows(), b.ncols());
        Self {
            a,
            b,
            d: DVector::zeros(n),
            q: DMatrix::zeros(n, n),
            r: DMatrix::zeros(m, m),
            s: DMatrix::zeros(n, m),
            q_lin: DVector::zeros(n),
            r_lin: DVector::zeros(m),
        }
    }
}

/// Finite-horizon LQR problem with terminal cost `½x'Q_T x + q_T'x`.
#[derive(Clone, Debug, PartialEq)]
pub struct LqrProblem {
    pub stages: Vec<LqrStage>,
    pub q_final: DMatrix<f64>,
    pub q_final_lin: DVector<f64>,
    pub x0: DVector<f64>,
}

/// Affine feedback `u_t = K_t x_t + k_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedbackGains {
    pub k_mat: Vec<DMatrix<f64>>,
    pub k_ff: Vec<DVector<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LqrSolution {
    pub traj: Trajectory,
    pub gains: FeedbackGains,
    /// Value function `½x'V_t x + v_t'x + const` for `t = 0..=T`.
    pub value_hess: Vec<DMatrix<f64>>,
    pub value_grad: Vec<DVector<f64>>,
}

impl LqrSolution {
    /// Multipliers `λ_t = V_t x_t + v_t` for `t = 1..=T`.
    pub fn costates(&self) -> Vec<DVector<f64>> {
        (1..self.value_hess.len())
            .map(|t| &self.value_hess[t] * &self.traj.states[t] + &self.value_grad[t])
            .collect()
    }
}

impl LqrProblem {
    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    fn validate(&self) -> Result<(usize, usize)> {
        let n = self.x0.len();
        let first = self
            .stages
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty LQR horizon".into()))?;
        let m = first.b.ncols();
        for st in &self.stages {
            check_dim("A rows", n, st.a.nrows())?;
            check_dim("A cols", n, st.a.ncols())?;
            check_dim("B rows", n, st.b.nrows())?;
            check_dim("B cols", m, st.b.ncols())?;
            check_dim("d", n, st.d.len())?;
            check_dim("Q", n, st.q.nrows())?;
            check_dim("Q", n, st.q.ncols())?;
            check_dim("R", m, st.r.nrows())?;
            check_dim("R", m, st.r.ncols())?;
            check_dim("S rows", n, st.s.nrows())?;
            check_dim("S cols", m, st.s.ncols())?;
            check_dim("q", n, st.q_lin.len())?;
            check_dim("r", m, st.r_lin.len())?;
        }
        check_dim("Q_T", n, self.q_final.nrows())?;
        check_dim("Q_T", n, self.q_final.ncols())?;
        check_dim("q_T", n, self.q_final_lin.len())?;
        Ok((n, m))
    }

    /// Total cost of a trajectory.
    pub fn cost(&self, traj: &Trajectory) -> f64 {
        let mut total = 0.0;
        for (t, st) in self.stages.iter().enumerate() {
            let (x, u) = (&traj.states[t], &traj.controls[t]);
            total += 0.5 * x.dot(&(&st.q * x)) + 0.5 * u.dot(&(&st.r * u)) + x.dot(&(&st.s * u));
            total += st.q_lin.dot(x) + st.r_lin.dot(u);
        }
        let xt = &traj.states[self.horizon()];
        total + 0.5 * xt.dot(&(&self.q_final * xt)) + self.q_final_lin.dot(xt)
    }
}

/// Backward Riccati recursion and forward rollout.
///
/// Fails with [`Error::NotPositiveDefinite`] naming `t` when `R_t` or
/// `R_t + B_t'V_{t+1}B_t` has no Cholesky factor.
pub fn solve_lqr(p: &LqrProblem) -> Result<LqrSolution> {
    let (n, _m) = p.validate()?;
    let horizon = p.horizon();
    let mut value_hess = alloc::vec![DMatrix::zeros(n, n); horizon + 1];
    let mut value_grad = alloc::vec![DVector::zeros(n); horizon + 1];
    let mut k_mat = Vec::with_capacity(horizon);
    let mut k_ff = Vec::with_capacity(horizon);
    value_hess[horizon] = p.q_final.clone();
    value_grad[horizon] = p.q_final_lin.clone();
    for t in (0..horizon).rev() {
        let st = &p.stages[t];
        if st.r.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite { t });
        }
        let v = &value_hess[t + 1];
        let vd = &value_grad[t + 1] + v * &st.d;
        let vb = v * &st.b;
        let qx = &st.q_lin + st.a.tr_mul(&vd);
        let qu = &st.r_lin + st.b.tr_mul(&vd);
        let qxx = &st.q + st.a.tr_mul(&(v * &st.a));
        let quu = &st.r + st.b.tr_mul(&vb);
        let qux = st.s.transpose() + vb.tr_mul(&st.a);
        let chol = quu.cholesky().ok_or(Error::NotPositiveDefinite { t })?;
        let gain = -chol.solve(&qux);
        let ff = -chol.solve(&qu);
        let mut vxx = qxx + qux.tr_mul(&gain);
        symmetrize(&mut vxx);
        value_grad[t] = qx + qux.tr_mul(&ff);
        value_hess[t] = vxx;
        k_mat.push(gain);
        k_ff.push(ff);
    }
    k_mat.reverse();
    k_ff.reverse();

    let mut states = Vec::with_capacity(horizon + 1);
    let mut controls = Vec::with_capacity(horizon);
    states.push(p.x0.clone());
    for (t, st) in p.stages.iter().enumerate() {
        let u = &k_mat[t] * &states[t] + &k_ff[t];
        let next = &st.a * &states[t] + &st.b * &u + &st.d;
        controls.push(u);
        states.push(next);
    }
    Ok(LqrSolution {
        traj: Trajectory { states, controls },
        gains: FeedbackGains { k_mat, k_ff },
        value_hess,
        value_grad,
    })
}
