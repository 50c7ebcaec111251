use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use super::Policy;
use crate::error::{check_dim, Error, Result};

/// Open-loop control `u(t) = Σ_i u_i b_i(t)` interpolating pivot controls
/// `u_i` at equispaced times `t_i = iT/N`, `i = 0..=N`.
///
/// The basis is evaluated in barycentric form. `θ` stacks the pivots:
/// `θ[i·m..(i+1)·m] = u_i`.
#[derive(Clone, Debug)]
pub struct LagrangePolicy {
    state_dim: usize,
    control_dim: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl LagrangePolicy {
    pub fn new(state_dim: usize, control_dim: usize, degree: usize, horizon: f64) -> Result<Self> {
        if degree == 0 || !(horizon > 0.0) || control_dim == 0 {
            return Err(Error::InvalidArgument(alloc::format!(
                "lagrange policy needs degree >= 1, horizon > 0 and m >= 1 (got N={degree}, T={horizon}, m={control_dim})"
            )));
        }
        let nodes = (0..=degree).map(|i| i as f64 * horizon / degree as f64).collect();
        // Equispaced barycentric weights (-1)^i C(N, i); the common scale cancels.
        let mut weights = Vec::with_capacity(degree + 1);
        let mut binom = 1.0f64;
        for i in 0..=degree {
            weights.push(if i % 2 == 0 { binom } else { -binom });
            binom = binom * (degree - i) as f64 / (i + 1) as f64;
        }
        Ok(Self {
            state_dim,
            control_dim,
            nodes,
            weights,
        })
    }

    pub fn degree(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Basis values `b_0(t), …, b_N(t)`.
    pub fn basis(&self, t: f64) -> Result<DVector<f64>> {
        if !(t >= 0.0 && t <= self.horizon()) {
            return Err(Error::InvalidArgument(alloc::format!(
                "lagrange policy evaluated at t={t} outside [0, {}]",
                self.horizon()
            )));
        }
        let k = self.nodes.len();
        if let Some(j) = self.nodes.iter().position(|&ti| ti == t) {
            let mut b = DVector::zeros(k);
            b[j] = 1.0;
            return Ok(b);
        }
        let terms = DVector::from_iterator(k, self.nodes.iter().zip(&self.weights).map(|(ti, wi)| wi / (t - ti)));
        let total = terms.sum();
        Ok(terms / total)
    }

    /// `u(t)` and `U^e = [b_0 I_m, …, b_N I_m]`.
    pub fn eval(&self, t: f64, theta: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let m = self.control_dim;
        check_dim("theta", self.num_params(), theta.len())?;
        let b = self.basis(t)?;
        let mut u = DVector::zeros(m);
        let mut ue = DMatrix::zeros(m, self.num_params());
        for (i, bi) in b.iter().enumerate() {
            for k in 0..m {
                u[k] += bi * theta[i * m + k];
                ue[(k, i * m + k)] = *bi;
            }
        }
        Ok((u, ue))
    }
}

impl Policy for LagrangePolicy {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn control_dim(&self) -> usize {
        self.control_dim
    }

    fn num_params(&self) -> usize {
        self.control_dim * self.nodes.len()
    }

    fn control(&self, t: f64, x: &[f64], theta: &[f64]) -> Result<DVector<f64>> {
        check_dim("x", self.state_dim, x.len())?;
        self.eval(t, theta).map(|(u, _)| u)
    }

    fn jacobians(&self, t: f64, x: &[f64], theta: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        check_dim("x", self.state_dim, x.len())?;
        let (_, ue) = self.eval(t, theta)?;
        Ok((DMatrix::zeros(self.control_dim, self.state_dim), ue))
    }
}
