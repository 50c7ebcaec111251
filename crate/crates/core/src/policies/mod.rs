//! Control policies and network parameterizations.

mod lagrange;
mod mlp;

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

pub use lagrange::LagrangePolicy;
pub use mlp::{Mlp, MlpEval, MlpPolicy, NeuralDynamics, NeuralObjective, NEURAL_INPUT_WEIGHT};

use crate::error::{check_dim, Result};

/// Parameterized control law `u_t = π(t, x_t, θ)`.
pub trait Policy: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn num_params(&self) -> usize;

    fn control(&self, t: f64, x: &[f64], theta: &[f64]) -> Result<DVector<f64>>;

    /// `(∂u/∂x, ∂u/∂θ)`, shapes `m×n` and `m×r`.
    fn jacobians(&self, t: f64, x: &[f64], theta: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)>;
}

/// Time-varying affine feedback `u_t = K_t x_t + k_t`.
///
/// `θ` holds, for each `t`, `K_t` row by row followed by `k_t`.
#[derive(Clone, Debug)]
pub struct LinearFeedbackPolicy {
    n: usize,
    m: usize,
    horizon: usize,
}

impl LinearFeedbackPolicy {
    pub fn new(n: usize, m: usize, horizon: usize) -> Self {
        Self { n, m, horizon }
    }

    fn block(&self) -> usize {
        self.m * self.n + self.m
    }

    /// Packs gains into the parameter layout.
    pub fn pack(&self, gains: &[DMatrix<f64>], offsets: &[DVector<f64>]) -> Result<Vec<f64>> {
        check_dim("gains", self.horizon, gains.len())?;
        check_dim("offsets", self.horizon, offsets.len())?;
        let mut theta = Vec::with_capacity(self.num_params());
        for (k, kff) in gains.iter().zip(offsets) {
            for i in 0..self.m {
                theta.extend(k.row(i).iter());
            }
            theta.extend(kff.iter());
        }
        Ok(theta)
    }

    fn step_index(&self, t: f64) -> Result<usize> {
        let idx = t as usize;
        if !(t >= 0.0) || idx as f64 != t || idx >= self.horizon {
            return Err(crate::Error::InvalidArgument(alloc::format!(
                "feedback policy defined for integer t in 0..{}, got {t}",
                self.horizon
            )));
        }
        Ok(idx)
    }
}

impl Policy for LinearFeedbackPolicy {
    fn state_dim(&self) -> usize {
        self.n
    }

    fn control_dim(&self) -> usize {
        self.m
    }

    fn num_params(&self) -> usize {
        self.horizon * self.block()
    }

    fn control(&self, t: f64, x: &[f64], theta: &[f64]) -> Result<DVector<f64>> {
        check_dim("x", self.n, x.len())?;
        check_dim("theta", self.num_params(), theta.len())?;
        let off = self.step_index(t)? * self.block();
        let k = DMatrix::from_row_slice(self.m, self.n, &theta[off..off + self.m * self.n]);
        let kff = DVector::from_column_slice(&theta[off + self.m * self.n..off + self.block()]);
        Ok(k * DVector::from_column_slice(x) + kff)
    }

    fn jacobians(&self, t: f64, x: &[f64], theta: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        check_dim("x", self.n, x.len())?;
        check_dim("theta", self.num_params(), theta.len())?;
        let off = self.step_index(t)? * self.block();
        let (n, m) = (self.n, self.m);
        let ux = DMatrix::from_row_slice(m, n, &theta[off..off + m * n]);
        let mut ue = DMatrix::zeros(m, self.num_params());
        for i in 0..m {
            for j in 0..n {
                ue[(i, off + i * n + j)] = x[j];
            }
            ue[(i, off + m * n + i)] = 1.0;
        }
        Ok((ux, ue))
    }
}
