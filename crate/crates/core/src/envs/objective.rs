use alloc::vec::Vec;

use super::quat::attitude_error_of;
use crate::diffkit::{FnDims, Scalar, ScalarModel};
use crate::error::{check_dim, Error, Result};

/// Which weighted error terms an objective sums.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Features {
    /// One weight per state coordinate: `Σ w_i (x_i − g_i)²`.
    PerState,
    /// Position, velocity, attitude and angular-velocity errors.
    Quadrotor,
    /// Position, velocity, tilt, lateral thrust `T_y² + T_z²` and `‖T‖²`.
    Rocket,
}

impl Features {
    pub fn num_weights(self, n: usize) -> usize {
        match self {
            Features::PerState => n,
            Features::Quadrotor => 4,
            Features::Rocket => 5,
        }
    }
}

/// Weighted goal-distance objective with a fixed unit input weight:
/// `c = Σ_i w_i e_i(x, u) + ‖u‖²`; the terminal form (`m = 0`) drops every
/// input term.
#[derive(Clone, Debug)]
pub struct WeightedObjective {
    features: Features,
    goal: Vec<f64>,
    m: usize,
}

fn sq_dist<S: Scalar>(a: &[S], b: &[f64]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (x, g)| acc + (*x - *g).sq())
}

impl WeightedObjective {
    pub fn new(features: Features, goal: Vec<f64>, m: usize) -> Self {
        Self { features, goal, m }
    }

    pub fn terminal(&self) -> Self {
        Self {
            features: self.features,
            goal: self.goal.clone(),
            m: 0,
        }
    }

    pub fn num_weights(&self) -> usize {
        self.features.num_weights(self.goal.len())
    }

    pub fn goal(&self) -> &[f64] {
        &self.goal
    }

    /// Rejects weight vectors of the wrong length or with negative entries.
    pub fn check_weights(&self, weights: &[f64]) -> Result<()> {
        check_dim("objective weights", self.num_weights(), weights.len())?;
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0)) {
            return Err(Error::InvalidArgument(alloc::format!(
                "objective weights must be non-negative, got {w}"
            )));
        }
        Ok(())
    }
}

impl ScalarModel for WeightedObjective {
    fn shape(&self) -> FnDims {
        FnDims::new(self.goal.len(), self.m, self.num_weights())
    }

    fn eval<S: Scalar>(&self, x: &[S], u: &[S], w: &[S]) -> S {
        let g = &self.goal;
        let unorm = u.iter().fold(S::zero(), |acc, v| acc + v.sq());
        let state = match self.features {
            Features::PerState => x
                .iter()
                .zip(g)
                .zip(w)
                .fold(S::zero(), |acc, ((xi, gi), wi)| acc + *wi * (*xi - *gi).sq()),
            Features::Quadrotor => {
                w[0] * sq_dist(&x[0..3], &g[0..3])
                    + w[1] * sq_dist(&x[3..6], &g[3..6])
                    + w[2] * attitude_error_of(&x[6..10], &g[6..10])
                    + w[3] * sq_dist(&x[10..13], &g[10..13])
            }
            Features::Rocket => {
                let base = w[0] * sq_dist(&x[1..4], &g[1..4])
                    + w[1] * sq_dist(&x[4..7], &g[4..7])
                    + w[2] * attitude_error_of(&x[7..11], &g[7..11]);
                if u.is_empty() {
                    base
                } else {
                    base + w[3] * (u[1].sq() + u[2].sq()) + w[4] * unorm
                }
            }
        };
        state + unorm
    }
}

/// `Σ_i w_i (x_i − g_i)² + ‖u‖²`, rejecting negative weights.
pub fn table2_objective(x: &[f64], u: &[f64], weights: &[f64], goal: &[f64]) -> Result<f64> {
    let obj = WeightedObjective::new(Features::PerState, goal.to_vec(), u.len());
    obj.check_weights(weights)?;
    check_dim("x", goal.len(), x.len())?;
    Ok(obj.eval(x, u, weights))
}

/// Terminal form `Σ_i w_i (x_i − g_i)²`.
pub fn table2_terminal(x: &[f64], weights: &[f64], goal: &[f64]) -> Result<f64> {
    table2_objective(x, &[], weights, goal)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_at_goal() {
        assert_eq!(
            table2_objective(&[1.0, 2.0], &[0.0], &[3.0, 4.0], &[1.0, 2.0]).unwrap(),
            0.0
        );
    }

    #[test]
    fn zero_weights_leave_input_cost() {
        let v = table2_objective(&[5.0, -2.0], &[0.5, 2.0], &[0.0, 0.0], &[1.0, 2.0]).unwrap();
        assert_eq!(v, 4.25);
    }

    #[test]
    fn direct_formula() {
        let (x, u, w, g) = ([0.3, -1.2, 2.0], [0.7], [1.5, 0.2, 3.0], [0.0, 1.0, -1.0]);
        let direct = 1.5 * 0.09 + 0.2 * 2.2f64.powi(2) + 3.0 * 9.0 + 0.49;
        assert!((table2_objective(&x, &u, &w, &g).unwrap() - direct).abs() < 1e-14);
        assert!((table2_terminal(&x, &w, &g).unwrap() - (direct - 0.49)).abs() < 1e-14);
    }

    #[test]
    fn negative_weight_rejected() {
        assert!(table2_objective(&[0.0], &[0.0], &[-1.0], &[0.0]).is_err());
    }
}
