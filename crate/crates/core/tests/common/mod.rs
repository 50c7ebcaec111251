#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use pdp_core::diffkit::FnDims;
use pdp_core::{ParamOCSystem, Scalar, ScalarModel, Trajectory, VectorModel};

pub const N: usize = 3;
pub const M: usize = 2;
pub const R: usize = 4;

/// `A(θ) = A0 + θ₀A1`, `B(θ) = B0 + θ₁B1`.
#[derive(Clone, Debug)]
pub struct LinDyn {
    pub a0: DMatrix<f64>,
    pub a1: DMatrix<f64>,
    pub b0: DMatrix<f64>,
    pub b1: DMatrix<f64>,
}

impl LinDyn {
    pub fn a(&self, p: &[f64]) -> DMatrix<f64> {
        &self.a0 + &self.a1 * p[0]
    }

    pub fn b(&self, p: &[f64]) -> DMatrix<f64> {
        &self.b0 + &self.b1 * p[1]
    }
}

impl VectorModel for LinDyn {
    fn shape(&self) -> FnDims {
        FnDims::new(N, M, R)
    }

    fn eval<S: Scalar>(&self, x: &[S], u: &[S], p: &[S], out: &mut [S]) {
        for i in 0..N {
            let mut acc = S::zero();
            for j in 0..N {
                acc += x[j] * (p[0] * self.a1[(i, j)] + self.a0[(i, j)]);
            }
            for j in 0..M {
                acc += u[j] * (p[1] * self.b1[(i, j)] + self.b0[(i, j)]);
            }
            out[i] = acc;
        }
    }
}

/// `½Σ(q_i + θ₂w_i)x_i² + ½Σ ρ_j u_j² + θ₃ s·x`; the terminal form has no input term.
#[derive(Clone, Debug)]
pub struct QuadCost {
    pub q: [f64; N],
    pub w: [f64; N],
    pub rho: [f64; M],
    pub s: [f64; N],
    pub terminal: bool,
}

impl QuadCost {
    pub fn hessian_x(&self, p: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(N, N, |i, j| if i == j { self.q[i] + p[2] * self.w[i] } else { 0.0 })
    }

    pub fn hessian_u(&self) -> DMatrix<f64> {
        DMatrix::from_fn(M, M, |i, j| if i == j { self.rho[i] } else { 0.0 })
    }

    pub fn linear_x(&self, p: &[f64]) -> DVector<f64> {
        DVector::from_fn(N, |i, _| p[3] * self.s[i])
    }
}

impl ScalarModel for QuadCost {
    fn shape(&self) -> FnDims {
        FnDims::new(N, if self.terminal { 0 } else { M }, R)
    }

    fn eval<S: Scalar>(&self, x: &[S], u: &[S], p: &[S]) -> S {
        let mut c = S::zero();
        for i in 0..N {
            c += (p[2] * self.w[i] + self.q[i]) * x[i].sq() * 0.5 + p[3] * x[i] * self.s[i];
        }
        for (j, uj) in u.iter().enumerate() {
            c += uj.sq() * (0.5 * self.rho[j]);
        }
        c
    }
}

pub struct LqInstance {
    pub dynamics: LinDyn,
    pub stage: QuadCost,
    pub terminal: QuadCost,
    pub x0: DVector<f64>,
    pub horizon: usize,
    pub theta: Vec<f64>,
}

impl LqInstance {
    pub fn standard(horizon: usize) -> Self {
        let a0 = DMatrix::from_row_slice(N, N, &[1.0, 0.1, 0.0, -0.05, 0.98, 0.1, 0.02, 0.0, 0.95]);
        let a1 = DMatrix::from_row_slice(N, N, &[0.0, 0.05, 0.0, 0.0, 0.0, 0.0, 0.1, 0.0, -0.02]);
        let b0 = DMatrix::from_row_slice(N, M, &[0.0, 0.1, 0.1, 0.0, 0.05, 0.05]);
        let b1 = DMatrix::from_row_slice(N, M, &[0.02, 0.0, 0.0, 0.03, 0.0, 0.01]);
        let stage = QuadCost {
            q: [1.0, 0.5, 2.0],
            w: [0.5, 1.0, 0.2],
            rho: [0.3, 0.7],
            s: [1.0, -0.5, 0.25],
            terminal: false,
        };
        let terminal = QuadCost {
            q: [3.0, 2.0, 1.0],
            terminal: true,
            ..stage.clone()
        };
        Self {
            dynamics: LinDyn { a0, a1, b0, b1 },
            stage,
            terminal,
            x0: DVector::from_vec(vec![1.0, -0.5, 0.8]),
            horizon,
            theta: vec![0.3, -0.2, 0.6, 0.4],
        }
    }

    pub fn system(&self) -> ParamOCSystem {
        ParamOCSystem::new(
            Arc::new(self.dynamics.clone()),
            Arc::new(self.stage.clone()),
            Arc::new(self.terminal.clone()),
            self.horizon,
            self.x0.clone(),
        )
        .unwrap()
    }

    /// Stacked optimality system `K z = k` over
    /// `z = (x_1..x_T, u_0..u_{T-1}, λ_1..λ_T)`.
    pub fn kkt(&self, p: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
        let t_h = self.horizon;
        let (nx, nu) = (N * t_h, M * t_h);
        let dim = 2 * nx + nu;
        let xi = |t: usize| (t - 1) * N;
        let ui = |t: usize| nx + t * M;
        let li = |t: usize| nx + nu + (t - 1) * N;
        let (a, b) = (self.dynamics.a(p), self.dynamics.b(p));
        let (q, qf, rr) = (
            self.stage.hessian_x(p),
            self.terminal.hessian_x(p),
            self.stage.hessian_u(),
        );
        let (s, sf) = (self.stage.linear_x(p), self.terminal.linear_x(p));
        let mut k = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        for t in 1..=t_h {
            let row = xi(t);
            let (hx, lin) = if t == t_h { (&qf, &sf) } else { (&q, &s) };
            k.view_mut((row, xi(t)), (N, N)).copy_from(hx);
            k.view_mut((row, li(t)), (N, N)).copy_from(&(-DMatrix::identity(N, N)));
            if t < t_h {
                k.view_mut((row, li(t + 1)), (N, N)).copy_from(&a.transpose());
            }
            rhs.rows_mut(row, N).copy_from(&(-lin));
        }
        for t in 0..t_h {
            let row = ui(t);
            k.view_mut((row, ui(t)), (M, M)).copy_from(&rr);
            k.view_mut((row, li(t + 1)), (M, N)).copy_from(&b.transpose());
        }
        for t in 0..t_h {
            let row = li(t + 1);
            k.view_mut((row, xi(t + 1)), (N, N))
                .copy_from(&(-DMatrix::identity(N, N)));
            k.view_mut((row, ui(t)), (N, M)).copy_from(&b);
            if t == 0 {
                rhs.rows_mut(row, N).copy_from(&(-(&a * &self.x0)));
            } else {
                k.view_mut((row, xi(t)), (N, N)).copy_from(&a);
            }
        }
        (k, rhs)
    }

    /// Optimal trajectory from the dense system.
    pub fn kkt_trajectory(&self, p: &[f64]) -> Trajectory {
        let (k, rhs) = self.kkt(p);
        let z = k.lu().solve(&rhs).expect("nonsingular KKT system");
        self.unpack(&z)
    }

    /// `∂z/∂θ = K⁻¹(∂k/∂θ − (∂K/∂θ) z)`; the assembly is affine in `θ`, so
    /// unit central differences of it are exact.
    pub fn kkt_sensitivity(&self, p: &[f64]) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
        let (k, rhs) = self.kkt(p);
        let lu = k.lu();
        let z = lu.solve(&rhs).expect("nonsingular KKT system");
        let mut dz = DMatrix::zeros(z.len(), R);
        for i in 0..R {
            let mut hi = p.to_vec();
            let mut lo = p.to_vec();
            hi[i] += 1.0;
            lo[i] -= 1.0;
            let (kh, rh) = self.kkt(&hi);
            let (kl, rl) = self.kkt(&lo);
            let dk = (kh - kl) * 0.5;
            let dr = (rh - rl) * 0.5;
            let col = lu.solve(&(dr - dk * &z)).expect("nonsingular KKT system");
            dz.set_column(i, &col);
        }
        let t_h = self.horizon;
        let mut xs = vec![DMatrix::zeros(N, R)];
        xs.extend((1..=t_h).map(|t| dz.rows((t - 1) * N, N).into_owned()));
        let us = (0..t_h).map(|t| dz.rows(N * t_h + t * M, M).into_owned()).collect();
        (xs, us)
    }

    fn unpack(&self, z: &DVector<f64>) -> Trajectory {
        let t_h = self.horizon;
        let mut states = vec![self.x0.clone()];
        states.extend((1..=t_h).map(|t| z.rows((t - 1) * N, N).into_owned()));
        let controls = (0..t_h).map(|t| z.rows(N * t_h + t * M, M).into_owned()).collect();
        Trajectory::new(states, controls).unwrap()
    }
}
