//! Values, first and second derivatives of dynamics and cost functions.
//!
//! Functions are evaluated at a stacked point `z = [x; u; θ]`. Built-in
//! models implement [`VectorModel`] / [`ScalarModel`], which are generic over
//! [`Scalar`]; the blanket impls turn them into the object-safe
//! [`DiffVectorFn`] / [`DiffScalarFn`] and obtain exact derivatives by
//! evaluating the same code on [`HyperDual`] numbers. Hand-written
//! derivatives can be supplied by implementing the object-safe traits
//! directly and overriding the derivative methods.

mod check;
mod fd;
mod hyperdual;

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

pub use check::{fd_check_scalar, fd_check_vector, FdReport, FIRST_ORDER_TOL, SECOND_ORDER_TOL};
pub use fd::{fd_gradient, fd_hessian, fd_jacobian, FdConfig};
pub use hyperdual::{HyperDual, Scalar};

use crate::error::{check_dim, Result};

/// Input dimensions of a function of `(x, u, θ)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FnDims {
    pub n: usize,
    pub m: usize,
    pub r: usize,
}

impl FnDims {
    pub const fn new(n: usize, m: usize, r: usize) -> Self {
        Self { n, m, r }
    }

    /// Length of the stacked point `[x; u; θ]`.
    pub const fn total(&self) -> usize {
        self.n + self.m + self.r
    }

    /// Splits a stacked slice into its `x`, `u` and `θ` parts.
    pub fn split<'a, T>(&self, z: &'a [T]) -> (&'a [T], &'a [T], &'a [T]) {
        let (x, rest) = z.split_at(self.n);
        let (u, p) = rest.split_at(self.m);
        (x, u, p)
    }
}

/// Which second partials to compute.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SecondOrder {
    /// `xx`, `xu`, `uu` only.
    StateControl,
    /// Every pair with at least one of `x`, `u`: adds `xθ`, `uθ`.
    Mixed,
    /// All pairs including `θθ`.
    Full,
}

impl SecondOrder {
    fn includes(self, dims: FnDims, i: usize, j: usize) -> bool {
        let nu = dims.n + dims.m;
        match self {
            SecondOrder::StateControl => i < nu && j < nu,
            SecondOrder::Mixed => i < nu || j < nu,
            SecondOrder::Full => true,
        }
    }
}

/// Vector-valued model written once for every [`Scalar`].
pub trait VectorModel: Send + Sync {
    fn shape(&self) -> FnDims;

    fn output_len(&self) -> usize {
        self.shape().n
    }

    fn eval<S: Scalar>(&self, x: &[S], u: &[S], p: &[S], out: &mut [S]);
}

/// Scalar-valued model written once for every [`Scalar`].
pub trait ScalarModel: Send + Sync {
    fn shape(&self) -> FnDims;

    fn eval<S: Scalar>(&self, x: &[S], u: &[S], p: &[S]) -> S;
}

/// Jacobians of a vector function with respect to `x`, `u` and `θ`.
#[derive(Clone, Debug, PartialEq)]
pub struct Jacobians {
    pub fx: DMatrix<f64>,
    pub fu: DMatrix<f64>,
    pub fp: DMatrix<f64>,
}

/// Differentiable vector function `(x, u, θ) → ℝᵏ`.
pub trait DiffVectorFn: Send + Sync {
    fn dims(&self) -> FnDims;

    fn out_dim(&self) -> usize;

    fn eval_f64(&self, x: &[f64], u: &[f64], p: &[f64], out: &mut [f64]);

    fn eval_hyper(&self, x: &[HyperDual], u: &[HyperDual], p: &[HyperDual], out: &mut [HyperDual]);

    fn value(&self, x: &[f64], u: &[f64], p: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.out_dim());
        self.eval_f64(x, u, p, out.as_mut_slice());
        out
    }

    fn jacobians(&self, x: &[f64], u: &[f64], p: &[f64]) -> Jacobians {
        hyper_jacobians(self, x, u, p, true)
    }

    /// As [`jacobians`](Self::jacobians) but `fp` is left empty (`k×0`).
    fn state_control_jacobians(&self, x: &[f64], u: &[f64], p: &[f64]) -> Jacobians {
        hyper_jacobians(self, x, u, p, false)
    }

    /// Second partials over `[x; u; θ]` of the contraction `w · f`.
    fn weighted_second_partials(&self, w: &[f64], x: &[f64], u: &[f64], p: &[f64], order: SecondOrder) -> DMatrix<f64> {
        let dims = self.dims();
        let mut out = vec![HyperDual::default(); self.out_dim()];
        hyper_second_partials(dims, x, u, p, order, |z| {
            let (xs, us, ps) = dims.split(z);
            self.eval_hyper(xs, us, ps, &mut out);
            out.iter().zip(w).fold(0.0, |acc, (o, wi)| acc + o.e12 * wi)
        })
    }
}

/// Differentiable scalar function `(x, u, θ) → ℝ`.
pub trait DiffScalarFn: Send + Sync {
    fn dims(&self) -> FnDims;

    fn eval_f64(&self, x: &[f64], u: &[f64], p: &[f64]) -> f64;

    fn eval_hyper(&self, x: &[HyperDual], u: &[HyperDual], p: &[HyperDual]) -> HyperDual;

    /// Gradient stacked as `[∂/∂x; ∂/∂u; ∂/∂θ]`.
    fn gradient(&self, x: &[f64], u: &[f64], p: &[f64]) -> DVector<f64> {
        let dims = self.dims();
        let mut z = seed_point(x, u, p);
        let mut g = DVector::zeros(dims.total());
        for k in 0..dims.total() {
            z[k].e1 = 1.0;
            let (xs, us, ps) = dims.split(&z);
            g[k] = self.eval_hyper(xs, us, ps).e1;
            z[k].e1 = 0.0;
        }
        g
    }

    /// Symmetric matrix of second partials over `[x; u; θ]`; entries outside
    /// `order` are left at zero.
    fn second_partials(&self, x: &[f64], u: &[f64], p: &[f64], order: SecondOrder) -> DMatrix<f64> {
        let dims = self.dims();
        hyper_second_partials(dims, x, u, p, order, |z| {
            let (xs, us, ps) = dims.split(z);
            self.eval_hyper(xs, us, ps).e12
        })
    }
}

impl<M: VectorModel> DiffVectorFn for M {
    fn dims(&self) -> FnDims {
        self.shape()
    }

    fn out_dim(&self) -> usize {
        self.output_len()
    }

    fn eval_f64(&self, x: &[f64], u: &[f64], p: &[f64], out: &mut [f64]) {
        self.eval(x, u, p, out)
    }

    fn eval_hyper(&self, x: &[HyperDual], u: &[HyperDual], p: &[HyperDual], out: &mut [HyperDual]) {
        self.eval(x, u, p, out)
    }
}

impl<M: ScalarModel> DiffScalarFn for M {
    fn dims(&self) -> FnDims {
        self.shape()
    }

    fn eval_f64(&self, x: &[f64], u: &[f64], p: &[f64]) -> f64 {
        self.eval(x, u, p)
    }

    fn eval_hyper(&self, x: &[HyperDual], u: &[HyperDual], p: &[HyperDual]) -> HyperDual {
        self.eval(x, u, p)
    }
}

fn seed_point(x: &[f64], u: &[f64], p: &[f64]) -> Vec<HyperDual> {
    x.iter().chain(u).chain(p).map(|&v| HyperDual::constant(v)).collect()
}

fn hyper_jacobians<F: DiffVectorFn + ?Sized>(f: &F, x: &[f64], u: &[f64], p: &[f64], with_params: bool) -> Jacobians {
    let dims = f.dims();
    let k = f.out_dim();
    let cols = if with_params { dims.total() } else { dims.n + dims.m };
    let mut z = seed_point(x, u, p);
    let mut out = vec![HyperDual::default(); k];
    let mut full = DMatrix::zeros(k, cols);
    for col in 0..cols {
        z[col].e1 = 1.0;
        let (xs, us, ps) = dims.split(&z);
        f.eval_hyper(xs, us, ps, &mut out);
        for (row, o) in out.iter().enumerate() {
            full[(row, col)] = o.e1;
        }
        z[col].e1 = 0.0;
    }
    Jacobians {
        fx: full.columns(0, dims.n).into_owned(),
        fu: full.columns(dims.n, dims.m).into_owned(),
        fp: full.columns(dims.n + dims.m, cols - dims.n - dims.m).into_owned(),
    }
}

fn hyper_second_partials(
    dims: FnDims,
    x: &[f64],
    u: &[f64],
    p: &[f64],
    order: SecondOrder,
    mut eval_e12: impl FnMut(&[HyperDual]) -> f64,
) -> DMatrix<f64> {
    let d = dims.total();
    let mut z = seed_point(x, u, p);
    let mut hess = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            if !order.includes(dims, i, j) {
                continue;
            }
            z[i].e1 = 1.0;
            z[j].e2 = 1.0;
            let v = eval_e12(&z);
            z[i].e1 = 0.0;
            z[j].e2 = 0.0;
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    hess
}

fn check_point(dims: FnDims, x: &[f64], u: &[f64], p: &[f64]) -> Result<()> {
    check_dim("x", dims.n, x.len())?;
    check_dim("u", dims.m, u.len())?;
    check_dim("theta", dims.r, p.len())
}

/// `F = ∂f/∂x`, `G = ∂f/∂u`, `E = ∂f/∂θ` at `(x, u, θ)`.
pub fn jacobians(f: &dyn DiffVectorFn, x: &[f64], u: &[f64], p: &[f64]) -> Result<Jacobians> {
    check_point(f.dims(), x, u, p)?;
    Ok(f.jacobians(x, u, p))
}

/// Second-derivative blocks of the Hamiltonian `H = c + f'λ`.
#[derive(Clone, Debug, PartialEq)]
pub struct HamiltonianBlocks {
    pub hxx: DMatrix<f64>,
    pub hxu: DMatrix<f64>,
    pub hux: DMatrix<f64>,
    pub huu: DMatrix<f64>,
    pub hxe: DMatrix<f64>,
    pub hue: DMatrix<f64>,
}

/// Second-derivative blocks of `H = c(x, u, θ) + f(x, u, θ)'λ_next`.
///
/// `hux` is the exact transpose of `hxu`.
pub fn hamiltonian_blocks(
    c: &dyn DiffScalarFn,
    f: &dyn DiffVectorFn,
    lambda_next: &[f64],
    x: &[f64],
    u: &[f64],
    p: &[f64],
) -> Result<HamiltonianBlocks> {
    let dims = f.dims();
    check_point(dims, x, u, p)?;
    check_dim("stage cost dims", dims.total(), c.dims().total())?;
    check_dim("lambda", f.out_dim(), lambda_next.len())?;
    let mut h = c.second_partials(x, u, p, SecondOrder::Mixed);
    h += f.weighted_second_partials(lambda_next, x, u, p, SecondOrder::Mixed);
    Ok(split_blocks(&h, dims))
}

pub(crate) fn split_blocks(h: &DMatrix<f64>, dims: FnDims) -> HamiltonianBlocks {
    let (n, m, r) = (dims.n, dims.m, dims.r);
    let hxu = h.view((0, n), (n, m)).into_owned();
    HamiltonianBlocks {
        hxx: h.view((0, 0), (n, n)).into_owned(),
        hux: hxu.transpose(),
        hxu,
        huu: h.view((n, n), (m, m)).into_owned(),
        hxe: h.view((0, n + m), (n, r)).into_owned(),
        hue: h.view((n, n + m), (m, r)).into_owned(),
    }
}

/// Adapter exposing a function of a sub-range of a larger parameter vector.
///
/// The wrapped function sees `θ[offset..offset + inner.r]`; the adapter
/// reports `r = total_r`, so derivatives with respect to the other entries
/// are zero.
pub struct ParamSlice<F: ?Sized> {
    offset: usize,
    total_r: usize,
    inner: F,
}

impl<F> ParamSlice<F> {
    pub fn new(inner: F, offset: usize, total_r: usize) -> Self {
        Self { offset, total_r, inner }
    }
}

impl<F: core::ops::Deref<Target = dyn DiffVectorFn> + Send + Sync> DiffVectorFn for ParamSlice<F> {
    fn dims(&self) -> FnDims {
        FnDims {
            r: self.total_r,
            ..self.inner.dims()
        }
    }

    fn out_dim(&self) -> usize {
        self.inner.out_dim()
    }

    fn eval_f64(&self, x: &[f64], u: &[f64], p: &[f64], out: &mut [f64]) {
        let r = self.inner.dims().r;
        self.inner.eval_f64(x, u, &p[self.offset..self.offset + r], out)
    }

    fn eval_hyper(&self, x: &[HyperDual], u: &[HyperDual], p: &[HyperDual], out: &mut [HyperDual]) {
        let r = self.inner.dims().r;
        self.inner.eval_hyper(x, u, &p[self.offset..self.offset + r], out)
    }
}

/// Scalar counterpart of [`ParamSlice`].
pub struct ScalarParamSlice<F: ?Sized> {
    offset: usize,
    total_r: usize,
    inner: F,
}

impl<F> ScalarParamSlice<F> {
    pub fn new(inner: F, offset: usize, total_r: usize) -> Self {
        Self { offset, total_r, inner }
    }
}

impl<F: core::ops::Deref<Target = dyn DiffScalarFn> + Send + Sync> DiffScalarFn for ScalarParamSlice<F> {
    fn dims(&self) -> FnDims {
        FnDims {
            r: self.total_r,
            ..self.inner.dims()
        }
    }

    fn eval_f64(&self, x: &[f64], u: &[f64], p: &[f64]) -> f64 {
        let r = self.inner.dims().r;
        self.inner.eval_f64(x, u, &p[self.offset..self.offset + r])
    }

    fn eval_hyper(&self, x: &[HyperDual], u: &[HyperDual], p: &[HyperDual]) -> HyperDual {
        let r = self.inner.dims().r;
        self.inner.eval_hyper(x, u, &p[self.offset..self.offset + r])
    }
}

/// Vector function with its parameter vector frozen to a fixed value.
///
/// The result has `r = 0`.
pub struct FixedParams<F> {
    inner: F,
    params: Vec<f64>,
    hyper: Vec<HyperDual>,
}

impl<F: core::ops::Deref<Target = dyn DiffVectorFn>> FixedParams<F> {
    pub fn new(inner: F, params: &[f64]) -> Result<Self> {
        check_dim("theta", inner.dims().r, params.len())?;
        Ok(Self {
            hyper: params.iter().map(|&v| HyperDual::constant(v)).collect(),
            params: params.to_vec(),
            inner,
        })
    }
}

impl<F: core::ops::Deref<Target = dyn DiffVectorFn> + Send + Sync> DiffVectorFn for FixedParams<F> {
    fn dims(&self) -> FnDims {
        FnDims {
            r: 0,
            ..self.inner.dims()
        }
    }

    fn out_dim(&self) -> usize {
        self.inner.out_dim()
    }

    fn eval_f64(&self, x: &[f64], u: &[f64], _p: &[f64], out: &mut [f64]) {
        self.inner.eval_f64(x, u, &self.params, out)
    }

    fn eval_hyper(&self, x: &[HyperDual], u: &[HyperDual], _p: &[HyperDual], out: &mut [HyperDual]) {
        self.inner.eval_hyper(x, u, &self.hyper, out)
    }
}

/// Scalar counterpart of [`FixedParams`].
pub struct FixedScalarParams<F> {
    inner: F,
    params: Vec<f64>,
    hyper: Vec<HyperDual>,
}

impl<F: core::ops::Deref<Target = dyn DiffScalarFn>> FixedScalarParams<F> {
    pub fn new(inner: F, params: &[f64]) -> Result<Self> {
        check_dim("theta", inner.dims().r, params.len())?;
        Ok(Self {
            hyper: params.iter().map(|&v| HyperDual::constant(v)).collect(),
            params: params.to_vec(),
            inner,
        })
    }
}

impl<F: core::ops::Deref<Target = dyn DiffScalarFn> + Send + Sync> DiffScalarFn for FixedScalarParams<F> {
    fn dims(&self) -> FnDims {
        FnDims {
            r: 0,
            ..self.inner.dims()
        }
    }

    fn eval_f64(&self, x: &[f64], u: &[f64], _p: &[f64]) -> f64 {
        self.inner.eval_f64(x, u, &self.params)
    }

    fn eval_hyper(&self, x: &[HyperDual], u: &[HyperDual], _p: &[HyperDual]) -> HyperDual {
        self.inner.eval_hyper(x, u, &self.hyper)
    }
}
