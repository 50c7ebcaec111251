//! Analytic derivatives against the finite-difference oracle.

use alloc::vec::Vec;

use nalgebra::DVector;

use super::fd::{fd_gradient, fd_hessian, fd_jacobian, FdConfig};
use super::{DiffScalarFn, DiffVectorFn, SecondOrder};
use crate::error::{check_dim, Result};
use crate::linalg::rel_err;

pub const FIRST_ORDER_TOL: f64 = 1e-5;
pub const SECOND_ORDER_TOL: f64 = 1e-4;

/// Worst relative errors `‖a − b‖∞ / max(1, ‖b‖∞)` seen so far.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FdReport {
    pub first_order: f64,
    pub second_order: f64,
    pub points: usize,
}

impl FdReport {
    pub fn passes(&self) -> bool {
        self.first_order <= FIRST_ORDER_TOL && self.second_order <= SECOND_ORDER_TOL
    }

    pub fn merge(self, other: FdReport) -> FdReport {
        FdReport {
            first_order: self.first_order.max(other.first_order),
            second_order: self.second_order.max(other.second_order),
            points: self.points + other.points,
        }
    }
}

fn stack(x: &[f64], u: &[f64], p: &[f64]) -> Vec<f64> {
    x.iter().chain(u).chain(p).copied().collect()
}

/// Full Jacobian of `f` and the second partials of `w · f`, both over `[x; u; θ]`.
pub fn fd_check_vector(f: &dyn DiffVectorFn, w: &[f64], x: &[f64], u: &[f64], p: &[f64]) -> Result<FdReport> {
    let d = f.dims();
    check_dim("x", d.n, x.len())?;
    check_dim("u", d.m, u.len())?;
    check_dim("theta", d.r, p.len())?;
    check_dim("weights", f.out_dim(), w.len())?;
    let z = stack(x, u, p);
    let jac = f.jacobians(x, u, p);
    let mut analytic = jac.fx.clone().resize_horizontally(d.total(), 0.0);
    analytic.columns_mut(d.n, d.m).copy_from(&jac.fu);
    analytic.columns_mut(d.n + d.m, d.r).copy_from(&jac.fp);
    let numeric = fd_jacobian(
        |z| {
            let (xs, us, ps) = d.split(z);
            f.value(xs, us, ps)
        },
        &z,
        &FdConfig::default(),
    )?;
    let hess = f.weighted_second_partials(w, x, u, p, SecondOrder::Full);
    let wv = DVector::from_column_slice(w);
    let numeric_h = fd_hessian(
        |z| {
            let (xs, us, ps) = d.split(z);
            f.value(xs, us, ps).dot(&wv)
        },
        &z,
        &FdConfig::second_order(),
    )?;
    Ok(FdReport {
        first_order: rel_err(analytic.as_slice(), numeric.as_slice()),
        second_order: rel_err(hess.as_slice(), numeric_h.as_slice()),
        points: 1,
    })
}

/// Gradient and full second partials of a scalar function over `[x; u; θ]`.
pub fn fd_check_scalar(c: &dyn DiffScalarFn, x: &[f64], u: &[f64], p: &[f64]) -> Result<FdReport> {
    let d = c.dims();
    check_dim("x", d.n, x.len())?;
    check_dim("u", d.m, u.len())?;
    check_dim("theta", d.r, p.len())?;
    let z = stack(x, u, p);
    let value = |z: &[f64]| {
        let (xs, us, ps) = d.split(z);
        c.eval_f64(xs, us, ps)
    };
    let g = c.gradient(x, u, p);
    let numeric = fd_gradient(value, &z, &FdConfig::default())?;
    let h = c.second_partials(x, u, p, SecondOrder::Full);
    let numeric_h = fd_hessian(value, &z, &FdConfig::second_order())?;
    Ok(FdReport {
        first_order: rel_err(g.as_slice(), numeric.as_slice()),
        second_order: rel_err(h.as_slice(), numeric_h.as_slice()),
        points: 1,
    })
}
