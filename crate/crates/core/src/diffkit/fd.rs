use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Central-difference settings for the verification oracle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdConfig {
    pub step: f64,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self { step: 1e-6 }
    }
}

impl FdConfig {
    /// Step suited to second differences in binary64.
    pub fn second_order() -> Self {
        Self { step: 1e-4 }
    }

    pub fn with_step(step: f64) -> Result<Self> {
        if step > 0.0 && step.is_finite() {
            Ok(Self { step })
        } else {
            Err(Error::InvalidArgument(alloc::format!(
                "fd step must be positive, got {step}"
            )))
        }
    }
}

fn finite(v: f64, coordinate: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::OracleFailure { coordinate })
    }
}

/// Central-difference gradient of a scalar function.
pub fn fd_gradient(mut f: impl FnMut(&[f64]) -> f64, z: &[f64], cfg: &FdConfig) -> Result<DVector<f64>> {
    let h = cfg.step;
    let mut zp: Vec<f64> = z.to_vec();
    let mut g = DVector::zeros(z.len());
    for i in 0..z.len() {
        zp[i] = z[i] + h;
        let fp = finite(f(&zp), i)?;
        zp[i] = z[i] - h;
        let fm = finite(f(&zp), i)?;
        zp[i] = z[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}

/// Central-difference Jacobian of a vector function; column `j` is `∂f/∂z_j`.
pub fn fd_jacobian(mut f: impl FnMut(&[f64]) -> DVector<f64>, z: &[f64], cfg: &FdConfig) -> Result<DMatrix<f64>> {
    let h = cfg.step;
    let mut zp: Vec<f64> = z.to_vec();
    let mut jac: Option<DMatrix<f64>> = None;
    for j in 0..z.len() {
        zp[j] = z[j] + h;
        let fp = f(&zp);
        zp[j] = z[j] - h;
        let fm = f(&zp);
        zp[j] = z[j];
        if fp.iter().chain(fm.iter()).any(|v| !v.is_finite()) {
            return Err(Error::OracleFailure { coordinate: j });
        }
        let jac = jac.get_or_insert_with(|| DMatrix::zeros(fp.len(), z.len()));
        jac.set_column(j, &((fp - fm) / (2.0 * h)));
    }
    Ok(jac.unwrap_or_else(|| DMatrix::zeros(0, 0)))
}

/// Central second differences of a scalar function.
pub fn fd_hessian(mut f: impl FnMut(&[f64]) -> f64, z: &[f64], cfg: &FdConfig) -> Result<DMatrix<f64>> {
    let h = cfg.step;
    let d = z.len();
    let mut zp: Vec<f64> = z.to_vec();
    let mut hess = DMatrix::zeros(d, d);
    let f0 = finite(f(z), 0)?;
    for i in 0..d {
        zp[i] = z[i] + h;
        let fp = finite(f(&zp), i)?;
        zp[i] = z[i] - h;
        let fm = finite(f(&zp), i)?;
        zp[i] = z[i];
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h * h);
        for j in 0..i {
            let mut corner = |si: f64, sj: f64| {
                zp[i] = z[i] + si * h;
                zp[j] = z[j] + sj * h;
                let v = f(&zp);
                zp[i] = z[i];
                zp[j] = z[j];
                finite(v, i)
            };
            let v = (corner(1.0, 1.0)? - corner(1.0, -1.0)? - corner(-1.0, 1.0)? + corner(-1.0, -1.0)?) / (4.0 * h * h);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    Ok(hess)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_derivative() {
        let g = fd_gradient(|z| z[0] * z[0], &[3.0], &FdConfig::default()).unwrap();
        assert!((g[0] - 6.0).abs() <= 1e-6);
    }

    #[test]
    fn constant_gradient_is_zero() {
        let g = fd_gradient(|_| 4.2, &[1.0, -2.0, 0.5], &FdConfig::default()).unwrap();
        assert_eq!(g, DVector::zeros(3));
    }

    #[test]
    fn non_finite_is_flagged() {
        let err = fd_gradient(
            |z| if z[1] > 0.0 { f64::NAN } else { 0.0 },
            &[0.0, 0.0],
            &FdConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::OracleFailure { coordinate: 1 }));
        let err = fd_jacobian(|z| DVector::from_element(2, 1.0 / z[0]), &[0.0], &FdConfig::default());
        assert!(err.is_ok());
        let err = fd_jacobian(
            |z| DVector::from_element(2, (z[0] - 1e-6).ln()),
            &[0.0],
            &FdConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::OracleFailure { coordinate: 0 }));
    }

    #[test]
    fn rejects_non_positive_step() {
        assert!(FdConfig::with_step(0.0).is_err());
        assert!(FdConfig::with_step(-1e-6).is_err());
        assert!(FdConfig::with_step(1e-3).is_ok());
    }

    #[test]
    fn hessian_of_quadratic() {
        let h = fd_hessian(
            |z| z[0] * z[0] * 1.5 + z[0] * z[1] - z[1] * z[1],
            &[0.3, 0.7],
            &FdConfig::second_order(),
        )
        .unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, -2.0]);
        assert!((h - expected).amax() < 1e-6);
    }
}
