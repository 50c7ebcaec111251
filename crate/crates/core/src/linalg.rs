//! Small dense helpers shared by the solvers and the auxiliary system.

use nalgebra::{DMatrix, DVector, LU};

/// `‖a − b‖∞ / max(1, ‖b‖∞)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "rel_err: length mismatch");
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let scale = b.iter().fold(1.0f64, |m, y| m.max(y.abs()));
    diff / scale
}

/// Entrywise relative error `|a − b| / max(floor, |b|)`, maximized.
pub fn max_entry_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len(), "max_entry_rel_err: length mismatch");
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs() / y.abs().max(floor)))
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// LU factorization together with a 1-norm condition estimate.
///
/// The estimate forms the inverse column by column, which is fine for the
/// small control dimensions used here.
pub fn lu_with_condition(m: &DMatrix<f64>) -> (LU<f64, nalgebra::Dyn, nalgebra::Dyn>, f64) {
    let lu = m.clone().lu();
    let n = m.nrows();
    let mut inv_norm = 0.0f64;
    let mut e = DVector::zeros(n);
    for j in 0..n {
        e.fill(0.0);
        e[j] = 1.0;
        match lu.solve(&e) {
            Some(col) => inv_norm = inv_norm.max(col.iter().map(|v| v.abs()).sum::<f64>()),
            None => return (lu, f64::INFINITY),
        }
    }
    let cond = one_norm(m) * inv_norm;
    (lu, if cond.is_finite() { cond } else { f64::INFINITY })
}
