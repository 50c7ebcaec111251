//! Quaternion and small 3-vector helpers, scalar-first `(w, x, y, z)`.

use crate::diffkit::Scalar;
use crate::error::{Error, Result};

/// Direction cosine matrix of a unit quaternion (body to inertial).
pub fn rotation<S: Scalar>(q: &[S]) -> [[S; 3]; 3] {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let two = 2.0;
    [
        [
            S::one() - (y * y + z * z) * two,
            (x * y - w * z) * two,
            (x * z + w * y) * two,
        ],
        [
            (x * y + w * z) * two,
            S::one() - (x * x + z * z) * two,
            (y * z - w * x) * two,
        ],
        [
            (x * z - w * y) * two,
            (y * z + w * x) * two,
            S::one() - (x * x + y * y) * two,
        ],
    ]
}

pub fn mat_vec<S: Scalar>(r: &[[S; 3]; 3], v: [S; 3]) -> [S; 3] {
    [
        r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2],
        r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
        r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2],
    ]
}

pub fn cross<S: Scalar>(a: [S; 3], b: [S; 3]) -> [S; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// `½ Ω(ω) q`.
pub fn kinematics<S: Scalar>(q: &[S], w: [S; 3]) -> [S; 4] {
    let (qw, qx, qy, qz) = (q[0], q[1], q[2], q[3]);
    [
        (-(w[0] * qx) - w[1] * qy - w[2] * qz) * 0.5,
        (w[0] * qw + w[2] * qy - w[1] * qz) * 0.5,
        (w[1] * qw - w[2] * qx + w[0] * qz) * 0.5,
        (w[2] * qw + w[1] * qx - w[0] * qy) * 0.5,
    ]
}

pub fn normalize<S: Scalar>(q: &mut [S]) {
    let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    for v in q.iter_mut() {
        *v = *v / norm;
    }
}

/// Symmetric inertia matrix from `(Jxx, Jyy, Jzz, Jxy, Jxz, Jyz)`.
pub fn inertia<S: Scalar>(p: &[S]) -> [[S; 3]; 3] {
    [[p[0], p[3], p[4]], [p[3], p[1], p[5]], [p[4], p[5], p[2]]]
}

/// Solves `J a = b` for a 3×3 matrix by Cramer's rule.
pub fn solve3<S: Scalar>(j: &[[S; 3]; 3], b: [S; 3]) -> [S; 3] {
    let det3 = |m: &[[S; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let det = det3(j);
    let mut out = [S::zero(); 3];
    for (k, o) in out.iter_mut().enumerate() {
        let mut m = *j;
        for row in 0..3 {
            m[row][k] = b[row];
        }
        *o = det3(&m) / det;
    }
    out
}

/// `½ Tr(I − R(q_g)'R(q))` for any scalar type; no norm check.
pub fn attitude_error_of<S: Scalar>(q: &[S], q_goal: &[f64]) -> S {
    let r = rotation(q);
    let g = rotation(&[q_goal[0], q_goal[1], q_goal[2], q_goal[3]]);
    let mut tr = S::zero();
    for i in 0..3 {
        for k in 0..3 {
            tr += r[k][i] * g[k][i];
        }
    }
    (S::cst(3.0) - tr) * 0.5
}

/// Attitude error `½ Tr(I − R(q_g)'R(q))`, in `[0, 2]`.
///
/// Both quaternions must be unit-norm to within `1e-3`.
pub fn attitude_error(q: &[f64], q_goal: &[f64]) -> Result<f64> {
    for (name, v) in [("q", q), ("q_goal", q_goal)] {
        if v.len() != 4 {
            return Err(Error::Dimension {
                axis: "quaternion",
                expected: 4,
                found: v.len(),
            });
        }
        let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if !((norm - 1.0).abs() <= 1e-3) {
            return Err(Error::InvalidArgument(alloc::format!(
                "{name} is not a unit quaternion (norm {norm})"
            )));
        }
    }
    Ok(attitude_error_of(q, q_goal))
}
