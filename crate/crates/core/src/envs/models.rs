//! Continuous-time equations of motion `ẋ = f(x, u, θ_dyn)`.

use super::quat::{cross, inertia, kinematics, mat_vec, normalize, rotation, solve3};
use crate::diffkit::{FnDims, Scalar, VectorModel};

/// Vector field of a continuous-time system.
pub trait ContinuousModel: Send + Sync {
    fn shape(&self) -> FnDims;

    fn deriv<S: Scalar>(&self, x: &[S], u: &[S], p: &[S], out: &mut [S]);

    /// Maps a post-step state back onto the state manifold.
    fn project<S: Scalar>(&self, _x: &mut [S]) {}
}

/// Forward Euler step `x + Δ·f(x, u, θ)`, followed by the model's projection.
#[derive(Clone, Debug)]
pub struct Euler<C> {
    pub model: C,
    pub dt: f64,
}

impl<C: ContinuousModel> VectorModel for Euler<C> {
    fn shape(&self) -> FnDims {
        self.model.shape()
    }

    fn eval<S: Scalar>(&self, x: &[S], u: &[S], p: &[S], out: &mut [S]) {
        self.model.deriv(x, u, p, out);
        for (o, xi) in out.iter_mut().zip(x) {
            *o = *xi + *o * self.dt;
        }
        self.model.project(out);
    }
}

/// Damped pendulum, `x = (q, q̇)`, `θ_dyn = (mass, length, damping)`.
#[derive(Clone, Debug)]
pub struct Pendulum {
    pub gravity: f64,
}

impl ContinuousModel for Pendulum {
    fn shape(&self) -> FnDims {
        FnDims::new(2, 1, 3)
    }

    fn deriv<S: Scalar>(&self, x: &[S], u: &[S], p: &[S], out: &mut [S]) {
        let (mass, len, damp) = (p[0], p[1], p[2]);
        out[0] = x[1];
        out[1] = (u[0] - mass * len * x[0].sin() * self.gravity - damp * x[1]) / (mass * len * len);
    }
}

/// Cart-pole, `x = (cart position, pole angle, cart velocity, pole rate)`,
/// angle zero hanging down; `θ_dyn = (cart mass, pole mass, pole length)`.
#[derive(Clone, Debug)]
pub struct CartPole {
    pub gravity: f64,
}

impl ContinuousModel for CartPole {
    fn shape(&self) -> FnDims {
        FnDims::new(4, 1, 3)
    }

    fn deriv<S: Scalar>(&self, x: &[S], u: &[S], p: &[S], out: &mut [S]) {
        let (mc, mp, len) = (p[0], p[1], p[2]);
        let (q, dx, dq) = (x[1], x[2], x[3]);
        let (s, c) = (q.sin(), q.cos());
        let g = self.gravity;
        let denom = mc + mp * s * s;
        out[0] = dx;
        out[1] = dq;
        out[2] = (u[0] + mp * s * (len * dq * dq + c * g)) / denom;
        out[3] = (-(u[0] * c) - mp * len * dq * dq * c * s - (mc + mp) * s * g) / (len * denom);
    }
}

/// Planar two-link arm of uniform rods, `x = (q1, q2, q̇1, q̇2)`,
/// `θ_dyn = (l1, m1, l2, m2)`, joint torques as input.
#[derive(Clone, Debug)]
pub struct RobotArm2 {
    pub gravity: f64,
}

impl ContinuousModel for RobotArm2 {
    fn shape(&self) -> FnDims {
        FnDims::new(4, 2, 4)
    }

    fn deriv<S: Scalar>(&self, x: &[S], u: &[S], p: &[S], out: &mut [S]) {
        let (l1, m1, l2, m2) = (p[0], p[1], p[2], p[3]);
        let (q1, q2, dq1, dq2) = (x[0], x[1], x[2], x[3]);
        let (lc1, lc2) = (l1 * 0.5, l2 * 0.5);
        let i1 = m1 * l1 * l1 / 12.0;
        let i2 = m2 * l2 * l2 / 12.0;
        let c2 = q2.cos();
        let m11 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + l1 * lc2 * c2 * 2.0) + i1 + i2;
        let m12 = m2 * (lc2 * lc2 + l1 * lc2 * c2) + i2;
        let m22 = m2 * lc2 * lc2 + i2;
        let h = -(m2 * l1 * lc2 * q2.sin());
        let g = self.gravity;
        let phi2 = m2 * lc2 * (q1 + q2).cos() * g;
        let phi1 = (m1 * lc1 + m2 * l1) * q1.cos() * g + phi2;
        let b1 = u[0] - (h * dq2 * dq2 + h * dq1 * dq2 * 2.0) - phi1;
        let b2 = u[1] + h * dq1 * dq1 - phi2;
        let det = m11 * m22 - m12 * m12;
        out[0] = dq1;
        out[1] = dq2;
        out[2] = (m22 * b1 - m12 * b2) / det;
        out[3] = (m11 * b2 - m12 * b1) / det;
    }
}

/// Quadrotor on SE(3), `x = (p, v, q, ω)` (n = 13), `u` = four rotor thrusts;
/// `θ_dyn = (mass, wing length, Jxx, Jyy, Jzz, Jxy, Jxz, Jyz)`.
#[derive(Clone, Debug)]
pub struct Quadrotor {
    pub gravity: f64,
    /// Rotor drag-to-thrust constant of the yaw torque.
    pub torque_coeff: f64,
}

impl ContinuousModel for Quadrotor {
    fn shape(&self) -> FnDims {
        FnDims::new(13, 4, 8)
    }

    fn deriv<S: Scalar>(&self, x: &[S], u: &[S], p: &[S], out: &mut [S]) {
        let (mass, lw) = (p[0], p[1]);
        let q = &x[6..10];
        let w = [x[10], x[11], x[12]];
        let thrust = u[0] + u[1] + u[2] + u[3];
        let half = lw * 0.5;
        let c = self.torque_coeff;
        let torque = [
            (u[3] - u[1]) * half,
            (u[2] - u[0]) * half,
            (u[0] - u[1] + u[2] - u[3]) * c,
        ];
        let r = rotation(q);
        let f = mat_vec(&r, [S::zero(), S::zero(), thrust]);
        out[..3].copy_from_slice(&x[3..6]);
        out[3] = f[0] / mass;
        out[4] = f[1] / mass;
        out[5] = f[2] / mass - self.gravity;
        out[6..10].copy_from_slice(&kinematics(q, w));
        let j = inertia(&p[2..8]);
        let gyro = cross(w, mat_vec(&j, w));
        let dw = solve3(&j, [torque[0] - gyro[0], torque[1] - gyro[1], torque[2] - gyro[2]]);
        out[10..13].copy_from_slice(&dw);
    }

    fn project<S: Scalar>(&self, x: &mut [S]) {
        normalize(&mut x[6..10]);
    }
}

/// 6-DoF rocket in an Up-East-North frame, `x = (m, r, v, q, ω)` (n = 14),
/// `u` = body-frame thrust at the engine gimbal;
/// `θ_dyn = (m0, Jxx, Jyy, Jzz, Jxy, Jxz, Jyz, ℓ)`.
///
/// Mass depletion is neglected: the mass state is carried unchanged and
/// the translational dynamics use `m0`.
#[derive(Clone, Debug)]
pub struct Rocket {
    pub gravity: f64,
}

impl ContinuousModel for Rocket {
    fn shape(&self) -> FnDims {
        FnDims::new(14, 3, 8)
    }

    fn deriv<S: Scalar>(&self, x: &[S], u: &[S], p: &[S], out: &mut [S]) {
        let m0 = p[0];
        let len = p[7];
        let q = &x[7..11];
        let w = [x[11], x[12], x[13]];
        let thrust = [u[0], u[1], u[2]];
        out[0] = S::zero();
        out[1..4].copy_from_slice(&x[4..7]);
        let f = mat_vec(&rotation(q), thrust);
        out[4] = f[0] / m0 - self.gravity;
        out[5] = f[1] / m0;
        out[6] = f[2] / m0;
        out[7..11].copy_from_slice(&kinematics(q, w));
        let arm = [-(len * 0.5), S::zero(), S::zero()];
        let torque = cross(arm, thrust);
        let j = inertia(&p[1..7]);
        let gyro = cross(w, mat_vec(&j, w));
        let dw = solve3(&j, [torque[0] - gyro[0], torque[1] - gyro[1], torque[2] - gyro[2]]);
        out[11..14].copy_from_slice(&dw);
    }

    fn project<S: Scalar>(&self, x: &mut [S]) {
        normalize(&mut x[7..11]);
    }
}
