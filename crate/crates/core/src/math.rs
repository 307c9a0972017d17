//! Small rigid-body helpers shared by kinematics, dynamics and the task layer.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn axis_rotation(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle).into_inner()
}

/// Z-Y-X Euler angles `(yaw, pitch, roll)` with `R = Rz(yaw) Ry(pitch) Rx(roll)`.
pub fn euler_zyx(r: &Matrix3<f64>) -> Vector3<f64> {
    let pitch = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
    let yaw = r[(1, 0)].atan2(r[(0, 0)]);
    let roll = r[(2, 1)].atan2(r[(2, 2)]);
    Vector3::new(yaw, pitch, roll)
}

pub fn rotation_from_euler_zyx(e: &Vector3<f64>) -> Matrix3<f64> {
    axis_rotation(&Vector3::z(), e[0])
        * axis_rotation(&Vector3::y(), e[1])
        * axis_rotation(&Vector3::x(), e[2])
}

/// Map from Z-Y-X Euler rates to world angular velocity, `ω = E(θ) θ̇`.
pub fn euler_zyx_rate_matrix(e: &Vector3<f64>) -> Matrix3<f64> {
    let (sy, cy) = e[0].sin_cos();
    let (sp, cp) = e[1].sin_cos();
    Matrix3::new(0.0, -sy, cy * cp, 0.0, cy, sy * cp, 1.0, 0.0, -sp)
}

/// `Ė(θ, θ̇) θ̇`, the velocity-product term in `ω̇ = E θ̈ + Ė θ̇`.
pub fn euler_zyx_rate_bias(e: &Vector3<f64>, rate: &Vector3<f64>) -> Vector3<f64> {
    let em = euler_zyx_rate_matrix(e);
    let z = Vector3::z();
    let col_pitch = em.column(1).into_owned();
    let col_roll = em.column(2).into_owned();
    let spin_yaw = z * rate[0];
    rate[1] * spin_yaw.cross(&col_pitch) + rate[2] * (spin_yaw + col_pitch * rate[1]).cross(&col_roll)
}

/// Wrap an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut w = a % two_pi;
    if w <= -std::f64::consts::PI {
        w += two_pi;
    } else if w > std::f64::consts::PI {
        w -= two_pi;
    }
    w
}

/// Rotation vector of `R_ref^T R`, i.e. the body-frame orientation error.
pub fn rotation_error(r_ref: &Matrix3<f64>, r: &Matrix3<f64>) -> Vector3<f64> {
    let m = r_ref.transpose() * r;
    let v = 0.5 * Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    let s = v.norm();
    let c = 0.5 * (m.trace() - 1.0);
    // atan2 stays accurate near the identity, where acos of the trace loses all digits.
    if s < 1e-12 {
        return v;
    }
    if c < -1.0 + 1e-9 {
        // Half-turn: fall back to the general decomposition.
        return Rotation3::from_matrix_unchecked(m).scaled_axis();
    }
    v * (s.atan2(c) / s)
}
