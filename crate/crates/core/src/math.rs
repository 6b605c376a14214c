//! Small rotation helpers shared by kinematics and dynamics.
//!
//! Euler angles are `[roll, pitch, yaw]` composed as `Rz(yaw) * Ry(pitch) * Rx(roll)`.

use nalgebra::{Matrix3, Vector3};

pub fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn drot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

fn drot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

fn drot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

/// Body-to-world rotation for ZYX Euler angles.
pub fn euler_to_rotation(theta: &Vector3<f64>) -> Matrix3<f64> {
    rot_z(theta.z) * rot_y(theta.y) * rot_x(theta.x)
}

/// Partial derivatives of [`euler_to_rotation`] with respect to roll, pitch and yaw.
pub fn euler_rotation_partials(theta: &Vector3<f64>) -> [Matrix3<f64>; 3] {
    let (rx, ry, rz) = (rot_x(theta.x), rot_y(theta.y), rot_z(theta.z));
    [
        rz * ry * drot_x(theta.x),
        rz * drot_y(theta.y) * rx,
        drot_z(theta.z) * ry * rx,
    ]
}

/// Cross-product matrix: `skew(a) * b == a.cross(b)`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut w = a % two_pi;
    if w > std::f64::consts::PI {
        w -= two_pi;
    } else if w <= -std::f64::consts::PI {
        w += two_pi;
    }
    w
}
