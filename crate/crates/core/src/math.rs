//! Small 3D helpers on top of nalgebra.

use nalgebra::{Matrix3, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

pub fn vec3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

pub fn arr3(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

/// Rotation by `angle` about the unit vector `axis` (Rodrigues).
pub fn axis_angle(axis: &Vec3, angle: f64) -> Mat3 {
    let (s, c) = libm::sincos(angle);
    let k = axis.cross_matrix();
    Mat3::identity() + k * s + k * k * (1.0 - c)
}

fn rot_x(a: f64) -> (Mat3, Mat3) {
    let (s, c) = libm::sincos(a);
    (
        Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c),
        Mat3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s),
    )
}

fn rot_y(a: f64) -> (Mat3, Mat3) {
    let (s, c) = libm::sincos(a);
    (
        Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c),
        Mat3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s),
    )
}

fn rot_z(a: f64) -> (Mat3, Mat3) {
    let (s, c) = libm::sincos(a);
    (
        Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
        Mat3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0),
    )
}

/// Intrinsic Z-Y-X Euler rotation `Rz(z) * Ry(y) * Rx(x)`.
pub fn euler_zyx(z: f64, y: f64, x: f64) -> Mat3 {
    rot_z(z).0 * rot_y(y).0 * rot_x(x).0
}

/// Partial derivatives of [`euler_zyx`] with respect to `(z, y, x)`.
pub fn euler_zyx_partials(z: f64, y: f64, x: f64) -> [Mat3; 3] {
    let (rz, dz) = rot_z(z);
    let (ry, dy) = rot_y(y);
    let (rx, dx) = rot_x(x);
    [dz * ry * rx, rz * dy * rx, rz * ry * dx]
}

pub(crate) fn sq(x: f64) -> f64 {
    x * x
}

pub(crate) fn is_finite_slice(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}
