//! Small numeric helpers shared across the crate.

use nalgebra::{Matrix3, Vector3};

use crate::{Error, Result};

/// Quaternion stored scalar-first as `[w, x, y, z]`.
pub type Quat = [f64; 4];

/// Scalar-first identity quaternion.
pub const QUAT_IDENTITY: Quat = [1.0, 0.0, 0.0, 0.0];

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Inverse of [`sigmoid`]; `p` must lie strictly in (0, 1).
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn quat_norm(q: &Quat) -> f64 {
    (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt()
}

pub fn quat_normalize(q: &Quat) -> Result<Quat> {
    let n = quat_norm(q);
    if !n.is_finite() || n < 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "cannot normalize quaternion with norm {n}"
        )));
    }
    Ok([q[0] / n, q[1] / n, q[2] / n, q[3] / n])
}

/// Rotation matrix of a unit quaternion. The caller is responsible for
/// normalization; see [`quat_normalize`].
pub fn rotation_from_unit_quat(q: &Quat) -> Matrix3<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Partial derivatives of [`rotation_from_unit_quat`] with respect to the four
/// quaternion components, evaluated at a unit quaternion.
pub fn rotation_quat_jacobian(q: &Quat) -> [Matrix3<f64>; 4] {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let dw = Matrix3::new(0.0, -z, y, z, 0.0, -x, -y, x, 0.0) * 2.0;
    let dx = Matrix3::new(0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x) * 2.0;
    let dy = Matrix3::new(-2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y) * 2.0;
    let dz = Matrix3::new(-2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0) * 2.0;
    [dw, dx, dy, dz]
}

pub fn vec3_finite(v: &Vector3<f64>) -> bool {
    v.x.is_finite() && v.y.is_finite() && v.z.is_finite()
}
