//! The anisotropic 3D Gaussian primitive and the closed-form quantities the
//! densifier needs: covariance reconstruction, density evaluation, ellipsoid
//! volume, condition number, and the eigenvalue rule applied to volume-split
//! children.
//!
//! Covariance is parameterized as `Σ = R S² Rᵀ` with `R` the rotation of a
//! unit quaternion and `S = diag(exp(log_scales))`, so Σ stays positive
//! semi-definite under unconstrained optimization. Because `R` is orthogonal,
//! the eigenvalues of Σ are exactly `exp(log_scales)²`, which lets volume and
//! condition number be read off the stored scales without eigendecomposition.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};

use crate::math::{self, Quat};
use crate::{Error, Result};

/// One anisotropic 3D Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrimitive {
    /// Center μ in world units.
    pub position: Vector3<f64>,
    /// Unit quaternion, scalar-first `[w, x, y, z]`.
    pub rotation: Quat,
    /// Natural log of the per-axis standard deviations.
    pub log_scales: Vector3<f64>,
    /// Learned opacity is `sigmoid(opacity_logit)`.
    pub opacity_logit: f64,
    /// Spherical-harmonics coefficients, channel-major:
    /// `[r_0..r_{C-1}, g_0..g_{C-1}, b_0..b_{C-1}]` with `C = (degree+1)²`.
    pub sh_coeffs: Vec<f64>,
}

impl GaussianPrimitive {
    /// Number of SH coefficients per color channel for a given degree.
    pub fn sh_coeff_count(degree: usize) -> usize {
        (degree + 1) * (degree + 1)
    }

    pub fn opacity(&self) -> f64 {
        math::sigmoid(self.opacity_logit)
    }

    pub fn scales(&self) -> Vector3<f64> {
        self.log_scales.map(f64::exp)
    }
}

/// Symmetric 3×3 covariance, stored as the six independent entries
/// `[xx, xy, xz, yy, yz, zz]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Covariance3(pub [f64; 6]);

impl Covariance3 {
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        Covariance3([
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 2)],
        ])
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        let [xx, xy, xz, yy, yz, zz] = self.0;
        Matrix3::new(xx, xy, xz, xy, yy, yz, xz, yz, zz)
    }
}

/// Reconstructs `Σ = R S² Rᵀ` from the stored rotation and log-scales.
///
/// The quaternion must already be unit-norm to within 1e-6; it is
/// renormalized internally so the result is built from an exactly orthogonal
/// rotation.
pub fn covariance_from_rs(rotation: &Quat, log_scales: &Vector3<f64>) -> Result<Covariance3> {
    if !rotation.iter().all(|v| v.is_finite()) || !math::vec3_finite(log_scales) {
        return Err(Error::InvalidParameter(
            "non-finite rotation or log_scales".into(),
        ));
    }
    let norm = math::quat_norm(rotation);
    if (norm - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidParameter(format!(
            "quaternion norm {norm} is not within 1e-6 of 1"
        )));
    }
    let q = math::quat_normalize(rotation)?;
    let r = math::rotation_from_unit_quat(&q);
    let s = log_scales.map(f64::exp);
    if !math::vec3_finite(&s) {
        return Err(Error::InvalidParameter("log_scales overflow exp".into()));
    }
    // M = R S, Σ = M Mᵀ.
    let m = r * Matrix3::from_diagonal(&s);
    Ok(Covariance3::from_matrix(&(m * m.transpose())))
}

/// Evaluates the (unnormalized) Gaussian kernel
/// `exp(-½ (x-μ)ᵀ Σ⁻¹ (x-μ))` at a world point.
///
/// A covariance whose smallest eigenvalue is not above `1e-12 ×` the largest
/// is rejected as singular; the quadratic form itself is solved through a
/// Cholesky factorization.
pub fn gaussian_density(
    position: &Vector3<f64>,
    cov: &Covariance3,
    x: &Vector3<f64>,
) -> Result<f64> {
    if !math::vec3_finite(position) || !math::vec3_finite(x) || !cov.0.iter().all(|v| v.is_finite())
    {
        return Err(Error::InvalidParameter("non-finite density input".into()));
    }
    let m = cov.to_matrix();
    let eigenvalues = nalgebra::SymmetricEigen::new(m).eigenvalues;
    let lambda_max = eigenvalues.max();
    let lambda_min = eigenvalues.min();
    if !(lambda_min > 1e-12 * lambda_max) {
        return Err(Error::SingularMatrix(format!(
            "eigenvalue {lambda_min} below 1e-12 of maximum {lambda_max}"
        )));
    }
    let chol = nalgebra::Cholesky::new(m)
        .ok_or_else(|| Error::SingularMatrix("covariance is not positive definite".to_string()))?;
    let d = x - position;
    let q = d.dot(&chol.solve(&d));
    Ok((-0.5 * q).exp())
}

/// Volume of the ellipsoid of inertia, `(4/3)·π·√det(Σ) = (4/3)·π·s₁s₂s₃`.
pub fn ellipsoid_volume(log_scales: &Vector3<f64>) -> f64 {
    4.0 / 3.0 * PI * (log_scales.x + log_scales.y + log_scales.z).exp()
}

/// Condition number of Σ: ratio of its largest to smallest eigenvalue,
/// i.e. `(max sᵢ / min sᵢ)²`. Equals 1 for isotropic Gaussians.
pub fn condition_number(log_scales: &Vector3<f64>) -> f64 {
    let ratio = (log_scales.max() - log_scales.min()).exp();
    ratio * ratio
}

/// Eigenvalue rule for volume-split children: every eigenvalue is divided by
/// the parent's condition number, so the aspect ratio and orientation are
/// preserved while the volume shrinks by `κ^(3/2)`.
pub fn split_eigenvalues(eigenvalues: &[f64; 3], kappa: f64) -> Result<[f64; 3]> {
    if !(kappa >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "condition number {kappa} must be ≥ 1"
        )));
    }
    if !eigenvalues.iter().all(|&l| l > 0.0 && l.is_finite()) {
        return Err(Error::InvalidParameter(
            "eigenvalues must be positive and finite".into(),
        ));
    }
    Ok([
        eigenvalues[0] / kappa,
        eigenvalues[1] / kappa,
        eigenvalues[2] / kappa,
    ])
}

/// Log-scale form of [`split_eigenvalues`]: since eigenvalues are `sᵢ²`,
/// dividing them by κ subtracts `½·ln κ` from every log-scale.
pub fn split_child_log_scales(log_scales: &Vector3<f64>, kappa: f64) -> Vector3<f64> {
    let shift = 0.5 * kappa.ln();
    Vector3::new(
        log_scales.x - shift,
        log_scales.y - shift,
        log_scales.z - shift,
    )
}
