//! Projection of 3D Gaussians to screen space.
//!
//! The projection is linearized at the Gaussian center: with `t = W·μ + t_w`
//! the camera-space point and `J` the pinhole Jacobian at `t`, the screen
//! footprint is a 2D Gaussian with covariance `J·W·Σ·Wᵀ·Jᵀ` plus a small
//! isotropic dilation that keeps footprints at least a fraction of a pixel
//! wide.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector3};

use crate::camera::{CameraIntrinsics, CameraPose};
use crate::cloud::GaussianCloud;
use crate::gaussian::GaussianPrimitive;
use crate::math::{self, Quat};
use crate::render::sh;
use crate::render::RenderOptions;

/// The screen-space footprint of one Gaussian for one view.
#[derive(Debug, Clone)]
pub struct ProjectedGaussian {
    /// 2D mean in pixel coordinates (pixel `(i,j)` has center `(i+.5, j+.5)`).
    pub mean2d: [f64; 2],
    /// Symmetric 2×2 screen covariance `[a, b, c]` = `[xx, xy, yy]`, pixels².
    pub cov2d: [f64; 3],
    /// Inverse of `cov2d`, same layout.
    pub inv_cov2d: [f64; 3],
    /// Camera-space z of the center.
    pub depth: f64,
    /// Resolved view-dependent color, clamped to `[0, 1]`.
    pub color: [f64; 3],
    /// Learned opacity `sigmoid(opacity_logit)`.
    pub opacity: f64,
    /// Index of the source Gaussian in the cloud.
    pub source: usize,
}

/// Per-view constants shared by every projection.
pub struct ViewContext {
    pub rot_wc: Matrix3<f64>,
    pub trans_wc: Vector3<f64>,
    pub camera_center: Vector3<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl ViewContext {
    pub fn new(intrinsics: &CameraIntrinsics, pose: &CameraPose) -> Self {
        ViewContext {
            rot_wc: pose.rotation_matrix(),
            trans_wc: pose.translation,
            camera_center: pose.camera_center(),
            fx: intrinsics.fx,
            fy: intrinsics.fy,
            cx: intrinsics.cx,
            cy: intrinsics.cy,
            width: intrinsics.width as usize,
            height: intrinsics.height as usize,
        }
    }

    /// Pinhole Jacobian at a camera-space point.
    pub fn jacobian(&self, t: &Vector3<f64>) -> Matrix2x3<f64> {
        let inv_z = 1.0 / t.z;
        Matrix2x3::new(
            self.fx * inv_z,
            0.0,
            -self.fx * t.x * inv_z * inv_z,
            0.0,
            self.fy * inv_z,
            -self.fy * t.y * inv_z * inv_z,
        )
    }
}

/// Projects one Gaussian given by its raw fields. Returns `None` when the
/// Gaussian is culled (behind the near plane or outside the guard band).
#[allow(clippy::too_many_arguments)]
pub fn project_fields(
    position: &Vector3<f64>,
    rotation: &Quat,
    log_scales: &Vector3<f64>,
    opacity_logit: f64,
    sh_block: &[f64],
    sh_degree: usize,
    source: usize,
    ctx: &ViewContext,
    opts: &RenderOptions,
) -> Option<ProjectedGaussian> {
    let t = ctx.rot_wc * position + ctx.trans_wc;
    if t.z <= opts.near {
        return None;
    }
    let mean2d = [ctx.fx * t.x / t.z + ctx.cx, ctx.fy * t.y / t.z + ctx.cy];
    // Guard band: cull when the projected mean leaves the image by more than
    // (guard_band - 1) half-extents.
    let half_w = ctx.width as f64 * 0.5;
    let half_h = ctx.height as f64 * 0.5;
    let ndc_x = (mean2d[0] - half_w) / half_w;
    let ndc_y = (mean2d[1] - half_h) / half_h;
    if ndc_x.abs() > opts.guard_band || ndc_y.abs() > opts.guard_band {
        return None;
    }

    // Σ^π = J · W Σ Wᵀ · Jᵀ with Σ = (R S)(R S)ᵀ.
    let q = math::quat_normalize(rotation).ok()?;
    let rot = math::rotation_from_unit_quat(&q);
    let scales = log_scales.map(f64::exp);
    let m = ctx.rot_wc * rot * Matrix3::from_diagonal(&scales);
    let jac = ctx.jacobian(&t);
    let jm = jac * m;
    let cov: Matrix2<f64> = jm * jm.transpose();
    let a = cov[(0, 0)] + opts.dilation;
    let b = cov[(0, 1)];
    let c = cov[(1, 1)] + opts.dilation;
    let det = a * c - b * b;
    if !(det > 0.0) {
        return None;
    }
    let inv_det = 1.0 / det;
    let inv_cov2d = [c * inv_det, -b * inv_det, a * inv_det];

    let dir_raw = position - ctx.camera_center;
    let norm = dir_raw.norm();
    let dir = if norm > 1e-12 {
        [dir_raw.x / norm, dir_raw.y / norm, dir_raw.z / norm]
    } else {
        [0.0, 0.0, 1.0]
    };
    let resolved = sh::resolve_color(sh_degree, sh_block, &dir);
    let color = [
        resolved[0].min(1.0),
        resolved[1].min(1.0),
        resolved[2].min(1.0),
    ];

    Some(ProjectedGaussian {
        mean2d,
        cov2d: [a, b, c],
        inv_cov2d,
        depth: t.z,
        color,
        opacity: math::sigmoid(opacity_logit),
        source,
    })
}

/// Projects a standalone primitive.
pub fn project_gaussian(
    primitive: &GaussianPrimitive,
    intrinsics: &CameraIntrinsics,
    pose: &CameraPose,
    opts: &RenderOptions,
) -> Option<ProjectedGaussian> {
    let degree = match primitive.sh_coeffs.len() {
        3 => 0,
        12 => 1,
        27 => 2,
        48 => 3,
        _ => return None,
    };
    let ctx = ViewContext::new(intrinsics, pose);
    project_fields(
        &primitive.position,
        &primitive.rotation,
        &primitive.log_scales,
        primitive.opacity_logit,
        &primitive.sh_coeffs,
        degree,
        0,
        &ctx,
        opts,
    )
}

/// Projects every Gaussian of a cloud and returns the surviving footprints
/// sorted by ascending depth, ties broken by source index.
pub fn project_cloud(
    cloud: &GaussianCloud,
    ctx: &ViewContext,
    opts: &RenderOptions,
) -> Vec<ProjectedGaussian> {
    use rayon::prelude::*;
    let degree = cloud.sh_degree;
    let mut projected: Vec<ProjectedGaussian> = (0..cloud.len())
        .into_par_iter()
        .filter_map(|i| {
            project_fields(
                &cloud.positions[i],
                &cloud.rotations[i],
                &cloud.log_scales[i],
                cloud.opacity_logits[i],
                cloud.sh_block(i),
                degree,
                i,
                ctx,
                opts,
            )
        })
        .collect();
    projected.sort_by(|x, y| {
        x.depth
            .partial_cmp(&y.depth)
            .unwrap()
            .then(x.source.cmp(&y.source))
    });
    projected
}
