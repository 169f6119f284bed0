//! Analytic gradients of the training loss with respect to every Gaussian
//! parameter, obtained by reversing the render pass.
//!
//! The backward walk re-composites each pixel front-to-back (recording the
//! accepted contributions), then replays them back-to-front maintaining the
//! suffix color sum, which yields `∂L/∂α_i` in closed form. Per-Gaussian
//! screen-space gradients are then pulled back through the projection: the
//! Mahalanobis form, the screen covariance (including the Jacobian's own
//! dependence on the camera-space mean), the covariance factorization, the
//! quaternion normalization, and the spherical-harmonics view direction.
//!
//! Contributions skipped in the forward pass (outside the 3σ footprint,
//! below the alpha cutoff, or after transmittance termination) receive zero
//! gradient; the alpha clamp likewise propagates a zero subgradient.

pub mod fd;
pub mod loss;

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

pub use loss::{loss, LossConfig};

use crate::camera::{CameraIntrinsics, CameraPose, TrainingView};
use crate::cloud::GaussianCloud;
use crate::image::ImageRgb;
use crate::math;
use crate::render::{
    bin_tiles, composite_pixel, project::ViewContext, tile_rect, Contribution, FrameBuffer,
    ProjectedGaussian, RenderOptions,
};
use crate::Result;

/// Per-parameter gradients for one backward pass, plus the view-space
/// positional signal densification accumulates.
#[derive(Debug, Clone)]
pub struct ParamGradients {
    pub positions: Vec<Vector3<f64>>,
    pub rotations: Vec<[f64; 4]>,
    pub log_scales: Vec<Vector3<f64>>,
    pub opacity_logits: Vec<f64>,
    pub sh_coeffs: Vec<f64>,
    /// Norm of this view's gradient of the 2D mean, in half-extent units
    /// (the scale the usual densification threshold is tuned for).
    pub adc_signal: Vec<f64>,
    /// Whether the Gaussian was projected in this view.
    pub touched: Vec<bool>,
}

impl ParamGradients {
    fn zeros(n: usize, sh_stride: usize) -> Self {
        ParamGradients {
            positions: vec![Vector3::zeros(); n],
            rotations: vec![[0.0; 4]; n],
            log_scales: vec![Vector3::zeros(); n],
            opacity_logits: vec![0.0; n],
            sh_coeffs: vec![0.0; n * sh_stride],
            adc_signal: vec![0.0; n],
            touched: vec![false; n],
        }
    }

    pub fn all_finite(&self) -> bool {
        self.positions.iter().all(math::vec3_finite)
            && self.log_scales.iter().all(math::vec3_finite)
            && self.rotations.iter().flatten().all(|v| v.is_finite())
            && self.opacity_logits.iter().all(|v| v.is_finite())
            && self.sh_coeffs.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug)]
pub struct BackwardOutput {
    pub loss: f64,
    pub frame: FrameBuffer,
    pub gradients: ParamGradients,
}

/// Screen-space gradient accumulators for one projected Gaussian.
#[derive(Debug, Clone, Copy, Default)]
struct ScreenGrads {
    mean2d: [f64; 2],
    /// d loss / d cov2d entries `[a, b, c]`.
    cov: [f64; 3],
    color: [f64; 3],
    opacity: f64,
}

impl ScreenGrads {
    fn add(&mut self, o: &ScreenGrads) {
        self.mean2d[0] += o.mean2d[0];
        self.mean2d[1] += o.mean2d[1];
        for k in 0..3 {
            self.cov[k] += o.cov[k];
            self.color[k] += o.color[k];
        }
        self.opacity += o.opacity;
    }
}

/// Forward render, loss, and analytic backward for one view.
pub fn backward(
    cloud: &GaussianCloud,
    view: &TrainingView,
    loss_cfg: &LossConfig,
    opts: &RenderOptions,
) -> Result<BackwardOutput> {
    backward_against(
        cloud,
        &view.intrinsics,
        &view.pose,
        &view.image,
        loss_cfg,
        opts,
    )
}

pub fn backward_against(
    cloud: &GaussianCloud,
    intrinsics: &CameraIntrinsics,
    pose: &CameraPose,
    target: &ImageRgb,
    loss_cfg: &LossConfig,
    opts: &RenderOptions,
) -> Result<BackwardOutput> {
    let ctx = ViewContext::new(intrinsics, pose);
    let projected = crate::render::project_cloud(cloud, &ctx, opts);
    let (width, height) = (ctx.width, ctx.height);
    let grid = bin_tiles(&projected, width, height, opts);
    let ts = opts.tile_size;

    let frame = crate::render::render_binned(&projected, &grid, width, height, opts);

    let rendered = ImageRgb {
        width,
        height,
        data: frame.rgb.clone(),
    };
    let (loss_value, pixel_grad) = loss::loss_with_grad(&rendered, target, loss_cfg)?;

    // Backward over tiles: per-tile accumulators aligned with the bin list.
    let tile_accums: Vec<Vec<ScreenGrads>> = (0..grid.bins.len())
        .into_par_iter()
        .map(|tile| {
            let (x0, y0, x1, y1) = tile_rect(tile, grid.tiles_x, ts, width, height);
            let bin = &grid.bins[tile];
            let mut accums = vec![ScreenGrads::default(); bin.len()];
            let mut contribs: Vec<Contribution> = Vec::with_capacity(64);
            for y in y0..y1 {
                for x in x0..x1 {
                    let o = (y * width + x) * 3;
                    let g_pix = [pixel_grad[o], pixel_grad[o + 1], pixel_grad[o + 2]];
                    if g_pix == [0.0; 3] {
                        continue;
                    }
                    contribs.clear();
                    let (_, t_final) = composite_pixel(
                        x as f64 + 0.5,
                        y as f64 + 0.5,
                        bin.iter()
                            .enumerate()
                            .map(|(pos, &k)| (pos, &projected[k as usize])),
                        opts,
                        |c| contribs.push(*c),
                    );
                    backward_pixel(
                        &g_pix,
                        t_final,
                        &contribs,
                        bin,
                        &projected,
                        opts,
                        &mut accums,
                    );
                }
            }
            accums
        })
        .collect();

    // Deterministic merge in tile order.
    let mut merged = vec![ScreenGrads::default(); projected.len()];
    for (tile, accums) in tile_accums.iter().enumerate() {
        for (pos, acc) in accums.iter().enumerate() {
            merged[grid.bins[tile][pos] as usize].add(acc);
        }
    }

    // Pull screen-space gradients back to the parameters.
    let sh_stride = cloud.sh_stride();
    let per_source: Vec<(usize, SourceGrads)> = (0..projected.len())
        .into_par_iter()
        .map(|k| {
            (
                projected[k].source,
                projection_backward(cloud, &projected[k], &merged[k], &ctx),
            )
        })
        .collect();

    let mut grads = ParamGradients::zeros(cloud.len(), sh_stride);
    for g in &projected {
        grads.touched[g.source] = true;
    }
    let half_w = width as f64 * 0.5;
    let half_h = height as f64 * 0.5;
    for (source, sg) in per_source {
        grads.positions[source] += sg.position;
        for c in 0..4 {
            grads.rotations[source][c] += sg.rotation[c];
        }
        grads.log_scales[source] += sg.log_scales;
        grads.opacity_logits[source] += sg.opacity_logit;
        for (k, v) in sg.sh.iter().enumerate() {
            grads.sh_coeffs[source * sh_stride + k] += v;
        }
        grads.adc_signal[source] = (sg.mean2d_grad[0] * half_w).hypot(sg.mean2d_grad[1] * half_h);
    }

    Ok(BackwardOutput {
        loss: loss_value,
        frame,
        gradients: grads,
    })
}

/// Distributes one pixel's loss gradient over its recorded contributions.
fn backward_pixel(
    g_pix: &[f64; 3],
    t_final: f64,
    contribs: &[Contribution],
    bin: &[u32],
    projected: &[ProjectedGaussian],
    opts: &RenderOptions,
    accums: &mut [ScreenGrads],
) {
    // Suffix color sum: everything composited after the current item,
    // including the background term.
    let mut suffix = [
        t_final * opts.background[0],
        t_final * opts.background[1],
        t_final * opts.background[2],
    ];
    for c in contribs.iter().rev() {
        let g = &projected[bin[c.list_index] as usize];
        let acc = &mut accums[c.list_index];
        let w = c.t_before * c.alpha;

        // Color gradient; the [0,1] clamp gates per channel.
        let mut d_alpha = 0.0;
        for ch in 0..3 {
            if g.color[ch] > 0.0 && g.color[ch] < 1.0 {
                acc.color[ch] += g_pix[ch] * w;
            }
            d_alpha += g_pix[ch] * (g.color[ch] * c.t_before - suffix[ch] / (1.0 - c.alpha));
            suffix[ch] += w * g.color[ch];
        }

        // The alpha clamp contributes a zero subgradient.
        if c.alpha_clamped {
            continue;
        }
        // alpha = opacity · exp(-q/2)
        acc.opacity += d_alpha * c.falloff;
        let d_q = d_alpha * g.opacity * (-0.5 * c.falloff);
        // u = Σ⁻¹ d; dq/d(mean) = -2u, dq/dΣ = -u uᵀ.
        let ux = g.inv_cov2d[0] * c.d[0] + g.inv_cov2d[1] * c.d[1];
        let uy = g.inv_cov2d[1] * c.d[0] + g.inv_cov2d[2] * c.d[1];
        acc.mean2d[0] += d_q * -2.0 * ux;
        acc.mean2d[1] += d_q * -2.0 * uy;
        acc.cov[0] += d_q * -(ux * ux);
        acc.cov[1] += d_q * -2.0 * ux * uy;
        acc.cov[2] += d_q * -(uy * uy);
    }
}

/// Parameter-space gradients of one Gaussian.
struct SourceGrads {
    position: Vector3<f64>,
    rotation: [f64; 4],
    log_scales: Vector3<f64>,
    opacity_logit: f64,
    sh: Vec<f64>,
    mean2d_grad: [f64; 2],
}

/// Pulls accumulated screen-space gradients back through the projection to
/// the source parameters.
fn projection_backward(
    cloud: &GaussianCloud,
    proj: &ProjectedGaussian,
    acc: &ScreenGrads,
    ctx: &ViewContext,
) -> SourceGrads {
    let i = proj.source;
    let degree = cloud.sh_degree;
    let n_coeffs = cloud.sh_coeff_count();
    let sh_block = cloud.sh_block(i);

    // Recompute forward intermediates.
    let q_hat = math::quat_normalize(&cloud.rotations[i]).expect("projected quaternion is valid");
    let rot = math::rotation_from_unit_quat(&q_hat);
    let scales = cloud.log_scales[i].map(f64::exp);
    let t = ctx.rot_wc * cloud.positions[i] + ctx.trans_wc;
    let jac = ctx.jacobian(&t);
    let factor_cam = ctx.rot_wc * rot * Matrix3::from_diagonal(&scales);
    let cov_cam = factor_cam * factor_cam.transpose();

    // Opacity.
    let sigma = proj.opacity;
    let opacity_logit = acc.opacity * sigma * (1.0 - sigma);

    // Color -> SH coefficients and view direction.
    let mut sh = vec![0.0; 3 * n_coeffs];
    let v = cloud.positions[i] - ctx.camera_center;
    let v_norm = v.norm();
    let mut position = Vector3::zeros();
    if v_norm > 1e-12 {
        let dir = [v.x / v_norm, v.y / v_norm, v.z / v_norm];
        let mut basis = [0.0f64; 16];
        let mut basis_grad = [[0.0f64; 3]; 16];
        crate::render::sh::eval_basis(degree, &dir, &mut basis);
        crate::render::sh::eval_basis_grad(degree, &dir, &mut basis_grad);
        let mut d_dir = Vector3::zeros();
        for ch in 0..3 {
            // Gate on the resolved color's [0,1] clamp.
            if !(proj.color[ch] > 0.0 && proj.color[ch] < 1.0) {
                continue;
            }
            let gc = acc.color[ch];
            for k in 0..n_coeffs {
                sh[ch * n_coeffs + k] = gc * basis[k];
                let coeff = sh_block[ch * n_coeffs + k];
                d_dir.x += gc * coeff * basis_grad[k][0];
                d_dir.y += gc * coeff * basis_grad[k][1];
                d_dir.z += gc * coeff * basis_grad[k][2];
            }
        }
        // Through the direction normalization: d(v/|v|)/dv = (I - d dᵀ)/|v|.
        let dir_v = Vector3::new(dir[0], dir[1], dir[2]);
        position += (d_dir - dir_v * dir_v.dot(&d_dir)) / v_norm;
    }

    // Screen covariance: P = J V Jᵀ (+ constant dilation).
    let g_p = Matrix2::new(acc.cov[0], acc.cov[1] * 0.5, acc.cov[1] * 0.5, acc.cov[2]);
    let d_v = jac.transpose() * g_p * jac;
    let d_jac = 2.0 * g_p * jac * cov_cam;
    // V = B Bᵀ with B = W R S.
    let d_factor = 2.0 * d_v * factor_cam;
    let n_mat = ctx.rot_wc.transpose() * d_factor;
    let mut log_scales = Vector3::zeros();
    for k in 0..3 {
        let ds = rot.column(k).dot(&n_mat.column(k));
        log_scales[k] = ds * scales[k];
    }
    let d_rot = n_mat * Matrix3::from_diagonal(&scales);
    let jac_q = math::rotation_quat_jacobian(&q_hat);
    let mut d_qhat = [0.0f64; 4];
    for c in 0..4 {
        d_qhat[c] = d_rot.component_mul(&jac_q[c]).sum();
    }
    // Through quaternion normalization at unit norm: (I - q qᵀ)·d.
    let dot = (0..4).map(|c| q_hat[c] * d_qhat[c]).sum::<f64>();
    let mut rotation = [0.0f64; 4];
    for c in 0..4 {
        rotation[c] = d_qhat[c] - q_hat[c] * dot;
    }

    // Camera-space mean: through the 2D mean and through the Jacobian's own
    // dependence on t.
    let gm = Vector2::new(acc.mean2d[0], acc.mean2d[1]);
    let mut d_t = jac.transpose() * gm;
    let inv_z = 1.0 / t.z;
    let inv_z2 = inv_z * inv_z;
    d_t.x += d_jac[(0, 2)] * (-ctx.fx * inv_z2);
    d_t.y += d_jac[(1, 2)] * (-ctx.fy * inv_z2);
    d_t.z += d_jac[(0, 0)] * (-ctx.fx * inv_z2)
        + d_jac[(0, 2)] * (2.0 * ctx.fx * t.x * inv_z2 * inv_z)
        + d_jac[(1, 1)] * (-ctx.fy * inv_z2)
        + d_jac[(1, 2)] * (2.0 * ctx.fy * t.y * inv_z2 * inv_z);
    position += ctx.rot_wc.transpose() * d_t;

    SourceGrads {
        position,
        rotation,
        log_scales,
        opacity_logit,
        sh,
        mean2d_grad: acc.mean2d,
    }
}
