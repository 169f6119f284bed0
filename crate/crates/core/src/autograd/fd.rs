//! Central-difference gradient oracle through the full forward pipeline,
//! plus the discrete-event signature tests use to detect (and exclude)
//! parameters sitting on compositing cutoff boundaries.

use std::hash::{Hash, Hasher};

use crate::autograd::loss::{loss_with_grad, LossConfig};
use crate::autograd::ParamGradients;
use crate::camera::{CameraIntrinsics, CameraPose};
use crate::cloud::GaussianCloud;
use crate::image::ImageRgb;
use crate::render::{composite_pixel, project_cloud, RenderOptions, ViewContext};
use crate::Result;

/// Address of one scalar parameter in a cloud.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRef {
    /// (gaussian, axis 0..3)
    Position(usize, usize),
    /// (gaussian, component 0..4, scalar-first)
    Rotation(usize, usize),
    /// (gaussian, axis 0..3)
    LogScale(usize, usize),
    Opacity(usize),
    /// (gaussian, offset within the SH block)
    Sh(usize, usize),
}

/// Total number of scalar parameters.
pub fn param_count(cloud: &GaussianCloud) -> usize {
    cloud.len() * (3 + 4 + 3 + 1 + cloud.sh_stride())
}

/// Maps a flat index in `0..param_count` to a parameter address. Layout is
/// per-Gaussian: position, rotation, log-scales, opacity, SH block.
pub fn param_at(cloud: &GaussianCloud, flat: usize) -> ParamRef {
    let per = 3 + 4 + 3 + 1 + cloud.sh_stride();
    let g = flat / per;
    let k = flat % per;
    if k < 3 {
        ParamRef::Position(g, k)
    } else if k < 7 {
        ParamRef::Rotation(g, k - 3)
    } else if k < 10 {
        ParamRef::LogScale(g, k - 7)
    } else if k == 10 {
        ParamRef::Opacity(g)
    } else {
        ParamRef::Sh(g, k - 11)
    }
}

pub fn get_param(cloud: &GaussianCloud, p: ParamRef) -> f64 {
    match p {
        ParamRef::Position(g, a) => cloud.positions[g][a],
        ParamRef::Rotation(g, c) => cloud.rotations[g][c],
        ParamRef::LogScale(g, a) => cloud.log_scales[g][a],
        ParamRef::Opacity(g) => cloud.opacity_logits[g],
        ParamRef::Sh(g, k) => cloud.sh_coeffs[g * cloud.sh_stride() + k],
    }
}

pub fn set_param(cloud: &mut GaussianCloud, p: ParamRef, value: f64) {
    match p {
        ParamRef::Position(g, a) => cloud.positions[g][a] = value,
        ParamRef::Rotation(g, c) => cloud.rotations[g][c] = value,
        ParamRef::LogScale(g, a) => cloud.log_scales[g][a] = value,
        ParamRef::Opacity(g) => cloud.opacity_logits[g] = value,
        ParamRef::Sh(g, k) => {
            let stride = cloud.sh_stride();
            cloud.sh_coeffs[g * stride + k] = value;
        }
    }
}

/// Reads the analytic gradient entry matching a parameter address.
pub fn gradient_at(grads: &ParamGradients, cloud: &GaussianCloud, p: ParamRef) -> f64 {
    match p {
        ParamRef::Position(g, a) => grads.positions[g][a],
        ParamRef::Rotation(g, c) => grads.rotations[g][c],
        ParamRef::LogScale(g, a) => grads.log_scales[g][a],
        ParamRef::Opacity(g) => grads.opacity_logits[g],
        ParamRef::Sh(g, k) => grads.sh_coeffs[g * cloud.sh_stride() + k],
    }
}

/// Full forward pipeline: render then loss.
pub fn forward_loss(
    cloud: &GaussianCloud,
    intrinsics: &CameraIntrinsics,
    pose: &CameraPose,
    target: &ImageRgb,
    loss_cfg: &LossConfig,
    opts: &RenderOptions,
) -> Result<f64> {
    let out = crate::render::render(cloud, intrinsics, pose, opts);
    let rendered = ImageRgb {
        width: out.frame.width,
        height: out.frame.height,
        data: out.frame.rgb,
    };
    Ok(loss_with_grad(&rendered, target, loss_cfg)?.0)
}

/// Generic central difference `(f(x+h) - f(x-h)) / 2h`.
pub fn central_difference<F: FnMut(f64) -> f64>(mut f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Central-difference derivative of the loss with respect to one parameter,
/// evaluated through the full render + loss pipeline.
#[allow(clippy::too_many_arguments)]
pub fn finite_difference_gradient(
    cloud: &GaussianCloud,
    intrinsics: &CameraIntrinsics,
    pose: &CameraPose,
    target: &ImageRgb,
    loss_cfg: &LossConfig,
    opts: &RenderOptions,
    param: ParamRef,
    step: f64,
) -> Result<f64> {
    assert!(step > 0.0, "finite-difference step must be positive");
    let mut probe = cloud.clone();
    let base = get_param(cloud, param);
    set_param(&mut probe, param, base + step);
    let plus = forward_loss(&probe, intrinsics, pose, target, loss_cfg, opts)?;
    set_param(&mut probe, param, base - step);
    let minus = forward_loss(&probe, intrinsics, pose, target, loss_cfg, opts)?;
    Ok((plus - minus) / (2.0 * step))
}

/// Hash of every discrete decision the forward pass makes: the surviving
/// projection set and order, per-channel color clamps, and per-pixel
/// contribution sequences with their alpha-clamp flags. Two clouds with
/// equal signatures render through the same smooth branch, so a central
/// difference between them is valid.
pub fn render_signature(
    cloud: &GaussianCloud,
    intrinsics: &CameraIntrinsics,
    pose: &CameraPose,
    opts: &RenderOptions,
) -> u64 {
    let ctx = ViewContext::new(intrinsics, pose);
    let projected = project_cloud(cloud, &ctx, opts);
    let mut hasher = std::collections::hash_map::DefaultHasher::new();
    (ctx.width, ctx.height).hash(&mut hasher);
    for g in &projected {
        g.source.hash(&mut hasher);
        for ch in 0..3 {
            (g.color[ch] > 0.0, g.color[ch] < 1.0).hash(&mut hasher);
        }
    }
    for y in 0..ctx.height {
        for x in 0..ctx.width {
            composite_pixel(
                x as f64 + 0.5,
                y as f64 + 0.5,
                projected.iter().enumerate(),
                opts,
                |c| {
                    (c.list_index, c.alpha_clamped).hash(&mut hasher);
                },
            );
            u32::MAX.hash(&mut hasher); // pixel separator
        }
    }
    hasher.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn central_difference_is_exact_on_linear_functions() {
        for h in [1e-1, 1e-3, 1e-6] {
            let d = central_difference(|x| 3.5 * x - 2.0, 1.7, h);
            assert_relative_eq!(d, 3.5, max_relative = 1e-9);
        }
    }

    #[test]
    fn central_difference_is_richardson_consistent() {
        // Error of the central difference is O(h²), so halving the step
        // should shrink it by about 4 at smooth points.
        let f = |x: f64| x.sin();
        let x = 0.8f64;
        let exact = x.cos();
        let e1 = (central_difference(f, x, 1e-3) - exact).abs();
        let e2 = (central_difference(f, x, 5e-4) - exact).abs();
        let ratio = e1 / e2;
        assert!(
            (3.0..5.0).contains(&ratio),
            "expected error ratio near 4, got {ratio} ({e1} vs {e2})"
        );
    }
}
