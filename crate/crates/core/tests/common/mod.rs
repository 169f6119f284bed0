//! Shared fixtures and oracles for the integration suites: synthetic scenes,
//! a camera ring, and an independent brute-force compositor.

#![allow(dead_code)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use nalgebra::{Matrix3, Vector3};
use rand::Rng;

use volsplat_core::camera::{CameraIntrinsics, CameraModel, CameraPose, TrainingView};
use volsplat_core::cloud::GaussianCloud;
use volsplat_core::gaussian::GaussianPrimitive;
use volsplat_core::image::ImageRgb;
use volsplat_core::math;
use volsplat_core::render::{self, sh::channel_to_dc, FrameBuffer, RenderOptions};

/// Scalar-first quaternion of a rotation matrix (Shepperd's method).
pub fn quat_from_matrix(m: &Matrix3<f64>) -> [f64; 4] {
    let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
    let q = if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        [
            0.25 * s,
            (m[(2, 1)] - m[(1, 2)]) / s,
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(1, 0)] - m[(0, 1)]) / s,
        ]
    } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
        let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
        [
            (m[(2, 1)] - m[(1, 2)]) / s,
            0.25 * s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
        ]
    } else if m[(1, 1)] > m[(2, 2)] {
        let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
        [
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            0.25 * s,
            (m[(1, 2)] + m[(2, 1)]) / s,
        ]
    } else {
        let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
        [
            (m[(1, 0)] - m[(0, 1)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
            (m[(1, 2)] + m[(2, 1)]) / s,
            0.25 * s,
        ]
    };
    math::quat_normalize(&q).unwrap()
}

/// World-to-camera pose looking from `eye` at `target`.
pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>) -> CameraPose {
    let forward = (target - eye).normalize();
    let up_hint = if forward.y.abs() > 0.99 {
        Vector3::new(1.0, 0.0, 0.0)
    } else {
        Vector3::new(0.0, 1.0, 0.0)
    };
    let right = forward.cross(&up_hint).normalize();
    let down = forward.cross(&right);
    let w = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
    let rotation = quat_from_matrix(&w);
    CameraPose {
        translation: -(w * eye),
        rotation,
    }
}

pub fn intrinsics(size: u32, focal: f64) -> CameraIntrinsics {
    CameraIntrinsics {
        fx: focal,
        fy: focal,
        cx: size as f64 / 2.0,
        cy: size as f64 / 2.0,
        width: size,
        height: size,
        model: CameraModel::Pinhole,
    }
}

/// `n` cameras on a tilted ring of the given radius, all looking at the
/// origin.
pub fn camera_ring(
    n: usize,
    radius: f64,
    size: u32,
    focal: f64,
) -> Vec<(CameraIntrinsics, CameraPose)> {
    (0..n)
        .map(|k| {
            let theta = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            let eye = Vector3::new(
                radius * theta.cos(),
                0.4 * radius * (theta * 2.0).sin(),
                radius * theta.sin(),
            );
            (intrinsics(size, focal), look_at(eye, Vector3::zeros()))
        })
        .collect()
}

/// Random cloud of DC-colored Gaussians inside a unit-ish box.
pub fn random_cloud(rng: &mut impl Rng, n: usize, scale_range: (f64, f64)) -> GaussianCloud {
    let mut cloud = GaussianCloud::new(0);
    for _ in 0..n {
        let q: [f64; 4] = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        let rotation = math::quat_normalize(&q).unwrap();
        let scale = rng.gen_range(scale_range.0..scale_range.1);
        let aspect = [
            rng.gen_range(0.5..1.5),
            rng.gen_range(0.5..1.5),
            rng.gen_range(0.5..1.5),
        ];
        cloud
            .push(GaussianPrimitive {
                position: Vector3::new(
                    rng.gen_range(-0.8..0.8),
                    rng.gen_range(-0.8..0.8),
                    rng.gen_range(-0.8..0.8),
                ),
                rotation,
                log_scales: Vector3::new(
                    (scale * aspect[0]).ln(),
                    (scale * aspect[1]).ln(),
                    (scale * aspect[2]).ln(),
                ),
                opacity_logit: rng.gen_range(-1.5..2.5),
                sh_coeffs: vec![
                    channel_to_dc(rng.gen_range(0.05..0.95)),
                    channel_to_dc(rng.gen_range(0.05..0.95)),
                    channel_to_dc(rng.gen_range(0.05..0.95)),
                ],
            })
            .unwrap();
    }
    cloud
}

/// Renders ground-truth views of a cloud from a camera ring.
pub fn ground_truth_views(
    cloud: &GaussianCloud,
    cameras: &[(CameraIntrinsics, CameraPose)],
    opts: &RenderOptions,
) -> Vec<TrainingView> {
    cameras
        .iter()
        .map(|(intr, pose)| {
            let out = render::render(cloud, intr, pose, opts);
            TrainingView {
                intrinsics: intr.clone(),
                pose: pose.clone(),
                image: ImageRgb {
                    width: out.frame.width,
                    height: out.frame.height,
                    data: out.frame.rgb,
                },
                source_path: std::path::PathBuf::new(),
                downsample: 1,
            }
        })
        .collect()
}

/// Independent compositor: no tiles, every pixel walks the full depth-sorted
/// list. The per-contribution arithmetic mirrors the canonical formulas so a
/// correct tiler must agree bit-for-bit.
pub fn brute_force_render(
    cloud: &GaussianCloud,
    intrinsics: &CameraIntrinsics,
    pose: &CameraPose,
    opts: &RenderOptions,
) -> FrameBuffer {
    let ctx = render::ViewContext::new(intrinsics, pose);
    let projected = render::project_cloud(cloud, &ctx, opts);
    let (width, height) = (ctx.width, ctx.height);
    let q_max = opts.footprint_sigma * opts.footprint_sigma;
    let mut frame = FrameBuffer::new(width, height);
    for y in 0..height {
        for x in 0..width {
            let px = x as f64 + 0.5;
            let py = y as f64 + 0.5;
            let mut rgb = [0.0f64; 3];
            let mut t = 1.0f64;
            for g in &projected {
                let dx = px - g.mean2d[0];
                let dy = py - g.mean2d[1];
                let q = g.inv_cov2d[0] * dx * dx
                    + 2.0 * g.inv_cov2d[1] * dx * dy
                    + g.inv_cov2d[2] * dy * dy;
                if !(q <= q_max) {
                    continue;
                }
                let falloff = (-0.5 * q).exp();
                let alpha_raw = g.opacity * falloff;
                let alpha = if alpha_raw > opts.alpha_max {
                    opts.alpha_max
                } else {
                    alpha_raw
                };
                if alpha < opts.alpha_cutoff {
                    continue;
                }
                let w = t * alpha;
                rgb[0] += w * g.color[0];
                rgb[1] += w * g.color[1];
                rgb[2] += w * g.color[2];
                t *= 1.0 - alpha;
                if t < opts.transmittance_min {
                    break;
                }
            }
            rgb[0] += t * opts.background[0];
            rgb[1] += t * opts.background[1];
            rgb[2] += t * opts.background[2];
            let o = (y * width + x) * 3;
            frame.rgb[o] = rgb[0];
            frame.rgb[o + 1] = rgb[1];
            frame.rgb[o + 2] = rgb[2];
            frame.transmittance[y * width + x] = t;
        }
    }
    frame
}

/// Per-pixel blending weights of the brute-force walk, for the weight-sum
/// property.
pub fn brute_force_weights(
    cloud: &GaussianCloud,
    intrinsics: &CameraIntrinsics,
    pose: &CameraPose,
    opts: &RenderOptions,
    x: usize,
    y: usize,
) -> Vec<f64> {
    let ctx = render::ViewContext::new(intrinsics, pose);
    let projected = render::project_cloud(cloud, &ctx, opts);
    let q_max = opts.footprint_sigma * opts.footprint_sigma;
    let px = x as f64 + 0.5;
    let py = y as f64 + 0.5;
    let mut weights = Vec::new();
    let mut t = 1.0f64;
    for g in &projected {
        let dx = px - g.mean2d[0];
        let dy = py - g.mean2d[1];
        let q =
            g.inv_cov2d[0] * dx * dx + 2.0 * g.inv_cov2d[1] * dx * dy + g.inv_cov2d[2] * dy * dy;
        if !(q <= q_max) {
            continue;
        }
        let alpha = (g.opacity * (-0.5 * q).exp()).min(opts.alpha_max);
        if alpha < opts.alpha_cutoff {
            continue;
        }
        weights.push(t * alpha);
        t *= 1.0 - alpha;
        if t < opts.transmittance_min {
            break;
        }
    }
    weights
}
