//! Training loss: `(1 - λ)·L1 + λ·D-SSIM`, with its gradient image.
//!
//! L1 is the mean absolute difference over all pixels and channels.

use crate::image::ImageRgb;
use crate::metrics::{channel_plane, ssim_channel_fields, SsimParams};
use crate::render::FrameBuffer;
use crate::{Error, Result};

/// D-SSIM is `DSSIM_SCALE · (1 - SSIM)`. Some codebases halve the term;
/// this one does not, and the choice is pinned here.
pub const DSSIM_SCALE: f64 = 1.0;

#[derive(Debug, Clone)]
pub struct LossConfig {
    /// Weight of the D-SSIM term, in `[0, 1]`.
    pub lambda_ssim: f64,
    pub ssim: SsimParams,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_ssim: 0.2,
            ssim: SsimParams::default(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_ssim) {
            return Err(Error::InvalidParameter(format!(
                "lambda_ssim {} outside [0, 1]",
                self.lambda_ssim
            )));
        }
        Ok(())
    }
}

/// Loss of a rendered frame against the ground-truth image.
pub fn loss(rendered: &FrameBuffer, target: &ImageRgb, cfg: &LossConfig) -> Result<f64> {
    let image = ImageRgb {
        width: rendered.width,
        height: rendered.height,
        data: rendered.rgb.clone(),
    };
    loss_image(&image, target, cfg)
}

pub fn loss_image(rendered: &ImageRgb, target: &ImageRgb, cfg: &LossConfig) -> Result<f64> {
    Ok(loss_with_grad(rendered, target, cfg)?.0)
}

/// Loss value plus `∂L/∂pixel` for every rendered value (interleaved RGB).
pub(crate) fn loss_with_grad(
    rendered: &ImageRgb,
    target: &ImageRgb,
    cfg: &LossConfig,
) -> Result<(f64, Vec<f64>)> {
    cfg.validate()?;
    if rendered.width != target.width || rendered.height != target.height {
        return Err(Error::DimensionMismatch(format!(
            "loss inputs {}x{} vs {}x{}",
            rendered.width, rendered.height, target.width, target.height
        )));
    }
    let count = rendered.data.len() as f64;
    let l1_weight = 1.0 - cfg.lambda_ssim;

    let mut l1 = 0.0;
    let mut grad = vec![0.0; rendered.data.len()];
    for (k, (r, t)) in rendered.data.iter().zip(&target.data).enumerate() {
        let diff = r - t;
        l1 += diff.abs();
        // Subgradient 0 at diff == 0 (f64::signum(0.0) would give 1.0).
        let sign = if diff > 0.0 {
            1.0
        } else if diff < 0.0 {
            -1.0
        } else {
            0.0
        };
        grad[k] = l1_weight * sign / count;
    }
    l1 /= count;

    let mut total = l1_weight * l1;
    if cfg.lambda_ssim > 0.0 {
        if rendered.width < cfg.ssim.window || rendered.height < cfg.ssim.window {
            return Err(Error::InvalidParameter(format!(
                "images must be at least {0}x{0} for the SSIM term",
                cfg.ssim.window
            )));
        }
        let mut ssim_mean = 0.0;
        for ch in 0..3 {
            let a = channel_plane(rendered, ch);
            let b = channel_plane(target, ch);
            ssim_mean += ssim_channel_grad(
                &a,
                &b,
                rendered.width,
                rendered.height,
                ch,
                -cfg.lambda_ssim * DSSIM_SCALE / 3.0,
                &cfg.ssim,
                &mut grad,
            );
        }
        ssim_mean /= 3.0;
        total += cfg.lambda_ssim * DSSIM_SCALE * (1.0 - ssim_mean);
    }
    Ok((total, grad))
}

/// Accumulates `weight · ∂mean-SSIM/∂a` for one channel into the interleaved
/// gradient image and returns the channel's mean SSIM.
#[allow(clippy::too_many_arguments)]
fn ssim_channel_grad(
    a: &[f64],
    b: &[f64],
    w: usize,
    h: usize,
    channel: usize,
    weight: f64,
    params: &SsimParams,
    grad: &mut [f64],
) -> f64 {
    let fields = ssim_channel_fields(a, b, w, h, params);
    let (vw, vh) = (fields.valid_w, fields.valid_h);
    let positions = (vw * vh) as f64;
    let (c1, c2) = (params.c1(), params.c2());

    // Per-position fields of the SSIM derivative:
    //   ∂S_p/∂a_k = w_{k-p} · (f1(p) + b_k·f2(p) + a_k·f3(p)).
    let mut f1 = vec![0.0; vw * vh];
    let mut f2 = vec![0.0; vw * vh];
    let mut f3 = vec![0.0; vw * vh];
    for p in 0..vw * vh {
        let (mu_a, mu_b) = (fields.mu_a[p], fields.mu_b[p]);
        let num_l = 2.0 * mu_a * mu_b + c1;
        let num_r = 2.0 * fields.cov_ab[p] + c2;
        let den_l = mu_a * mu_a + mu_b * mu_b + c1;
        let den_r = fields.var_a[p] + fields.var_b[p] + c2;
        let s = fields.value[p];
        let inv = 1.0 / (den_l * den_r);
        f1[p] = (2.0 * mu_b * num_r - 2.0 * num_l * mu_b) * inv - s * 2.0 * mu_a / den_l
            + s * 2.0 * mu_a / den_r;
        f2[p] = 2.0 * num_l * inv;
        f3[p] = -2.0 * s / den_r;
    }

    // Scatter each field back through the window: out[k] = Σ_p w_{k-p}·f(p).
    let taps = params.window_taps();
    let g1 = scatter_window(&f1, vw, vh, w, h, &taps);
    let g2 = scatter_window(&f2, vw, vh, w, h, &taps);
    let g3 = scatter_window(&f3, vw, vh, w, h, &taps);
    let scale = weight / positions;
    for y in 0..h {
        for x in 0..w {
            let k = y * w + x;
            let d = scale * (g1[k] + b[k] * g2[k] + a[k] * g3[k]);
            grad[k * 3 + channel] += d;
        }
    }

    fields.value.iter().sum::<f64>() / positions
}

/// Separable scatter of a valid-grid field through the window:
/// `out[k] = Σ_p taps[ky-py]·taps[kx-px]·field[p]` for `k-p` inside the window.
fn scatter_window(
    field: &[f64],
    vw: usize,
    vh: usize,
    w: usize,
    h: usize,
    taps: &[f64],
) -> Vec<f64> {
    // Row pass: spread along x. rows is vh × w.
    let mut rows = vec![0.0; vh * w];
    for py in 0..vh {
        for px in 0..vw {
            let f = field[py * vw + px];
            if f == 0.0 {
                continue;
            }
            for (dx, t) in taps.iter().enumerate() {
                rows[py * w + px + dx] += t * f;
            }
        }
    }
    // Column pass: spread along y. out is h × w.
    let mut out = vec![0.0; h * w];
    for py in 0..vh {
        for x in 0..w {
            let r = rows[py * w + x];
            if r == 0.0 {
                continue;
            }
            for (dy, t) in taps.iter().enumerate() {
                out[(py + dy) * w + x] += t * r;
            }
        }
    }
    out
}
