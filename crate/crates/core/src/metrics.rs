//! Image-quality metrics and the volume-distribution histogram.

use std::io::Write;
use std::path::Path;

use crate::cloud::GaussianCloud;
use crate::gaussian::ellipsoid_volume;
use crate::image::ImageRgb;
use crate::{Error, Result};

/// PSNR of identical images is +∞; CSV output caps it at this sentinel.
pub const PSNR_CSV_CAP: f64 = 99.0;

/// Peak signal-to-noise ratio in dB over all channels, for values in `[0,1]`.
pub fn psnr(a: &ImageRgb, b: &ImageRgb) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::DimensionMismatch(format!(
            "psnr inputs {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let mse: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data.len() as f64;
    if mse == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (1.0 / mse).log10())
    }
}

/// PSNR with the +∞ case capped for CSV friendliness.
pub fn psnr_capped(a: &ImageRgb, b: &ImageRgb) -> Result<f64> {
    Ok(psnr(a, b)?.min(PSNR_CSV_CAP))
}

/// SSIM parameters; defaults are the common 11-tap Gaussian window with
/// σ = 1.5, K1 = 0.01, K2 = 0.03 on unit dynamic range.
#[derive(Debug, Clone)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    /// Normalized 1D Gaussian window taps.
    pub fn window_taps(&self) -> Vec<f64> {
        let half = (self.window as f64 - 1.0) / 2.0;
        let mut taps: Vec<f64> = (0..self.window)
            .map(|k| (-((k as f64 - half).powi(2)) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let sum: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|t| *t /= sum);
        taps
    }
}

/// Windowed first and second moments of one channel pair over all valid
/// window positions (the backward pass reuses these).
pub(crate) struct SsimChannelFields {
    pub valid_w: usize,
    pub valid_h: usize,
    pub mu_a: Vec<f64>,
    pub mu_b: Vec<f64>,
    /// Centered variances and covariance.
    pub var_a: Vec<f64>,
    pub var_b: Vec<f64>,
    pub cov_ab: Vec<f64>,
    /// Per-position SSIM values.
    pub value: Vec<f64>,
}

/// Separable windowed sum of `plane` (h×w): returns a (h-n+1)×(w-n+1) grid.
fn windowed_sum(plane: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let n = taps.len();
    let vw = w - n + 1;
    let vh = h - n + 1;
    // Row pass.
    let mut rows = vec![0.0; h * vw];
    for y in 0..h {
        for x in 0..vw {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                acc += t * plane[y * w + x + k];
            }
            rows[y * vw + x] = acc;
        }
    }
    // Column pass.
    let mut out = vec![0.0; vh * vw];
    for y in 0..vh {
        for x in 0..vw {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                acc += t * rows[(y + k) * vw + x];
            }
            out[y * vw + x] = acc;
        }
    }
    out
}

pub(crate) fn ssim_channel_fields(
    a: &[f64],
    b: &[f64],
    w: usize,
    h: usize,
    params: &SsimParams,
) -> SsimChannelFields {
    let taps = params.window_taps();
    let n = taps.len();
    let vw = w - n + 1;
    let vh = h - n + 1;
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let mu_a = windowed_sum(a, w, h, &taps);
    let mu_b = windowed_sum(b, w, h, &taps);
    let e_aa = windowed_sum(&aa, w, h, &taps);
    let e_bb = windowed_sum(&bb, w, h, &taps);
    let e_ab = windowed_sum(&ab, w, h, &taps);
    let mut var_a = vec![0.0; vw * vh];
    let mut var_b = vec![0.0; vw * vh];
    let mut cov_ab = vec![0.0; vw * vh];
    let mut value = vec![0.0; vw * vh];
    let (c1, c2) = (params.c1(), params.c2());
    for p in 0..vw * vh {
        var_a[p] = e_aa[p] - mu_a[p] * mu_a[p];
        var_b[p] = e_bb[p] - mu_b[p] * mu_b[p];
        cov_ab[p] = e_ab[p] - mu_a[p] * mu_b[p];
        let num = (2.0 * mu_a[p] * mu_b[p] + c1) * (2.0 * cov_ab[p] + c2);
        let den = (mu_a[p] * mu_a[p] + mu_b[p] * mu_b[p] + c1) * (var_a[p] + var_b[p] + c2);
        value[p] = num / den;
    }
    SsimChannelFields {
        valid_w: vw,
        valid_h: vh,
        mu_a,
        mu_b,
        var_a,
        var_b,
        cov_ab,
        value,
    }
}

/// Extracts one channel plane of an interleaved RGB image.
pub(crate) fn channel_plane(img: &ImageRgb, ch: usize) -> Vec<f64> {
    img.data.iter().skip(ch).step_by(3).copied().collect()
}

/// Structural similarity, channel-averaged over all valid window positions.
/// Both images must be at least the window size in each dimension.
pub fn ssim(a: &ImageRgb, b: &ImageRgb, params: &SsimParams) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::DimensionMismatch(format!(
            "ssim inputs {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    if a.width < params.window || a.height < params.window {
        return Err(Error::InvalidParameter(format!(
            "ssim needs images of at least {0}x{0}, got {1}x{2}",
            params.window, a.width, a.height
        )));
    }
    let mut total = 0.0;
    for ch in 0..3 {
        let pa = channel_plane(a, ch);
        let pb = channel_plane(b, ch);
        let fields = ssim_channel_fields(&pa, &pb, a.width, a.height, params);
        total += fields.value.iter().sum::<f64>() / fields.value.len() as f64;
    }
    Ok(total / 3.0)
}

/// Log-spaced histogram of per-Gaussian ellipsoid volumes.
#[derive(Debug, Clone)]
pub struct VolumeHistogram {
    /// `bins + 1` edges, log-spaced.
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub total: usize,
    /// Fraction of Gaussians with volume ≤ `threshold`.
    pub fraction_below_threshold: f64,
    pub threshold: f64,
    pub iteration: u64,
}

/// Histogram binning specification; the default covers `[1e-12, 1e2]` with
/// 64 log-spaced bins. Volumes outside the range land in the edge bins.
#[derive(Debug, Clone)]
pub struct HistogramSpec {
    pub bins: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        HistogramSpec {
            bins: 64,
            lo: 1e-12,
            hi: 1e2,
        }
    }
}

pub fn volume_histogram(
    cloud: &GaussianCloud,
    spec: &HistogramSpec,
    threshold: f64,
    iteration: u64,
) -> VolumeHistogram {
    let bins = spec.bins.max(1);
    let log_lo = spec.lo.ln();
    let log_span = spec.hi.ln() - log_lo;
    let bin_edges: Vec<f64> = (0..=bins)
        .map(|k| (log_lo + log_span * k as f64 / bins as f64).exp())
        .collect();
    let mut counts = vec![0u64; bins];
    let mut below = 0usize;
    for ls in &cloud.log_scales {
        let v = ellipsoid_volume(ls);
        if v <= threshold {
            below += 1;
        }
        // Bin k covers [edge[k], edge[k+1]); the first and last bins absorb
        // out-of-range volumes so counts always sum to N.
        let idx = bin_edges[1..bins].partition_point(|&e| e <= v);
        counts[idx] += 1;
    }
    let total = cloud.len();
    VolumeHistogram {
        bin_edges,
        counts,
        total,
        fraction_below_threshold: if total == 0 {
            0.0
        } else {
            below as f64 / total as f64
        },
        threshold,
        iteration,
    }
}

impl VolumeHistogram {
    /// Writes the `bin_lo,bin_hi,count` table.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("bin_lo,bin_hi,count\n");
        for (k, count) in self.counts.iter().enumerate() {
            out.push_str(&format!(
                "{:e},{:e},{}\n",
                self.bin_edges[k],
                self.bin_edges[k + 1],
                count
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// One row of the per-view evaluation table.
#[derive(Debug, Clone)]
pub struct ViewMetrics {
    pub view: String,
    pub psnr: f64,
    pub ssim: f64,
}

/// Writes `view,psnr,ssim` rows followed by a `mean` row.
pub fn write_view_metrics_csv(rows: &[ViewMetrics], path: &Path) -> Result<()> {
    let mut out = String::from("view,psnr,ssim\n");
    for r in rows {
        out.push_str(&format!("{},{:.6},{:.6}\n", r.view, r.psnr, r.ssim));
    }
    if !rows.is_empty() {
        let mp = rows.iter().map(|r| r.psnr).sum::<f64>() / rows.len() as f64;
        let ms = rows.iter().map(|r| r.ssim).sum::<f64>() / rows.len() as f64;
        out.push_str(&format!("mean,{mp:.6},{ms:.6}\n"));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// One row of the training metrics log.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iteration: u64,
    pub loss: f64,
    pub num_gaussians: usize,
    /// Mean PSNR over the held-out views, when any exist.
    pub psnr: Option<f64>,
    pub wall_time_s: f64,
}

pub fn write_training_metrics_csv(rows: &[IterationRecord], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    (|| -> std::io::Result<()> {
        writeln!(w, "iteration,loss,num_gaussians,psnr,wall_time_s")?;
        for r in rows {
            let psnr = r
                .psnr
                .map(|p| format!("{:.6}", p.min(PSNR_CSV_CAP)))
                .unwrap_or_default();
            writeln!(
                w,
                "{},{:.8},{},{},{:.3}",
                r.iteration, r.loss, r.num_gaussians, psnr, r.wall_time_s
            )?;
        }
        Ok(())
    })()
    .map_err(|e| Error::io(path, e))
}
