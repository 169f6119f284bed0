//! Tile-based forward rasterizer.
//!
//! Projected Gaussians are depth-sorted once per view (ties broken by source
//! index), binned into 16×16-pixel tiles by the bounding box of their 3σ
//! screen ellipse, and composited front-to-back per pixel. A contribution is
//! counted only inside the 3σ ellipse and only while its alpha clears the
//! 1/255 cutoff; compositing stops once transmittance drops below 1e-4.
//! Tiles render independently, so output is bit-identical for any thread
//! count.

pub mod project;
pub mod sh;

use rayon::prelude::*;

use crate::camera::{CameraIntrinsics, CameraPose};
use crate::cloud::GaussianCloud;
use crate::image::ImageRgb;

pub use project::{project_cloud, project_gaussian, ProjectedGaussian, ViewContext};
pub use sh::resolve_color;

/// Rasterization constants. Every cutoff the compositor applies is a named
/// field here.
#[derive(Debug, Clone)]
pub struct RenderOptions {
    /// Near-plane distance; Gaussians with camera-space z at or below this
    /// are culled.
    pub near: f64,
    /// Cull when the projected mean is farther from the image center than
    /// this many half-extents.
    pub guard_band: f64,
    /// Isotropic variance added to both diagonal entries of every screen
    /// covariance, in pixels².
    pub dilation: f64,
    /// Tile edge in pixels.
    pub tile_size: usize,
    /// Footprint bound in standard deviations: contributions are evaluated
    /// only where the Mahalanobis form satisfies `q ≤ footprint_sigma²`.
    pub footprint_sigma: f64,
    /// Contributions with alpha below this are skipped.
    pub alpha_cutoff: f64,
    /// Alpha is clamped to at most this value.
    pub alpha_max: f64,
    /// Compositing stops once transmittance falls below this.
    pub transmittance_min: f64,
    /// Color multiplied by the remaining transmittance.
    pub background: [f64; 3],
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            near: 0.01,
            guard_band: 1.3,
            dilation: 0.3,
            tile_size: 16,
            footprint_sigma: 3.0,
            alpha_cutoff: 1.0 / 255.0,
            alpha_max: 0.99,
            transmittance_min: 1e-4,
            background: [0.0, 0.0, 0.0],
        }
    }
}

/// Rendered RGB plus per-pixel final transmittance.
#[derive(Debug, Clone)]
pub struct FrameBuffer {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB, 3 values per pixel, all in `[0, 1]`.
    pub rgb: Vec<f64>,
    /// Remaining transmittance per pixel, in `[0, 1]`.
    pub transmittance: Vec<f64>,
}

impl FrameBuffer {
    pub fn new(width: usize, height: usize) -> Self {
        FrameBuffer {
            width,
            height,
            rgb: vec![0.0; width * height * 3],
            transmittance: vec![1.0; width * height],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let o = (y * self.width + x) * 3;
        [self.rgb[o], self.rgb[o + 1], self.rgb[o + 2]]
    }

    pub fn to_image(&self) -> ImageRgb {
        ImageRgb {
            width: self.width,
            height: self.height,
            data: self.rgb.clone(),
        }
    }
}

/// Forward render result: the frame plus which Gaussians were projected
/// (the per-view touch statistic densification accumulates).
#[derive(Debug)]
pub struct RenderOutput {
    pub frame: FrameBuffer,
    /// `touched[i]` is true when Gaussian `i` survived culling for this view.
    pub touched: Vec<bool>,
}

/// One composited contribution at a pixel, reported in front-to-back order.
#[derive(Debug, Clone, Copy)]
pub struct Contribution {
    /// Index into the depth-sorted projected list.
    pub list_index: usize,
    /// Pixel-center offset from the 2D mean.
    pub d: [f64; 2],
    /// Gaussian falloff `exp(-q/2)`.
    pub falloff: f64,
    /// Final alpha after the clamp.
    pub alpha: f64,
    /// Whether alpha hit the `alpha_max` clamp.
    pub alpha_clamped: bool,
    /// Transmittance before this contribution.
    pub t_before: f64,
}

/// Composites one pixel front-to-back, invoking `on_contribution` for every
/// accepted contribution. Returns the pixel color and final transmittance.
///
/// This is the single definition of the compositing arithmetic; forward,
/// backward and the per-pixel event signature all call it so their float
/// sequences agree bit-for-bit.
#[inline]
pub fn composite_pixel<'a, I, F>(
    px: f64,
    py: f64,
    items: I,
    opts: &RenderOptions,
    mut on_contribution: F,
) -> ([f64; 3], f64)
where
    I: Iterator<Item = (usize, &'a ProjectedGaussian)>,
    F: FnMut(&Contribution),
{
    let q_max = opts.footprint_sigma * opts.footprint_sigma;
    let mut rgb = [0.0f64; 3];
    let mut t = 1.0f64;
    for (list_index, g) in items {
        let dx = px - g.mean2d[0];
        let dy = py - g.mean2d[1];
        let q =
            g.inv_cov2d[0] * dx * dx + 2.0 * g.inv_cov2d[1] * dx * dy + g.inv_cov2d[2] * dy * dy;
        if !(q <= q_max) {
            continue;
        }
        let falloff = (-0.5 * q).exp();
        let alpha_raw = g.opacity * falloff;
        let alpha_clamped = alpha_raw > opts.alpha_max;
        let alpha = if alpha_clamped {
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
        on_contribution(&Contribution {
            list_index,
            d: [dx, dy],
            falloff,
            alpha,
            alpha_clamped,
            t_before: t,
        });
        t *= 1.0 - alpha;
        if t < opts.transmittance_min {
            break;
        }
    }
    rgb[0] += t * opts.background[0];
    rgb[1] += t * opts.background[1];
    rgb[2] += t * opts.background[2];
    (rgb, t)
}

/// Tile binning: for each tile, the indices (into the sorted projected list)
/// of Gaussians whose 3σ bounding box overlaps it, in depth order.
pub(crate) struct TileGrid {
    pub tiles_x: usize,
    pub bins: Vec<Vec<u32>>,
}

pub(crate) fn bin_tiles(
    projected: &[ProjectedGaussian],
    width: usize,
    height: usize,
    opts: &RenderOptions,
) -> TileGrid {
    let ts = opts.tile_size;
    let tiles_x = width.div_ceil(ts);
    let tiles_y = height.div_ceil(ts);
    let mut bins = vec![Vec::new(); tiles_x * tiles_y];
    for (k, g) in projected.iter().enumerate() {
        // Radius of the bounding circle of the 3σ ellipse.
        let (a, b, c) = (g.cov2d[0], g.cov2d[1], g.cov2d[2]);
        let mid = 0.5 * (a + c);
        let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
        let lambda_max = mid + disc;
        let radius = opts.footprint_sigma * lambda_max.max(0.0).sqrt();
        // One pixel of slack keeps the pixel-center test conservative.
        let x0 = (g.mean2d[0] - radius - 1.0).floor().max(0.0) as usize;
        let y0 = (g.mean2d[1] - radius - 1.0).floor().max(0.0) as usize;
        let x1 = (g.mean2d[0] + radius + 1.0).ceil().min(width as f64) as usize;
        let y1 = (g.mean2d[1] + radius + 1.0).ceil().min(height as f64) as usize;
        if x0 >= x1 || y0 >= y1 {
            continue;
        }
        let tx0 = x0 / ts;
        let tx1 = (x1 - 1) / ts;
        let ty0 = y0 / ts;
        let ty1 = (y1 - 1) / ts;
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                bins[ty * tiles_x + tx].push(k as u32);
            }
        }
    }
    TileGrid { tiles_x, bins }
}

/// Renders a cloud snapshot from one camera.
pub fn render(
    cloud: &GaussianCloud,
    intrinsics: &CameraIntrinsics,
    pose: &CameraPose,
    opts: &RenderOptions,
) -> RenderOutput {
    let ctx = ViewContext::new(intrinsics, pose);
    let projected = project_cloud(cloud, &ctx, opts);
    let mut touched = vec![false; cloud.len()];
    for g in &projected {
        touched[g.source] = true;
    }
    let frame = render_projected(&projected, ctx.width, ctx.height, opts);
    RenderOutput { frame, touched }
}

/// Rasterizes an already-projected, depth-sorted list.
pub fn render_projected(
    projected: &[ProjectedGaussian],
    width: usize,
    height: usize,
    opts: &RenderOptions,
) -> FrameBuffer {
    let grid = bin_tiles(projected, width, height, opts);
    render_binned(projected, &grid, width, height, opts)
}

/// Pixel rectangle of one tile.
pub(crate) fn tile_rect(
    tile: usize,
    tiles_x: usize,
    ts: usize,
    width: usize,
    height: usize,
) -> (usize, usize, usize, usize) {
    let tx = tile % tiles_x;
    let ty = tile / tiles_x;
    let x0 = tx * ts;
    let y0 = ty * ts;
    (x0, y0, (x0 + ts).min(width), (y0 + ts).min(height))
}

pub(crate) fn render_binned(
    projected: &[ProjectedGaussian],
    grid: &TileGrid,
    width: usize,
    height: usize,
    opts: &RenderOptions,
) -> FrameBuffer {
    let ts = opts.tile_size;
    // Each tile renders into a local buffer; tiles own disjoint pixel sets,
    // so the merge below is order-independent.
    let tile_results: Vec<(usize, Vec<[f64; 3]>, Vec<f64>)> = (0..grid.bins.len())
        .into_par_iter()
        .map(|tile| {
            let (x0, y0, x1, y1) = tile_rect(tile, grid.tiles_x, ts, width, height);
            let bin = &grid.bins[tile];
            let mut rgb = Vec::with_capacity((x1 - x0) * (y1 - y0));
            let mut trans = Vec::with_capacity((x1 - x0) * (y1 - y0));
            for y in y0..y1 {
                for x in x0..x1 {
                    let (color, t) = composite_pixel(
                        x as f64 + 0.5,
                        y as f64 + 0.5,
                        bin.iter().map(|&k| (k as usize, &projected[k as usize])),
                        opts,
                        |_| {},
                    );
                    rgb.push(color);
                    trans.push(t);
                }
            }
            (tile, rgb, trans)
        })
        .collect();

    let mut frame = FrameBuffer::new(width, height);
    for (tile, rgb, trans) in tile_results {
        let (x0, y0, x1, y1) = tile_rect(tile, grid.tiles_x, ts, width, height);
        let mut k = 0;
        for y in y0..y1 {
            for x in x0..x1 {
                let o = (y * width + x) * 3;
                frame.rgb[o] = rgb[k][0];
                frame.rgb[o + 1] = rgb[k][1];
                frame.rgb[o + 2] = rgb[k][2];
                frame.transmittance[y * width + x] = trans[k];
                k += 1;
            }
        }
    }
    frame
}
