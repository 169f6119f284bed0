//! The training loop: render, loss, backward, Adam, and periodic density
//! control, with metrics and histogram snapshots along the way.

pub mod adam;
pub mod densify;

pub use adam::{adam_step, LearningRates, OptimState};
pub use densify::{
    enforce_cap, gradient_densify, opacity_reset, prune, volumetric_densify, AdcConfig,
    DensifyCounts, GradSignalMode, SplitOpacity,
};

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{backward, LossConfig};
use crate::camera::TrainingView;
use crate::cloud::GaussianCloud;
use crate::image::ImageRgb;
use crate::metrics::{
    psnr_capped, volume_histogram, HistogramSpec, IterationRecord, VolumeHistogram,
};
use crate::render::{render, RenderOptions};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub iterations: u64,
    pub adc: AdcConfig,
    pub loss: LossConfig,
    pub lrs: LearningRates,
    pub render: RenderOptions,
    pub seed: u64,
    /// Metrics cadence in iterations; 0 logs only the final iteration.
    pub eval_interval: u64,
    /// Iterations at which a volume histogram is captured.
    pub histogram_iterations: Vec<u64>,
    pub histogram_spec: HistogramSpec,
    /// Worker threads; 0 uses all cores. Ignored in deterministic mode.
    pub threads: usize,
    /// Runs single-threaded; output is bit-reproducible for a fixed seed.
    pub deterministic: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            iterations: 7000,
            adc: AdcConfig::default(),
            loss: LossConfig::default(),
            lrs: LearningRates::default(),
            render: RenderOptions::default(),
            seed: 0,
            eval_interval: 500,
            histogram_iterations: vec![4000, 8000, 12000],
            histogram_spec: HistogramSpec::default(),
            threads: 0,
            deterministic: false,
        }
    }
}

/// One density-control event, recorded every densification interval.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DensifyRecord {
    pub iteration: u64,
    pub cloned: usize,
    pub split: usize,
    pub volume_split: usize,
    pub pruned: usize,
    pub population: usize,
}

#[derive(Debug)]
pub struct TrainReport {
    pub metrics: Vec<IterationRecord>,
    pub densify_events: Vec<DensifyRecord>,
    pub histograms: Vec<VolumeHistogram>,
    pub final_loss: f64,
}

/// Trains the cloud in place against the given views. `eval_views` are held
/// out for the PSNR column of the metrics log (pass an empty slice to skip).
pub fn train(
    cloud: &mut GaussianCloud,
    optim: &mut OptimState,
    views: &[TrainingView],
    eval_views: &[TrainingView],
    opts: &TrainOptions,
    progress: &mut (dyn FnMut(&IterationRecord) + Send),
) -> Result<TrainReport> {
    if views.is_empty() {
        return Err(Error::InvalidParameter(
            "training needs at least one view".into(),
        ));
    }
    opts.adc.validate()?;
    opts.loss.validate()?;
    optim.check_matches(cloud)?;

    let threads = if opts.deterministic { 1 } else { opts.threads };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot build thread pool: {e}")))?;

    pool.install(|| train_inner(cloud, optim, views, eval_views, opts, progress))
}

fn train_inner(
    cloud: &mut GaussianCloud,
    optim: &mut OptimState,
    views: &[TrainingView],
    eval_views: &[TrainingView],
    opts: &TrainOptions,
    progress: &mut (dyn FnMut(&IterationRecord) + Send),
) -> Result<TrainReport> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..views.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0usize;

    let mut report = TrainReport {
        metrics: Vec::new(),
        densify_events: Vec::new(),
        histograms: Vec::new(),
        final_loss: f64::NAN,
    };

    for iteration in 1..=opts.iterations {
        if cursor == order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let view = &views[order[cursor]];
        cursor += 1;

        let out = backward(cloud, view, &opts.loss, &opts.render)?;
        report.final_loss = out.loss;
        for i in 0..cloud.len() {
            cloud.adc_signal[i] += out.gradients.adc_signal[i];
            cloud.adc_touches[i] += out.gradients.touched[i] as u32;
        }
        adam::adam_step(cloud, &out.gradients, optim)?;

        let in_window = iteration >= opts.adc.densify_start && iteration < opts.adc.densify_stop;
        let volumetric_window = iteration >= opts.adc.densify_start
            && (iteration < opts.adc.densify_stop || opts.adc.volumetric_after_stop);
        if iteration % opts.adc.densify_interval == 0 && (in_window || volumetric_window) {
            let counts = if in_window {
                gradient_densify(cloud, optim, &opts.adc, &mut rng)?
            } else {
                DensifyCounts::default()
            };
            let volume_split = if volumetric_window {
                volumetric_densify(cloud, optim, &opts.adc, &mut rng)?
            } else {
                0
            };
            let pruned = if in_window {
                prune(cloud, optim, &opts.adc)?
            } else {
                0
            };
            report.densify_events.push(DensifyRecord {
                iteration,
                cloned: counts.cloned,
                split: counts.split,
                volume_split,
                pruned,
                population: cloud.len(),
            });
        }

        if opts.adc.opacity_reset_interval > 0 && iteration % opts.adc.opacity_reset_interval == 0 {
            opacity_reset(cloud, optim);
        }

        if opts.histogram_iterations.contains(&iteration) {
            report.histograms.push(volume_histogram(
                cloud,
                &opts.histogram_spec,
                opts.adc.volume_threshold,
                iteration,
            ));
        }

        let eval_due = (opts.eval_interval > 0 && iteration % opts.eval_interval == 0)
            || iteration == opts.iterations;
        if eval_due {
            let psnr = mean_eval_psnr(cloud, eval_views, &opts.render)?;
            let record = IterationRecord {
                iteration,
                loss: out.loss,
                num_gaussians: cloud.len(),
                psnr,
                wall_time_s: started.elapsed().as_secs_f64(),
            };
            progress(&record);
            report.metrics.push(record);
        }
    }
    Ok(report)
}

/// Mean capped PSNR of renders against the held-out views.
pub fn mean_eval_psnr(
    cloud: &GaussianCloud,
    eval_views: &[TrainingView],
    render_opts: &RenderOptions,
) -> Result<Option<f64>> {
    if eval_views.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    for view in eval_views {
        let out = render(cloud, &view.intrinsics, &view.pose, render_opts);
        let rendered = ImageRgb {
            width: out.frame.width,
            height: out.frame.height,
            data: out.frame.rgb,
        };
        total += psnr_capped(&rendered, &view.image)?;
    }
    Ok(Some(total / eval_views.len() as f64))
}
