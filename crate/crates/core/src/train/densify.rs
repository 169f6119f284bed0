//! Adaptive density control: gradient-driven cloning and splitting, opacity
//! pruning, and the volume-driven split that complements them.
//!
//! Every `densify_interval` iterations the refiner first applies the
//! gradient rule (small high-gradient Gaussians clone, large ones split with
//! scales divided by 1.6), then the volume rule: any Gaussian whose
//! ellipsoid volume exceeds `volume_threshold` is replaced by two children
//! whose covariance eigenvalues are divided by the condition number, which
//! shrinks the child volume by κ^(3/2) while preserving orientation and
//! aspect ratio. A hard population cap admits insertions by priority.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::cloud::GaussianCloud;
use crate::gaussian::{condition_number, ellipsoid_volume, split_child_log_scales};
use crate::math::{self, logit, sigmoid};
use crate::train::adam::OptimState;
use crate::{Error, Result};

/// Scale divisor applied to gradient-split children, as in standard ADC.
pub const GRADIENT_SPLIT_SCALE_FACTOR: f64 = 1.6;

/// How the per-Gaussian densification signal is reduced before thresholding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradSignalMode {
    /// Accumulated norm divided by the number of renders that touched the
    /// Gaussian.
    Mean,
    /// Raw accumulated norm.
    Sum,
}

/// Opacity handed to volume-split children.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitOpacity {
    /// Children keep the parent's opacity.
    Inherit,
    /// Children get half the parent's opacity (in opacity space).
    Halved,
}

/// Every densification knob.
#[derive(Debug, Clone)]
pub struct AdcConfig {
    pub densify_interval: u64,
    pub densify_start: u64,
    pub densify_stop: u64,
    /// Threshold on the view-space positional gradient signal.
    pub grad_threshold: f64,
    /// Marked Gaussians with max scale below this clone; others split.
    pub clone_vs_split_scale: f64,
    /// Ellipsoid volume above which a Gaussian is volume-split.
    pub volume_threshold: f64,
    /// Gaussians with opacity below this are pruned.
    pub prune_opacity: f64,
    /// Opacity reset cadence in iterations; 0 disables.
    pub opacity_reset_interval: u64,
    pub max_gaussians: usize,
    /// Ablation switch: disables the volume rule entirely.
    pub enable_volumetric: bool,
    /// Keep running the volume rule after `densify_stop`.
    pub volumetric_after_stop: bool,
    pub grad_signal: GradSignalMode,
    pub split_opacity: SplitOpacity,
    /// Floor on child log-scales after a volume split.
    pub min_log_scale: f64,
}

impl AdcConfig {
    /// Defaults sized for a scene of the given extent.
    pub fn for_scene_extent(extent: f64) -> Self {
        AdcConfig {
            densify_interval: 100,
            densify_start: 500,
            densify_stop: 15_000,
            grad_threshold: 2e-4,
            clone_vs_split_scale: 0.01 * extent,
            volume_threshold: 0.03,
            prune_opacity: 0.005,
            opacity_reset_interval: 3000,
            max_gaussians: 3_400_000,
            enable_volumetric: true,
            volumetric_after_stop: false,
            grad_signal: GradSignalMode::Mean,
            split_opacity: SplitOpacity::Inherit,
            min_log_scale: (1e-6 * extent).ln(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.densify_start >= self.densify_stop {
            return Err(Error::InvalidParameter(format!(
                "densify_start {} must be below densify_stop {}",
                self.densify_start, self.densify_stop
            )));
        }
        if self.densify_interval == 0 {
            return Err(Error::InvalidParameter(
                "densify_interval must be positive".into(),
            ));
        }
        for (name, v) in [
            ("grad_threshold", self.grad_threshold),
            ("clone_vs_split_scale", self.clone_vs_split_scale),
            ("volume_threshold", self.volume_threshold),
            ("prune_opacity", self.prune_opacity),
        ] {
            if !(v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

impl Default for AdcConfig {
    fn default() -> Self {
        AdcConfig::for_scene_extent(1.0)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DensifyCounts {
    pub cloned: usize,
    pub split: usize,
}

/// A candidate insertion awaiting cap arbitration.
#[derive(Debug, Clone)]
pub struct PendingInsertion {
    pub priority: f64,
    pub parent: usize,
    kind: PendingKind,
}

#[derive(Debug, Clone)]
enum PendingKind {
    /// Exact copy of the parent, nudged by one covariance sample.
    Clone,
    /// Child with explicit log-scales, placed by a covariance sample.
    Child {
        log_scales: Vector3<f64>,
        opacity_logit: f64,
    },
}

/// Admits pending insertions in descending priority until the population
/// reaches `max_gaussians`; the rest are dropped. `current` is the population
/// after scheduled removals.
pub fn enforce_cap(
    current: usize,
    max_gaussians: usize,
    mut pending: Vec<PendingInsertion>,
) -> Vec<PendingInsertion> {
    let room = max_gaussians.saturating_sub(current);
    if pending.len() <= room {
        return pending;
    }
    pending.sort_by(|a, b| {
        b.priority
            .partial_cmp(&a.priority)
            .unwrap()
            .then(a.parent.cmp(&b.parent))
    });
    pending.truncate(room);
    // Restore parent order so array layout (and RNG consumption) does not
    // depend on the priority permutation.
    pending.sort_by_key(|p| p.parent);
    pending
}

/// One position draw from the parent's own Gaussian distribution,
/// `μ + R·S·ξ` with `ξ ~ N(0, I)`.
fn sample_position(cloud: &GaussianCloud, parent: usize, rng: &mut impl Rng) -> Vector3<f64> {
    let q = math::quat_normalize(&cloud.rotations[parent]).expect("stored quaternion is unit");
    let rot = math::rotation_from_unit_quat(&q);
    let scales = cloud.log_scales[parent].map(f64::exp);
    let xi = Vector3::new(
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    );
    cloud.positions[parent] + rot * Matrix3::from_diagonal(&scales) * xi
}

fn commit(
    cloud: &mut GaussianCloud,
    optim: &mut OptimState,
    removals: &[bool],
    admitted: Vec<PendingInsertion>,
    rng: &mut impl Rng,
) -> Result<()> {
    // Children are materialized against the pre-removal cloud.
    let mut children = Vec::with_capacity(admitted.len());
    for p in admitted {
        let mut primitive = cloud.get(p.parent);
        primitive.position = sample_position(cloud, p.parent, rng);
        if let PendingKind::Child {
            log_scales,
            opacity_logit,
        } = p.kind
        {
            primitive.log_scales = log_scales;
            primitive.opacity_logit = opacity_logit;
        }
        children.push(primitive);
    }
    if removals.iter().any(|&r| r) {
        cloud.retain_mask(removals.iter().map(|&r| !r).collect::<Vec<_>>().as_slice());
        optim.retain_mask(removals.iter().map(|&r| !r).collect::<Vec<_>>().as_slice());
    }
    for child in children {
        cloud.push(child)?;
        optim.push_zero();
    }
    debug_assert!(cloud.check_consistency().is_ok());
    Ok(())
}

/// Gradient-driven densification: marked small Gaussians clone, marked large
/// ones split in two with scales divided by 1.6. Resets the accumulated
/// signal afterwards.
#[allow(clippy::needless_range_loop)]
pub fn gradient_densify(
    cloud: &mut GaussianCloud,
    optim: &mut OptimState,
    config: &AdcConfig,
    rng: &mut impl Rng,
) -> Result<DensifyCounts> {
    optim.check_matches(cloud)?;
    let n = cloud.len();
    let mut removals = vec![false; n];
    let mut pending = Vec::new();
    let mut counts = DensifyCounts::default();

    for i in 0..n {
        let signal = match config.grad_signal {
            GradSignalMode::Mean => {
                if cloud.adc_touches[i] == 0 {
                    0.0
                } else {
                    cloud.adc_signal[i] / cloud.adc_touches[i] as f64
                }
            }
            GradSignalMode::Sum => cloud.adc_signal[i],
        };
        if signal < config.grad_threshold {
            continue;
        }
        let max_scale = cloud.log_scales[i].max().exp();
        if max_scale < config.clone_vs_split_scale {
            counts.cloned += 1;
            pending.push(PendingInsertion {
                priority: signal,
                parent: i,
                kind: PendingKind::Clone,
            });
        } else {
            counts.split += 1;
            removals[i] = true;
            let child_scales = cloud.log_scales[i].map(|l| l - GRADIENT_SPLIT_SCALE_FACTOR.ln());
            for _ in 0..2 {
                pending.push(PendingInsertion {
                    priority: signal,
                    parent: i,
                    kind: PendingKind::Child {
                        log_scales: child_scales,
                        opacity_logit: cloud.opacity_logits[i],
                    },
                });
            }
        }
    }

    let removed = removals.iter().filter(|&&r| r).count();
    let admitted = enforce_cap(n - removed, config.max_gaussians, pending);
    commit(cloud, optim, &removals, admitted, rng)?;
    cloud.reset_adc_stats();
    Ok(counts)
}

/// Volume-driven densification: every Gaussian whose ellipsoid volume
/// exceeds the threshold is replaced by two children with eigenvalues
/// divided by the condition number (log-scales shifted by `-½·ln κ`, floored
/// at `min_log_scale`). Children created here are not re-examined until the
/// next interval. Returns the number of parents split.
#[allow(clippy::needless_range_loop)]
pub fn volumetric_densify(
    cloud: &mut GaussianCloud,
    optim: &mut OptimState,
    config: &AdcConfig,
    rng: &mut impl Rng,
) -> Result<usize> {
    optim.check_matches(cloud)?;
    if !config.enable_volumetric {
        return Ok(0);
    }
    let n = cloud.len();
    let mut removals = vec![false; n];
    let mut pending = Vec::new();
    let mut split = 0usize;

    for i in 0..n {
        let volume = ellipsoid_volume(&cloud.log_scales[i]);
        if !(volume > config.volume_threshold) {
            continue;
        }
        split += 1;
        removals[i] = true;
        let kappa = condition_number(&cloud.log_scales[i]);
        let child_scales = split_child_log_scales(&cloud.log_scales[i], kappa)
            .map(|l| l.max(config.min_log_scale));
        let opacity_logit = match config.split_opacity {
            SplitOpacity::Inherit => cloud.opacity_logits[i],
            SplitOpacity::Halved => {
                logit((sigmoid(cloud.opacity_logits[i]) * 0.5).clamp(1e-9, 1.0 - 1e-9))
            }
        };
        for _ in 0..2 {
            pending.push(PendingInsertion {
                priority: volume,
                parent: i,
                kind: PendingKind::Child {
                    log_scales: child_scales,
                    opacity_logit,
                },
            });
        }
    }

    let admitted = enforce_cap(n - split, config.max_gaussians, pending);
    commit(cloud, optim, &removals, admitted, rng)?;
    Ok(split)
}

/// Removes Gaussians whose opacity fell below the prune threshold. Returns
/// the number removed.
pub fn prune(
    cloud: &mut GaussianCloud,
    optim: &mut OptimState,
    config: &AdcConfig,
) -> Result<usize> {
    optim.check_matches(cloud)?;
    let keep: Vec<bool> = cloud
        .opacity_logits
        .iter()
        .map(|&l| sigmoid(l) >= config.prune_opacity)
        .collect();
    let removed = keep.iter().filter(|&&k| !k).count();
    if removed > 0 {
        cloud.retain_mask(&keep);
        optim.retain_mask(&keep);
    }
    Ok(removed)
}

/// Clamps every opacity to at most 0.01 (through the logit) and clears the
/// opacity optimizer moments.
pub fn opacity_reset(cloud: &mut GaussianCloud, optim: &mut OptimState) {
    let ceiling = logit(0.01);
    for l in cloud.opacity_logits.iter_mut() {
        if *l > ceiling {
            *l = ceiling;
        }
    }
    optim.zero_opacity_moments();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::GaussianPrimitive;
    use crate::math::QUAT_IDENTITY;
    use crate::train::adam::LearningRates;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn primitive(scale: [f64; 3], opacity_logit: f64) -> GaussianPrimitive {
        GaussianPrimitive {
            position: Vector3::zeros(),
            rotation: QUAT_IDENTITY,
            log_scales: Vector3::new(scale[0].ln(), scale[1].ln(), scale[2].ln()),
            opacity_logit,
            sh_coeffs: vec![0.2, 0.3, 0.4],
        }
    }

    fn setup(primitives: Vec<GaussianPrimitive>) -> (GaussianCloud, OptimState) {
        let mut cloud = GaussianCloud::new(0);
        for p in primitives {
            cloud.push(p).unwrap();
        }
        let optim = OptimState::new(&cloud, LearningRates::default());
        (cloud, optim)
    }

    fn config() -> AdcConfig {
        AdcConfig {
            clone_vs_split_scale: 0.05,
            grad_threshold: 0.1,
            ..AdcConfig::for_scene_extent(1.0)
        }
    }

    #[test]
    fn no_signal_means_no_change() {
        let (mut cloud, mut optim) = setup(vec![primitive([0.01; 3], 0.0); 5]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let counts = gradient_densify(&mut cloud, &mut optim, &config(), &mut rng).unwrap();
        assert_eq!(counts, DensifyCounts::default());
        assert_eq!(cloud.len(), 5);
    }

    #[test]
    fn small_marked_gaussian_clones_with_position_nudge() {
        let (mut cloud, mut optim) = setup(vec![primitive([0.01; 3], 0.4)]);
        cloud.adc_signal[0] = 1.0;
        cloud.adc_touches[0] = 2; // mean signal 0.5 ≥ 0.1
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let counts = gradient_densify(&mut cloud, &mut optim, &config(), &mut rng).unwrap();
        assert_eq!(
            counts,
            DensifyCounts {
                cloned: 1,
                split: 0
            }
        );
        assert_eq!(cloud.len(), 2);
        assert_eq!(optim.len(), 2);
        // Copy differs only in position.
        assert_ne!(cloud.positions[0], cloud.positions[1]);
        assert_eq!(cloud.log_scales[0], cloud.log_scales[1]);
        assert_eq!(cloud.opacity_logits[0], cloud.opacity_logits[1]);
        assert_eq!(cloud.sh_block(0), cloud.sh_block(1));
        // Stats were reset.
        assert_eq!(cloud.adc_signal, vec![0.0, 0.0]);
        assert_eq!(cloud.adc_touches, vec![0, 0]);
    }

    #[test]
    fn large_marked_gaussian_splits_in_two() {
        let (mut cloud, mut optim) = setup(vec![primitive([0.2; 3], 0.4)]);
        cloud.adc_signal[0] = 1.0;
        cloud.adc_touches[0] = 1;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let counts = gradient_densify(&mut cloud, &mut optim, &config(), &mut rng).unwrap();
        assert_eq!(
            counts,
            DensifyCounts {
                cloned: 0,
                split: 1
            }
        );
        assert_eq!(cloud.len(), 2);
        for ls in &cloud.log_scales {
            assert_relative_eq!(ls.x.exp(), 0.2 / 1.6, max_relative = 1e-12);
        }
        assert_eq!(cloud.opacity_logits, vec![0.4, 0.4]);
    }

    #[test]
    fn volumetric_split_worked_example() {
        // (0.4, 0.1, 0.1): volume ≈ 0.01676 < 0.03, stays.
        // (0.5, 0.2, 0.2): volume ≈ 0.08378 > 0.03, splits with κ = 6.25.
        let (mut cloud, mut optim) = setup(vec![
            primitive([0.4, 0.1, 0.1], 0.2),
            primitive([0.5, 0.2, 0.2], 0.2),
        ]);
        assert_relative_eq!(
            ellipsoid_volume(&cloud.log_scales[0]),
            0.016755,
            max_relative = 1e-4
        );
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let split = volumetric_densify(&mut cloud, &mut optim, &config(), &mut rng).unwrap();
        assert_eq!(split, 1);
        assert_eq!(cloud.len(), 3);
        // Children sit at indices 1 and 2 after the parent's removal.
        for k in [1, 2] {
            let s = cloud.log_scales[k].map(f64::exp);
            assert_relative_eq!(s.x, 0.2, max_relative = 1e-9);
            assert_relative_eq!(s.y, 0.08, max_relative = 1e-9);
            assert_relative_eq!(s.z, 0.08, max_relative = 1e-9);
            assert_relative_eq!(
                ellipsoid_volume(&cloud.log_scales[k]),
                0.08377580409572781 * 6.25f64.powf(-1.5),
                max_relative = 1e-9
            );
            assert_eq!(cloud.rotations[k], cloud.rotations[0]);
            assert_eq!(cloud.opacity_logits[k], 0.2);
        }
    }

    #[test]
    fn volumetric_noop_below_threshold() {
        let (mut cloud, mut optim) = setup(vec![primitive([0.1; 3], 0.0); 4]);
        let before = cloud.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let split = volumetric_densify(&mut cloud, &mut optim, &config(), &mut rng).unwrap();
        assert_eq!(split, 0);
        assert_eq!(cloud.positions, before.positions);
    }

    #[test]
    fn volumetric_disabled_is_identity() {
        let (mut cloud, mut optim) = setup(vec![primitive([2.0; 3], 0.0)]);
        let mut cfg = config();
        cfg.enable_volumetric = false;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        assert_eq!(
            volumetric_densify(&mut cloud, &mut optim, &cfg, &mut rng).unwrap(),
            0
        );
        assert_eq!(cloud.len(), 1);
    }

    #[test]
    fn volumetric_clears_every_preexisting_violator() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        use rand::Rng;
        let prims: Vec<GaussianPrimitive> = (0..60)
            .map(|_| {
                let s = rng.gen_range(0.05..0.8);
                primitive(
                    [s, s * rng.gen_range(0.3..1.0), s * rng.gen_range(0.3..1.0)],
                    rng.gen_range(-1.0..2.0),
                )
            })
            .collect();
        let parent_volumes: Vec<f64> = prims
            .iter()
            .map(|p| ellipsoid_volume(&p.log_scales))
            .collect();
        let (mut cloud, mut optim) = setup(prims);
        let cfg = config();
        let n_before = cloud.len();
        let mut rng2 = ChaCha8Rng::seed_from_u64(22);
        let split = volumetric_densify(&mut cloud, &mut optim, &cfg, &mut rng2).unwrap();
        let expected: usize = parent_volumes
            .iter()
            .filter(|&&v| v > cfg.volume_threshold)
            .count();
        assert_eq!(split, expected);
        assert_eq!(cloud.len(), n_before - split + 2 * split);
        // Survivors from before the call all sit at or below the threshold.
        for i in 0..n_before - split {
            assert!(ellipsoid_volume(&cloud.log_scales[i]) <= cfg.volume_threshold);
        }
        // Children never grow past their parents, and a single call never
        // re-splits its own children.
        let max_parent = parent_volumes.iter().cloned().fold(0.0, f64::max);
        for i in n_before - split..cloud.len() {
            assert!(ellipsoid_volume(&cloud.log_scales[i]) <= max_parent);
        }
    }

    #[test]
    fn prune_removes_transparent_gaussians() {
        let (mut cloud, mut optim) = setup(vec![
            primitive([0.1; 3], 0.0),   // sigmoid = 0.5
            primitive([0.1; 3], -10.0), // sigmoid ≈ 4.5e-5
            primitive([0.1; 3], 0.5),
        ]);
        let removed = prune(&mut cloud, &mut optim, &config()).unwrap();
        assert_eq!(removed, 1);
        assert_eq!(cloud.len(), 2);
        assert_eq!(optim.len(), 2);
        assert_eq!(cloud.opacity_logits, vec![0.0, 0.5]);
    }

    #[test]
    fn prune_matches_brute_force_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        use rand::Rng;
        let prims: Vec<GaussianPrimitive> = (0..100)
            .map(|_| primitive([0.1; 3], rng.gen_range(-8.0..2.0)))
            .collect();
        let expected: Vec<f64> = prims
            .iter()
            .map(|p| p.opacity_logit)
            .filter(|&l| sigmoid(l) >= 0.005)
            .collect();
        let (mut cloud, mut optim) = setup(prims);
        prune(&mut cloud, &mut optim, &config()).unwrap();
        assert_eq!(cloud.opacity_logits, expected);
    }

    #[test]
    fn opacity_reset_clamps_to_one_percent() {
        let (mut cloud, mut optim) =
            setup(vec![primitive([0.1; 3], 2.0), primitive([0.1; 3], -8.0)]);
        opacity_reset(&mut cloud, &mut optim);
        assert_relative_eq!(sigmoid(cloud.opacity_logits[0]), 0.01, max_relative = 1e-12);
        // Already below the ceiling: untouched.
        assert_eq!(cloud.opacity_logits[1], -8.0);
    }

    #[test]
    fn cap_blocks_all_when_full() {
        let pending: Vec<PendingInsertion> = (0..5)
            .map(|k| PendingInsertion {
                priority: k as f64,
                parent: k,
                kind: PendingKind::Clone,
            })
            .collect();
        assert!(enforce_cap(100, 100, pending).is_empty());
    }

    #[test]
    fn cap_admits_highest_priority() {
        let pending: Vec<PendingInsertion> = (0..5)
            .map(|k| PendingInsertion {
                priority: k as f64,
                parent: k,
                kind: PendingKind::Clone,
            })
            .collect();
        let admitted = enforce_cap(98, 100, pending);
        assert_eq!(admitted.len(), 2);
        let parents: Vec<usize> = admitted.iter().map(|p| p.parent).collect();
        assert_eq!(parents, vec![3, 4]);
    }

    #[test]
    fn population_never_exceeds_cap_under_stress() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        use rand::Rng;
        let prims: Vec<GaussianPrimitive> = (0..40)
            .map(|_| {
                let s = rng.gen_range(0.05..0.6);
                primitive(
                    [s, s * rng.gen_range(0.3..1.0), s],
                    rng.gen_range(-6.0..3.0),
                )
            })
            .collect();
        let (mut cloud, mut optim) = setup(prims);
        let mut cfg = config();
        cfg.max_gaussians = 60;
        cfg.volume_threshold = 0.001;
        cfg.grad_threshold = 1e-9;
        for round in 0..20 {
            for i in 0..cloud.len() {
                cloud.adc_signal[i] = rng.gen_range(0.0..1.0);
                cloud.adc_touches[i] = 1;
            }
            gradient_densify(&mut cloud, &mut optim, &cfg, &mut rng).unwrap();
            assert!(
                cloud.len() <= 60,
                "cap exceeded after gradient round {round}"
            );
            volumetric_densify(&mut cloud, &mut optim, &cfg, &mut rng).unwrap();
            assert!(
                cloud.len() <= 60,
                "cap exceeded after volumetric round {round}"
            );
            prune(&mut cloud, &mut optim, &cfg).unwrap();
            cloud.check_consistency().unwrap();
            optim.check_matches(&cloud).unwrap();
        }
    }
}
