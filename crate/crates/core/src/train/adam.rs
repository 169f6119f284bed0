//! Adam over all primitive parameters, with per-group learning rates and an
//! exponentially decayed positional rate.

use nalgebra::Vector3;

use crate::autograd::ParamGradients;
use crate::cloud::GaussianCloud;
use crate::math;
use crate::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-15;

/// Per-group learning rates. The positional rate is scaled by the scene
/// extent and decays exponentially over `position_decay_steps`.
#[derive(Debug, Clone)]
pub struct LearningRates {
    pub position_init: f64,
    pub position_final: f64,
    pub position_decay_steps: u64,
    pub sh_dc: f64,
    pub sh_rest: f64,
    pub opacity: f64,
    pub log_scales: f64,
    pub rotation: f64,
}

impl LearningRates {
    pub fn for_scene_extent(extent: f64) -> Self {
        LearningRates {
            position_init: 1.6e-4 * extent,
            position_final: 1.6e-6 * extent,
            position_decay_steps: 30_000,
            sh_dc: 2.5e-3,
            sh_rest: 2.5e-3 / 20.0,
            opacity: 5e-2,
            log_scales: 5e-3,
            rotation: 1e-3,
        }
    }

    /// Log-linear interpolation from the initial to the final rate.
    pub fn position_lr(&self, iteration: u64) -> f64 {
        let t = (iteration as f64 / self.position_decay_steps as f64).clamp(0.0, 1.0);
        (self.position_init.ln() * (1.0 - t) + self.position_final.ln() * t).exp()
    }
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates::for_scene_extent(1.0)
    }
}

/// Adam moments, kept row-aligned with the cloud through every densify and
/// prune operation.
#[derive(Debug, Clone)]
pub struct OptimState {
    pub iteration: u64,
    pub lrs: LearningRates,
    sh_stride: usize,
    sh_coeff_count: usize,
    m_positions: Vec<Vector3<f64>>,
    v_positions: Vec<Vector3<f64>>,
    m_rotations: Vec<[f64; 4]>,
    v_rotations: Vec<[f64; 4]>,
    m_log_scales: Vec<Vector3<f64>>,
    v_log_scales: Vec<Vector3<f64>>,
    m_opacity: Vec<f64>,
    v_opacity: Vec<f64>,
    m_sh: Vec<f64>,
    v_sh: Vec<f64>,
}

impl OptimState {
    pub fn new(cloud: &GaussianCloud, lrs: LearningRates) -> Self {
        let n = cloud.len();
        OptimState {
            iteration: 0,
            lrs,
            sh_stride: cloud.sh_stride(),
            sh_coeff_count: cloud.sh_coeff_count(),
            m_positions: vec![Vector3::zeros(); n],
            v_positions: vec![Vector3::zeros(); n],
            m_rotations: vec![[0.0; 4]; n],
            v_rotations: vec![[0.0; 4]; n],
            m_log_scales: vec![Vector3::zeros(); n],
            v_log_scales: vec![Vector3::zeros(); n],
            m_opacity: vec![0.0; n],
            v_opacity: vec![0.0; n],
            m_sh: vec![0.0; n * cloud.sh_stride()],
            v_sh: vec![0.0; n * cloud.sh_stride()],
        }
    }

    pub fn len(&self) -> usize {
        self.m_positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m_positions.is_empty()
    }

    /// Appends zeroed moment rows for a freshly inserted Gaussian.
    pub fn push_zero(&mut self) {
        self.m_positions.push(Vector3::zeros());
        self.v_positions.push(Vector3::zeros());
        self.m_rotations.push([0.0; 4]);
        self.v_rotations.push([0.0; 4]);
        self.m_log_scales.push(Vector3::zeros());
        self.v_log_scales.push(Vector3::zeros());
        self.m_opacity.push(0.0);
        self.v_opacity.push(0.0);
        self.m_sh.resize(self.m_sh.len() + self.sh_stride, 0.0);
        self.v_sh.resize(self.v_sh.len() + self.sh_stride, 0.0);
    }

    /// Drops moment rows in lockstep with `GaussianCloud::retain_mask`.
    pub fn retain_mask(&mut self, keep: &[bool]) {
        assert_eq!(keep.len(), self.len());
        retain_vec(&mut self.m_positions, keep);
        retain_vec(&mut self.v_positions, keep);
        retain_vec(&mut self.m_rotations, keep);
        retain_vec(&mut self.v_rotations, keep);
        retain_vec(&mut self.m_log_scales, keep);
        retain_vec(&mut self.v_log_scales, keep);
        retain_vec(&mut self.m_opacity, keep);
        retain_vec(&mut self.v_opacity, keep);
        retain_strided(&mut self.m_sh, keep, self.sh_stride);
        retain_strided(&mut self.v_sh, keep, self.sh_stride);
    }

    /// Clears the opacity moments; applied together with opacity resets so
    /// stale momentum does not immediately undo them.
    pub fn zero_opacity_moments(&mut self) {
        self.m_opacity.iter_mut().for_each(|v| *v = 0.0);
        self.v_opacity.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn check_matches(&self, cloud: &GaussianCloud) -> Result<()> {
        if self.len() != cloud.len() || self.m_sh.len() != cloud.sh_coeffs.len() {
            return Err(Error::DimensionMismatch(format!(
                "optimizer tracks {} rows, cloud has {}",
                self.len(),
                cloud.len()
            )));
        }
        Ok(())
    }
}

fn retain_vec<T: Copy>(v: &mut Vec<T>, keep: &[bool]) {
    let mut k = 0;
    v.retain(|_| {
        let r = keep[k];
        k += 1;
        r
    });
}

fn retain_strided(v: &mut Vec<f64>, keep: &[bool], stride: usize) {
    let mut write = 0;
    for (read, &k) in keep.iter().enumerate() {
        if k {
            if write != read {
                let (dst, src) = (write * stride, read * stride);
                for o in 0..stride {
                    v[dst + o] = v[src + o];
                }
            }
            write += 1;
        }
    }
    v.truncate(write * stride);
}

#[inline]
fn adam_update(p: &mut f64, g: f64, m: &mut f64, v: &mut f64, lr: f64, bc1: f64, bc2: f64) {
    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
    let m_hat = *m / bc1;
    let v_hat = *v / bc2;
    *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
}

/// One Adam step over every parameter array; quaternions are renormalized
/// afterwards.
pub fn adam_step(
    cloud: &mut GaussianCloud,
    grads: &ParamGradients,
    state: &mut OptimState,
) -> Result<()> {
    state.check_matches(cloud)?;
    if grads.positions.len() != cloud.len() || grads.sh_coeffs.len() != cloud.sh_coeffs.len() {
        return Err(Error::DimensionMismatch(format!(
            "gradients cover {} Gaussians, cloud has {}",
            grads.positions.len(),
            cloud.len()
        )));
    }
    state.iteration += 1;
    let t = state.iteration;
    let bc1 = 1.0 - ADAM_BETA1.powi(t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(t as i32);
    let lr_pos = state.lrs.position_lr(t);
    let n_coeffs = state.sh_coeff_count;

    for i in 0..cloud.len() {
        for a in 0..3 {
            adam_update(
                &mut cloud.positions[i][a],
                grads.positions[i][a],
                &mut state.m_positions[i][a],
                &mut state.v_positions[i][a],
                lr_pos,
                bc1,
                bc2,
            );
            adam_update(
                &mut cloud.log_scales[i][a],
                grads.log_scales[i][a],
                &mut state.m_log_scales[i][a],
                &mut state.v_log_scales[i][a],
                state.lrs.log_scales,
                bc1,
                bc2,
            );
        }
        for c in 0..4 {
            adam_update(
                &mut cloud.rotations[i][c],
                grads.rotations[i][c],
                &mut state.m_rotations[i][c],
                &mut state.v_rotations[i][c],
                state.lrs.rotation,
                bc1,
                bc2,
            );
        }
        adam_update(
            &mut cloud.opacity_logits[i],
            grads.opacity_logits[i],
            &mut state.m_opacity[i],
            &mut state.v_opacity[i],
            state.lrs.opacity,
            bc1,
            bc2,
        );
        let base = i * state.sh_stride;
        for k in 0..state.sh_stride {
            let lr = if k % n_coeffs == 0 {
                state.lrs.sh_dc
            } else {
                state.lrs.sh_rest
            };
            adam_update(
                &mut cloud.sh_coeffs[base + k],
                grads.sh_coeffs[base + k],
                &mut state.m_sh[base + k],
                &mut state.v_sh[base + k],
                lr,
                bc1,
                bc2,
            );
        }
        if let Ok(q) = math::quat_normalize(&cloud.rotations[i]) {
            cloud.rotations[i] = q;
        }
    }
    Ok(())
}
