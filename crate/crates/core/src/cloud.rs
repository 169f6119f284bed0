//! The mutable Gaussian population, stored structure-of-arrays together with
//! the per-primitive densification statistics the refiner reads.

use nalgebra::Vector3;

use crate::gaussian::GaussianPrimitive;
use crate::math::Quat;
use crate::{Error, Result};

/// Population of N Gaussians plus the accumulated screen-space gradient
/// statistics densification consumes. All arrays have length N; mutation goes
/// through [`GaussianCloud::push`] / [`GaussianCloud::retain_mask`] so they
/// stay in lockstep.
#[derive(Debug, Clone, Default)]
pub struct GaussianCloud {
    pub positions: Vec<Vector3<f64>>,
    pub rotations: Vec<Quat>,
    pub log_scales: Vec<Vector3<f64>>,
    pub opacity_logits: Vec<f64>,
    /// Flat SH coefficients, `3 * sh_coeff_count` per Gaussian, channel-major.
    pub sh_coeffs: Vec<f64>,
    pub sh_degree: usize,
    /// Accumulated norm of the view-space positional gradient since the last
    /// densification, per Gaussian.
    pub adc_signal: Vec<f64>,
    /// Number of renders in which the Gaussian was projected since the last
    /// densification.
    pub adc_touches: Vec<u32>,
}

impl GaussianCloud {
    pub fn new(sh_degree: usize) -> Self {
        GaussianCloud {
            sh_degree,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// SH coefficients per color channel.
    pub fn sh_coeff_count(&self) -> usize {
        GaussianPrimitive::sh_coeff_count(self.sh_degree)
    }

    /// Stride of one Gaussian's SH block in `sh_coeffs`.
    pub fn sh_stride(&self) -> usize {
        3 * self.sh_coeff_count()
    }

    pub fn sh_block(&self, index: usize) -> &[f64] {
        let stride = self.sh_stride();
        &self.sh_coeffs[index * stride..(index + 1) * stride]
    }

    pub fn push(&mut self, g: GaussianPrimitive) -> Result<()> {
        if g.sh_coeffs.len() != self.sh_stride() {
            return Err(Error::DimensionMismatch(format!(
                "primitive carries {} SH coefficients, cloud of degree {} expects {}",
                g.sh_coeffs.len(),
                self.sh_degree,
                self.sh_stride()
            )));
        }
        self.positions.push(g.position);
        self.rotations.push(g.rotation);
        self.log_scales.push(g.log_scales);
        self.opacity_logits.push(g.opacity_logit);
        self.sh_coeffs.extend_from_slice(&g.sh_coeffs);
        self.adc_signal.push(0.0);
        self.adc_touches.push(0);
        Ok(())
    }

    pub fn get(&self, index: usize) -> GaussianPrimitive {
        GaussianPrimitive {
            position: self.positions[index],
            rotation: self.rotations[index],
            log_scales: self.log_scales[index],
            opacity_logit: self.opacity_logits[index],
            sh_coeffs: self.sh_block(index).to_vec(),
        }
    }

    /// Keeps exactly the rows flagged in `keep` (length N), preserving order.
    #[allow(clippy::needless_range_loop)]
    pub fn retain_mask(&mut self, keep: &[bool]) {
        assert_eq!(keep.len(), self.len());
        let stride = self.sh_stride();
        let mut write = 0;
        for read in 0..self.len() {
            if keep[read] {
                if write != read {
                    self.positions[write] = self.positions[read];
                    self.rotations[write] = self.rotations[read];
                    self.log_scales[write] = self.log_scales[read];
                    self.opacity_logits[write] = self.opacity_logits[read];
                    self.adc_signal[write] = self.adc_signal[read];
                    self.adc_touches[write] = self.adc_touches[read];
                    let (dst, src) = (write * stride, read * stride);
                    for k in 0..stride {
                        self.sh_coeffs[dst + k] = self.sh_coeffs[src + k];
                    }
                }
                write += 1;
            }
        }
        self.positions.truncate(write);
        self.rotations.truncate(write);
        self.log_scales.truncate(write);
        self.opacity_logits.truncate(write);
        self.adc_signal.truncate(write);
        self.adc_touches.truncate(write);
        self.sh_coeffs.truncate(write * stride);
    }

    pub fn reset_adc_stats(&mut self) {
        self.adc_signal.iter_mut().for_each(|v| *v = 0.0);
        self.adc_touches.iter_mut().for_each(|v| *v = 0);
    }

    /// Checks that every parallel array has length N; used by tests and
    /// debug assertions after densification.
    pub fn check_consistency(&self) -> Result<()> {
        let n = self.len();
        let ok = self.rotations.len() == n
            && self.log_scales.len() == n
            && self.opacity_logits.len() == n
            && self.adc_signal.len() == n
            && self.adc_touches.len() == n
            && self.sh_coeffs.len() == n * self.sh_stride();
        if ok {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(
                "cloud parallel arrays diverged".into(),
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::QUAT_IDENTITY;

    fn primitive(x: f64, degree: usize) -> GaussianPrimitive {
        GaussianPrimitive {
            position: Vector3::new(x, 0.0, 0.0),
            rotation: QUAT_IDENTITY,
            log_scales: Vector3::zeros(),
            opacity_logit: 0.0,
            sh_coeffs: vec![x; 3 * GaussianPrimitive::sh_coeff_count(degree)],
        }
    }

    #[test]
    fn push_get_roundtrip() {
        let mut cloud = GaussianCloud::new(1);
        cloud.push(primitive(1.0, 1)).unwrap();
        cloud.push(primitive(2.0, 1)).unwrap();
        assert_eq!(cloud.len(), 2);
        cloud.check_consistency().unwrap();
        assert_eq!(cloud.get(1).position.x, 2.0);
        assert_eq!(cloud.get(1).sh_coeffs, vec![2.0; 12]);
    }

    #[test]
    fn push_rejects_wrong_sh_length() {
        let mut cloud = GaussianCloud::new(2);
        assert!(cloud.push(primitive(1.0, 1)).is_err());
    }

    #[test]
    fn retain_mask_keeps_order() {
        let mut cloud = GaussianCloud::new(0);
        for k in 0..5 {
            cloud.push(primitive(k as f64, 0)).unwrap();
        }
        cloud.retain_mask(&[true, false, true, false, true]);
        assert_eq!(cloud.len(), 3);
        cloud.check_consistency().unwrap();
        let xs: Vec<f64> = cloud.positions.iter().map(|p| p.x).collect();
        assert_eq!(xs, vec![0.0, 2.0, 4.0]);
        assert_eq!(
            cloud.sh_coeffs,
            vec![0.0, 0.0, 0.0, 2.0, 2.0, 2.0, 4.0, 4.0, 4.0]
        );
    }
}
