//! Posed pinhole cameras and the training views built from them.

use std::path::PathBuf;

use nalgebra::{Matrix3, Vector3};

use crate::image::ImageRgb;
use crate::math::{self, Quat};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CameraModel {
    Pinhole,
    SimplePinhole,
}

/// Pinhole intrinsics in pixel units.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub model: CameraModel,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64)
            || !(self.cy > 0.0 && self.cy < self.height as f64)
        {
            return Err(Error::InvalidParameter(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Intrinsics for an image downsampled by `factor`.
    pub fn downsampled(&self, factor: u32) -> CameraIntrinsics {
        let f = factor as f64;
        CameraIntrinsics {
            fx: self.fx / f,
            fy: self.fy / f,
            cx: self.cx / f,
            cy: self.cy / f,
            width: self.width / factor,
            height: self.height / factor,
            model: self.model,
        }
    }
}

/// World-to-camera rigid transform: `x_cam = R(q) · x_world + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraPose {
    /// Unit quaternion, scalar-first.
    pub rotation: Quat,
    pub translation: Vector3<f64>,
}

impl CameraPose {
    pub fn validate(&self) -> Result<()> {
        let n = math::quat_norm(&self.rotation);
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidParameter(format!(
                "pose quaternion norm {n} is not within 1e-6 of 1"
            )));
        }
        Ok(())
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        math::rotation_from_unit_quat(&self.rotation)
    }

    /// Camera center in world coordinates, `-Rᵀ t`.
    pub fn camera_center(&self) -> Vector3<f64> {
        -(self.rotation_matrix().transpose() * self.translation)
    }
}

/// A posed camera with its ground-truth image.
#[derive(Debug, Clone)]
pub struct TrainingView {
    pub intrinsics: CameraIntrinsics,
    pub pose: CameraPose,
    pub image: ImageRgb,
    pub source_path: PathBuf,
    pub downsample: u32,
}

impl TrainingView {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        self.pose.validate()?;
        if self.image.width != self.intrinsics.width as usize
            || self.image.height != self.intrinsics.height as usize
        {
            return Err(Error::DimensionMismatch(format!(
                "image is {}x{} but intrinsics say {}x{}",
                self.image.width, self.image.height, self.intrinsics.width, self.intrinsics.height
            )));
        }
        Ok(())
    }
}

/// Scene extent used to scale learning rates and densification sizes:
/// 1.1 × the largest camera-center distance from the mean center.
pub fn scene_extent(views: &[TrainingView]) -> f64 {
    if views.is_empty() {
        return 1.0;
    }
    let centers: Vec<Vector3<f64>> = views.iter().map(|v| v.pose.camera_center()).collect();
    let mean = centers.iter().sum::<Vector3<f64>>() / centers.len() as f64;
    let radius = centers
        .iter()
        .map(|c| (c - mean).norm())
        .fold(0.0, f64::max);
    if radius > 1e-9 {
        1.1 * radius
    } else {
        1.0
    }
}
