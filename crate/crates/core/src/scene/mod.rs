//! Scene ingestion: sparse reconstructions, camera calibrations, images,
//! cloud seeding, and checkpoint interchange.

pub mod checkpoint;
pub mod colmap;
pub mod ply;
pub mod seed;
pub mod views;

use nalgebra::Vector3;

use crate::camera::{CameraIntrinsics, CameraPose};

pub use checkpoint::{export_checkpoint, import_checkpoint};
pub use colmap::load_colmap_sparse;
pub use ply::load_ply_points;
pub use seed::{seed_cloud, SeedConfig};
pub use views::{load_images, normalize_scene, MAX_TRAINING_VIEWS};

/// One point of an externally produced sparse reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsePoint {
    pub position: Vector3<f64>,
    /// RGB in `[0, 1]`.
    pub color: [f64; 3],
}

/// A calibrated, posed image reference prior to pixel loading.
#[derive(Debug, Clone)]
pub struct ViewRecord {
    pub intrinsics: CameraIntrinsics,
    pub pose: CameraPose,
    pub image_name: String,
}
