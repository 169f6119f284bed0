//! Training-view loading: image decode, box-filter downsampling, the view
//! cap, and optional scene normalization.

use std::path::Path;

use crate::camera::TrainingView;
use crate::image::ImageRgb;
use crate::scene::{SparsePoint, ViewRecord};
use crate::{Error, Result};

/// At most this many views are retained for training; larger sets are
/// subsampled with a uniform stride to keep viewpoint coverage.
pub const MAX_TRAINING_VIEWS: usize = 200;

/// Uniform-stride selection of `cap` indices out of `n` (all of them when
/// `n <= cap`).
pub fn stride_select(n: usize, cap: usize) -> Vec<usize> {
    if n <= cap {
        return (0..n).collect();
    }
    (0..cap).map(|i| i * n / cap).collect()
}

/// Loads ground-truth images for the given records, applying the view cap
/// and the downsampling factor (1, 2 or 4).
pub fn load_images(
    records: &[ViewRecord],
    images_dir: &Path,
    downsample: u32,
) -> Result<Vec<TrainingView>> {
    load_images_with_limit(records, images_dir, downsample, MAX_TRAINING_VIEWS)
}

pub fn load_images_with_limit(
    records: &[ViewRecord],
    images_dir: &Path,
    downsample: u32,
    limit: usize,
) -> Result<Vec<TrainingView>> {
    if ![1, 2, 4].contains(&downsample) {
        return Err(Error::InvalidParameter(format!(
            "downsample factor must be 1, 2 or 4, got {downsample}"
        )));
    }
    let selected = stride_select(records.len(), limit);
    let mut views = Vec::with_capacity(selected.len());
    for idx in selected {
        let record = &records[idx];
        let path = images_dir.join(&record.image_name);
        let image = ImageRgb::load(&path)?;
        if image.width != record.intrinsics.width as usize
            || image.height != record.intrinsics.height as usize
        {
            return Err(Error::DimensionMismatch(format!(
                "{}: image is {}x{} but calibration says {}x{}",
                path.display(),
                image.width,
                image.height,
                record.intrinsics.width,
                record.intrinsics.height
            )));
        }
        let image = image.downsample_box(downsample as usize);
        let view = TrainingView {
            intrinsics: record.intrinsics.downsampled(downsample),
            pose: record.pose.clone(),
            image,
            source_path: path,
            downsample,
        };
        view.validate()?;
        views.push(view);
    }
    Ok(views)
}

/// Rescales the scene so the camera-position bounding-box diagonal is 1,
/// making the world-space volume threshold comparable across scenes.
/// Returns the applied scale factor.
pub fn normalize_scene(points: &mut [SparsePoint], records: &mut [ViewRecord]) -> f64 {
    if records.is_empty() {
        return 1.0;
    }
    let centers: Vec<nalgebra::Vector3<f64>> =
        records.iter().map(|r| r.pose.camera_center()).collect();
    let mut lo = centers[0];
    let mut hi = centers[0];
    for c in &centers[1..] {
        lo = lo.inf(c);
        hi = hi.sup(c);
    }
    let diagonal = (hi - lo).norm();
    if diagonal < 1e-9 {
        return 1.0;
    }
    let scale = 1.0 / diagonal;
    for p in points.iter_mut() {
        p.position *= scale;
    }
    for r in records.iter_mut() {
        r.pose.translation *= scale;
    }
    scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{CameraIntrinsics, CameraModel, CameraPose};
    use crate::math::QUAT_IDENTITY;
    use nalgebra::Vector3;

    fn record(name: &str, width: u32, height: u32) -> ViewRecord {
        ViewRecord {
            intrinsics: CameraIntrinsics {
                fx: 1000.0,
                fy: 1000.0,
                cx: width as f64 / 2.0,
                cy: height as f64 / 2.0,
                width,
                height,
                model: CameraModel::Pinhole,
            },
            pose: CameraPose {
                rotation: QUAT_IDENTITY,
                translation: Vector3::zeros(),
            },
            image_name: name.to_string(),
        }
    }

    #[test]
    fn stride_select_covers_the_spec_case() {
        let sel = stride_select(300, 200);
        assert_eq!(sel.len(), 200);
        // Oracle: indices are floor(i·300/200), strictly increasing and
        // spanning the full range.
        for (i, &s) in sel.iter().enumerate() {
            assert_eq!(s, i * 300 / 200);
        }
        assert_eq!(sel[0], 0);
        assert_eq!(*sel.last().unwrap(), 298);
        let mut sorted = sel.clone();
        sorted.dedup();
        assert_eq!(sorted.len(), 200, "strided indices must be distinct");
    }

    #[test]
    fn stride_select_is_identity_below_cap() {
        assert_eq!(stride_select(5, 200), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn constant_image_downsamples_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageRgb::constant(8, 8, [100.0 / 255.0, 150.0 / 255.0, 200.0 / 255.0]);
        img.save_png(&dir.path().join("v.png")).unwrap();
        let views = load_images(&[record("v.png", 8, 8)], dir.path(), 2).unwrap();
        assert_eq!(views.len(), 1);
        let v = &views[0];
        assert_eq!(v.image.width, 4);
        assert_eq!(v.intrinsics.fx, 500.0);
        assert_eq!(v.intrinsics.width, 4);
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(v.image.pixel(x, y), img.pixel(0, 0));
            }
        }
    }

    #[test]
    fn missing_image_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = load_images(&[record("absent.png", 8, 8)], dir.path(), 1);
        assert!(matches!(
            out,
            Err(Error::Image { .. }) | Err(Error::Io { .. })
        ));
    }

    #[test]
    fn view_cap_applies_uniform_stride() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageRgb::constant(4, 4, [0.5; 3]);
        img.save_png(&dir.path().join("v.png")).unwrap();
        let records: Vec<ViewRecord> = (0..10).map(|_| record("v.png", 4, 4)).collect();
        let views = load_images_with_limit(&records, dir.path(), 1, 7).unwrap();
        assert_eq!(views.len(), 7);
    }

    #[test]
    fn normalize_scene_unit_diagonal() {
        let mut records = vec![record("a.png", 4, 4), record("b.png", 4, 4)];
        records[1].pose.translation = Vector3::new(-3.0, -4.0, 0.0);
        let mut points = vec![SparsePoint {
            position: Vector3::new(10.0, 0.0, 0.0),
            color: [0.5; 3],
        }];
        let scale = normalize_scene(&mut points, &mut records);
        // Camera centers are (0,0,0) and (3,4,0): diagonal 5.
        assert!((scale - 0.2).abs() < 1e-12);
        assert!((points[0].position.x - 2.0).abs() < 1e-12);
        let centers: Vec<_> = records.iter().map(|r| r.pose.camera_center()).collect();
        assert!(((centers[0] - centers[1]).norm() - 1.0).abs() < 1e-12);
    }
}
