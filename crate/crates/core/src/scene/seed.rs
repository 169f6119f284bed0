//! Seeds the initial Gaussian population from a sparse point cloud: one
//! isotropic Gaussian per point, sized by the mean distance to its three
//! nearest neighbors, with opacity 0.1 and DC color from the point RGB.

use nalgebra::Vector3;

use crate::cloud::GaussianCloud;
use crate::gaussian::GaussianPrimitive;
use crate::math::{logit, QUAT_IDENTITY};
use crate::render::sh::channel_to_dc;
use crate::scene::SparsePoint;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct SeedConfig {
    pub sh_degree: usize,
    /// Scene extent in world units; sizes the fallback scale when there are
    /// too few points for a neighbor estimate.
    pub scene_extent: f64,
    pub initial_opacity: f64,
}

impl SeedConfig {
    pub fn new(sh_degree: usize, scene_extent: f64) -> Self {
        SeedConfig {
            sh_degree,
            scene_extent,
            initial_opacity: 0.1,
        }
    }
}

/// Distance floor guarding against coincident points collapsing a scale to
/// zero.
const MIN_NEIGHBOR_DISTANCE: f64 = 1e-7;

pub fn seed_cloud(points: &[SparsePoint], config: &SeedConfig) -> Result<GaussianCloud> {
    if points.is_empty() {
        return Err(Error::InvalidParameter(
            "need at least 1 point to seed".into(),
        ));
    }
    let scales: Vec<f64> = if points.len() < 4 {
        vec![0.01 * config.scene_extent; points.len()]
    } else {
        let tree = KdTree::build(points);
        points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut nearest = [f64::INFINITY; 3];
                tree.three_nearest(i as u32, &p.position, &mut nearest);
                let mean = (nearest[0].sqrt() + nearest[1].sqrt() + nearest[2].sqrt()) / 3.0;
                mean.max(MIN_NEIGHBOR_DISTANCE)
            })
            .collect()
    };

    let n_coeffs = GaussianPrimitive::sh_coeff_count(config.sh_degree);
    let opacity_logit = logit(config.initial_opacity);
    let mut cloud = GaussianCloud::new(config.sh_degree);
    for (point, &scale) in points.iter().zip(&scales) {
        let mut sh = vec![0.0; 3 * n_coeffs];
        for ch in 0..3 {
            sh[ch * n_coeffs] = channel_to_dc(point.color[ch]);
        }
        cloud.push(GaussianPrimitive {
            position: point.position,
            rotation: QUAT_IDENTITY,
            log_scales: Vector3::from_element(scale.ln()),
            opacity_logit,
            sh_coeffs: sh,
        })?;
    }
    Ok(cloud)
}

/// Minimal kd-tree over point positions for 3-nearest-neighbor queries.
struct KdTree {
    /// Point index per node slot, kd-ordered in place.
    order: Vec<u32>,
    points: Vec<[f64; 3]>,
}

impl KdTree {
    fn build(points: &[SparsePoint]) -> KdTree {
        let coords: Vec<[f64; 3]> = points
            .iter()
            .map(|p| [p.position.x, p.position.y, p.position.z])
            .collect();
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut tree = KdTree {
            order: Vec::new(),
            points: coords,
        };
        Self::build_range(&tree.points, &mut order, 0);
        tree.order = order;
        tree
    }

    fn build_range(points: &[[f64; 3]], order: &mut [u32], axis: usize) {
        if order.len() <= 1 {
            return;
        }
        let mid = order.len() / 2;
        order.select_nth_unstable_by(mid, |&a, &b| {
            points[a as usize][axis]
                .partial_cmp(&points[b as usize][axis])
                .unwrap()
        });
        let (left, rest) = order.split_at_mut(mid);
        let next = (axis + 1) % 3;
        Self::build_range(points, left, next);
        Self::build_range(points, &mut rest[1..], next);
    }

    /// Squared distances to the three nearest points other than the query
    /// point itself (duplicates at other indices count), ascending. Assumes
    /// at least 4 points.
    fn three_nearest(&self, query_index: u32, query: &Vector3<f64>, best: &mut [f64; 3]) {
        let q = [query.x, query.y, query.z];
        self.search(&self.order, 0, query_index, &q, best);
    }

    fn search(&self, range: &[u32], axis: usize, skip: u32, q: &[f64; 3], best: &mut [f64; 3]) {
        if range.is_empty() {
            return;
        }
        let mid = range.len() / 2;
        let p = &self.points[range[mid] as usize];
        let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
        if range[mid] != skip && d2 < best[2] {
            best[2] = d2;
            if best[2] < best[1] {
                best.swap(1, 2);
            }
            if best[1] < best[0] {
                best.swap(0, 1);
            }
        }
        let delta = q[axis] - p[axis];
        let next = (axis + 1) % 3;
        let (near, far) = if delta < 0.0 {
            (&range[..mid], &range[mid + 1..])
        } else {
            (&range[mid + 1..], &range[..mid])
        };
        self.search(near, next, skip, q, best);
        if delta * delta < best[2] {
            self.search(far, next, skip, q, best);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn point(x: f64, y: f64, z: f64) -> SparsePoint {
        SparsePoint {
            position: Vector3::new(x, y, z),
            color: [0.5, 0.5, 0.5],
        }
    }

    #[test]
    fn tetrahedron_scales_equal_mean_neighbor_distance() {
        // Regular tetrahedron with unit edge length.
        let h = 0.5f64;
        let points = vec![
            point(h, h, h),
            point(h, -h, -h),
            point(-h, h, -h),
            point(-h, -h, h),
        ];
        // All pairwise distances are sqrt(2).
        let cloud = seed_cloud(&points, &SeedConfig::new(0, 1.0)).unwrap();
        for ls in &cloud.log_scales {
            assert_relative_eq!(ls.x.exp(), 2.0f64.sqrt(), max_relative = 1e-12);
            assert_eq!(ls.x, ls.y);
            assert_eq!(ls.x, ls.z);
        }
    }

    #[test]
    fn single_point_uses_extent_fallback() {
        let cloud = seed_cloud(&[point(0.0, 0.0, 0.0)], &SeedConfig::new(0, 10.0)).unwrap();
        assert_relative_eq!(cloud.log_scales[0].x.exp(), 0.1, max_relative = 1e-12);
        assert_relative_eq!(
            crate::math::sigmoid(cloud.opacity_logits[0]),
            0.1,
            max_relative = 1e-12
        );
    }

    #[test]
    fn gray_points_have_zero_dc() {
        let cloud = seed_cloud(&[point(0.0, 0.0, 0.0)], &SeedConfig::new(2, 1.0)).unwrap();
        assert!(cloud.sh_coeffs.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn knn_scales_match_brute_force_on_random_clouds() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let points: Vec<SparsePoint> = (0..200)
            .map(|_| {
                point(
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                )
            })
            .collect();
        let cloud = seed_cloud(&points, &SeedConfig::new(0, 1.0)).unwrap();
        for (i, p) in points.iter().enumerate() {
            // Oracle: all-pairs distances, sorted.
            let mut dists: Vec<f64> = points
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, o)| (o.position - p.position).norm())
                .collect();
            dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let expected = (dists[0] + dists[1] + dists[2]) / 3.0;
            assert_relative_eq!(cloud.log_scales[i].x.exp(), expected, max_relative = 1e-9);
        }
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(seed_cloud(&[], &SeedConfig::new(0, 1.0)).is_err());
    }
}
