use std::collections::VecDeque;

use rayon::prelude::*;

use super::{fit_best_primitive, Configuration, Primitive, Weights};
use crate::geometry::SpatialIndex;
use crate::{Error, PointCloud, Result};

/// Parameters of the curvature-based region growing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionGrowing {
    pub k: usize,
    /// Largest angle (radians) between neighbouring normals inside a region.
    pub angle_threshold: f64,
    /// Points at or above this curvature never join a region.
    pub curvature_threshold: f64,
    pub min_points: usize,
    pub epsilon: f64,
    pub weights: Weights,
}

impl Default for RegionGrowing {
    fn default() -> Self {
        RegionGrowing {
            k: 12,
            angle_threshold: 20f64.to_radians(),
            curvature_threshold: 0.05,
            min_points: 30,
            epsilon: 0.1,
            weights: Weights::default(),
        }
    }
}

/// Coarse segmentation: regions grown from low-curvature seeds over the
/// k-nearest-neighbour graph, each fitted with its best primitive kind.
///
/// A region's primitive keeps only the region points within `epsilon` of the
/// fitted shape; regions left with fewer than `min_points` are dropped.
pub fn region_grow(cloud: &PointCloud, params: &RegionGrowing) -> Result<Configuration> {
    let (Some(normals), Some(curv)) = (cloud.normals(), cloud.curvatures()) else {
        return Err(Error::InvalidArgument("region growing needs normals and curvatures".into()));
    };
    let mut config = Configuration::new(cloud.len(), params.min_points, params.epsilon, params.weights)?;
    let n = cloud.len();
    if n == 0 {
        return Ok(config);
    }
    let pts = cloud.points();
    let tree = SpatialIndex::new(pts);
    let k = params.k.min(n - 1).max(1);
    let graph: Vec<Vec<usize>> = pts
        .par_iter()
        .map(|p| tree.knn(p, k + 1).into_iter().map(|(i, _)| i).collect())
        .collect();
    let cos_limit = params.angle_threshold.cos();

    let mut order: Vec<usize> = (0..n).filter(|&i| curv[i] < params.curvature_threshold).collect();
    order.sort_by(|&a, &b| curv[a].partial_cmp(&curv[b]).unwrap().then(a.cmp(&b)));

    let mut region_of = vec![usize::MAX; n];
    let mut regions: Vec<Vec<usize>> = Vec::new();
    for &seed in &order {
        if region_of[seed] != usize::MAX {
            continue;
        }
        let id = regions.len();
        let mut members = vec![seed];
        region_of[seed] = id;
        let mut queue = VecDeque::from([seed]);
        while let Some(i) = queue.pop_front() {
            for &j in &graph[i] {
                if region_of[j] != usize::MAX || curv[j] >= params.curvature_threshold {
                    continue;
                }
                if normals[i].dot(&normals[j]).abs() < cos_limit {
                    continue;
                }
                region_of[j] = id;
                members.push(j);
                queue.push_back(j);
            }
        }
        regions.push(members);
    }

    let fitted: Vec<Option<Primitive>> = regions
        .par_iter()
        .filter(|r| r.len() >= params.min_points)
        .map(|r| {
            let prim = fit_best_primitive(cloud, r).ok()?;
            let kept = Primitive::within(prim.shape, cloud, r, params.epsilon);
            (kept.inliers.len() >= params.min_points).then_some(kept)
        })
        .collect();
    config.primitives = fitted.into_iter().flatten().collect();
    // keep the configuration within its ⌊n/σ⌋ budget, largest primitives first
    let budget = config.n_sigma().max(1);
    if config.primitives.len() > budget {
        config.primitives.sort_by_key(|p| std::cmp::Reverse(p.inliers.len()));
        config.primitives.truncate(budget);
    }
    log::debug!("region growing: {} regions, {} primitives", regions.len(), config.primitives.len());
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::estimate_normals_and_curvature;
    use crate::primitives::PrimitiveKind;
    use crate::Point3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn prepared(pts: Vec<Point3>) -> PointCloud {
        estimate_normals_and_curvature(&PointCloud::new(pts).unwrap(), 12).unwrap().cloud
    }

    #[test]
    fn two_perpendicular_planes() {
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            pts.push(Point3::new(rng.random_range(0.0..3.0), rng.random_range(0.0..3.0), 0.0));
            truth.push(0);
        }
        for _ in 0..1000 {
            pts.push(Point3::new(rng.random_range(0.0..3.0), 0.0, rng.random_range(0.05..3.0)));
            truth.push(1);
        }
        let cloud = prepared(pts);
        let config = region_grow(&cloud, &RegionGrowing::default()).unwrap();
        assert_eq!(config.primitives.len(), 2);
        assert!(config.primitives.iter().all(|p| p.kind() == PrimitiveKind::Plane));
        config.validate(&cloud).unwrap();
        let labels = config.labels();
        // map each primitive to its majority truth label
        let mut correct = 0;
        for p in &config.primitives {
            let ones = p.inliers.iter().filter(|&&i| truth[i] == 1).count();
            correct += ones.max(p.inliers.len() - ones);
        }
        assert!(correct as f64 >= 0.95 * 2000.0, "{correct}");
        assert_eq!(labels.len(), 2000);
    }

    #[test]
    fn single_plane() {
        let pts: Vec<Point3> = (0..900).map(|i| Point3::new((i % 30) as f64 * 0.1, (i / 30) as f64 * 0.1, 2.0)).collect();
        let config = region_grow(&prepared(pts), &RegionGrowing::default()).unwrap();
        assert_eq!(config.primitives.len(), 1);
    }

    #[test]
    fn noise_ball_gives_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut pts = Vec::new();
        while pts.len() < 1500 {
            let p = Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            if p.coords.norm() <= 1.0 {
                pts.push(p);
            }
        }
        let params = RegionGrowing {
            curvature_threshold: 0.02,
            ..RegionGrowing::default()
        };
        let config = region_grow(&prepared(pts), &params).unwrap();
        assert!(config.primitives.is_empty());
    }

    #[test]
    fn requires_normals() {
        let cloud = PointCloud::new(vec![Point3::origin(); 4]).unwrap();
        assert!(region_grow(&cloud, &RegionGrowing::default()).is_err());
    }
}
