use rayon::prelude::*;

use super::Configuration;
use crate::{Error, PointCloud, Result, TriangleMesh};

/// Deviation of the segmented patches from the CAD surface.
#[derive(Debug, Clone, PartialEq)]
pub struct PartError {
    /// Mean over patches of the patch distance.
    pub average: f64,
    /// Largest patch distance.
    pub maximum: f64,
    /// Per patch: mean inlier distance to the mesh.
    pub patch_mean: Vec<f64>,
    /// Per patch: largest inlier distance to the mesh.
    pub patch_max: Vec<f64>,
}

/// Patch distance is the mean point-to-mesh distance over a primitive's inliers.
pub fn part_level_error(config: &Configuration, cloud: &PointCloud, mesh: &TriangleMesh) -> Result<PartError> {
    if config.primitives.is_empty() {
        return Err(Error::InvalidArgument("part-level error needs at least one primitive".into()));
    }
    let pts = cloud.points();
    let per_patch: Vec<(f64, f64)> = config
        .primitives
        .iter()
        .map(|p| {
            let d: Vec<f64> = p.inliers.par_iter().map(|&i| mesh.distance(&pts[i])).collect();
            let mean = d.iter().sum::<f64>() / d.len().max(1) as f64;
            (mean, d.iter().copied().fold(0.0, f64::max))
        })
        .collect();
    let patch_mean: Vec<f64> = per_patch.iter().map(|p| p.0).collect();
    let patch_max: Vec<f64> = per_patch.iter().map(|p| p.1).collect();
    Ok(PartError {
        average: patch_mean.iter().sum::<f64>() / patch_mean.len() as f64,
        maximum: patch_mean.iter().copied().fold(0.0, f64::max),
        patch_mean,
        patch_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::primitives::{Primitive, Shape, Weights};
    use crate::{Point3, Vector3};

    fn square(z: f64) -> TriangleMesh {
        TriangleMesh::new(
            vec![
                Point3::new(0.0, 0.0, z),
                Point3::new(1.0, 0.0, z),
                Point3::new(1.0, 1.0, z),
                Point3::new(0.0, 1.0, z),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    fn grid(z: f64) -> Vec<Point3> {
        (0..100).map(|i| Point3::new((i % 10) as f64 * 0.1 + 0.05, (i / 10) as f64 * 0.1 + 0.05, z)).collect()
    }

    fn plane_config(cloud: &PointCloud, groups: &[(f64, std::ops::Range<usize>)]) -> Configuration {
        let mut config = Configuration::new(cloud.len(), 10, 0.1, Weights::default()).unwrap();
        for (z, r) in groups {
            let shape = Shape::Plane { normal: Vector3::z(), offset: *z };
            config.primitives.push(Primitive::from_shape(shape, cloud, r.clone().collect()));
        }
        config
    }

    #[test]
    fn two_patch_average() {
        let mut pts = grid(0.1);
        pts.extend(grid(0.3));
        let cloud = PointCloud::new(pts).unwrap();
        let config = plane_config(&cloud, &[(0.1, 0..100), (0.3, 100..200)]);
        let e = part_level_error(&config, &cloud, &square(0.0)).unwrap();
        assert!((e.average - 0.2).abs() < 1e-12);
        assert!((e.maximum - 0.3).abs() < 1e-12);
    }

    #[test]
    fn on_surface_and_offset() {
        let cloud = PointCloud::new(grid(0.0)).unwrap();
        let e = part_level_error(&plane_config(&cloud, &[(0.0, 0..100)]), &cloud, &square(0.0)).unwrap();
        assert!(e.average < 1e-15 && e.maximum < 1e-15);
        let e = part_level_error(&plane_config(&cloud, &[(0.0, 0..100)]), &cloud, &square(0.05)).unwrap();
        assert!((e.average - 0.05).abs() < 1e-3 && (e.maximum - 0.05).abs() < 1e-3);
    }

    #[test]
    fn empty_configuration_is_an_error() {
        let cloud = PointCloud::new(grid(0.0)).unwrap();
        let config = Configuration::new(100, 10, 0.1, Weights::default()).unwrap();
        assert!(part_level_error(&config, &cloud, &square(0.0)).is_err());
    }
}
