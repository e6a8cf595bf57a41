use rayon::prelude::*;

use super::{PointCloud, SpatialIndex};

#[derive(Debug, Clone)]
pub struct OutlierRemoval {
    pub cloud: PointCloud,
    pub kept: Vec<usize>,
    pub removed: usize,
}

/// Statistical outlier removal: drops points whose mean distance to their
/// `k` nearest neighbours exceeds `mean + stddev_mult * stddev` of that
/// statistic over the whole cloud.
pub fn remove_outliers(cloud: &PointCloud, k: usize, stddev_mult: f64) -> OutlierRemoval {
    let n = cloud.len();
    let all: Vec<usize> = (0..n).collect();
    if stddev_mult.is_infinite() && stddev_mult > 0.0 || n < 2 || k == 0 {
        return OutlierRemoval {
            cloud: cloud.clone(),
            kept: all,
            removed: 0,
        };
    }
    let pts = cloud.points();
    let tree = SpatialIndex::new(pts);
    let mean_d: Vec<f64> = pts
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let nbrs = tree.knn(p, k + 1);
            let ds: Vec<f64> = nbrs
                .iter()
                .filter(|&&(j, _)| j != i)
                .take(k)
                .map(|&(_, d2)| d2.sqrt())
                .collect();
            ds.iter().sum::<f64>() / ds.len().max(1) as f64
        })
        .collect();
    let mean = mean_d.iter().sum::<f64>() / n as f64;
    let var = mean_d.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64;
    let limit = mean + stddev_mult * var.sqrt();
    let kept: Vec<usize> = all.into_iter().filter(|&i| mean_d[i] <= limit).collect();
    OutlierRemoval {
        cloud: cloud.select(&kept),
        removed: n - kept.len(),
        kept,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point3;

    fn plane_grid() -> Vec<Point3> {
        let mut pts = Vec::new();
        for i in 0..30 {
            for j in 0..30 {
                pts.push(Point3::new(i as f64 * 0.1, j as f64 * 0.1, 0.0));
            }
        }
        pts
    }

    #[test]
    fn far_point_removed() {
        let mut pts = plane_grid();
        pts.push(Point3::new(1.5, 1.5, 100.0));
        let n = pts.len();
        let out = remove_outliers(&PointCloud::new(pts).unwrap(), 8, 2.0);
        assert_eq!(out.removed, 1);
        assert!(!out.kept.contains(&(n - 1)));
    }

    #[test]
    fn clean_grid_and_infinite_multiplier() {
        // integer spacing keeps every nearest-neighbour distance exactly 1
        let unit: Vec<Point3> = plane_grid().iter().map(|p| Point3::new(p.x * 10.0, p.y * 10.0, 0.0).map(f64::round)).collect();
        assert_eq!(remove_outliers(&PointCloud::new(unit).unwrap(), 1, 2.0).removed, 0);
        let cloud = PointCloud::new(plane_grid()).unwrap();
        let out = remove_outliers(&cloud, 8, f64::INFINITY);
        assert_eq!(out.removed, 0);
        assert_eq!(out.cloud, cloud);
    }
}
