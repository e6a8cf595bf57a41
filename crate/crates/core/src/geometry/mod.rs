//! Geometry types, file I/O, spatial indexing and per-point estimation.

mod cloud;
pub mod filter;
pub mod io;
pub mod mesh;
pub mod normals;
pub mod spatial;
mod transform;

pub use cloud::PointCloud;
pub(crate) use cloud::bounds;
pub use filter::{remove_outliers, OutlierRemoval};
pub use mesh::{point_to_mesh_distance, sample_mesh, MeshSample, TriangleMesh};
pub use normals::{estimate_normals_and_curvature, NormalEstimate};
pub use spatial::{KdTree, SpatialIndex};
pub use transform::RigidTransform;

use nalgebra::{Matrix3, SymmetricEigen};

pub type Point3 = nalgebra::Point3<f64>;
pub type Vector3 = nalgebra::Vector3<f64>;

/// Eigen-decomposition of a symmetric 3x3 matrix with eigenvalues sorted
/// in descending order. Column `k` of the returned matrix pairs with value `k`.
pub fn sorted_eigen(m: &Matrix3<f64>) -> ([f64; 3], Matrix3<f64>) {
    let eig = SymmetricEigen::new(*m);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = [
        eig.eigenvalues[order[0]],
        eig.eigenvalues[order[1]],
        eig.eigenvalues[order[2]],
    ];
    let vectors = Matrix3::from_columns(&[
        eig.eigenvectors.column(order[0]).into_owned(),
        eig.eigenvectors.column(order[1]).into_owned(),
        eig.eigenvectors.column(order[2]).into_owned(),
    ]);
    (values, vectors)
}

pub fn centroid<'a>(points: impl IntoIterator<Item = &'a Point3>) -> Option<Point3> {
    let mut sum = Vector3::zeros();
    let mut n = 0usize;
    for p in points {
        sum += p.coords;
        n += 1;
    }
    (n > 0).then(|| Point3::from(sum / n as f64))
}

/// Centroid and (population) covariance of a point set.
pub fn covariance<'a>(points: impl IntoIterator<Item = &'a Point3> + Clone) -> Option<(Point3, Matrix3<f64>)> {
    let c = centroid(points.clone())?;
    let mut cov = Matrix3::zeros();
    let mut n = 0usize;
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
        n += 1;
    }
    Some((c, cov / n as f64))
}

/// Any unit vector orthogonal to `v`, plus a third completing a right-handed frame.
pub fn orthonormal_basis(v: &Vector3) -> (Vector3, Vector3) {
    let helper = if v.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let u = v.cross(&helper).normalize();
    let w = v.cross(&u);
    (u, w)
}

/// Typical distance between neighbouring samples of a surface scan: the
/// square root of the area per point, estimated from the median distance to
/// the 8th nearest neighbour on at most `max_samples` points.
///
/// For a square grid this is close to the grid step. Unlike the nearest
/// neighbour distance it does not shrink under the clumping of random
/// sampling.
pub fn point_spacing(points: &[Point3], max_samples: usize) -> f64 {
    const K: usize = 8;
    if points.len() <= K {
        return 0.0;
    }
    let tree = KdTree::new(points);
    let stride = (points.len() / max_samples.max(1)).max(1);
    let mut d: Vec<f64> = (0..points.len())
        .step_by(stride)
        .filter_map(|i| tree.knn(&points[i], K + 1).last().map(|&(_, d2)| d2.sqrt()))
        .collect();
    d.sort_by(f64::total_cmp);
    d[d.len() / 2] * (std::f64::consts::PI / K as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_spacing_of_a_grid_is_near_its_step() {
        let pts: Vec<Point3> = (0..10_000).map(|i| Point3::new((i % 100) as f64 * 0.02, (i / 100) as f64 * 0.02, 1.0)).collect();
        let s = point_spacing(&pts, 20_000);
        assert!((s - 0.02).abs() < 0.003, "{s}");
        assert_eq!(point_spacing(&pts[..5], 10), 0.0);
    }
}
