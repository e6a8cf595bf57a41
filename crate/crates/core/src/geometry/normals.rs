use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::Matrix3;
use rayon::prelude::*;

use super::{sorted_eigen, Point3, PointCloud, SpatialIndex, Vector3};
use crate::{Error, Result};

/// Output of [`estimate_normals_and_curvature`].
#[derive(Debug, Clone)]
pub struct NormalEstimate {
    pub cloud: PointCloud,
    /// Points whose neighbourhood had rank < 2; they got normal `+z` and curvature 0.
    pub degenerate: Vec<usize>,
}

/// Local PCA over each point and its `k` nearest neighbours.
///
/// The normal is the eigenvector of the smallest eigenvalue, curvature is the
/// surface variation `λ_min / (λ1 + λ2 + λ3)`. Normals are then made
/// consistent by propagating orientation over the neighbour graph.
pub fn estimate_normals_and_curvature(cloud: &PointCloud, k: usize) -> Result<NormalEstimate> {
    if k < 3 {
        return Err(Error::InvalidArgument("k must be at least 3".into()));
    }
    if cloud.len() < k + 1 {
        return Err(Error::InvalidArgument(format!(
            "need at least {} points for k = {k}, got {}",
            k + 1,
            cloud.len()
        )));
    }
    let pts = cloud.points();
    let tree = SpatialIndex::new(pts);
    let local: Vec<(Vector3, f64, bool, Vec<usize>)> = pts
        .par_iter()
        .map(|p| {
            let nbrs: Vec<usize> = tree.knn(p, k + 1).into_iter().map(|(i, _)| i).collect();
            let (n, c, degenerate) = pca_normal(pts, &nbrs);
            (n, c, degenerate, nbrs)
        })
        .collect();

    let mut normals: Vec<Vector3> = local.iter().map(|l| l.0).collect();
    let curvatures: Vec<f64> = local.iter().map(|l| l.1).collect();
    let degenerate: Vec<usize> = local
        .iter()
        .enumerate()
        .filter_map(|(i, l)| l.2.then_some(i))
        .collect();
    if !degenerate.is_empty() {
        log::warn!("{} points had a degenerate neighbourhood", degenerate.len());
    }
    let graph: Vec<Vec<usize>> = local.into_iter().map(|l| l.3).collect();
    orient_normals(pts, &mut normals, &graph);

    let out = cloud
        .clone()
        .with_normals_normalized(normals)?
        .with_curvatures(curvatures)?;
    Ok(NormalEstimate {
        cloud: out,
        degenerate,
    })
}

/// Normal, surface variation and degeneracy flag of a neighbourhood.
pub(crate) fn pca_normal(pts: &[Point3], nbrs: &[usize]) -> (Vector3, f64, bool) {
    let Some((_, cov)) = super::covariance(nbrs.iter().map(|&i| &pts[i])) else {
        return (Vector3::z(), 0.0, true);
    };
    let (vals, vecs) = sorted_eigen(&cov);
    let vals = vals.map(|v| v.max(0.0));
    let sum: f64 = vals.iter().sum();
    if sum <= f64::MIN_POSITIVE || vals[1] <= 1e-12 * vals[0] {
        return (Vector3::z(), 0.0, true);
    }
    (vecs.column(2).into_owned(), vals[2] / sum, false)
}

#[derive(PartialEq)]
struct Edge(f64, usize, usize);

impl Eq for Edge {}

impl PartialOrd for Edge {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Edge {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .partial_cmp(&other.0)
            .unwrap_or(Ordering::Equal)
            .then(other.2.cmp(&self.2))
            .then(other.1.cmp(&self.1))
    }
}

/// Orientation propagation along a maximum-|n_i·n_j| spanning forest of the
/// symmetrized neighbour graph. Each component's root is its highest point,
/// oriented with non-negative z.
fn orient_normals(pts: &[Point3], normals: &mut [Vector3], graph: &[Vec<usize>]) {
    let n = pts.len();
    let mut adj: Vec<Vec<usize>> = graph.to_vec();
    for (i, nbrs) in graph.iter().enumerate() {
        for &j in nbrs {
            if j != i {
                adj[j].push(i);
            }
        }
    }
    for a in adj.iter_mut() {
        a.sort_unstable();
        a.dedup();
    }

    // roots: visit points from highest to lowest z
    let mut by_height: Vec<usize> = (0..n).collect();
    by_height.sort_by(|&a, &b| pts[b].z.partial_cmp(&pts[a].z).unwrap().then(a.cmp(&b)));

    let mut visited = vec![false; n];
    let mut heap = BinaryHeap::new();
    for &root in &by_height {
        if visited[root] {
            continue;
        }
        if normals[root].z < 0.0 {
            normals[root] = -normals[root];
        }
        visited[root] = true;
        for &j in &adj[root] {
            if !visited[j] {
                heap.push(Edge(normals[root].dot(&normals[j]).abs(), root, j));
            }
        }
        while let Some(Edge(_, from, to)) = heap.pop() {
            if visited[to] {
                continue;
            }
            visited[to] = true;
            if normals[from].dot(&normals[to]) < 0.0 {
                normals[to] = -normals[to];
            }
            for &j in &adj[to] {
                if !visited[j] {
                    heap.push(Edge(normals[to].dot(&normals[j]).abs(), to, j));
                }
            }
        }
    }
}

/// Covariance of unit direction vectors, used by the cylinder and cone fitters.
pub(crate) fn scatter(vectors: &[Vector3]) -> Matrix3<f64> {
    vectors.iter().fold(Matrix3::zeros(), |acc, v| acc + v * v.transpose())
}
