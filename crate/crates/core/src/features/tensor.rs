use nalgebra::Matrix3;
use rayon::prelude::*;

use crate::geometry::{sorted_eigen, SpatialIndex};
use crate::{Error, PointCloud, Result, Vector3};

/// Default decay scale of the vote weights `exp(-|q| / σ²)`.
pub const DEFAULT_VOTE_SIGMA: f64 = 0.5;
/// Default edge-score threshold.
pub const DEFAULT_EDGE_THRESHOLD: f64 = 1.05;
/// Default floor on the mean curvature difference of a neighbourhood.
pub const DEFAULT_MIN_CONTRAST: f64 = 0.03;

/// Accumulated vote of a point's neighbourhood with its eigen-structure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoteTensor {
    pub matrix: Matrix3<f64>,
    /// Descending and clamped to be non-negative.
    pub eigenvalues: [f64; 3],
    /// Column `k` pairs with `eigenvalues[k]`.
    pub eigenvectors: Matrix3<f64>,
    /// Sum of the distance weights of the voters, before curvature weighting.
    pub weight_sum: f64,
}

impl VoteTensor {
    fn from_matrix(matrix: Matrix3<f64>, weight_sum: f64) -> Self {
        let sym = (matrix + matrix.transpose()) * 0.5;
        let (vals, vecs) = sorted_eigen(&sym);
        VoteTensor {
            matrix: sym,
            eigenvalues: vals.map(|v| v.max(0.0)),
            eigenvectors: vecs,
            weight_sum,
        }
    }

    /// Edge score `(λ2 + λ3) / λ1`, or `None` when the tensor vanishes.
    ///
    /// A tensor whose mean curvature difference (trace over twice the voter
    /// weight) is below `min_contrast` is treated as vanishing.
    pub fn edge_score(&self, min_contrast: f64) -> Option<f64> {
        let [l1, l2, l3] = self.eigenvalues;
        let contrast = if self.weight_sum > 0.0 {
            (l1 + l2 + l3) / (2.0 * self.weight_sum)
        } else {
            0.0
        };
        (l1 > 0.0 && contrast > min_contrast).then(|| (l2 + l3) / l1)
    }
}

/// Curvature-weighted tensor vote of every point's `radius` neighbourhood.
///
/// Each neighbour `j` adds `μ_j Δκ_j (I − q qᵀ/|q|²)` with `q = v_i − v_j`,
/// `μ_j = exp(−|q|/σ²)` and `Δκ_j = |κ_i − κ_j|`.
pub fn tensor_vote(cloud: &PointCloud, radius: f64, sigma: f64) -> Result<Vec<VoteTensor>> {
    let Some(curv) = cloud.curvatures() else {
        return Err(Error::InvalidArgument("tensor voting needs curvatures".into()));
    };
    if !(radius > 0.0) || !(sigma > 0.0) {
        return Err(Error::InvalidArgument("tensor voting radius and σ must be positive".into()));
    }
    let pts = cloud.points();
    let tree = SpatialIndex::new(pts);
    let s2 = sigma * sigma;
    Ok(pts
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut m = Matrix3::zeros();
            let mut weight_sum = 0.0;
            for (j, _) in tree.within(p, radius) {
                let q: Vector3 = p - pts[j];
                let len2 = q.norm_squared();
                if j == i || len2 == 0.0 {
                    continue;
                }
                let mu = (-len2.sqrt() / s2).exp();
                weight_sum += mu;
                let dk = (curv[i] - curv[j]).abs();
                m += (Matrix3::identity() - q * q.transpose() / len2) * (mu * dk);
            }
            VoteTensor::from_matrix(m, weight_sum)
        })
        .collect())
}

/// Edge score per point; `None` where the tensor vanishes.
pub fn edge_scores(tensors: &[VoteTensor], min_contrast: f64) -> Vec<Option<f64>> {
    tensors.iter().map(|t| t.edge_score(min_contrast)).collect()
}

/// Parameters of [`detect_edge_points`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeDetection {
    /// Voting radius; `None` uses four times the point spacing.
    pub radius: Option<f64>,
    pub threshold: f64,
    pub sigma: f64,
    /// Smallest mean curvature difference for a defined score.
    pub min_contrast: f64,
}

impl Default for EdgeDetection {
    fn default() -> Self {
        EdgeDetection {
            radius: None,
            threshold: DEFAULT_EDGE_THRESHOLD,
            sigma: DEFAULT_VOTE_SIGMA,
            min_contrast: DEFAULT_MIN_CONTRAST,
        }
    }
}

/// Four times the point spacing.
pub fn default_vote_radius(cloud: &PointCloud) -> f64 {
    4.0 * crate::geometry::point_spacing(cloud.points(), 20_000)
}

/// Indices of the points whose edge score is defined and at least `threshold`.
pub fn detect_edge_points(cloud: &PointCloud, params: &EdgeDetection) -> Result<Vec<usize>> {
    if cloud.is_empty() {
        return Ok(Vec::new());
    }
    let radius = params.radius.unwrap_or_else(|| default_vote_radius(cloud));
    if !(radius > 0.0) {
        return Ok(Vec::new());
    }
    let tensors = tensor_vote(cloud, radius, params.sigma)?;
    Ok(edge_scores(&tensors, params.min_contrast)
        .into_iter()
        .enumerate()
        .filter_map(|(i, w)| w.filter(|&w| w >= params.threshold).map(|_| i))
        .collect())
}
