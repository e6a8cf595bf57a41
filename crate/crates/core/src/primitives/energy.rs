use serde::{Deserialize, Serialize};

use super::Primitive;
use crate::{Error, PointCloud, Result};

/// Relative weights of the fidelity, simplicity and completeness terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub fidelity: f64,
    pub simplicity: f64,
    pub completeness: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights {
            fidelity: 0.6,
            simplicity: 0.25,
            completeness: 0.15,
        }
    }
}

impl Weights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.fidelity, self.simplicity, self.completeness];
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "energy weights must be non-negative and sum to 1, got {w:?}"
            )));
        }
        Ok(())
    }
}

/// A set of primitives with pairwise disjoint inlier sets over a cloud of
/// `cloud_size` points.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    pub primitives: Vec<Primitive>,
    pub cloud_size: usize,
    pub min_points: usize,
    pub weights: Weights,
    pub epsilon: f64,
}

impl Configuration {
    pub fn new(cloud_size: usize, min_points: usize, epsilon: f64, weights: Weights) -> Result<Self> {
        weights.validate()?;
        if min_points == 0 {
            return Err(Error::InvalidArgument("min_points must be positive".into()));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidArgument("inlier distance must be positive".into()));
        }
        Ok(Configuration {
            primitives: Vec::new(),
            cloud_size,
            min_points,
            weights,
            epsilon,
        })
    }

    /// The default minimum primitive size for a cloud of `n` points.
    pub fn default_min_points(n: usize) -> usize {
        (n / 500).max(30)
    }

    /// Number of points assigned to some primitive.
    pub fn assigned(&self) -> usize {
        self.primitives.iter().map(|p| p.inliers.len()).sum()
    }

    /// Per-point primitive index, −1 for unassigned points.
    pub fn labels(&self) -> Vec<i32> {
        let mut labels = vec![-1; self.cloud_size];
        for (k, p) in self.primitives.iter().enumerate() {
            for &i in &p.inliers {
                labels[i] = k as i32;
            }
        }
        labels
    }

    /// Checks disjointness, the inlier distance bound and the size limits.
    pub fn validate(&self, cloud: &PointCloud) -> Result<()> {
        let mut seen = vec![false; self.cloud_size];
        for (k, p) in self.primitives.iter().enumerate() {
            if p.inliers.len() < self.min_points {
                return Err(Error::InvalidArgument(format!("primitive {k} has fewer than σ inliers")));
            }
            for &i in &p.inliers {
                if i >= self.cloud_size || seen[i] {
                    return Err(Error::InvalidArgument(format!("inlier {i} is out of range or shared")));
                }
                seen[i] = true;
                let d = p.shape.distance(&cloud.points()[i]);
                if d > self.epsilon {
                    return Err(Error::InvalidArgument(format!(
                        "inlier {i} of primitive {k} lies {d} from its shape"
                    )));
                }
            }
        }
        if self.primitives.len() > self.n_sigma().max(1) {
            return Err(Error::InvalidArgument("more primitives than ⌊n/σ⌋".into()));
        }
        Ok(())
    }

    pub(crate) fn n_sigma(&self) -> usize {
        self.cloud_size / self.min_points
    }
}

/// The weighted energy and its three terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Energy {
    pub total: f64,
    pub fidelity: f64,
    pub simplicity: f64,
    pub completeness: f64,
}

/// Energy from the aggregate quantities: assigned points, summed inlier
/// distances and primitive count.
pub(crate) fn energy_terms(config: &Configuration, assigned: usize, residual_sum: f64, count: usize) -> Energy {
    let fidelity = if assigned == 0 {
        0.0
    } else {
        residual_sum / assigned as f64
    };
    let simplicity = if count == 0 {
        0.0
    } else {
        count as f64 / config.n_sigma().max(1) as f64
    };
    let completeness = if config.cloud_size == 0 {
        0.0
    } else {
        1.0 - assigned as f64 / config.cloud_size as f64
    };
    let w = config.weights;
    Energy {
        total: w.fidelity * fidelity + w.simplicity * simplicity + w.completeness * completeness,
        fidelity,
        simplicity,
        completeness,
    }
}

/// Energy using the residual sums cached on each primitive.
pub fn energy(config: &Configuration) -> Energy {
    let residual: f64 = config.primitives.iter().map(|p| p.residual_sum).sum();
    energy_terms(config, config.assigned(), residual, config.primitives.len())
}

/// Energy with every inlier distance recomputed from the cloud.
pub fn energy_from_scratch(config: &Configuration, cloud: &PointCloud) -> Energy {
    let pts = cloud.points();
    let residual: f64 = config
        .primitives
        .iter()
        .map(|p| p.inliers.iter().map(|&i| p.shape.distance(&pts[i])).sum::<f64>())
        .sum();
    energy_terms(config, config.assigned(), residual, config.primitives.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::primitives::Shape;
    use crate::{Point3, Vector3};

    #[test]
    fn two_exact_primitives() {
        let pts: Vec<Point3> = (0..100)
            .map(|i| Point3::new(i as f64, 0.0, if i < 50 { 0.0 } else { 1.0 }))
            .collect();
        let cloud = PointCloud::new(pts).unwrap();
        let mut config = Configuration::new(100, 10, 0.1, Weights::default()).unwrap();
        for (off, range) in [(0.0, 0..50), (1.0, 50..100)] {
            let shape = Shape::Plane {
                normal: Vector3::z(),
                offset: off,
            };
            config.primitives.push(Primitive::from_shape(shape, &cloud, range.collect()));
        }
        config.validate(&cloud).unwrap();
        let e = energy(&config);
        assert_eq!(e.fidelity, 0.0);
        assert!((e.simplicity - 0.2).abs() < 1e-15);
        assert_eq!(e.completeness, 0.0);
        assert!((e.total - 0.05).abs() < 1e-15);
    }

    #[test]
    fn empty_configuration() {
        let config = Configuration::new(100, 10, 0.1, Weights::default()).unwrap();
        let e = energy(&config);
        assert!((e.total - 0.15).abs() < 1e-15);
        assert_eq!(e.fidelity, 0.0);
        assert_eq!(e.completeness, 1.0);
    }

    #[test]
    fn weights_must_sum_to_one() {
        let w = Weights {
            fidelity: 0.5,
            simplicity: 0.25,
            completeness: 0.15,
        };
        assert!(Configuration::new(10, 1, 0.1, w).is_err());
    }
}
