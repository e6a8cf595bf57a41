use super::{Point3, RigidTransform, Vector3};
use crate::{Error, Result};

/// An ordered point set with optional per-point channels.
///
/// Every channel that is present has exactly one entry per point. Labels use
/// `-1` for "unassigned".
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    normals: Option<Vec<Vector3>>,
    curvatures: Option<Vec<f64>>,
    labels: Option<Vec<i32>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidArgument(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self {
            points,
            ..Default::default()
        })
    }

    pub fn with_normals(mut self, normals: Vec<Vector3>) -> Result<Self> {
        self.check_len("normals", normals.len())?;
        for (i, n) in normals.iter().enumerate() {
            if ((n.norm() - 1.0).abs()) > 1e-6 {
                return Err(Error::InvalidArgument(format!("normal {i} is not unit length")));
            }
        }
        self.normals = Some(normals);
        Ok(self)
    }

    /// Like [`with_normals`](Self::with_normals) but normalizes the input;
    /// zero vectors become `+z`.
    pub fn with_normals_normalized(self, normals: Vec<Vector3>) -> Result<Self> {
        let normals = normals
            .into_iter()
            .map(|n| n.try_normalize(0.0).unwrap_or_else(Vector3::z))
            .collect();
        self.with_normals(normals)
    }

    pub fn with_curvatures(mut self, curvatures: Vec<f64>) -> Result<Self> {
        self.check_len("curvatures", curvatures.len())?;
        if curvatures.iter().any(|&k| !(k >= 0.0) || !k.is_finite()) {
            return Err(Error::InvalidArgument("curvatures must be finite and non-negative".into()));
        }
        self.curvatures = Some(curvatures);
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Vec<i32>) -> Result<Self> {
        self.check_len("labels", labels.len())?;
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn without_labels(mut self) -> Self {
        self.labels = None;
        self
    }

    fn check_len(&self, what: &str, len: usize) -> Result<()> {
        if len != self.points.len() {
            return Err(Error::InvalidArgument(format!(
                "{what} has {len} entries but the cloud has {} points",
                self.points.len()
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Vector3]> {
        self.normals.as_deref()
    }

    pub fn curvatures(&self) -> Option<&[f64]> {
        self.curvatures.as_deref()
    }

    pub fn labels(&self) -> Option<&[i32]> {
        self.labels.as_deref()
    }

    /// A new cloud holding the given indices, channels included.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            normals: self.normals.as_ref().map(|v| indices.iter().map(|&i| v[i]).collect()),
            curvatures: self.curvatures.as_ref().map(|v| indices.iter().map(|&i| v[i]).collect()),
            labels: self.labels.as_ref().map(|v| indices.iter().map(|&i| v[i]).collect()),
        }
    }

    /// Applies a rigid motion to points and normals.
    pub fn transformed(&self, t: &RigidTransform) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| t.apply(p)).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|v| v.iter().map(|n| t.apply_vector(n)).collect()),
            curvatures: self.curvatures.clone(),
            labels: self.labels.clone(),
        }
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    /// Axis-aligned bounding box as (min, max).
    pub fn bounds(&self) -> Option<(Point3, Point3)> {
        bounds(&self.points)
    }
}

pub(crate) fn bounds(points: &[Point3]) -> Option<(Point3, Point3)> {
    let first = points.first()?;
    let mut lo = *first;
    let mut hi = *first;
    for p in points {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    Some((lo, hi))
}
