//! Part-level analysis: analytic surface primitives, coarse segmentation by
//! region growing, and energy-driven split/merge refinement.

mod energy;
mod fit;
mod part;
mod refine;
mod region;

pub use energy::{energy, energy_from_scratch, Configuration, Energy, Weights};
pub use fit::{fit_best_primitive, fit_primitive, fit_shape, FIT_MAX_ITER};
pub use part::{part_level_error, PartError};
pub use refine::{merge, refine, split, AppliedOp, OpKind, OpOutcome, RefineStats};
pub use region::{region_grow, RegionGrowing};

use std::fmt;

use crate::geometry::{Point3, PointCloud, Vector3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PrimitiveKind {
    Plane,
    Sphere,
    Cylinder,
    Cone,
}

impl PrimitiveKind {
    pub const ALL: [PrimitiveKind; 4] = [
        PrimitiveKind::Plane,
        PrimitiveKind::Sphere,
        PrimitiveKind::Cylinder,
        PrimitiveKind::Cone,
    ];

    /// Smallest point count that determines a shape of this kind.
    pub fn min_sample(self) -> usize {
        match self {
            PrimitiveKind::Plane => 3,
            PrimitiveKind::Sphere => 4,
            PrimitiveKind::Cylinder | PrimitiveKind::Cone => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PrimitiveKind::Plane => "plane",
            PrimitiveKind::Sphere => "sphere",
            PrimitiveKind::Cylinder => "cylinder",
            PrimitiveKind::Cone => "cone",
        }
    }
}

impl fmt::Display for PrimitiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PrimitiveKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PrimitiveKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown primitive kind `{s}`"))
    }
}

/// Parameters of an analytic surface. Directions are unit vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Plane { normal: Vector3, offset: f64 },
    Sphere { center: Point3, radius: f64 },
    Cylinder { point: Point3, axis: Vector3, radius: f64 },
    /// One-sided cone opening along `axis` from `apex`.
    Cone { apex: Point3, axis: Vector3, half_angle: f64 },
}

impl Shape {
    pub fn kind(&self) -> PrimitiveKind {
        match self {
            Shape::Plane { .. } => PrimitiveKind::Plane,
            Shape::Sphere { .. } => PrimitiveKind::Sphere,
            Shape::Cylinder { .. } => PrimitiveKind::Cylinder,
            Shape::Cone { .. } => PrimitiveKind::Cone,
        }
    }

    /// Unsigned Euclidean distance from `p` to the surface.
    pub fn distance(&self, p: &Point3) -> f64 {
        match *self {
            Shape::Plane { normal, offset } => (normal.dot(&p.coords) - offset).abs(),
            Shape::Sphere { center, radius } => ((p - center).norm() - radius).abs(),
            Shape::Cylinder { point, axis, radius } => ((p - point).cross(&axis).norm() - radius).abs(),
            Shape::Cone { apex, axis, half_angle } => {
                let w = p - apex;
                let h = w.dot(&axis);
                let rho = (w - axis * h).norm();
                let (s, c) = half_angle.sin_cos();
                if h * c + rho * s < 0.0 {
                    w.norm()
                } else {
                    (rho * c - h * s).abs()
                }
            }
        }
    }

    /// The shape after applying a rigid motion.
    pub fn transformed(&self, t: &crate::RigidTransform) -> Shape {
        match *self {
            Shape::Plane { normal, offset } => {
                let n = t.apply_vector(&normal);
                Shape::Plane {
                    normal: n,
                    offset: offset + n.dot(t.translation()),
                }
            }
            Shape::Sphere { center, radius } => Shape::Sphere {
                center: t.apply(&center),
                radius,
            },
            Shape::Cylinder { point, axis, radius } => Shape::Cylinder {
                point: t.apply(&point),
                axis: t.apply_vector(&axis),
                radius,
            },
            Shape::Cone { apex, axis, half_angle } => Shape::Cone {
                apex: t.apply(&apex),
                axis: t.apply_vector(&axis),
                half_angle,
            },
        }
    }

    /// Flat list of parameters, in the order used by the report tables.
    pub fn parameters(&self) -> Vec<f64> {
        match *self {
            Shape::Plane { normal, offset } => vec![normal.x, normal.y, normal.z, offset],
            Shape::Sphere { center, radius } => vec![center.x, center.y, center.z, radius],
            Shape::Cylinder { point, axis, radius } => {
                vec![point.x, point.y, point.z, axis.x, axis.y, axis.z, radius]
            }
            Shape::Cone { apex, axis, half_angle } => {
                vec![apex.x, apex.y, apex.z, axis.x, axis.y, axis.z, half_angle]
            }
        }
    }
}

/// Shorthand for [`Shape::distance`].
pub fn primitive_distance(p: &Point3, shape: &Shape) -> f64 {
    shape.distance(p)
}

/// A fitted shape together with the cloud points it explains.
#[derive(Debug, Clone, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    /// Sorted, distinct indices into the cloud.
    pub inliers: Vec<usize>,
    /// Root mean square distance of the inliers to the shape.
    pub fit_rms: f64,
    /// Sum of inlier distances to the shape.
    pub residual_sum: f64,
}

impl Primitive {
    pub fn from_shape(shape: Shape, cloud: &PointCloud, mut inliers: Vec<usize>) -> Primitive {
        inliers.sort_unstable();
        inliers.dedup();
        let pts = cloud.points();
        let (sum, sq) = inliers.iter().fold((0.0, 0.0), |(s, q), &i| {
            let d = shape.distance(&pts[i]);
            (s + d, q + d * d)
        });
        let fit_rms = if inliers.is_empty() {
            0.0
        } else {
            (sq / inliers.len() as f64).sqrt()
        };
        Primitive {
            shape,
            inliers,
            fit_rms,
            residual_sum: sum,
        }
    }

    pub fn kind(&self) -> PrimitiveKind {
        self.shape.kind()
    }

    /// Keeps only the given points that lie within `epsilon` of the shape.
    pub fn within(shape: Shape, cloud: &PointCloud, candidates: &[usize], epsilon: f64) -> Primitive {
        let pts = cloud.points();
        let kept = candidates
            .iter()
            .copied()
            .filter(|&i| shape.distance(&pts[i]) <= epsilon)
            .collect();
        Primitive::from_shape(shape, cloud, kept)
    }
}

/// Unit-vector sign convention: positive z, then positive y, then positive x.
pub(crate) fn canonical_direction(v: Vector3) -> Vector3 {
    let flip = if v.z != 0.0 {
        v.z < 0.0
    } else if v.y != 0.0 {
        v.y < 0.0
    } else {
        v.x < 0.0
    };
    if flip {
        -v
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn closed_form_distances() {
        let plane = Shape::Plane {
            normal: Vector3::z(),
            offset: 0.0,
        };
        assert_eq!(plane.distance(&Point3::new(0.0, 0.0, 5.0)), 5.0);
        let sphere = Shape::Sphere {
            center: Point3::origin(),
            radius: 1.0,
        };
        assert_eq!(sphere.distance(&Point3::new(2.0, 0.0, 0.0)), 1.0);
        let cyl = Shape::Cylinder {
            point: Point3::origin(),
            axis: Vector3::z(),
            radius: 2.0,
        };
        assert!((cyl.distance(&Point3::new(0.0, 3.0, 7.0)) - 1.0).abs() < 1e-15);
        let cone = Shape::Cone {
            apex: Point3::origin(),
            axis: Vector3::z(),
            half_angle: std::f64::consts::FRAC_PI_4,
        };
        // behind the apex the closest point is the apex itself
        assert!((cone.distance(&Point3::new(0.0, 0.0, -2.0)) - 2.0).abs() < 1e-15);
        assert!(cone.distance(&Point3::new(1.0, 0.0, 1.0)).abs() < 1e-15);
    }

    /// Distance to the densest of a set of surface samples.
    fn sampled_distance(shape: &Shape, p: &Point3, rng: &mut ChaCha8Rng, n: usize) -> f64 {
        let mut best = f64::INFINITY;
        for _ in 0..n {
            let q = match *shape {
                Shape::Sphere { center, radius } => {
                    let z: f64 = rng.random_range(-1.0..1.0);
                    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                    let r = (1.0 - z * z).sqrt();
                    center + Vector3::new(r * phi.cos(), r * phi.sin(), z) * radius
                }
                Shape::Cylinder { point, radius, .. } => {
                    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                    let z: f64 = rng.random_range(-4.0..4.0);
                    point + Vector3::new(radius * phi.cos(), radius * phi.sin(), z)
                }
                Shape::Cone { apex, half_angle, .. } => {
                    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                    let s: f64 = rng.random_range(0.0..6.0);
                    apex + Vector3::new(
                        s * half_angle.sin() * phi.cos(),
                        s * half_angle.sin() * phi.sin(),
                        s * half_angle.cos(),
                    )
                }
                Shape::Plane { .. } => unreachable!(),
            };
            best = best.min((q - p).norm());
        }
        best
    }

    #[test]
    fn distances_match_dense_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shapes = [
            Shape::Sphere {
                center: Point3::new(0.5, 0.0, 0.0),
                radius: 1.0,
            },
            Shape::Cylinder {
                point: Point3::origin(),
                axis: Vector3::z(),
                radius: 1.0,
            },
            Shape::Cone {
                apex: Point3::origin(),
                axis: Vector3::z(),
                half_angle: 0.5,
            },
        ];
        for shape in &shapes {
            for _ in 0..5 {
                let p = Point3::new(
                    rng.random_range(-1.5..1.5),
                    rng.random_range(-1.5..1.5),
                    rng.random_range(-1.0..2.0),
                );
                let exact = shape.distance(&p);
                let approx = sampled_distance(shape, &p, &mut rng, 400_000);
                assert!(approx >= exact - 1e-12, "{shape:?} {p:?}");
                assert!(approx - exact < 0.03, "{shape:?} {p:?}: {exact} vs {approx}");
            }
        }
    }

    #[test]
    fn kind_round_trips_through_name() {
        for k in PrimitiveKind::ALL {
            assert_eq!(k.name().parse::<PrimitiveKind>().unwrap(), k);
        }
    }
}
