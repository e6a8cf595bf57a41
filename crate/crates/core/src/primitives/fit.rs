use nalgebra::Matrix3;

use super::{canonical_direction, Primitive, PrimitiveKind, Shape};
use crate::geometry::normals::{pca_normal, scatter};
use crate::geometry::{covariance, orthonormal_basis, sorted_eigen, Point3, PointCloud, SpatialIndex, Vector3};
use crate::numeric::{levenberg_marquardt, pratt_fit, LocalProblem};
use crate::{Error, Result};

/// Gauss-Newton step budget for the nonlinear fits.
pub const FIT_MAX_ITER: usize = 50;

/// Kind selection runs on at most this many points.
const SELECTION_SAMPLES: usize = 4000;
/// A more complex kind must beat a simpler one by more than this factor.
const SIMPLICITY_MARGIN: f64 = 1.05;

/// Least-squares shape of the given kind through `points`.
///
/// Normals, when given, seed the cylinder and cone axes; otherwise they are
/// estimated locally.
pub fn fit_shape(kind: PrimitiveKind, points: &[Point3], normals: Option<&[Vector3]>) -> Result<Shape> {
    if points.len() < kind.min_sample() {
        return Err(Error::InvalidArgument(format!(
            "{kind} fit needs at least {} points, got {}",
            kind.min_sample(),
            points.len()
        )));
    }
    if let Some(n) = normals {
        if n.len() != points.len() {
            return Err(Error::InvalidArgument("normals and points differ in length".into()));
        }
    }
    match kind {
        PrimitiveKind::Plane => fit_plane(points),
        PrimitiveKind::Sphere => fit_sphere(points),
        PrimitiveKind::Cylinder => fit_cylinder(points, normals),
        PrimitiveKind::Cone => fit_cone(points, normals),
    }
}

/// Fits `kind` to the indexed cloud points; every index becomes an inlier.
pub fn fit_primitive(kind: PrimitiveKind, cloud: &PointCloud, indices: &[usize]) -> Result<Primitive> {
    let (pts, nrm) = gather(cloud, indices);
    let shape = fit_shape(kind, &pts, nrm.as_deref())?;
    Ok(Primitive::from_shape(shape, cloud, indices.to_vec()))
}

/// Fits all four kinds and keeps the simplest one whose RMS is within 5% of
/// the best (order: plane, sphere, cylinder, cone).
pub fn fit_best_primitive(cloud: &PointCloud, indices: &[usize]) -> Result<Primitive> {
    let kind = select_kind(cloud, indices)?;
    fit_primitive(kind, cloud, indices)
}

fn select_kind(cloud: &PointCloud, indices: &[usize]) -> Result<PrimitiveKind> {
    let stride = indices.len().div_ceil(SELECTION_SAMPLES).max(1);
    let sample: Vec<usize> = indices.iter().step_by(stride).copied().collect();
    let (pts, nrm) = gather(cloud, &sample);
    let mut scored = Vec::new();
    let mut last_err = None;
    for kind in PrimitiveKind::ALL {
        match fit_shape(kind, &pts, nrm.as_deref()) {
            Ok(shape) => scored.push((kind, rms(&shape, &pts))),
            Err(e) => last_err = Some(e),
        }
    }
    let best = scored.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    scored
        .into_iter()
        .find(|s| s.1 <= SIMPLICITY_MARGIN * best + 1e-12)
        .map(|s| s.0)
        .ok_or_else(|| last_err.unwrap_or_else(|| Error::Degenerate("no primitive kind fits".into())))
}

fn gather(cloud: &PointCloud, indices: &[usize]) -> (Vec<Point3>, Option<Vec<Vector3>>) {
    let pts = indices.iter().map(|&i| cloud.points()[i]).collect();
    let nrm = cloud.normals().map(|n| indices.iter().map(|&i| n[i]).collect());
    (pts, nrm)
}

fn rms(shape: &Shape, pts: &[Point3]) -> f64 {
    (pts.iter().map(|p| shape.distance(p).powi(2)).sum::<f64>() / pts.len() as f64).sqrt()
}

/// Root mean square spread of the points about their centroid.
fn extent(points: &[Point3]) -> (Point3, f64) {
    let (c, cov) = covariance(points.iter()).expect("non-empty");
    (c, cov.trace().sqrt().max(f64::MIN_POSITIVE))
}

fn fit_plane(points: &[Point3]) -> Result<Shape> {
    let (c, cov) = covariance(points.iter()).expect("non-empty");
    let (vals, vecs) = sorted_eigen(&cov);
    if vals[1] <= 1e-14 * vals[0].max(f64::MIN_POSITIVE) {
        return Err(Error::Degenerate("plane fit on collinear points".into()));
    }
    let normal = canonical_direction(vecs.column(2).into_owned());
    Ok(Shape::Plane {
        normal,
        offset: normal.dot(&c.coords),
    })
}

fn finish(outcome: crate::numeric::LmOutcome, shape: Shape) -> Result<Shape> {
    let ok = shape.parameters().iter().all(|x| x.is_finite());
    if !ok {
        return Err(Error::Degenerate(format!("{} fit diverged", shape.kind())));
    }
    if !outcome.converged {
        return Err(Error::NotConverged {
            iterations: outcome.iterations,
            last: Box::new(shape),
        });
    }
    Ok(shape)
}

struct SphereProblem<'a> {
    pts: &'a [Point3],
    center: Point3,
    radius: f64,
    scale: f64,
}

impl LocalProblem for SphereProblem<'_> {
    fn dim(&self) -> usize {
        4
    }
    fn residuals(&self, d: &[f64], out: &mut [f64]) {
        let c = self.center + Vector3::new(d[0], d[1], d[2]);
        let r = self.radius + d[3];
        for (o, p) in out.iter_mut().zip(self.pts) {
            *o = (p - c).norm() - r;
        }
    }
    fn retract(&mut self, d: &[f64]) {
        self.center += Vector3::new(d[0], d[1], d[2]);
        self.radius += d[3];
    }
    fn scales(&self) -> Vec<f64> {
        vec![self.scale; 4]
    }
}

fn fit_sphere(points: &[Point3]) -> Result<Shape> {
    let coords: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
    let (c, r) = pratt_fit(&coords).ok_or_else(|| Error::Degenerate("sphere fit on coplanar points".into()))?;
    let (_, scale) = extent(points);
    let mut prob = SphereProblem {
        pts: points,
        center: Point3::new(c[0], c[1], c[2]),
        radius: r,
        scale: scale.max(r),
    };
    let out = levenberg_marquardt(&mut prob, points.len(), FIT_MAX_ITER);
    if prob.radius <= 0.0 {
        return Err(Error::Degenerate("sphere fit produced a non-positive radius".into()));
    }
    finish(
        out,
        Shape::Sphere {
            center: prob.center,
            radius: prob.radius,
        },
    )
}

/// Axis tilted by `(a, b)` in the frame orthogonal to `axis`.
fn tilt(axis: &Vector3, u: &Vector3, w: &Vector3, a: f64, b: f64) -> Vector3 {
    (axis + u * a + w * b).normalize()
}

struct CylinderProblem<'a> {
    pts: &'a [Point3],
    point: Point3,
    axis: Vector3,
    radius: f64,
    frame: (Vector3, Vector3),
    scale: f64,
}

impl CylinderProblem<'_> {
    fn moved(&self, d: &[f64]) -> (Point3, Vector3, f64) {
        let (u, w) = self.frame;
        (
            self.point + u * d[2] + w * d[3],
            tilt(&self.axis, &u, &w, d[0], d[1]),
            self.radius + d[4],
        )
    }
}

impl LocalProblem for CylinderProblem<'_> {
    fn dim(&self) -> usize {
        5
    }
    fn residuals(&self, d: &[f64], out: &mut [f64]) {
        let (q, a, r) = self.moved(d);
        for (o, p) in out.iter_mut().zip(self.pts) {
            *o = (p - q).cross(&a).norm() - r;
        }
    }
    fn retract(&mut self, d: &[f64]) {
        let (q, a, r) = self.moved(d);
        self.point = q;
        self.axis = a;
        self.radius = r;
        self.frame = orthonormal_basis(&a);
    }
    fn scales(&self) -> Vec<f64> {
        vec![1.0, 1.0, self.scale, self.scale, self.scale]
    }
}

/// Circle through the projections of `points` onto the plane orthogonal to `axis`.
fn cylinder_from_axis(points: &[Point3], centroid: &Point3, axis: &Vector3) -> Option<(Point3, f64)> {
    let (u, w) = orthonormal_basis(axis);
    let flat: Vec<[f64; 2]> = points
        .iter()
        .map(|p| {
            let d = p - centroid;
            [d.dot(&u), d.dot(&w)]
        })
        .collect();
    let (c, r) = pratt_fit(&flat)?;
    Some((centroid + u * c[0] + w * c[1], r))
}

fn fit_cylinder(points: &[Point3], normals: Option<&[Vector3]>) -> Result<Shape> {
    let (centroid, scale) = extent(points);
    let mut axes = Vec::new();
    let estimated;
    let normals = match normals {
        Some(n) => Some(n),
        None => {
            estimated = local_normals(points);
            estimated.as_deref()
        }
    };
    if let Some(n) = normals {
        let (_, vecs) = sorted_eigen(&scatter(n));
        axes.push(vecs.column(2).into_owned());
    }
    let (_, cov) = covariance(points.iter()).expect("non-empty");
    let (_, pca) = sorted_eigen(&cov);
    axes.extend((0..3).map(|k| pca.column(k).into_owned()));

    let mut best: Option<(f64, Result<Shape>)> = None;
    for (attempt, axis) in axes.iter().enumerate() {
        // the normal-derived axis is trusted unless it fails outright
        if attempt > 0 && matches!(best, Some((_, Ok(_)))) && normals.is_some() {
            break;
        }
        let Some((point, radius)) = cylinder_from_axis(points, &centroid, axis) else {
            continue;
        };
        let mut prob = CylinderProblem {
            pts: points,
            point,
            axis: *axis,
            radius,
            frame: orthonormal_basis(axis),
            scale: scale.max(radius),
        };
        let out = levenberg_marquardt(&mut prob, points.len(), FIT_MAX_ITER);
        if prob.radius <= 0.0 {
            continue;
        }
        let axis = canonical_direction(prob.axis);
        let foot = prob.point + axis * (centroid - prob.point).dot(&axis);
        let shape = finish(
            out,
            Shape::Cylinder {
                point: foot,
                axis,
                radius: prob.radius,
            },
        );
        let better = match &best {
            None => true,
            Some((c, Ok(_))) => shape.is_ok() && out.cost < *c,
            Some((c, Err(_))) => shape.is_ok() || out.cost < *c,
        };
        if better {
            best = Some((out.cost, shape));
        }
    }
    best.map(|b| b.1)
        .unwrap_or_else(|| Err(Error::Degenerate("cylinder fit found no usable axis".into())))
}

struct ConeProblem<'a> {
    pts: &'a [Point3],
    apex: Point3,
    axis: Vector3,
    half_angle: f64,
    frame: (Vector3, Vector3),
    scale: f64,
}

impl ConeProblem<'_> {
    fn moved(&self, d: &[f64]) -> (Point3, Vector3, f64) {
        let (u, w) = self.frame;
        (
            self.apex + Vector3::new(d[2], d[3], d[4]),
            tilt(&self.axis, &u, &w, d[0], d[1]),
            self.half_angle + d[5],
        )
    }
}

impl LocalProblem for ConeProblem<'_> {
    fn dim(&self) -> usize {
        6
    }
    fn residuals(&self, d: &[f64], out: &mut [f64]) {
        let (apex, axis, theta) = self.moved(d);
        let (s, c) = theta.sin_cos();
        for (o, p) in out.iter_mut().zip(self.pts) {
            let v = p - apex;
            let h = v.dot(&axis);
            let rho = (v - axis * h).norm();
            *o = rho * c - h * s;
        }
    }
    fn retract(&mut self, d: &[f64]) {
        let (apex, axis, theta) = self.moved(d);
        self.apex = apex;
        self.axis = axis;
        self.half_angle = theta;
        self.frame = orthonormal_basis(&axis);
    }
    fn scales(&self) -> Vec<f64> {
        vec![1.0, 1.0, self.scale, self.scale, self.scale, 1.0]
    }
}

fn fit_cone(points: &[Point3], normals: Option<&[Vector3]>) -> Result<Shape> {
    let (_, scale) = extent(points);
    let estimated;
    let normals = match normals {
        Some(n) => n,
        None => {
            estimated = local_normals(points).ok_or_else(|| Error::Degenerate("cone fit needs normals".into()))?;
            &estimated
        }
    };
    // every tangent plane of a cone passes through its apex
    let mut a = Matrix3::zeros();
    let mut b = Vector3::zeros();
    for (p, n) in points.iter().zip(normals) {
        let nn = n * n.transpose();
        a += nn;
        b += nn * p.coords;
    }
    let (vals, _) = sorted_eigen(&a);
    if vals[2] <= 1e-6 * vals[0] {
        return Err(Error::Degenerate("cone apex is not determined by the normals".into()));
    }
    let apex = Point3::from(a.try_inverse().ok_or_else(|| Error::Degenerate("singular apex system".into()))? * b);

    let dirs: Vec<Vector3> = points
        .iter()
        .filter_map(|p| {
            let v = p - apex;
            let n = v.norm();
            (n > 1e-12 * scale).then(|| v / n)
        })
        .collect();
    if dirs.len() < 6 {
        return Err(Error::Degenerate("cone fit points coincide with the apex".into()));
    }
    let as_points: Vec<Point3> = dirs.iter().map(|d| Point3::from(*d)).collect();
    let (mean, cov) = covariance(as_points.iter()).expect("non-empty");
    let (_, vecs) = sorted_eigen(&cov);
    let mut axis: Vector3 = vecs.column(2).into_owned();
    if axis.dot(&mean.coords) < 0.0 {
        axis = -axis;
    }
    let theta = dirs.iter().map(|d| d.dot(&axis).clamp(-1.0, 1.0).acos()).sum::<f64>() / dirs.len() as f64;

    let mut prob = ConeProblem {
        pts: points,
        apex,
        axis,
        half_angle: theta,
        frame: orthonormal_basis(&axis),
        scale: scale.max((points[0] - apex).norm()),
    };
    let out = levenberg_marquardt(&mut prob, points.len(), FIT_MAX_ITER);
    // (axis, θ), (-axis, -θ) and (-axis, π-θ) describe the same residuals
    let mut axis = prob.axis;
    let mut theta = prob.half_angle.rem_euclid(std::f64::consts::TAU);
    if theta > std::f64::consts::PI {
        theta -= std::f64::consts::TAU;
    }
    if theta < 0.0 {
        theta = -theta;
        axis = -axis;
    }
    if theta > std::f64::consts::FRAC_PI_2 {
        theta = std::f64::consts::PI - theta;
        axis = -axis;
    }
    if !(theta > 1e-6 && theta < std::f64::consts::FRAC_PI_2 - 1e-6) {
        return Err(Error::Degenerate(format!("cone half-angle {theta} is degenerate")));
    }
    finish(
        out,
        Shape::Cone {
            apex: prob.apex,
            axis,
            half_angle: theta,
        },
    )
}

/// PCA normals from the 10 nearest neighbours within the point set itself.
fn local_normals(points: &[Point3]) -> Option<Vec<Vector3>> {
    let k = 10.min(points.len());
    if k < 3 {
        return None;
    }
    let tree = SpatialIndex::new(points);
    let normals: Vec<Vector3> = points
        .iter()
        .map(|p| {
            let nbrs: Vec<usize> = tree.knn(p, k).into_iter().map(|(i, _)| i).collect();
            pca_normal(points, &nbrs).0
        })
        .collect();
    Some(normals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::RigidTransform;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    pub(crate) fn cylinder_points(n: usize, radius: f64, seed: u64) -> (Vec<Point3>, Vec<Vector3>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let phi: f64 = rng.random_range(0.0..2.0 * PI);
                let z: f64 = rng.random_range(-2.0..2.0);
                (
                    Point3::new(radius * phi.cos(), radius * phi.sin(), z),
                    Vector3::new(phi.cos(), phi.sin(), 0.0),
                )
            })
            .unzip()
    }

    pub(crate) fn cone_points(n: usize, theta: f64, seed: u64) -> (Vec<Point3>, Vec<Vector3>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let phi: f64 = rng.random_range(0.0..2.0 * PI);
                let s: f64 = rng.random_range(1.0..3.0);
                let radial = Vector3::new(phi.cos(), phi.sin(), 0.0);
                let p = Point3::origin() + (radial * theta.sin() + Vector3::z() * theta.cos()) * s;
                let n = radial * theta.cos() - Vector3::z() * theta.sin();
                (p, n)
            })
            .unzip()
    }

    fn sphere_points(n: usize, seed: u64) -> Vec<Point3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let z: f64 = rng.random_range(-1.0..1.0);
                let phi: f64 = rng.random_range(0.0..2.0 * PI);
                let r = (1.0 - z * z).sqrt();
                Point3::new(1.0 + 1.5 * r * phi.cos(), -2.0 + 1.5 * r * phi.sin(), 0.5 + 1.5 * z)
            })
            .collect()
    }

    #[test]
    fn plane_z0() {
        let pts: Vec<Point3> = (0..50).map(|i| Point3::new((i % 7) as f64, (i / 7) as f64, 0.0)).collect();
        let Shape::Plane { normal, offset } = fit_shape(PrimitiveKind::Plane, &pts, None).unwrap() else {
            panic!()
        };
        assert!((normal - Vector3::z()).norm() < 1e-12);
        assert!(offset.abs() < 1e-12);
    }

    #[test]
    fn sphere_octahedron() {
        let pts = [
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(-1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(0.0, -1.0, 0.0),
            Point3::new(0.0, 0.0, 1.0),
            Point3::new(0.0, 0.0, -1.0),
        ];
        let Shape::Sphere { center, radius } = fit_shape(PrimitiveKind::Sphere, &pts, None).unwrap() else {
            panic!()
        };
        assert!(center.coords.norm() < 1e-12);
        assert!((radius - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cylinder_radius_two() {
        let (pts, nrm) = cylinder_points(200, 2.0, 1);
        for normals in [Some(nrm.as_slice()), None] {
            let Shape::Cylinder { axis, radius, .. } = fit_shape(PrimitiveKind::Cylinder, &pts, normals).unwrap() else {
                panic!()
            };
            assert!((radius - 2.0).abs() < 1e-6, "{radius}");
            assert!((axis - Vector3::z()).norm() < 1e-6, "{axis}");
        }
    }

    #[test]
    fn cone_thirty_degrees() {
        let (pts, nrm) = cone_points(300, PI / 6.0, 2);
        for normals in [Some(nrm.as_slice()), None] {
            let Shape::Cone { apex, axis, half_angle } = fit_shape(PrimitiveKind::Cone, &pts, normals).unwrap() else {
                panic!()
            };
            assert!((half_angle - PI / 6.0).abs() < 1e-4, "{half_angle}");
            assert!(apex.coords.norm() < 1e-4);
            assert!((axis - Vector3::z()).norm() < 1e-4);
        }
    }

    #[test]
    fn too_few_points() {
        let pts = [Point3::origin(); 5];
        assert!(matches!(
            fit_shape(PrimitiveKind::Cone, &pts, None),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn model_selection_on_noiseless_generators() {
        let (cyl, cyl_n) = cylinder_points(400, 1.0, 4);
        let (cone, cone_n) = cone_points(400, 0.4, 5);
        let sph = sphere_points(400, 6);
        let plane: Vec<Point3> = (0..400).map(|i| Point3::new((i % 20) as f64 * 0.1, (i / 20) as f64 * 0.1, 1.0)).collect();
        let cases = [
            (PrimitiveKind::Plane, PointCloud::new(plane).unwrap()),
            (PrimitiveKind::Sphere, PointCloud::new(sph).unwrap()),
            (PrimitiveKind::Cylinder, PointCloud::new(cyl).unwrap().with_normals(cyl_n).unwrap()),
            (PrimitiveKind::Cone, PointCloud::new(cone).unwrap().with_normals(cone_n).unwrap()),
        ];
        for (truth, cloud) in cases {
            let all: Vec<usize> = (0..cloud.len()).collect();
            let own = fit_primitive(truth, &cloud, &all).unwrap();
            assert!(own.fit_rms < 1e-8, "{truth}: {}", own.fit_rms);
            for other in PrimitiveKind::ALL {
                if let Ok(p) = fit_primitive(other, &cloud, &all) {
                    assert!(own.fit_rms <= p.fit_rms + 1e-9, "{truth} vs {other}");
                }
            }
            assert_eq!(fit_best_primitive(&cloud, &all).unwrap().kind(), truth);
        }
    }

    fn any_transform() -> impl Strategy<Value = RigidTransform> {
        (-1.0..1.0f64, -1.0..1.0f64, 0.1..1.0f64, 0.0..3.0f64, -5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64)
            .prop_map(|(ax, ay, az, ang, x, y, z)| RigidTransform::from_axis_angle(&Vector3::new(ax, ay, az), ang, Vector3::new(x, y, z)))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn fits_are_rigid_equivariant(t in any_transform(), seed in 0u64..1000) {
            let (cyl, cyl_n) = cylinder_points(150, 1.3, seed);
            let (cone, cone_n) = cone_points(150, 0.6, seed);
            let sph = sphere_points(150, seed);
            let moved = |p: &[Point3]| p.iter().map(|q| t.apply(q)).collect::<Vec<_>>();
            let turned = |n: &[Vector3]| n.iter().map(|v| t.apply_vector(v)).collect::<Vec<_>>();

            let a = fit_shape(PrimitiveKind::Sphere, &sph, None).unwrap();
            let b = fit_shape(PrimitiveKind::Sphere, &moved(&sph), None).unwrap();
            let (Shape::Sphere { center: c0, radius: r0 }, Shape::Sphere { center: c1, radius: r1 }) = (a, b) else { panic!() };
            prop_assert!((r0 - r1).abs() < 1e-9);
            prop_assert!((t.apply(&c0) - c1).norm() < 1e-8);

            let a = fit_shape(PrimitiveKind::Cylinder, &cyl, Some(&cyl_n)).unwrap();
            let b = fit_shape(PrimitiveKind::Cylinder, &moved(&cyl), Some(&turned(&cyl_n))).unwrap();
            let (Shape::Cylinder { axis: a0, radius: r0, .. }, Shape::Cylinder { axis: a1, radius: r1, .. }) = (a, b) else { panic!() };
            prop_assert!((r0 - r1).abs() < 1e-9);
            prop_assert!(t.apply_vector(&a0).dot(&a1).abs() > 1.0 - 1e-12);

            let a = fit_shape(PrimitiveKind::Cone, &cone, Some(&cone_n)).unwrap();
            let b = fit_shape(PrimitiveKind::Cone, &moved(&cone), Some(&turned(&cone_n))).unwrap();
            let (Shape::Cone { apex: p0, half_angle: h0, .. }, Shape::Cone { apex: p1, half_angle: h1, .. }) = (a, b) else { panic!() };
            prop_assert!((h0 - h1).abs() < 1e-9);
            prop_assert!((t.apply(&p0) - p1).norm() < 1e-7);
        }
    }
}
