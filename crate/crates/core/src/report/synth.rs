//! Synthetic parts and scans with known ground truth.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::features::Circle3D;
use crate::geometry::orthonormal_basis;
use crate::primitives::Shape;
use crate::{Error, Point3, PointCloud, Result, RigidTransform, TriangleMesh, Vector3};

/// Segments used to tessellate round surfaces.
const ROUND_SEGMENTS: usize = 64;

/// A scene description. Surfaces receive `points` samples in proportion to
/// their area; circles carry their own point counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    #[serde(default = "default_points")]
    pub points: usize,
    /// Standard deviation of the isotropic Gaussian scan noise.
    #[serde(default)]
    pub noise: f64,
    /// Fraction of the final cloud made of uniform outliers in the padded
    /// bounding box.
    #[serde(default)]
    pub outliers: f64,
    #[serde(default)]
    pub pose: Option<PoseSpec>,
    pub shapes: Vec<ShapeSpec>,
}

fn default_points() -> usize {
    50_000
}

/// Random rigid motion applied to the scan: a rotation about a random axis by
/// up to `max_rotation_deg` and a translation of length up to
/// `max_translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseSpec {
    pub max_rotation_deg: f64,
    pub max_translation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeSpec {
    /// Axis-aligned closed cube.
    Cube {
        side: f64,
        #[serde(default)]
        center: [f64; 3],
    },
    /// Axis-aligned plate of `cells[0] × cells[1]` square cells with its
    /// bottom face on z = 0 and the corner at `origin`. Holes sit in the
    /// middle of their cell. The bottom face is not scanned.
    Plate {
        cells: [usize; 2],
        cell: f64,
        thickness: f64,
        #[serde(default)]
        origin: [f64; 3],
        #[serde(default)]
        holes: Vec<HoleSpec>,
    },
    /// Parallelogram `origin + s u + t v`, `s, t ∈ [0, 1]`.
    Plane { origin: [f64; 3], u: [f64; 3], v: [f64; 3] },
    Sphere { center: [f64; 3], radius: f64 },
    /// Open tube from `base` along `axis` (its length is the tube height).
    Cylinder { base: [f64; 3], axis: [f64; 3], radius: f64 },
    /// Conical band between distances `start` and `end` from the apex along
    /// the unit `axis`.
    Cone {
        apex: [f64; 3],
        axis: [f64; 3],
        half_angle_deg: f64,
        start: f64,
        end: f64,
    },
    /// Points on a circle only, with Gaussian noise of `noise` (absolute) or,
    /// when absent, the scene noise.
    Circle {
        center: [f64; 3],
        radius: f64,
        normal: [f64; 3],
        points: usize,
        #[serde(default)]
        noise: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoleSpec {
    pub cell: [usize; 2],
    pub radius: f64,
}

/// What the generator knows about a scene, in the CAD frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Maps scan coordinates to the CAD frame.
    pub scan_to_cad: RigidTransform,
    /// Surface primitive of every scan point (index into `primitives`), or −1.
    pub labels: Vec<i32>,
    pub primitives: Vec<Shape>,
    /// Circle of every scan point (index into `circles`) for points sampled on
    /// circle shapes, otherwise −1.
    pub circle_labels: Vec<i32>,
    /// Circular feature edges between two scanned faces, and circle shapes.
    pub circles: Vec<Circle3D>,
    /// Sharp edges between two scanned faces as short segments.
    pub sharp_edges: Vec<[Point3; 2]>,
}

impl GroundTruth {
    /// Distance from a CAD-frame point to the nearest sharp edge.
    pub fn distance_to_sharp_edge(&self, p: &Point3) -> f64 {
        self.sharp_edges
            .iter()
            .map(|[a, b]| segment_distance(p, a, b))
            .fold(f64::INFINITY, f64::min)
    }
}

fn segment_distance(p: &Point3, a: &Point3, b: &Point3) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared().max(f64::MIN_POSITIVE)).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    /// Points in the scan frame, labels set to the primitive labels.
    pub scan: PointCloud,
    /// `None` when the scene holds only circle shapes.
    pub mesh: Option<TriangleMesh>,
    pub truth: GroundTruth,
}

/// A surface piece that can be sampled uniformly by area.
enum Patch {
    Parallelogram { origin: Point3, u: Vector3, v: Vector3 },
    /// Axis-aligned rectangle at height `z` minus circular holes.
    HoledRect { lo: [f64; 2], hi: [f64; 2], z: f64, holes: Vec<([f64; 2], f64)> },
    Sphere { center: Point3, radius: f64 },
    Tube { base: Point3, axis: Vector3, length: f64, radius: f64 },
    Cone { apex: Point3, axis: Vector3, tan: f64, h0: f64, h1: f64 },
}

impl Patch {
    fn area(&self) -> f64 {
        match self {
            Patch::Parallelogram { u, v, .. } => u.cross(v).norm(),
            Patch::HoledRect { lo, hi, holes, .. } => {
                (hi[0] - lo[0]) * (hi[1] - lo[1]) - holes.iter().map(|(_, r)| PI * r * r).sum::<f64>()
            }
            Patch::Sphere { radius, .. } => 4.0 * PI * radius * radius,
            Patch::Tube { length, radius, .. } => TAU * radius * length,
            Patch::Cone { tan, h0, h1, .. } => PI * tan * (1.0 + tan * tan).sqrt() * (h1 * h1 - h0 * h0),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Point3 {
        match self {
            Patch::Parallelogram { origin, u, v } => origin + u * rng.random::<f64>() + v * rng.random::<f64>(),
            Patch::HoledRect { lo, hi, z, holes } => loop {
                let x = rng.random_range(lo[0]..hi[0]);
                let y = rng.random_range(lo[1]..hi[1]);
                if holes.iter().all(|(c, r)| (x - c[0]).powi(2) + (y - c[1]).powi(2) > r * r) {
                    return Point3::new(x, y, *z);
                }
            },
            Patch::Sphere { center, radius } => {
                let d: [f64; 3] = UnitSphere.sample(rng);
                center + Vector3::from(d) * *radius
            }
            Patch::Tube { base, axis, length, radius } => {
                let (u, w) = orthonormal_basis(axis);
                let t = rng.random_range(0.0..TAU);
                base + axis * (length * rng.random::<f64>()) + (u * t.cos() + w * t.sin()) * *radius
            }
            Patch::Cone { apex, axis, tan, h0, h1 } => {
                let (u, w) = orthonormal_basis(axis);
                let h = (h0 * h0 + rng.random::<f64>() * (h1 * h1 - h0 * h0)).sqrt();
                let t = rng.random_range(0.0..TAU);
                apex + axis * h + (u * t.cos() + w * t.sin()) * (h * tan)
            }
        }
    }
}

#[derive(Default)]
struct MeshBuilder {
    vertices: Vec<Point3>,
    triangles: Vec<[u32; 3]>,
}

impl MeshBuilder {
    fn vertex(&mut self, p: Point3) -> u32 {
        self.vertices.push(p);
        (self.vertices.len() - 1) as u32
    }

    fn quad(&mut self, a: Point3, b: Point3, c: Point3, d: Point3) {
        let [ia, ib, ic, id] = [a, b, c, d].map(|p| self.vertex(p));
        self.triangles.push([ia, ib, ic]);
        self.triangles.push([ia, ic, id]);
    }

    /// Triangle strip between two closed rings of equal length.
    fn band(&mut self, lower: &[Point3], upper: &[Point3]) {
        let n = lower.len();
        let lo: Vec<u32> = lower.iter().map(|p| self.vertex(*p)).collect();
        let up: Vec<u32> = upper.iter().map(|p| self.vertex(*p)).collect();
        for k in 0..n {
            let j = (k + 1) % n;
            self.triangles.push([lo[k], lo[j], up[j]]);
            self.triangles.push([lo[k], up[j], up[k]]);
        }
    }
}

fn ring(center: Point3, axis: &Vector3, radius: f64, phase: f64) -> Vec<Point3> {
    let (u, w) = orthonormal_basis(axis);
    (0..ROUND_SEGMENTS)
        .map(|k| {
            let t = phase + k as f64 / ROUND_SEGMENTS as f64 * TAU;
            center + (u * t.cos() + w * t.sin()) * radius
        })
        .collect()
}

/// Boundary of an axis-aligned square of half-size `h` around `c`, sampled at
/// the same angles as a hole ring (corners included).
fn square_ring(c: Point3, h: f64) -> Vec<Point3> {
    let (u, w) = orthonormal_basis(&Vector3::z());
    (0..ROUND_SEGMENTS)
        .map(|k| {
            let t = k as f64 / ROUND_SEGMENTS as f64 * TAU;
            let d = u * t.cos() + w * t.sin();
            c + d * (h / d.x.abs().max(d.y.abs()))
        })
        .collect()
}

struct Built {
    patches: Vec<(Patch, i32)>,
    primitives: Vec<Shape>,
    circles: Vec<Circle3D>,
    sharp_edges: Vec<[Point3; 2]>,
    /// Index into `circles` of every circle shape, with its spec.
    sampled_circles: Vec<(usize, usize, Option<f64>)>,
}

fn arr(a: [f64; 3]) -> Vector3 {
    Vector3::from(a)
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn polyline_edges(points: &[Point3], closed: bool, out: &mut Vec<[Point3; 2]>) {
    for k in 0..points.len() - usize::from(!closed) {
        out.push([points[k], points[(k + 1) % points.len()]]);
    }
}

fn plane_shape(normal: Vector3, through: Point3) -> Shape {
    let n = crate::primitives::canonical_direction(normal.normalize());
    Shape::Plane {
        normal: n,
        offset: n.dot(&through.coords),
    }
}

fn build_shape(spec: &ShapeSpec, mesh: &mut MeshBuilder, out: &mut Built) -> Result<()> {
    let add_patch = |out: &mut Built, patch: Patch, shape: Shape| {
        out.patches.push((patch, out.primitives.len() as i32));
        out.primitives.push(shape);
    };
    match spec {
        ShapeSpec::Cube { side, center } => {
            if !(*side > 0.0) {
                return Err(invalid("cube side must be positive"));
            }
            let c = Point3::from(arr(*center));
            let h = side / 2.0;
            let corner = |sx: f64, sy: f64, sz: f64| c + Vector3::new(sx * h, sy * h, sz * h);
            for axis in 0..3 {
                for sign in [-1.0, 1.0] {
                    let mut n = Vector3::zeros();
                    n[axis] = sign;
                    let (a1, a2) = ((axis + 1) % 3, (axis + 2) % 3);
                    let mut u = Vector3::zeros();
                    u[a1] = *side;
                    let mut v = Vector3::zeros();
                    v[a2] = *side;
                    let origin = c + n * h - u / 2.0 - v / 2.0;
                    // outward winding
                    let (u, v, origin) = if sign > 0.0 { (u, v, origin) } else { (v, u, origin) };
                    mesh.quad(origin, origin + u, origin + u + v, origin + v);
                    add_patch(out, Patch::Parallelogram { origin, u, v }, plane_shape(n, origin));
                }
            }
            let signs = [-1.0, 1.0];
            for a in signs {
                for b in signs {
                    out.sharp_edges.push([corner(-1.0, a, b), corner(1.0, a, b)]);
                    out.sharp_edges.push([corner(a, -1.0, b), corner(a, 1.0, b)]);
                    out.sharp_edges.push([corner(a, b, -1.0), corner(a, b, 1.0)]);
                }
            }
        }
        ShapeSpec::Plate {
            cells,
            cell,
            thickness,
            origin,
            holes,
        } => {
            if cells[0] == 0 || cells[1] == 0 || !(*cell > 0.0) || !(*thickness > 0.0) {
                return Err(invalid("plate cells, cell size and thickness must be positive"));
            }
            let o = Point3::from(arr(*origin));
            let (w, d, t) = (cells[0] as f64 * cell, cells[1] as f64 * cell, *thickness);
            let mut hole_at = vec![None; cells[0] * cells[1]];
            for hole in holes {
                let [i, j] = hole.cell;
                if i >= cells[0] || j >= cells[1] {
                    return Err(invalid(format!("hole cell {:?} outside the plate", hole.cell)));
                }
                if !(hole.radius > 0.0 && hole.radius < 0.45 * cell) {
                    return Err(invalid(format!("hole radius {} must lie in (0, 0.45 cell)", hole.radius)));
                }
                if hole_at[j * cells[0] + i].replace(hole.radius).is_some() {
                    return Err(invalid(format!("two holes in cell {:?}", hole.cell)));
                }
            }
            let top = o.z + t;
            let z = Vector3::z();
            let mut top_holes = Vec::new();
            for j in 0..cells[1] {
                for i in 0..cells[0] {
                    let c = o + Vector3::new((i as f64 + 0.5) * cell, (j as f64 + 0.5) * cell, 0.0);
                    match hole_at[j * cells[0] + i] {
                        None => {
                            for zz in [top, o.z] {
                                let cc = Point3::new(c.x, c.y, zz);
                                let h = cell / 2.0;
                                let (a, b, e, f) = (
                                    cc + Vector3::new(-h, -h, 0.0),
                                    cc + Vector3::new(h, -h, 0.0),
                                    cc + Vector3::new(h, h, 0.0),
                                    cc + Vector3::new(-h, h, 0.0),
                                );
                                if zz == top {
                                    mesh.quad(a, b, e, f);
                                } else {
                                    mesh.quad(a, f, e, b);
                                }
                            }
                        }
                        Some(r) => {
                            let ct = Point3::new(c.x, c.y, top);
                            let cb = Point3::new(c.x, c.y, o.z);
                            let (rt, rb) = (ring(ct, &z, r, 0.0), ring(cb, &z, r, 0.0));
                            // faces between the hole and the cell boundary
                            mesh.band(&rt, &square_ring(ct, cell / 2.0));
                            let mut sq_b = square_ring(cb, cell / 2.0);
                            let mut rb_rev = rb.clone();
                            sq_b.reverse();
                            rb_rev.reverse();
                            mesh.band(&rb_rev, &sq_b);
                            // hole wall, facing the hole axis
                            mesh.band(&rt, &rb);
                            top_holes.push(([c.x, c.y], r));
                            let circle = Circle3D::new(ct, r, z)?;
                            polyline_edges(&circle.polyline(256), true, &mut out.sharp_edges);
                            out.circles.push(circle);
                            add_patch(
                                out,
                                Patch::Tube { base: cb, axis: z, length: t, radius: r },
                                Shape::Cylinder { point: cb, axis: z, radius: r },
                            );
                        }
                    }
                }
            }
            add_patch(
                out,
                Patch::HoledRect {
                    lo: [o.x, o.y],
                    hi: [o.x + w, o.y + d],
                    z: top,
                    holes: top_holes,
                },
                plane_shape(z, Point3::new(o.x, o.y, top)),
            );
            let corners = [o, o + Vector3::new(w, 0.0, 0.0), o + Vector3::new(w, d, 0.0), o + Vector3::new(0.0, d, 0.0)];
            for k in 0..4 {
                let (a, b) = (corners[k], corners[(k + 1) % 4]);
                let up = z * t;
                mesh.quad(a, b, b + up, a + up);
                let normal = (b - a).cross(&z);
                add_patch(out, Patch::Parallelogram { origin: a, u: b - a, v: up }, plane_shape(normal, a));
                out.sharp_edges.push([a + up, b + up]);
                out.sharp_edges.push([a, a + up]);
            }
        }
        ShapeSpec::Plane { origin, u, v } => {
            let (o, u, v) = (Point3::from(arr(*origin)), arr(*u), arr(*v));
            let n = u.cross(&v);
            if !(n.norm() > 0.0) {
                return Err(invalid("plane edge vectors are parallel"));
            }
            mesh.quad(o, o + u, o + u + v, o + v);
            add_patch(out, Patch::Parallelogram { origin: o, u, v }, plane_shape(n, o));
        }
        ShapeSpec::Sphere { center, radius } => {
            if !(*radius > 0.0) {
                return Err(invalid("sphere radius must be positive"));
            }
            let c = Point3::from(arr(*center));
            let rows = ROUND_SEGMENTS / 2;
            let lat = |k: usize| -> Vec<Point3> {
                let phi = PI * k as f64 / rows as f64 - PI / 2.0;
                ring(c + Vector3::z() * (radius * phi.sin()), &Vector3::z(), radius * phi.cos(), 0.0)
            };
            for k in 0..rows {
                mesh.band(&lat(k), &lat(k + 1));
            }
            add_patch(
                out,
                Patch::Sphere { center: c, radius: *radius },
                Shape::Sphere { center: c, radius: *radius },
            );
        }
        ShapeSpec::Cylinder { base, axis, radius } => {
            let (b, a) = (Point3::from(arr(*base)), arr(*axis));
            let length = a.norm();
            if !(length > 0.0) || !(*radius > 0.0) {
                return Err(invalid("cylinder axis and radius must be non-zero"));
            }
            let dir = a / length;
            mesh.band(&ring(b, &dir, *radius, 0.0), &ring(b + a, &dir, *radius, 0.0));
            add_patch(
                out,
                Patch::Tube { base: b, axis: dir, length, radius: *radius },
                Shape::Cylinder {
                    point: b,
                    axis: crate::primitives::canonical_direction(dir),
                    radius: *radius,
                },
            );
        }
        ShapeSpec::Cone {
            apex,
            axis,
            half_angle_deg,
            start,
            end,
        } => {
            let (p, a) = (Point3::from(arr(*apex)), arr(*axis));
            if !(a.norm() > 0.0) || !(*half_angle_deg > 0.0 && *half_angle_deg < 90.0) || !(0.0 <= *start && start < end) {
                return Err(invalid("cone needs an axis, a half angle in (0°, 90°) and 0 ≤ start < end"));
            }
            let dir = a.normalize();
            let theta = half_angle_deg.to_radians();
            let tan = theta.tan();
            mesh.band(&ring(p + dir * *start, &dir, start * tan, 0.0), &ring(p + dir * *end, &dir, end * tan, 0.0));
            add_patch(
                out,
                Patch::Cone { apex: p, axis: dir, tan, h0: *start, h1: *end },
                Shape::Cone { apex: p, axis: dir, half_angle: theta },
            );
        }
        ShapeSpec::Circle {
            center,
            radius,
            normal,
            points,
            noise,
        } => {
            out.sampled_circles.push((out.circles.len(), *points, *noise));
            out.circles.push(Circle3D::new(Point3::from(arr(*center)), *radius, arr(*normal))?);
        }
    }
    Ok(())
}

/// Builds the mesh, samples a scan and records the ground truth.
///
/// The same spec and seed always give the same scene.
pub fn generate_synthetic_scene(spec: &SceneSpec, seed: u64) -> Result<SyntheticScene> {
    if !(spec.noise >= 0.0) || !(0.0..1.0).contains(&spec.outliers) {
        return Err(invalid("noise must be non-negative and the outlier fraction in [0, 1)"));
    }
    if spec.shapes.is_empty() {
        return Err(invalid("scene has no shapes"));
    }
    let mut mesh = MeshBuilder::default();
    let mut built = Built {
        patches: Vec::new(),
        primitives: Vec::new(),
        circles: Vec::new(),
        sharp_edges: Vec::new(),
        sampled_circles: Vec::new(),
    };
    for s in &spec.shapes {
        build_shape(s, &mut mesh, &mut built)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut circle_labels = Vec::new();

    let total_area: f64 = built.patches.iter().map(|(p, _)| p.area()).sum();
    if total_area > 0.0 {
        let mut assigned = 0usize;
        for (k, (patch, label)) in built.patches.iter().enumerate() {
            let count = if k + 1 == built.patches.len() {
                spec.points - assigned
            } else {
                ((patch.area() / total_area) * spec.points as f64).round() as usize
            }
            .min(spec.points - assigned);
            assigned += count;
            for _ in 0..count {
                points.push(patch.sample(&mut rng));
                labels.push(*label);
                circle_labels.push(-1);
            }
        }
    }
    for &(id, n, noise) in &built.sampled_circles {
        let c = built.circles[id];
        let gauss = Normal::new(0.0, noise.unwrap_or(spec.noise)).map_err(|e| invalid(e.to_string()))?;
        let (u, w) = orthonormal_basis(&c.normal);
        for _ in 0..n {
            let t = rng.random_range(0.0..TAU);
            let p = c.center + (u * t.cos() + w * t.sin()) * c.radius;
            points.push(p + Vector3::new(gauss.sample(&mut rng), gauss.sample(&mut rng), gauss.sample(&mut rng)));
            labels.push(-1);
            circle_labels.push(id as i32);
        }
    }
    if spec.noise > 0.0 {
        let gauss = Normal::new(0.0, spec.noise).map_err(|e| invalid(e.to_string()))?;
        for (p, cl) in points.iter_mut().zip(&circle_labels) {
            if *cl < 0 {
                *p += Vector3::new(gauss.sample(&mut rng), gauss.sample(&mut rng), gauss.sample(&mut rng));
            }
        }
    }
    if points.is_empty() {
        return Err(invalid("scene produced no points"));
    }
    if spec.outliers > 0.0 {
        let (lo, hi) = crate::geometry::bounds(&points).expect("non-empty");
        let pad = (hi - lo) * 0.05;
        let (lo, hi) = (lo - pad, hi + pad);
        let extra = (points.len() as f64 * spec.outliers / (1.0 - spec.outliers)).round() as usize;
        for _ in 0..extra {
            let p = Point3::new(
                rng.random_range(lo.x..=hi.x),
                rng.random_range(lo.y..=hi.y),
                rng.random_range(lo.z..=hi.z),
            );
            points.push(p);
            labels.push(-1);
            circle_labels.push(-1);
        }
    }

    let cad_to_scan = match spec.pose {
        Some(pose) => {
            let axis: [f64; 3] = UnitSphere.sample(&mut rng);
            let angle = rng.random_range(0.0..=pose.max_rotation_deg.to_radians());
            let dir: [f64; 3] = UnitSphere.sample(&mut rng);
            let shift = Vector3::from(dir) * rng.random_range(0.0..=pose.max_translation);
            // rotate about the part's centroid so the translation bound is meaningful
            let c = crate::geometry::centroid(points.iter()).expect("non-empty").coords;
            let r = RigidTransform::from_axis_angle(&Vector3::from(axis), angle, Vector3::zeros());
            RigidTransform::from_axis_angle(&Vector3::from(axis), angle, c - r.apply_vector(&c) + shift)
        }
        None => RigidTransform::identity(),
    };
    let scan_points: Vec<Point3> = points.iter().map(|p| cad_to_scan.apply(p)).collect();
    let scan = PointCloud::new(scan_points)?.with_labels(labels.clone())?;
    let mesh = if mesh.triangles.is_empty() {
        None
    } else {
        Some(TriangleMesh::new(mesh.vertices, mesh.triangles)?)
    };
    Ok(SyntheticScene {
        scan,
        mesh,
        truth: GroundTruth {
            scan_to_cad: cad_to_scan.inverse(),
            labels,
            primitives: built.primitives,
            circle_labels,
            circles: built.circles,
            sharp_edges: built.sharp_edges,
        },
    })
}

/// Four coplanar circles with Gaussian noise of 10% of each radius and as
/// many uniform outliers as circle points.
pub fn four_circles_spec(seed: u64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)]
        .into_iter()
        .map(|(x, y)| {
            let radius = rng.random_range(0.35..0.5);
            ShapeSpec::Circle {
                center: [x + rng.random_range(-0.15..0.15), y + rng.random_range(-0.15..0.15), 0.0],
                radius,
                normal: [0.0, 0.0, 1.0],
                points: 100,
                noise: Some(0.1 * radius),
            }
        })
        .collect();
    SceneSpec {
        points: 0,
        noise: 0.0,
        outliers: 0.5,
        pose: None,
        shapes,
    }
}

/// A 10 × 10 × 1 plate with a 4 × 4 grid of holes of radii 0.3 to 0.6.
pub fn plate_spec(noise: f64, points: usize) -> SceneSpec {
    let holes = (0..16)
        .map(|k| HoleSpec {
            cell: [k % 4, k / 4],
            radius: 0.3 + 0.02 * k as f64,
        })
        .collect();
    SceneSpec {
        points,
        noise,
        outliers: 0.0,
        pose: None,
        shapes: vec![ShapeSpec::Plate {
            cells: [4, 4],
            cell: 2.5,
            thickness: 1.0,
            origin: [0.0; 3],
            holes,
        }],
    }
}

pub fn cube_spec(side: f64, noise: f64, points: usize) -> SceneSpec {
    SceneSpec {
        points,
        noise,
        outliers: 0.0,
        pose: None,
        shapes: vec![ShapeSpec::Cube { side, center: [0.0; 3] }],
    }
}

/// `count` separated primitives of random kinds, sizes and orientations,
/// about 2500 points each.
pub fn random_primitives_spec(count: usize, noise: f64, seed: u64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells: Vec<usize> = (0..9).collect();
    let mut shapes = Vec::with_capacity(count);
    for k in 0..count.min(9) {
        let cell = cells.swap_remove(rng.random_range(0..cells.len()));
        let c = Vector3::new((cell % 3) as f64 * 6.0, (cell / 3) as f64 * 6.0, rng.random_range(-1.0..1.0));
        let dir: [f64; 3] = UnitSphere.sample(&mut rng);
        let dir = Vector3::from(dir);
        let (u, v) = orthonormal_basis(&dir);
        let p = |x: Vector3| -> [f64; 3] { x.into() };
        // the first two are a plane and a curved kind so every scene mixes kinds
        let kind = match k {
            0 => 0,
            1 => rng.random_range(1..4),
            _ => rng.random_range(0..4),
        };
        shapes.push(match kind {
            0 => {
                let (a, b) = (rng.random_range(2.5..3.5), rng.random_range(2.5..3.5));
                ShapeSpec::Plane {
                    origin: p(c - u * (a / 2.0) - v * (b / 2.0)),
                    u: p(u * a),
                    v: p(v * b),
                }
            }
            1 => ShapeSpec::Sphere {
                center: p(c),
                radius: rng.random_range(1.0..1.6),
            },
            2 => {
                let len = rng.random_range(2.5..3.5);
                ShapeSpec::Cylinder {
                    base: p(c - dir * (len / 2.0)),
                    axis: p(dir * len),
                    radius: rng.random_range(0.7..1.2),
                }
            }
            _ => {
                let half_angle_deg = rng.random_range(20.0..40.0);
                ShapeSpec::Cone {
                    apex: p(c - dir * 2.0),
                    axis: p(dir),
                    half_angle_deg,
                    start: 1.0,
                    end: 3.5,
                }
            }
        });
    }
    SceneSpec {
        points: 2500 * shapes.len(),
        noise,
        outliers: 0.0,
        pose: None,
        shapes,
    }
}

impl SceneSpec {
    pub fn from_toml_str(text: &str) -> Result<SceneSpec> {
        toml::from_str(text).map_err(|e| {
            let location = e.span().map_or_else(|| "document".to_string(), |s| format!("bytes {}..{}", s.start, s.end));
            Error::parse("<scene spec>", location, e.message())
        })
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<SceneSpec> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Parse { location, message, .. } => Error::parse(path, location, message),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scene spec serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveRecord {
    pub kind: String,
    pub parameters: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircleRecord {
    pub center: [f64; 3],
    pub radius: f64,
    pub normal: [f64; 3],
}

/// The serialisable part of a [`GroundTruth`]; the per-point labels travel
/// in the scan file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub seed: u64,
    /// Row-major 4 × 4 matrix taking scan coordinates to the CAD frame.
    pub scan_to_cad: [[f64; 4]; 4],
    pub primitives: Vec<PrimitiveRecord>,
    pub circles: Vec<CircleRecord>,
}

impl TruthRecord {
    pub fn new(truth: &GroundTruth, seed: u64) -> TruthRecord {
        TruthRecord {
            seed,
            scan_to_cad: truth.scan_to_cad.to_rows(),
            primitives: truth
                .primitives
                .iter()
                .map(|s| PrimitiveRecord {
                    kind: s.kind().name().to_string(),
                    parameters: s.parameters(),
                })
                .collect(),
            circles: truth
                .circles
                .iter()
                .map(|c| CircleRecord {
                    center: c.center.coords.into(),
                    radius: c.radius,
                    normal: c.normal.into(),
                })
                .collect(),
        }
    }

    pub fn circles(&self) -> Result<Vec<Circle3D>> {
        self.circles
            .iter()
            .map(|c| Circle3D::new(Point3::from(arr(c.center)), c.radius, arr(c.normal)))
            .collect()
    }
}

/// Writes `scan.ply` (with per-point truth labels), `part.obj` when the
/// scene has surfaces, and `truth.toml` into `dir`.
pub fn write_scene(scene: &SyntheticScene, seed: u64, dir: impl AsRef<std::path::Path>, ascii: bool) -> Result<Vec<std::path::PathBuf>> {
    use crate::geometry::io::{write_obj, write_ply_cloud};
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let scan = dir.join("scan.ply");
    write_ply_cloud(&scan, &scene.scan, ascii)?;
    written.push(scan);
    if let Some(mesh) = &scene.mesh {
        let obj = dir.join("part.obj");
        write_obj(&obj, mesh)?;
        written.push(obj);
    }
    let truth = dir.join("truth.toml");
    let text = toml::to_string(&TruthRecord::new(&scene.truth, seed)).map_err(|e| invalid(e.to_string()))?;
    std::fs::write(&truth, text).map_err(|e| Error::io(&truth, e))?;
    written.push(truth);
    Ok(written)
}
