use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Point3, PointCloud, Vector3};
use crate::{Error, Result};

/// Reference surface as an indexed triangle list.
#[derive(Debug, Clone)]
pub struct TriangleMesh {
    vertices: Vec<Point3>,
    triangles: Vec<[u32; 3]>,
    bvh: OnceLock<Bvh>,
}

impl PartialEq for TriangleMesh {
    fn eq(&self, other: &Self) -> bool {
        self.vertices == other.vertices && self.triangles == other.triangles
    }
}

impl TriangleMesh {
    /// Builds a mesh, dropping zero-area triangles. Fails on out-of-range
    /// indices or when nothing is left.
    pub fn new(vertices: Vec<Point3>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let n = vertices.len();
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i as usize >= n)) {
            return Err(Error::InvalidArgument(format!(
                "triangle {t:?} references a vertex outside 0..{n}"
            )));
        }
        if vertices.iter().any(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidArgument("mesh vertex with non-finite coordinate".into()));
        }
        let scale = super::cloud::bounds(&vertices)
            .map(|(lo, hi)| (hi - lo).norm())
            .unwrap_or(0.0);
        let min_double_area = (scale * scale * 1e-14).max(f64::MIN_POSITIVE);
        let triangles: Vec<[u32; 3]> = triangles
            .into_iter()
            .filter(|t| {
                let [a, b, c] = t.map(|i| vertices[i as usize]);
                (b - a).cross(&(c - a)).norm() > min_double_area
            })
            .collect();
        if triangles.is_empty() {
            return Err(Error::EmptyMesh);
        }
        Ok(Self {
            vertices,
            triangles,
            bvh: OnceLock::new(),
        })
    }

    pub fn vertices(&self) -> &[Point3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn triangle(&self, t: usize) -> [Point3; 3] {
        self.triangles[t].map(|i| self.vertices[i as usize])
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle(t);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn triangle_normal(&self, t: usize) -> Vector3 {
        let [a, b, c] = self.triangle(t);
        (b - a).cross(&(c - a)).normalize()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    pub fn transformed(&self, t: &super::RigidTransform) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.iter().map(|p| t.apply(p)).collect(),
            triangles: self.triangles.clone(),
            bvh: OnceLock::new(),
        }
    }

    /// Exact distance from `p` to the surface, with the index of the closest triangle.
    pub fn closest(&self, p: &Point3) -> (f64, usize) {
        let bvh = self.bvh.get_or_init(|| Bvh::build(self));
        bvh.closest(self, p)
    }

    pub fn distance(&self, p: &Point3) -> f64 {
        self.closest(p).0
    }

    /// Distances for many points, computed in parallel; output order follows input.
    pub fn distances(&self, points: &[Point3]) -> Vec<f64> {
        let _ = self.bvh.get_or_init(|| Bvh::build(self));
        points.par_iter().map(|p| self.distance(p)).collect()
    }
}

pub fn point_to_mesh_distance(p: &Point3, mesh: &TriangleMesh) -> f64 {
    mesh.distance(p)
}

/// Closest point on triangle `abc` to `p` (Ericson, Real-Time Collision Detection 5.1.5).
pub fn closest_point_on_triangle(p: &Point3, a: &Point3, b: &Point3, c: &Point3) -> Point3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    lo: Point3,
    hi: Point3,
}

impl Aabb {
    fn empty() -> Self {
        Aabb {
            lo: Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            hi: Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Point3) {
        for k in 0..3 {
            self.lo[k] = self.lo[k].min(p[k]);
            self.hi[k] = self.hi[k].max(p[k]);
        }
    }

    fn dist2(&self, p: &Point3) -> f64 {
        let mut s = 0.0;
        for k in 0..3 {
            let d = (self.lo[k] - p[k]).max(0.0).max(p[k] - self.hi[k]);
            s += d * d;
        }
        s
    }
}

#[derive(Debug, Clone)]
struct BvhNode {
    bounds: Aabb,
    // leaf when `count > 0`: triangles order[first..first + count]
    first: usize,
    count: usize,
    left: usize,
    right: usize,
}

#[derive(Debug, Clone)]
struct Bvh {
    nodes: Vec<BvhNode>,
    order: Vec<usize>,
}

impl Bvh {
    fn build(mesh: &TriangleMesh) -> Self {
        let centroids: Vec<Point3> = (0..mesh.triangles.len())
            .map(|t| {
                let [a, b, c] = mesh.triangle(t);
                Point3::from((a.coords + b.coords + c.coords) / 3.0)
            })
            .collect();
        let mut order: Vec<usize> = (0..mesh.triangles.len()).collect();
        let mut nodes = Vec::new();
        Self::build_rec(mesh, &centroids, &mut order, 0, &mut nodes);
        Bvh { nodes, order }
    }

    fn build_rec(
        mesh: &TriangleMesh,
        centroids: &[Point3],
        order: &mut [usize],
        offset: usize,
        nodes: &mut Vec<BvhNode>,
    ) -> usize {
        let mut bounds = Aabb::empty();
        let mut cbounds = Aabb::empty();
        for &t in order.iter() {
            for v in mesh.triangle(t) {
                bounds.grow(&v);
            }
            cbounds.grow(&centroids[t]);
        }
        let id = nodes.len();
        nodes.push(BvhNode {
            bounds,
            first: offset,
            count: order.len(),
            left: 0,
            right: 0,
        });
        if order.len() <= 4 {
            return id;
        }
        let ext = cbounds.hi - cbounds.lo;
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        let mid = order.len() / 2;
        order.select_nth_unstable_by(mid, |&a, &b| {
            centroids[a][axis]
                .partial_cmp(&centroids[b][axis])
                .unwrap()
                .then(a.cmp(&b))
        });
        let (lo, hi) = order.split_at_mut(mid);
        let left = Self::build_rec(mesh, centroids, lo, offset, nodes);
        let right = Self::build_rec(mesh, centroids, hi, offset + mid, nodes);
        let node = &mut nodes[id];
        node.count = 0;
        node.left = left;
        node.right = right;
        id
    }

    fn closest(&self, mesh: &TriangleMesh, p: &Point3) -> (f64, usize) {
        let mut best = (f64::INFINITY, usize::MAX);
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if node.bounds.dist2(p) > best.0 {
                continue;
            }
            if node.count > 0 {
                for &t in &self.order[node.first..node.first + node.count] {
                    let [a, b, c] = mesh.triangle(t);
                    let d2 = (closest_point_on_triangle(p, &a, &b, &c) - p).norm_squared();
                    if d2 < best.0 || (d2 == best.0 && t < best.1) {
                        best = (d2, t);
                    }
                }
            } else {
                let dl = self.nodes[node.left].bounds.dist2(p);
                let dr = self.nodes[node.right].bounds.dist2(p);
                // push the farther child first so the nearer one is visited next
                if dl <= dr {
                    stack.push(node.right);
                    stack.push(node.left);
                } else {
                    stack.push(node.left);
                    stack.push(node.right);
                }
            }
        }
        (best.0.sqrt(), best.1)
    }
}

/// Area-uniform samples of a mesh, with the source triangle of each sample.
#[derive(Debug, Clone)]
pub struct MeshSample {
    pub cloud: PointCloud,
    pub triangles: Vec<usize>,
}

/// Draws `count` points uniformly by area. Normals are the face normals.
pub fn sample_mesh(mesh: &TriangleMesh, count: usize, seed: u64) -> Result<PointCloud> {
    Ok(sample_mesh_faces(mesh, count, seed, |_| true)?.cloud)
}

/// Like [`sample_mesh`] but restricted to triangles accepted by `keep`.
pub fn sample_mesh_faces(
    mesh: &TriangleMesh,
    count: usize,
    seed: u64,
    keep: impl Fn(usize) -> bool,
) -> Result<MeshSample> {
    if count == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let mut cdf = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in 0..mesh.triangles.len() {
        if keep(t) {
            total += mesh.triangle_area(t);
        }
        cdf.push(total);
    }
    if total <= 0.0 {
        return Err(Error::InvalidArgument("no triangles selected for sampling".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(count);
    let mut normals = Vec::with_capacity(count);
    let mut tris = Vec::with_capacity(count);
    for _ in 0..count {
        let x: f64 = rng.random::<f64>() * total;
        let t = cdf.partition_point(|&c| c <= x).min(cdf.len() - 1);
        let [a, b, c] = mesh.triangle(t);
        let r1: f64 = rng.random::<f64>().sqrt();
        let r2: f64 = rng.random();
        let p = a.coords * (1.0 - r1) + b.coords * (r1 * (1.0 - r2)) + c.coords * (r1 * r2);
        points.push(Point3::from(p));
        normals.push(mesh.triangle_normal(t));
        tris.push(t);
    }
    let cloud = PointCloud::new(points)?.with_normals_normalized(normals)?;
    Ok(MeshSample {
        cloud,
        triangles: tris,
    })
}
