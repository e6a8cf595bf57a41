//! Reference circles read off the CAD mesh.
//!
//! Triangles are grouped into smooth surface patches. Where two patches meet
//! along a closed loop of sharp edges whose vertices all lie on one circle,
//! that loop is a circular feature of the part (typically a hole rim).

use std::collections::{BTreeMap, HashMap};

use crate::features::{fit_circle, Circle3D};
use crate::{Point3, TriangleMesh};

/// Default largest dihedral angle inside a smooth patch, in degrees.
pub const DEFAULT_SMOOTH_ANGLE_DEG: f64 = 30.0;
/// Fewest loop vertices for a circle.
const MIN_LOOP_VERTICES: usize = 8;
/// Largest vertex-to-circle distance of an accepted loop, relative to its radius.
const LOOP_TOLERANCE: f64 = 1e-6;

/// A circular loop of sharp mesh edges between two smooth patches.
#[derive(Debug, Clone, PartialEq)]
pub struct CadCircle {
    pub circle: Circle3D,
    /// The smooth patches on either side, smaller id first.
    pub patches: [usize; 2],
    pub vertices: usize,
}

/// Smooth-patch id of every triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothPatches {
    pub patch_of: Vec<usize>,
    pub count: usize,
}

struct Welded {
    positions: Vec<Point3>,
    /// Triangles incident to every welded edge `(lo, hi)`.
    edges: BTreeMap<(usize, usize), Vec<usize>>,
}

fn weld(mesh: &TriangleMesh) -> Welded {
    let verts = mesh.vertices();
    let scale = crate::geometry::bounds(verts).map_or(1.0, |(lo, hi)| (hi - lo).norm().max(f64::MIN_POSITIVE));
    let quantum = scale * 1e-9;
    let mut ids: HashMap<[i64; 3], usize> = HashMap::new();
    let mut positions = Vec::new();
    let mut remap = Vec::with_capacity(verts.len());
    for p in verts {
        let key = [p.x, p.y, p.z].map(|c| (c / quantum).round() as i64);
        let id = *ids.entry(key).or_insert_with(|| {
            positions.push(*p);
            positions.len() - 1
        });
        remap.push(id);
    }
    let mut edges: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let c = tri.map(|i| remap[i as usize]);
        for k in 0..3 {
            let (a, b) = (c[k], c[(k + 1) % 3]);
            if a != b {
                edges.entry((a.min(b), a.max(b))).or_default().push(t);
            }
        }
    }
    Welded { positions, edges }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

fn patches_of(mesh: &TriangleMesh, welded: &Welded, max_angle: f64) -> SmoothPatches {
    let n = mesh.triangles().len();
    let normals: Vec<_> = (0..n).map(|t| mesh.triangle_normal(t)).collect();
    let cos_max = max_angle.cos();
    let mut parent: Vec<usize> = (0..n).collect();
    for tris in welded.edges.values() {
        if let [a, b] = tris[..] {
            if normals[a].dot(&normals[b]) >= cos_max {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
    }
    let mut ids: HashMap<usize, usize> = HashMap::new();
    let patch_of = (0..n)
        .map(|t| {
            let root = find(&mut parent, t);
            let next = ids.len();
            *ids.entry(root).or_insert(next)
        })
        .collect();
    SmoothPatches { patch_of, count: ids.len() }
}

/// Groups triangles whose shared edges bend by less than `max_angle` radians.
pub fn smooth_patches(mesh: &TriangleMesh, max_angle: f64) -> SmoothPatches {
    patches_of(mesh, &weld(mesh), max_angle)
}

/// Splits an edge set into its connected components and returns those that
/// form a single simple cycle, as ordered vertex lists.
fn cycles(edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut adj: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(a, b) in edges {
        adj.entry(a).or_default().push(b);
        adj.entry(b).or_default().push(a);
    }
    let mut seen: BTreeMap<usize, bool> = adj.keys().map(|&v| (v, false)).collect();
    let mut out = Vec::new();
    for &start in adj.keys() {
        if seen[&start] {
            continue;
        }
        // collect the component
        let mut comp = vec![start];
        seen.insert(start, true);
        let mut i = 0;
        while i < comp.len() {
            for &w in &adj[&comp[i]] {
                if !seen[&w] {
                    seen.insert(w, true);
                    comp.push(w);
                }
            }
            i += 1;
        }
        if comp.iter().any(|v| adj[v].len() != 2) {
            continue;
        }
        let mut order = vec![start];
        let (mut prev, mut cur) = (start, adj[&start][0]);
        while cur != start {
            order.push(cur);
            let next = if adj[&cur][0] == prev { adj[&cur][1] } else { adj[&cur][0] };
            prev = cur;
            cur = next;
        }
        if order.len() == comp.len() {
            out.push(order);
        }
    }
    out
}

/// Circular loops of sharp edges between smooth patches.
///
/// Every closed loop of at least eight vertices along which two patches meet
/// is fitted with a circle; it is kept when all its vertices lie on that
/// circle.
pub fn circle_loops(mesh: &TriangleMesh, max_angle: f64) -> (SmoothPatches, Vec<CadCircle>) {
    let welded = weld(mesh);
    let patches = patches_of(mesh, &welded, max_angle);
    let mut between: BTreeMap<(usize, usize), Vec<(usize, usize)>> = BTreeMap::new();
    for (&edge, tris) in &welded.edges {
        if let [a, b] = tris[..] {
            let (pa, pb) = (patches.patch_of[a], patches.patch_of[b]);
            if pa != pb {
                between.entry((pa.min(pb), pa.max(pb))).or_default().push(edge);
            }
        }
    }
    let mut out = Vec::new();
    for (&(pa, pb), edges) in &between {
        for cycle in cycles(edges) {
            if cycle.len() < MIN_LOOP_VERTICES {
                continue;
            }
            let pts: Vec<Point3> = cycle.iter().map(|&v| welded.positions[v]).collect();
            let Ok(circle) = fit_circle(&pts) else { continue };
            if pts.iter().all(|p| circle.distance(p) <= LOOP_TOLERANCE * circle.radius) {
                out.push(CadCircle {
                    circle,
                    patches: [pa, pb],
                    vertices: pts.len(),
                });
            }
        }
    }
    (patches, out)
}

/// Points of `points` within `max_dist` of the mesh, counted per smooth patch.
pub fn patch_support(mesh: &TriangleMesh, patches: &SmoothPatches, points: &[Point3], max_dist: f64) -> Vec<usize> {
    use rayon::prelude::*;
    let hits: Vec<Option<usize>> = points
        .par_iter()
        .map(|p| {
            let (d, t) = mesh.closest(p);
            (d <= max_dist).then(|| patches.patch_of[t])
        })
        .collect();
    let mut count = vec![0usize; patches.count];
    for h in hits.into_iter().flatten() {
        count[h] += 1;
    }
    count
}

/// Fraction of the typical scan density a patch needs to count as observed.
const OBSERVED_DENSITY: f64 = 0.2;

/// Which smooth patches the points cover. A patch is observed when its
/// points per unit area reach a fifth of the median over all patches that
/// hold any point; a few stray points near a shared rim do not count.
pub fn observed_patches(mesh: &TriangleMesh, patches: &SmoothPatches, points: &[Point3], max_dist: f64) -> Vec<bool> {
    let support = patch_support(mesh, patches, points, max_dist);
    let mut area = vec![0.0; patches.count];
    for (t, &p) in patches.patch_of.iter().enumerate() {
        area[p] += mesh.triangle_area(t);
    }
    let density: Vec<f64> = support.iter().zip(&area).map(|(&n, &a)| n as f64 / a.max(f64::MIN_POSITIVE)).collect();
    let mut hit: Vec<f64> = density.iter().copied().filter(|&d| d > 0.0).collect();
    if hit.is_empty() {
        return vec![false; patches.count];
    }
    hit.sort_by(f64::total_cmp);
    let typical = hit[hit.len() / 2];
    density.iter().map(|&d| d > 0.0 && d >= OBSERVED_DENSITY * typical).collect()
}

/// The CAD circles whose two adjacent patches are both observed by the
/// registered scan points within `max_dist` of the mesh.
pub fn observed_circles(mesh: &TriangleMesh, points: &[Point3], max_dist: f64) -> Vec<Circle3D> {
    let (patches, loops) = circle_loops(mesh, DEFAULT_SMOOTH_ANGLE_DEG.to_radians());
    if loops.is_empty() {
        return Vec::new();
    }
    let seen = observed_patches(mesh, &patches, points, max_dist);
    loops
        .into_iter()
        .filter(|l| l.patches.iter().all(|&p| seen[p]))
        .map(|l| l.circle)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::sample_mesh;
    use crate::report::synth::{cube_spec, generate_synthetic_scene, plate_spec};

    #[test]
    fn cube_has_six_patches_and_no_circles() {
        let mesh = generate_synthetic_scene(&cube_spec(2.0, 0.0, 100), 0).unwrap().mesh.unwrap();
        let (patches, loops) = circle_loops(&mesh, DEFAULT_SMOOTH_ANGLE_DEG.to_radians());
        assert_eq!(patches.count, 6);
        assert!(loops.is_empty());
    }

    #[test]
    fn plate_rims_are_found_and_filtered_by_visibility() {
        let s = generate_synthetic_scene(&plate_spec(0.0, 20_000), 0).unwrap();
        let mesh = s.mesh.unwrap();
        let (_, loops) = circle_loops(&mesh, DEFAULT_SMOOTH_ANGLE_DEG.to_radians());
        // top and bottom rim of every hole
        assert_eq!(loops.len(), 32);
        let seen = observed_circles(&mesh, s.scan.points(), 0.05);
        assert_eq!(seen.len(), 16);
        for t in &s.truth.circles {
            let best = seen.iter().map(|c| crate::features::circle_change(c, t)).fold(f64::INFINITY, f64::min);
            assert!(best < 1e-9, "{best}");
        }
        // a scan of the whole surface, bottom included, sees all of them
        let all = sample_mesh(&mesh, 40_000, 1).unwrap();
        assert_eq!(observed_circles(&mesh, all.points(), 0.05).len(), 32);
    }

    #[test]
    fn open_chains_are_not_cycles() {
        assert!(cycles(&[(0, 1), (1, 2)]).is_empty());
        let c = cycles(&[(0, 1), (1, 2), (2, 0), (5, 6)]);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].len(), 3);
        // a figure eight is one component with a degree-4 vertex
        assert!(cycles(&[(0, 1), (1, 2), (2, 0), (0, 3), (3, 4), (4, 0)]).is_empty());
    }
}
