//! Static k-d tree over a fixed point set.
//!
//! Results are ordered by `(squared distance, index)` so that queries match a
//! brute-force scan exactly, ties included.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::Point3;

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { dim: usize, value: f64, left: usize, right: usize },
}

#[derive(Debug, Clone)]
pub struct KdTree<const D: usize> {
    coords: Vec<[f64; D]>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

/// Three-dimensional index used throughout the crate.
pub type SpatialIndex = KdTree<3>;

#[derive(PartialEq)]
struct Candidate(f64, usize);

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .partial_cmp(&other.0)
            .unwrap_or(Ordering::Equal)
            .then(self.1.cmp(&other.1))
    }
}

fn dist2<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    let mut s = 0.0;
    for k in 0..D {
        let d = a[k] - b[k];
        s += d * d;
    }
    s
}

impl<const D: usize> KdTree<D> {
    pub fn from_coords(coords: Vec<[f64; D]>) -> Self {
        let mut order: Vec<usize> = (0..coords.len()).collect();
        let mut nodes = Vec::new();
        if !coords.is_empty() {
            build(&coords, &mut order, 0, &mut nodes);
        }
        Self {
            coords,
            order,
            nodes,
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[[f64; D]] {
        &self.coords
    }

    /// The `k` nearest points as `(index, squared distance)`, closest first.
    pub fn knn_coords(&self, q: &[f64; D], k: usize) -> Vec<(usize, f64)> {
        if k == 0 || self.nodes.is_empty() {
            return Vec::new();
        }
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        self.knn_rec(0, q, k, &mut heap);
        let mut out: Vec<(usize, f64)> = heap.into_iter().map(|c| (c.1, c.0)).collect();
        out.sort_by(|a, b| Candidate(a.1, a.0).cmp(&Candidate(b.1, b.0)));
        out
    }

    fn knn_rec(&self, node: usize, q: &[f64; D], k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let c = Candidate(dist2(q, &self.coords[i]), i);
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split { dim, value, left, right } => {
                let diff = q[dim] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.knn_rec(near, q, k, heap);
                // `<=` keeps equal-distance candidates with smaller indices reachable.
                if heap.len() < k || diff * diff <= heap.peek().unwrap().0 {
                    self.knn_rec(far, q, k, heap);
                }
            }
        }
    }

    /// All points with squared distance `<= radius²`, as `(index, squared distance)`
    /// sorted by distance then index.
    pub fn within_coords(&self, q: &[f64; D], radius: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        self.for_each_within(q, radius, |i, d2| out.push((i, d2)));
        out.sort_by(|a, b| Candidate(a.1, a.0).cmp(&Candidate(b.1, b.0)));
        out
    }

    /// Visits every point within `radius` in unspecified order.
    pub fn for_each_within(&self, q: &[f64; D], radius: f64, mut f: impl FnMut(usize, f64)) {
        if self.nodes.is_empty() || !(radius >= 0.0) {
            return;
        }
        let r2 = radius * radius;
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            match self.nodes[node] {
                Node::Leaf { start, end } => {
                    for &i in &self.order[start..end] {
                        let d2 = dist2(q, &self.coords[i]);
                        if d2 <= r2 {
                            f(i, d2);
                        }
                    }
                }
                Node::Split { dim, value, left, right } => {
                    let diff = q[dim] - value;
                    if diff <= radius {
                        stack.push(left);
                    }
                    if diff >= -radius {
                        stack.push(right);
                    }
                }
            }
        }
    }
}

fn build<const D: usize>(coords: &[[f64; D]], order: &mut [usize], offset: usize, nodes: &mut Vec<Node>) -> usize {
    let id = nodes.len();
    if order.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf {
            start: offset,
            end: offset + order.len(),
        });
        return id;
    }
    // split on the widest dimension
    let mut dim = 0;
    let mut widest = -1.0;
    for k in 0..D {
        let (lo, hi) = order.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
            (lo.min(coords[i][k]), hi.max(coords[i][k]))
        });
        if hi - lo > widest {
            widest = hi - lo;
            dim = k;
        }
    }
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        coords[a][dim]
            .partial_cmp(&coords[b][dim])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let value = coords[order[mid]][dim];
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let (lo, hi) = order.split_at_mut(mid);
    let left = build(coords, lo, offset, nodes);
    let right = build(coords, hi, offset + mid, nodes);
    nodes[id] = Node::Split {
        dim,
        value,
        left,
        right,
    };
    id
}

impl KdTree<3> {
    pub fn new(points: &[Point3]) -> Self {
        Self::from_coords(points.iter().map(|p| [p.x, p.y, p.z]).collect())
    }

    pub fn knn(&self, q: &Point3, k: usize) -> Vec<(usize, f64)> {
        self.knn_coords(&[q.x, q.y, q.z], k)
    }

    pub fn nearest(&self, q: &Point3) -> Option<(usize, f64)> {
        self.knn(q, 1).into_iter().next()
    }

    pub fn within(&self, q: &Point3, radius: f64) -> Vec<(usize, f64)> {
        self.within_coords(&[q.x, q.y, q.z], radius)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_knn(pts: &[Point3], q: &Point3, k: usize) -> Vec<(usize, f64)> {
        let mut all: Vec<(usize, f64)> = pts.iter().enumerate().map(|(i, p)| (i, (p - q).norm_squared())).collect();
        all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }

    #[test]
    fn agrees_with_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..1000 {
            let n = rng.random_range(1..2000usize);
            // snap some coordinates to a grid to create ties
            let snap = trial % 3 == 0;
            let pts: Vec<Point3> = (0..n)
                .map(|_| {
                    let mut p = Point3::new(rng.random(), rng.random(), rng.random());
                    if snap {
                        p = p.map(|c| (c * 8.0).round() / 8.0);
                    }
                    p
                })
                .collect();
            let tree = KdTree::new(&pts);
            let q = Point3::new(rng.random(), rng.random(), rng.random());
            let k = rng.random_range(1..20usize);
            assert_eq!(tree.knn(&q, k), brute_knn(&pts, &q, k));
            let r: f64 = rng.random_range(0.0..0.3);
            let mut brute: Vec<(usize, f64)> = pts
                .iter()
                .enumerate()
                .map(|(i, p)| (i, (p - q).norm_squared()))
                .filter(|&(_, d2)| d2 <= r * r)
                .collect();
            brute.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
            assert_eq!(tree.within(&q, r), brute);
        }
    }

    #[test]
    fn empty_tree() {
        let tree = KdTree::new(&[]);
        assert!(tree.knn(&Point3::origin(), 3).is_empty());
        assert!(tree.within(&Point3::origin(), 1.0).is_empty());
    }

    #[test]
    fn higher_dimensions() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<[f64; 6]> = (0..500).map(|_| std::array::from_fn(|_| rng.random())).collect();
        let tree = KdTree::from_coords(pts.clone());
        let q = [0.5; 6];
        let got = tree.within_coords(&q, 0.4);
        let want = pts.iter().filter(|p| dist2(p, &q) <= 0.16).count();
        assert_eq!(got.len(), want);
    }
}
