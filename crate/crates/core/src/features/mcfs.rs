use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::circle::{circle_change, circumcircle, fit_circle_iterative, Circle3D};
use crate::geometry::{covariance, orthonormal_basis, sorted_eigen, KdTree, Point3, SpatialIndex};
use crate::{Error, Result};

/// A circle through three sampled points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircleHypothesis {
    pub circle: Circle3D,
    pub sample: [usize; 3],
}

/// Per-point labels (−1 for outliers) and the circles they refer to.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CircleLabeling {
    pub labels: Vec<i32>,
    pub circles: Vec<Circle3D>,
}

impl CircleLabeling {
    pub fn unlabeled(n: usize) -> Self {
        CircleLabeling {
            labels: vec![-1; n],
            circles: Vec::new(),
        }
    }

    /// Indices labeled with circle `k`.
    pub fn members(&self, k: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == k as i32).collect()
    }
}

fn check_not_collinear(points: &[Point3]) -> Result<()> {
    let degenerate = || Error::Degenerate("degenerate edge set".into());
    if points.len() < 3 {
        return Err(degenerate());
    }
    let (_, cov) = covariance(points.iter()).expect("non-empty");
    let (vals, _) = sorted_eigen(&cov);
    if vals[1] <= 1e-18 * vals[0].max(f64::MIN_POSITIVE) {
        return Err(degenerate());
    }
    Ok(())
}

fn draw_distinct(rng: &mut ChaCha8Rng, n: usize) -> [usize; 3] {
    let a = rng.random_range(0..n);
    let mut b = rng.random_range(0..n - 1);
    if b >= a {
        b += 1;
    }
    let mut c = rng.random_range(0..n - 2);
    for x in [a.min(b), a.max(b)] {
        if c >= x {
            c += 1;
        }
    }
    [a, b, c]
}

/// `count` circles through uniformly drawn point triples. Collinear triples
/// are redrawn.
pub fn generate_hypotheses(points: &[Point3], count: usize, seed: u64) -> Result<Vec<CircleHypothesis>> {
    check_not_collinear(points)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count && attempts < 1000 * count.max(1) {
        attempts += 1;
        let s = draw_distinct(&mut rng, points.len());
        if let Some(circle) = circumcircle(&points[s[0]], &points[s[1]], &points[s[2]]) {
            out.push(CircleHypothesis { circle, sample: s });
        }
    }
    Ok(out)
}

/// Hypotheses whose first point is uniform and whose other two lie in a
/// neighbourhood of it. The neighbourhood radius is drawn log-uniformly
/// between `radius / 16` and `radius` so that small and large circles are
/// both sampled. A share `uniform_fraction` of triples is fully uniform.
pub fn generate_local_hypotheses(
    points: &[Point3],
    count: usize,
    radius: f64,
    uniform_fraction: f64,
    seed: u64,
) -> Result<Vec<CircleHypothesis>> {
    check_not_collinear(points)?;
    let tree = SpatialIndex::new(points);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count && attempts < 1000 * count.max(1) {
        attempts += 1;
        let s = if rng.random::<f64>() < uniform_fraction {
            draw_distinct(&mut rng, points.len())
        } else {
            let a = rng.random_range(0..points.len());
            let reach = radius * (-rng.random::<f64>() * 16f64.ln()).exp();
            let near: Vec<usize> = tree.within(&points[a], reach).into_iter().map(|(j, _)| j).filter(|&j| j != a).collect();
            if near.len() < 2 {
                continue;
            }
            let b = rng.random_range(0..near.len());
            let mut c = rng.random_range(0..near.len() - 1);
            if c >= b {
                c += 1;
            }
            [a, near[b], near[c]]
        };
        if let Some(circle) = circumcircle(&points[s[0]], &points[s[1]], &points[s[2]]) {
            out.push(CircleHypothesis { circle, sample: s });
        }
    }
    Ok(out)
}

/// Position of a circle in the normalised 6-D parameter space: center and
/// radius divided by `scale`, normal as the x/y components of its
/// non-negative-z representative.
fn features(c: &Circle3D, scale: f64) -> [f64; 6] {
    let n = if c.normal.z < 0.0 { -c.normal } else { c.normal };
    [
        c.center.x / scale,
        c.center.y / scale,
        c.center.z / scale,
        n.x,
        n.y,
        c.radius / scale,
    ]
}

fn dist6(a: &[f64; 6], b: &[f64; 6]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// A mean-shift mode: its representative hypothesis and how many hypotheses
/// converged to it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HypothesisMode {
    pub hypothesis: CircleHypothesis,
    pub support: usize,
}

/// Flat-kernel mean shift over the hypotheses. Modes closer than half the
/// bandwidth are merged; each mode is represented by its member hypothesis
/// nearest to it.
pub fn reduce_hypotheses_with_support(hyps: &[CircleHypothesis], bandwidth: f64, scale: f64) -> Vec<HypothesisMode> {
    if hyps.is_empty() {
        return Vec::new();
    }
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let feats: Vec<[f64; 6]> = hyps.iter().map(|h| features(&h.circle, scale)).collect();
    let tree = KdTree::<6>::from_coords(feats.clone());
    let converged: Vec<[f64; 6]> = feats
        .par_iter()
        .map(|start| {
            let mut x = *start;
            for _ in 0..100 {
                let mut mean = [0.0; 6];
                let mut n = 0usize;
                tree.for_each_within(&x, bandwidth, |j, _| {
                    for k in 0..6 {
                        mean[k] += feats[j][k];
                    }
                    n += 1;
                });
                if n == 0 {
                    break;
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                let shift = dist6(&mean, &x);
                x = mean;
                if shift < 1e-4 * bandwidth {
                    break;
                }
            }
            x
        })
        .collect();

    let mut modes: Vec<[f64; 6]> = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (i, x) in converged.iter().enumerate() {
        match modes.iter().position(|m| dist6(m, x) < 0.5 * bandwidth) {
            Some(k) => members[k].push(i),
            None => {
                modes.push(*x);
                members.push(vec![i]);
            }
        }
    }
    modes
        .iter()
        .zip(&members)
        .map(|(m, idx)| {
            let best = *idx
                .iter()
                .min_by(|&&a, &&b| dist6(&feats[a], m).total_cmp(&dist6(&feats[b], m)).then(a.cmp(&b)))
                .unwrap();
            HypothesisMode {
                hypothesis: hyps[best],
                support: idx.len(),
            }
        })
        .collect()
}

/// One representative hypothesis per mean-shift mode.
pub fn reduce_hypotheses(hyps: &[CircleHypothesis], bandwidth: f64, scale: f64) -> Vec<CircleHypothesis> {
    reduce_hypotheses_with_support(hyps, bandwidth, scale)
        .into_iter()
        .map(|m| m.hypothesis)
        .collect()
}

/// Row-major table of point-to-hypothesis distances.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl ResidualMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

pub fn residual_matrix(points: &[Point3], hyps: &[CircleHypothesis]) -> ResidualMatrix {
    let cols = hyps.len();
    let mut data = vec![0.0; points.len() * cols];
    if cols > 0 {
        data.par_chunks_mut(cols).zip(points.par_iter()).for_each(|(row, p)| {
            for (d, h) in row.iter_mut().zip(hyps) {
                *d = h.circle.distance(p);
            }
        });
    }
    ResidualMatrix {
        rows: points.len(),
        cols,
        data,
    }
}

type Bits = Vec<u64>;

fn intersect(a: &Bits, b: &Bits) -> Bits {
    a.iter().zip(b).map(|(x, y)| x & y).collect()
}

fn jaccard_distance(a: &Bits, b: &Bits) -> f64 {
    let (mut inter, mut union) = (0u32, 0u32);
    for (x, y) in a.iter().zip(b) {
        inter += (x & y).count_ones();
        union += (x | y).count_ones();
    }
    if union == 0 {
        1.0
    } else {
        1.0 - inter as f64 / union as f64
    }
}

fn set_bits(a: &Bits) -> impl Iterator<Item = usize> + '_ {
    a.iter().enumerate().flat_map(|(w, &word)| {
        let mut word = word;
        std::iter::from_fn(move || {
            (word != 0).then(|| {
                let b = word.trailing_zeros() as usize;
                word &= word - 1;
                w * 64 + b
            })
        })
    })
}

struct Pair(f64, usize, usize);

impl PartialEq for Pair {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Pair {}
impl PartialOrd for Pair {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Pair {
    // reversed so the max-heap pops the smallest distance first
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .total_cmp(&self.0)
            .then(other.1.cmp(&self.1))
            .then(other.2.cmp(&self.2))
    }
}

/// Agglomerative clustering of the points' preference sets.
///
/// A point prefers every hypothesis within `inlier_eps`. The two clusters
/// with the smallest Jaccard distance merge, the merged cluster keeping the
/// intersection of their preferences, until every remaining pair has
/// distance 1. Clusters smaller than `min_cluster` become outliers; each
/// other cluster is labeled with the hypothesis covering most of its members.
pub fn cluster_labels(r: &ResidualMatrix, hyps: &[CircleHypothesis], inlier_eps: f64, min_cluster: usize) -> CircleLabeling {
    let n = r.rows;
    let words = r.cols.div_ceil(64);
    let prefs: Vec<Bits> = (0..n)
        .map(|i| {
            let mut b = vec![0u64; words];
            for (j, &d) in r.row(i).iter().enumerate() {
                if d <= inlier_eps {
                    b[j / 64] |= 1 << (j % 64);
                }
            }
            b
        })
        .collect();

    let mut pref: Vec<Bits> = prefs.clone();
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut alive = vec![true; n];
    let mut by_hyp: Vec<Vec<usize>> = vec![Vec::new(); r.cols];
    for (i, p) in prefs.iter().enumerate() {
        for j in set_bits(p) {
            by_hyp[j].push(i);
        }
    }

    let partners = |c: usize, pref: &[Bits], alive: &[bool], by_hyp: &[Vec<usize>]| -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        for j in set_bits(&pref[c]) {
            for &o in &by_hyp[j] {
                if o != c && alive[o] {
                    out.insert(o);
                }
            }
        }
        out
    };

    let mut heap = BinaryHeap::new();
    let initial: Vec<Vec<Pair>> = (0..n)
        .into_par_iter()
        .map(|i| {
            partners(i, &pref, &alive, &by_hyp)
                .into_iter()
                .filter(|&o| o > i)
                .filter_map(|o| {
                    let d = jaccard_distance(&pref[i], &pref[o]);
                    (d < 1.0).then_some(Pair(d, i, o))
                })
                .collect()
        })
        .collect();
    heap.extend(initial.into_iter().flatten());

    while let Some(Pair(_, a, b)) = heap.pop() {
        if !alive[a] || !alive[b] {
            continue;
        }
        alive[a] = false;
        alive[b] = false;
        let merged = intersect(&pref[a], &pref[b]);
        let mut m = std::mem::take(&mut members[a]);
        m.append(&mut members[b]);
        let id = pref.len();
        for j in set_bits(&merged) {
            by_hyp[j].retain(|&o| alive[o]);
            by_hyp[j].push(id);
        }
        pref.push(merged);
        members.push(m);
        alive.push(true);
        for o in partners(id, &pref, &alive, &by_hyp) {
            let d = jaccard_distance(&pref[id], &pref[o]);
            if d < 1.0 {
                heap.push(Pair(d, o.min(id), o.max(id)));
            }
        }
    }

    let mut clusters: Vec<Vec<usize>> = (0..pref.len())
        .filter(|&c| alive[c] && members[c].len() >= min_cluster.max(1))
        .map(|c| {
            let mut m = members[c].clone();
            m.sort_unstable();
            m
        })
        .collect();
    clusters.sort_by_key(|m| m[0]);

    let mut labeling = CircleLabeling::unlabeled(n);
    for m in clusters {
        let Some(best) = (0..r.cols).max_by_key(|&j| {
            let cover = m.iter().filter(|&&i| r.get(i, j) <= inlier_eps).count();
            (cover, std::cmp::Reverse(j))
        }) else {
            continue;
        };
        let k = labeling.circles.len() as i32;
        labeling.circles.push(hyps[best].circle);
        for i in m {
            labeling.labels[i] = k;
        }
    }
    labeling
}

/// Greedy set cover over the labeling's circles.
///
/// The circle covering the most not-yet-covered points (within `inlier_eps`)
/// is taken first and claims them; selection stops once the best circle adds
/// fewer than `min_cluster` points. A circle whose inliers lie at least 80%
/// inside an earlier circle's inliers is then dropped and the cover redone.
pub fn refine_coverage(labeling: &CircleLabeling, points: &[Point3], inlier_eps: f64, min_cluster: usize) -> CircleLabeling {
    let covers: Vec<Vec<usize>> = labeling
        .circles
        .par_iter()
        .map(|c| (0..points.len()).filter(|&i| c.distance(&points[i]) <= inlier_eps).collect())
        .collect();
    let mut candidates: Vec<usize> = (0..labeling.circles.len()).collect();
    loop {
        let (order, labels) = greedy_cover(&covers, &candidates, points.len(), min_cluster.max(1));
        let redundant = order.iter().enumerate().find_map(|(pos, &b)| {
            order[..pos].iter().find_map(|&a| {
                let inside = covers[b].iter().filter(|i| covers[a].binary_search(i).is_ok()).count();
                (inside as f64 >= 0.8 * covers[b].len() as f64).then_some(b)
            })
        });
        match redundant {
            Some(b) => candidates.retain(|&c| c != b),
            None => {
                return CircleLabeling {
                    labels,
                    circles: order.iter().map(|&k| labeling.circles[k]).collect(),
                }
            }
        }
    }
}

fn greedy_cover(covers: &[Vec<usize>], candidates: &[usize], n: usize, min_new: usize) -> (Vec<usize>, Vec<i32>) {
    let mut labels = vec![-1i32; n];
    let mut order = Vec::new();
    let mut left: Vec<usize> = candidates.to_vec();
    loop {
        let best = left
            .iter()
            .enumerate()
            .map(|(pos, &k)| (covers[k].iter().filter(|&&i| labels[i] < 0).count(), pos))
            .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
        let Some((gain, pos)) = best else { break };
        if gain < min_new {
            break;
        }
        let k = left.remove(pos);
        let id = order.len() as i32;
        for &i in &covers[k] {
            if labels[i] < 0 {
                labels[i] = id;
            }
        }
        order.push(k);
    }
    (order, labels)
}

/// Tunables of the multi-circle fitting scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McfsParams {
    pub inlier_eps: f64,
    pub eta: f64,
    pub max_iter: usize,
    /// Smallest cluster, in points of the working set.
    pub min_cluster: usize,
    /// Hypotheses per round; `None` uses 20 per point, at most 5000.
    pub hypotheses: Option<usize>,
    /// Mean-shift bandwidth in normalised parameter units.
    pub bandwidth: f64,
    pub seed: u64,
    /// Largest neighbourhood for the second and third sample; `None` uses 30% of the
    /// bounding-box diagonal.
    pub sample_radius: Option<f64>,
    pub uniform_fraction: f64,
    /// Hypothesis generation and clustering run on at most this many points.
    pub max_points: usize,
    /// Smallest fraction of 32 angular bins a circle's inliers must occupy.
    pub min_arc_coverage: f64,
    /// Smallest ratio of points within `eps` of a circle to points between
    /// `eps` and `3 eps`.
    pub min_contrast: f64,
    /// Largest ratio of between-bin to within-bin variance of the signed
    /// radial residuals, with the inliers binned by angle.
    pub max_structure: f64,
    /// Smallest contrast of a kept circle relative to the best contrast
    /// among all accepted circles.
    pub min_relative_contrast: f64,
    pub max_rounds: usize,
}

impl Default for McfsParams {
    fn default() -> Self {
        McfsParams {
            inlier_eps: 0.1,
            eta: 0.03,
            max_iter: 150,
            min_cluster: 20,
            hypotheses: None,
            bandwidth: 0.05,
            seed: 0,
            sample_radius: None,
            uniform_fraction: 0.2,
            max_points: 2000,
            min_arc_coverage: 0.7,
            min_contrast: 1.0,
            max_structure: 5.0,
            min_relative_contrast: 0.1,
            max_rounds: 8,
        }
    }
}

/// Smallest radius of an accepted circle, in units of the inlier distance.
/// The inlier band of a smaller circle covers most of its disc, so any clump
/// of points near its centre spreads over all angular bins.
const MIN_RADIUS_EPS: f64 = 2.0;

/// Root-mean-square spread of the per-bin mean residuals, relative to the
/// inlier distance, below which a fit counts as structure-free.
const STRUCTURE_FLOOR: f64 = 0.1;

/// Evidence that a candidate circle describes its inliers.
#[derive(Debug, Clone, Copy)]
struct Support {
    band: usize,
    /// Fraction of angular bins holding at least a quarter of the mean count.
    coverage: f64,
    /// Points within `eps` over points between `eps` and `3 eps`.
    contrast: f64,
    /// Between-bin over within-bin variance of the signed radial residuals.
    /// Near one for a true circle; large when the inliers follow another
    /// curve that only touches the circle. Zero when the bin means stray by
    /// less than [`STRUCTURE_FLOOR`] of `eps`, where the ratio only compares
    /// rounding errors.
    structure: f64,
}

fn support(circle: &Circle3D, points: &[Point3], eps: f64) -> Support {
    const BINS: usize = 32;
    let (u, w) = orthonormal_basis(&circle.normal);
    let mut count = [0usize; BINS];
    let mut sum = [0.0f64; BINS];
    let mut sum2 = [0.0f64; BINS];
    let (mut band, mut shell) = (0usize, 0usize);
    for p in points {
        let d = circle.distance(p);
        if d <= eps {
            band += 1;
            let v = p - circle.center;
            let (x, y) = (v.dot(&u), v.dot(&w));
            let t = y.atan2(x).rem_euclid(std::f64::consts::TAU);
            let b = ((t / std::f64::consts::TAU * BINS as f64) as usize).min(BINS - 1);
            let s = x.hypot(y) - circle.radius;
            count[b] += 1;
            sum[b] += s;
            sum2[b] += s * s;
        } else if d <= 3.0 * eps {
            shell += 1;
        }
    }
    let floor = (band as f64 / (4 * BINS) as f64).max(1.0);
    let coverage = count.iter().filter(|&&c| c as f64 >= floor).count() as f64 / BINS as f64;

    let used: Vec<usize> = (0..BINS).filter(|&b| count[b] >= 2).collect();
    let n: usize = used.iter().map(|&b| count[b]).sum();
    let structure = if used.len() >= 2 && n > used.len() {
        let mean = used.iter().map(|&b| sum[b]).sum::<f64>() / n as f64;
        let between: f64 = used.iter().map(|&b| count[b] as f64 * (sum[b] / count[b] as f64 - mean).powi(2)).sum();
        let within: f64 = used.iter().map(|&b| sum2[b] - sum[b] * sum[b] / count[b] as f64).sum();
        if (between / n as f64).sqrt() <= STRUCTURE_FLOOR * eps {
            0.0
        } else {
            (between / (used.len() - 1) as f64) / (within / (n - used.len()) as f64).max(f64::MIN_POSITIVE)
        }
    } else {
        f64::INFINITY
    };
    Support {
        band,
        coverage,
        contrast: band as f64 / shell.max(1) as f64,
        structure,
    }
}

/// Grows a cluster's circle to every point within `inlier_eps` and refits,
/// until the inlier set stops changing.
fn recapture(mut circle: Circle3D, points: &[Point3], params: &McfsParams) -> Circle3D {
    let mut previous: Vec<usize> = Vec::new();
    for _ in 0..10 {
        let inliers: Vec<usize> = (0..points.len()).filter(|&i| circle.distance(&points[i]) <= params.inlier_eps).collect();
        if inliers == previous {
            break;
        }
        let near: Vec<Point3> = inliers.iter().map(|&i| points[i]).collect();
        match fit_circle_iterative(&near, params.inlier_eps, params.eta, params.max_iter) {
            Ok(fit) => circle = fit.circle,
            Err(_) => break,
        }
        previous = inliers;
    }
    circle
}

/// Multi-circle fitting: rounds of hypothesis generation, mean-shift
/// reduction, preference clustering and outlier-rejecting refits on the
/// points no accepted circle explains yet, followed by a greedy cover.
pub fn mcfs(points: &[Point3], params: &McfsParams) -> Result<CircleLabeling> {
    if points.len() < 3 {
        return Ok(CircleLabeling::unlabeled(points.len()));
    }
    check_not_collinear(points)?;
    let eps = params.inlier_eps;
    let stride = points.len().div_ceil(params.max_points.max(3));
    let work: Vec<Point3> = points.iter().step_by(stride).copied().collect();
    let (lo, hi) = crate::geometry::bounds(&work).expect("non-empty");
    let scale = (hi - lo).norm().max(f64::MIN_POSITIVE);
    let sample_radius = params.sample_radius.unwrap_or(0.3 * scale);

    let min_full = (params.min_cluster * points.len()).div_ceil(work.len());
    // candidates are judged on the full point set, where arcs are densest
    let accept = |c: &Circle3D| {
        let s = support(c, points, eps);
        let ok = s.band >= min_full && s.coverage >= params.min_arc_coverage && s.contrast >= params.min_contrast
            && s.structure <= params.max_structure
            && c.radius >= MIN_RADIUS_EPS * eps
            && c.radius <= scale;
        log::trace!("candidate r={:.3} at {:.3?}: {s:?} -> {ok}", c.radius, c.center);
        ok
    };

    let mut accepted: Vec<Circle3D> = Vec::new();
    let mut remaining: Vec<usize> = (0..work.len()).collect();
    let mut idle = 0;
    for round in 0..params.max_rounds {
        if remaining.len() < params.min_cluster.max(3) {
            break;
        }
        let rem: Vec<Point3> = remaining.iter().map(|&i| work[i]).collect();
        if check_not_collinear(&rem).is_err() {
            break;
        }
        let count = params.hypotheses.unwrap_or((20 * rem.len()).min(5000));
        let seed = params.seed.wrapping_add(round as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut hyps = generate_local_hypotheses(&rem, count, sample_radius, params.uniform_fraction, seed)?;
        // nearly collinear triples give huge circles that crowd out real ones
        hyps.retain(|h| h.circle.radius <= scale);
        let modes: Vec<CircleHypothesis> = reduce_hypotheses_with_support(&hyps, params.bandwidth, scale)
            .into_iter()
            .filter(|m| m.support >= 2)
            .map(|m| m.hypothesis)
            .collect();
        if modes.is_empty() {
            break;
        }
        let r = residual_matrix(&rem, &modes);
        let provisional = cluster_labels(&r, &modes, eps, params.min_cluster);
        let mut added = 0;
        for k in 0..provisional.circles.len() {
            let m: Vec<Point3> = provisional.members(k).into_iter().map(|i| rem[i]).collect();
            let Ok(fit) = fit_circle_iterative(&m, eps, params.eta, params.max_iter) else {
                continue;
            };
            let c = recapture(fit.circle, &rem, params);
            if accepted.iter().any(|a| circle_change(a, &c) < eps) || !accept(&c) {
                continue;
            }
            accepted.push(c);
            added += 1;
        }
        log::debug!(
            "mcfs round {round}: {} hypotheses, {} modes, {} clusters, {added} new circles",
            hyps.len(),
            modes.len(),
            provisional.circles.len()
        );
        if added == 0 {
            idle += 1;
            if idle == 2 {
                break;
            }
            continue;
        }
        idle = 0;
        remaining.retain(|&i| accepted.iter().all(|c| c.distance(&work[i]) > eps));
    }

    // refit on the full point set
    let refined: Vec<Circle3D> = accepted
        .par_iter()
        .map(|c| {
            let near: Vec<Point3> = points.iter().filter(|p| c.distance(p) <= eps).copied().collect();
            fit_circle_iterative(&near, eps, params.eta, params.max_iter)
                .map(|f| f.circle)
                .unwrap_or(*c)
        })
        .collect();
    // an arc cut from a straight edge corner has a far blurrier band than
    // the rims found alongside it
    let contrast: Vec<f64> = refined.iter().map(|c| support(c, points, eps).contrast).collect();
    let best = contrast.iter().copied().fold(0.0, f64::max);
    let circles = refined
        .into_iter()
        .zip(&contrast)
        .filter(|&(_, &k)| k >= params.min_relative_contrast * best)
        .map(|(c, _)| c)
        .collect();
    let provisional = CircleLabeling {
        labels: vec![-1; points.len()],
        circles,
    };
    Ok(refine_coverage(&provisional, points, eps, min_full))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Vector3;
    use std::f64::consts::TAU;

    fn ring(c: &Circle3D, n: usize, phase: f64) -> Vec<Point3> {
        let (u, w) = orthonormal_basis(&c.normal);
        (0..n)
            .map(|k| {
                let t = phase + k as f64 / n as f64 * TAU;
                c.center + (u * t.cos() + w * t.sin()) * c.radius
            })
            .collect()
    }

    fn circle(x: f64, y: f64, r: f64) -> Circle3D {
        Circle3D::new(Point3::new(x, y, 0.0), r, Vector3::z()).unwrap()
    }

    #[test]
    fn hypotheses_from_one_circle_agree() {
        let c = Circle3D::new(Point3::new(1.0, -1.0, 2.0), 0.8, Vector3::new(0.2, 0.3, 1.0)).unwrap();
        let pts = ring(&c, 30, 0.1);
        let hyps = generate_hypotheses(&pts, 200, 5).unwrap();
        assert_eq!(hyps.len(), 200);
        assert!(hyps.iter().all(|h| circle_change(&h.circle, &c) < 1e-9));
        assert_eq!(hyps, generate_hypotheses(&pts, 200, 5).unwrap());
    }

    #[test]
    fn collinear_edge_set_is_an_error() {
        let pts: Vec<Point3> = (0..10).map(|i| Point3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert!(matches!(generate_hypotheses(&pts, 10, 0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn mean_shift_modes() {
        let base = circle(0.0, 0.0, 1.0);
        let jittered: Vec<CircleHypothesis> = (0..100)
            .map(|k| {
                let j = 1e-4 * (k as f64).sin();
                CircleHypothesis {
                    circle: Circle3D::new(base.center + Vector3::new(j, -j, 0.0), 1.0 + j, Vector3::new(j, 0.0, 1.0)).unwrap(),
                    sample: [0, 1, 2],
                }
            })
            .collect();
        assert_eq!(reduce_hypotheses(&jittered, 0.05, 10.0).len(), 1);

        let mut two = jittered[..50].to_vec();
        two.extend(jittered[..50].iter().map(|h| CircleHypothesis {
            circle: Circle3D::new(h.circle.center + Vector3::new(5.0, 0.0, 0.0), h.circle.radius, h.circle.normal).unwrap(),
            sample: h.sample,
        }));
        assert_eq!(reduce_hypotheses(&two, 0.05, 10.0).len(), 2);
        assert_eq!(reduce_hypotheses(&jittered[..1], 0.05, 10.0), vec![jittered[0]]);
    }

    #[test]
    fn residual_matrix_hand_case() {
        let hyps = [
            CircleHypothesis { circle: circle(0.0, 0.0, 1.0), sample: [0, 1, 2] },
            CircleHypothesis { circle: circle(3.0, 0.0, 0.5), sample: [0, 1, 2] },
        ];
        let pts = [Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 0.0, 2.0)];
        let r = residual_matrix(&pts, &hyps);
        assert_eq!((r.rows, r.cols), (2, 2));
        assert_eq!(r.get(0, 0), 0.0);
        assert!((r.get(0, 1) - 1.5).abs() < 1e-15);
        assert!((r.get(1, 0) - 5f64.sqrt()).abs() < 1e-15);
        assert!((r.get(1, 1) - (2.5f64 * 2.5 + 4.0).sqrt()).abs() < 1e-15);
    }

    fn two_ring_setup() -> (Vec<Point3>, Vec<i32>, Vec<CircleHypothesis>) {
        let (a, b) = (circle(0.0, 0.0, 1.0), circle(4.0, 0.0, 0.7));
        let mut pts = ring(&a, 40, 0.0);
        pts.extend(ring(&b, 30, 0.3));
        let truth: Vec<i32> = (0..70).map(|i| if i < 40 { 0 } else { 1 }).collect();
        let hyps = generate_local_hypotheses(&pts, 400, 1.5, 0.2, 3).unwrap();
        (pts, truth, hyps)
    }

    #[test]
    fn clustering_two_clean_circles() {
        let (pts, truth, hyps) = two_ring_setup();
        let modes = reduce_hypotheses(&hyps, 0.05, 5.0);
        let r = residual_matrix(&pts, &modes);
        // chords shared by a few points of both rings form small spurious
        // clusters; a size floor removes them
        let l = cluster_labels(&r, &modes, 0.1, 10);
        assert_eq!(l.circles.len(), 2);
        assert!(super::super::misclassification_error(&l.labels, &truth) < 10.0);
    }

    #[test]
    fn clustering_single_circle_and_empty_preferences() {
        let pts = ring(&circle(0.0, 0.0, 1.0), 30, 0.0);
        let hyps = generate_hypotheses(&pts, 50, 1).unwrap();
        let r = residual_matrix(&pts, &hyps);
        assert_eq!(cluster_labels(&r, &hyps, 0.1, 5).circles.len(), 1);
        let far = [CircleHypothesis { circle: circle(50.0, 0.0, 1.0), sample: [0, 1, 2] }];
        let l = cluster_labels(&residual_matrix(&pts, &far), &far, 0.1, 5);
        assert!(l.labels.iter().all(|&x| x == -1));
    }

    #[test]
    fn coverage_drops_duplicates_and_keeps_disjoint() {
        let pts = ring(&circle(0.0, 0.0, 1.0), 40, 0.0);
        let dup = CircleLabeling {
            labels: vec![-1; 40],
            circles: vec![circle(0.0, 0.0, 1.0), circle(0.01, 0.0, 1.0)],
        };
        assert_eq!(refine_coverage(&dup, &pts, 0.1, 5).circles.len(), 1);

        let (pts, _, _) = two_ring_setup();
        let both = CircleLabeling {
            labels: vec![-1; pts.len()],
            circles: vec![circle(0.0, 0.0, 1.0), circle(4.0, 0.0, 0.7)],
        };
        let out = refine_coverage(&both, &pts, 0.1, 5);
        assert_eq!(out.circles, both.circles);
    }

    #[test]
    fn greedy_cover_is_near_optimal_on_small_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = rng.random_range(6..=12);
            let pts: Vec<Point3> = (0..n).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
            // circles are stand-ins: coverage sets are drawn directly
            let m = rng.random_range(3..=6);
            let covers: Vec<Vec<usize>> = (0..m)
                .map(|_| (0..n).filter(|_| rng.random::<f64>() < 0.45).collect())
                .collect();
            let all: Vec<usize> = (0..m).collect();
            let (order, labels) = greedy_cover(&covers, &all, n, 1);
            let covered = labels.iter().filter(|&&l| l >= 0).count();
            // smallest number of sets achieving the same coverage
            let target: BTreeSet<usize> = covers.iter().flatten().copied().collect();
            let optimum = (1u32..(1 << m))
                .filter(|mask| {
                    let u: BTreeSet<usize> = (0..m).filter(|k| mask & (1 << k) != 0).flat_map(|k| covers[k].iter().copied()).collect();
                    u == target
                })
                .map(|mask| mask.count_ones() as usize)
                .min()
                .unwrap_or(0);
            assert_eq!(covered, target.len());
            assert!(order.len() <= optimum + 1, "greedy {} vs optimum {optimum}", order.len());
            let _ = &pts;
        }
    }

    #[test]
    fn mcfs_noiseless_disjoint_circles() {
        let truth_circles = [
            circle(0.0, 0.0, 0.5),
            circle(2.0, 0.0, 0.7),
            circle(0.0, 2.5, 0.4),
            Circle3D::new(Point3::new(3.0, 3.0, 0.5), 0.6, Vector3::new(0.3, 0.0, 1.0)).unwrap(),
        ];
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for (k, c) in truth_circles.iter().enumerate() {
            pts.extend(ring(c, 60, 0.2 * k as f64));
            truth.extend(std::iter::repeat_n(k as i32, 60));
        }
        let params = McfsParams { seed: 4, ..McfsParams::default() };
        let out = mcfs(&pts, &params).unwrap();
        assert_eq!(out.circles.len(), 4);
        for c in &out.circles {
            assert!(truth_circles.iter().any(|t| circle_change(c, t) < 1e-6), "{c:?}");
        }
        assert_eq!(super::super::misclassification_error(&out.labels, &truth), 0.0);
        assert_eq!(out, mcfs(&pts, &params).unwrap());
    }

    #[test]
    fn mcfs_on_nothing() {
        assert!(mcfs(&[], &McfsParams::default()).unwrap().circles.is_empty());
    }
    #[test]
    fn a_blob_smaller_than_the_inlier_band_is_not_a_circle() {
        let rim = circle(3.0, 0.0, 0.5);
        let mut pts = ring(&rim, 120, 0.0);
        // a dense clump of edge points around a vertex
        for k in 0..150 {
            let t = k as f64 * 2.399;
            let r = 0.12 * ((k % 10) as f64 / 10.0).sqrt();
            pts.push(Point3::new(r * t.cos(), r * t.sin(), 0.02 * (k % 3) as f64));
        }
        let params = McfsParams {
            seed: 1,
            min_relative_contrast: 0.0,
            ..McfsParams::default()
        };
        let out = mcfs(&pts, &params).unwrap();
        assert_eq!(out.circles.len(), 1, "{:?}", out.circles);
        assert!(circle_change(&out.circles[0], &rim) < 1e-6);
    }
    #[test]
    fn mcfs_recovers_up_to_six_noiseless_circles() {
        use rand::{Rng, SeedableRng};
        for seed in 0..12u64 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let k = 1 + seed as usize % 6;
            // one circle per cell of a 3 x 2 grid keeps them disjoint
            let truth: Vec<Circle3D> = (0..k)
                .map(|j| {
                    let tilt = Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), 1.0);
                    let centre = Point3::new(2.0 * (j % 3) as f64, 2.0 * (j / 3) as f64, rng.random_range(-0.2..0.2));
                    Circle3D::new(centre, rng.random_range(0.3..0.7), tilt).unwrap()
                })
                .collect();
            let mut pts = Vec::new();
            let mut labels = Vec::new();
            for (j, c) in truth.iter().enumerate() {
                let n = rng.random_range(40..80);
                pts.extend(ring(c, n, rng.random_range(0.0..TAU)));
                labels.extend(std::iter::repeat_n(j as i32, n));
            }
            let out = mcfs(&pts, &McfsParams { seed, ..McfsParams::default() }).unwrap();
            assert_eq!(out.circles.len(), k, "seed {seed}");
            for c in &out.circles {
                assert!(truth.iter().any(|t| circle_change(c, t) < 1e-6), "seed {seed}: {c:?}");
            }
            assert_eq!(super::super::misclassification_error(&out.labels, &labels), 0.0, "seed {seed}");
        }
    }
}
