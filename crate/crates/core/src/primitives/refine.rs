use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

use rayon::prelude::*;

use super::energy::energy_terms;
use super::{energy, energy_from_scratch, fit_primitive, Configuration, Energy, Primitive};
use crate::geometry::{sorted_eigen, covariance, SpatialIndex};
use crate::PointCloud;

/// Energy decreases at or below this are treated as no improvement.
const MIN_GAIN: f64 = 1e-12;
/// Hard cap on applied operations.
const MAX_OPERATIONS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Split,
    Merge,
}

#[derive(Debug, Clone)]
pub struct OpOutcome {
    pub config: Configuration,
    /// Why the operation was not applied; `None` when it was.
    pub rejected: Option<String>,
}

impl OpOutcome {
    fn rejected(config: &Configuration, why: impl Into<String>) -> Self {
        OpOutcome {
            config: config.clone(),
            rejected: Some(why.into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AppliedOp {
    pub kind: OpKind,
    pub energy_before: f64,
    pub energy_after: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineStats {
    pub initial: Energy,
    pub last: Energy,
    pub applied: Vec<AppliedOp>,
    /// Largest gap seen between the incrementally maintained energy and a
    /// from-scratch recomputation.
    pub max_energy_drift: f64,
    pub passes: usize,
    pub hit_cap: bool,
}

/// Splits `prim` into two primitives of the same kind around the inliers
/// extremal along its first principal axis.
fn split_primitive(prim: &Primitive, cloud: &PointCloud, epsilon: f64, sigma: usize) -> Result<[Primitive; 2], String> {
    if prim.inliers.len() < 2 * sigma {
        return Err(format!("{} inliers is below 2σ = {}", prim.inliers.len(), 2 * sigma));
    }
    let pts = cloud.points();
    let (c, cov) = covariance(prim.inliers.iter().map(|&i| &pts[i])).ok_or("empty primitive")?;
    let (_, vecs) = sorted_eigen(&cov);
    let axis = vecs.column(0).into_owned();
    let proj = |i: usize| (pts[i] - c).dot(&axis);
    let mut lo = prim.inliers[0];
    let mut hi = prim.inliers[0];
    for &i in &prim.inliers {
        if proj(i) < proj(lo) {
            lo = i;
        }
        if proj(i) > proj(hi) {
            hi = i;
        }
    }
    let (a, b): (Vec<usize>, Vec<usize>) = prim
        .inliers
        .iter()
        .partition(|&&i| (pts[i] - pts[lo]).norm_squared() <= (pts[i] - pts[hi]).norm_squared());
    let mut out = Vec::with_capacity(2);
    for group in [a, b] {
        if group.len() < sigma {
            return Err(format!("a split group has only {} points", group.len()));
        }
        let fitted = fit_primitive(prim.kind(), cloud, &group).map_err(|e| e.to_string())?;
        let kept = Primitive::within(fitted.shape, cloud, &group, epsilon);
        if kept.inliers.len() < sigma {
            return Err(format!("a split group keeps only {} inliers", kept.inliers.len()));
        }
        out.push(kept);
    }
    let b = out.pop().unwrap();
    let a = out.pop().unwrap();
    Ok([a, b])
}

fn merge_primitives(a: &Primitive, b: &Primitive, cloud: &PointCloud, epsilon: f64, sigma: usize) -> Result<Primitive, String> {
    if a.kind() != b.kind() {
        return Err(format!("cannot merge a {} with a {}", a.kind(), b.kind()));
    }
    let mut union: Vec<usize> = a.inliers.iter().chain(&b.inliers).copied().collect();
    union.sort_unstable();
    let fitted = fit_primitive(a.kind(), cloud, &union).map_err(|e| e.to_string())?;
    let kept = Primitive::within(fitted.shape, cloud, &union, epsilon);
    if kept.inliers.len() < sigma {
        return Err(format!("merged primitive keeps only {} inliers", kept.inliers.len()));
    }
    Ok(kept)
}

/// Whether some inlier of `a` lies within `2ε` of some inlier of `b`.
fn adjacent(a: &Primitive, b: &Primitive, cloud: &PointCloud, epsilon: f64) -> bool {
    let (small, large) = if a.inliers.len() <= b.inliers.len() { (a, b) } else { (b, a) };
    let pts = cloud.points();
    let large_pts: Vec<_> = large.inliers.iter().map(|&i| pts[i]).collect();
    let tree = SpatialIndex::new(&large_pts);
    let r = 2.0 * epsilon;
    small
        .inliers
        .iter()
        .any(|&i| tree.nearest(&pts[i]).is_some_and(|(_, d2)| d2 <= r * r))
}

/// Replaces primitive `index` by the two halves of its split.
pub fn split(config: &Configuration, cloud: &PointCloud, index: usize) -> OpOutcome {
    let Some(prim) = config.primitives.get(index) else {
        return OpOutcome::rejected(config, "no such primitive");
    };
    match split_primitive(prim, cloud, config.epsilon, config.min_points) {
        Ok(parts) => {
            let mut out = config.clone();
            out.primitives.splice(index..=index, parts);
            OpOutcome {
                config: out,
                rejected: None,
            }
        }
        Err(why) => OpOutcome::rejected(config, why),
    }
}

/// Replaces primitives `i` and `j` by one primitive fitted to their union.
pub fn merge(config: &Configuration, cloud: &PointCloud, i: usize, j: usize) -> OpOutcome {
    let (Some(a), Some(b)) = (config.primitives.get(i), config.primitives.get(j)) else {
        return OpOutcome::rejected(config, "no such primitive");
    };
    if i == j {
        return OpOutcome::rejected(config, "cannot merge a primitive with itself");
    }
    if a.kind() != b.kind() {
        return OpOutcome::rejected(config, format!("cannot merge a {} with a {}", a.kind(), b.kind()));
    }
    if !adjacent(a, b, cloud, config.epsilon) {
        return OpOutcome::rejected(config, "primitives are not adjacent");
    }
    match merge_primitives(a, b, cloud, config.epsilon, config.min_points) {
        Ok(merged) => {
            let mut out = config.clone();
            let (lo, hi) = (i.min(j), i.max(j));
            out.primitives.remove(hi);
            out.primitives[lo] = merged;
            OpOutcome {
                config: out,
                rejected: None,
            }
        }
        Err(why) => OpOutcome::rejected(config, why),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Op {
    Split(usize),
    Merge(usize, usize),
}

impl Op {
    fn slots(&self) -> Vec<usize> {
        match *self {
            Op::Split(s) => vec![s],
            Op::Merge(a, b) => vec![a, b],
        }
    }
}

struct Candidate {
    op: Op,
    result: Vec<Primitive>,
}

struct Queued {
    gain: f64,
    seq: usize,
    candidate: usize,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> Ordering {
        self.gain
            .total_cmp(&other.gain)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

const UNOWNED: usize = usize::MAX;

struct State<'a> {
    cloud: &'a PointCloud,
    tree: SpatialIndex,
    base: Configuration,
    slots: Vec<Option<Primitive>>,
    owner: Vec<usize>,
    assigned: usize,
    residual: f64,
    count: usize,
}

impl<'a> State<'a> {
    fn new(config: &Configuration, cloud: &'a PointCloud) -> Self {
        let mut owner = vec![UNOWNED; config.cloud_size];
        for (s, p) in config.primitives.iter().enumerate() {
            for &i in &p.inliers {
                owner[i] = s;
            }
        }
        let mut base = config.clone();
        base.primitives.clear();
        State {
            cloud,
            tree: SpatialIndex::new(cloud.points()),
            base,
            slots: config.primitives.iter().cloned().map(Some).collect(),
            owner,
            assigned: config.assigned(),
            residual: config.primitives.iter().map(|p| p.residual_sum).sum(),
            count: config.primitives.len(),
        }
    }

    fn energy(&self) -> Energy {
        energy_terms(&self.base, self.assigned, self.residual, self.count)
    }

    fn energy_after(&self, c: &Candidate) -> Option<Energy> {
        let old = c.op.slots();
        let mut assigned = self.assigned;
        let mut residual = self.residual;
        for &s in &old {
            let p = self.slots[s].as_ref()?;
            assigned -= p.inliers.len();
            residual -= p.residual_sum;
        }
        for p in &c.result {
            assigned += p.inliers.len();
            residual += p.residual_sum;
        }
        let count = self.count - old.len() + c.result.len();
        if count > self.base.n_sigma().max(1) {
            return None;
        }
        Some(energy_terms(&self.base, assigned, residual, count))
    }

    /// Alive slots with an inlier within `2ε` of an inlier of `slot`.
    fn neighbours(&self, slot: usize) -> BTreeSet<usize> {
        let prim = self.slots[slot].as_ref().unwrap();
        let pts = self.cloud.points();
        let r = 2.0 * self.base.epsilon;
        let mut out = BTreeSet::new();
        for &i in &prim.inliers {
            self.tree.for_each_within(&[pts[i].x, pts[i].y, pts[i].z], r, |j, _| {
                let o = self.owner[j];
                if o != UNOWNED && o != slot {
                    out.insert(o);
                }
            });
        }
        out
    }

    fn ops_for(&self, slots: &[usize]) -> Vec<Op> {
        let mut ops = BTreeSet::new();
        for &s in slots {
            let Some(p) = self.slots[s].as_ref() else { continue };
            if p.inliers.len() >= 2 * self.base.min_points {
                ops.insert(Op::Split(s));
            }
            for t in self.neighbours(s) {
                if self.slots[t].as_ref().is_some_and(|q| q.kind() == p.kind()) {
                    ops.insert(Op::Merge(s.min(t), s.max(t)));
                }
            }
        }
        ops.into_iter().collect()
    }

    fn evaluate(&self, ops: Vec<Op>) -> Vec<Candidate> {
        let (eps, sigma) = (self.base.epsilon, self.base.min_points);
        ops.into_par_iter()
            .filter_map(|op| {
                let result = match op {
                    Op::Split(s) => split_primitive(self.slots[s].as_ref()?, self.cloud, eps, sigma).ok()?.to_vec(),
                    Op::Merge(a, b) => vec![merge_primitives(
                        self.slots[a].as_ref()?,
                        self.slots[b].as_ref()?,
                        self.cloud,
                        eps,
                        sigma,
                    )
                    .ok()?],
                };
                Some(Candidate { op, result })
            })
            .collect()
    }

    fn apply(&mut self, c: &Candidate) -> Vec<usize> {
        for s in c.op.slots() {
            let p = self.slots[s].take().unwrap();
            self.assigned -= p.inliers.len();
            self.residual -= p.residual_sum;
            self.count -= 1;
            for &i in &p.inliers {
                self.owner[i] = UNOWNED;
            }
        }
        let mut fresh = Vec::new();
        for p in &c.result {
            let s = self.slots.len();
            for &i in &p.inliers {
                self.owner[i] = s;
            }
            self.assigned += p.inliers.len();
            self.residual += p.residual_sum;
            self.count += 1;
            self.slots.push(Some(p.clone()));
            fresh.push(s);
        }
        fresh
    }

    fn configuration(&self) -> Configuration {
        let mut out = self.base.clone();
        out.primitives = self.slots.iter().flatten().cloned().collect();
        out
    }
}

/// Energy-driven exploration over split and merge operations.
///
/// All candidate operations sit in a max-priority queue keyed by their energy
/// decrease. The best one is applied, candidates touching the changed
/// primitives are generated afresh, and stale entries are re-scored when
/// popped. Once the queue drains, a full re-evaluation confirms that no
/// operation lowers the energy any more.
pub fn refine(config: &Configuration, cloud: &PointCloud) -> (Configuration, RefineStats) {
    let mut state = State::new(config, cloud);
    let initial = energy(config);
    let mut stats = RefineStats {
        initial,
        last: initial,
        applied: Vec::new(),
        max_energy_drift: 0.0,
        passes: 0,
        hit_cap: false,
    };
    let mut candidates: Vec<Candidate> = Vec::new();
    let mut seq = 0usize;

    'passes: loop {
        stats.passes += 1;
        let all: Vec<usize> = (0..state.slots.len()).filter(|&s| state.slots[s].is_some()).collect();
        let ops = state.ops_for(&all);
        candidates.clear();
        let mut heap = BinaryHeap::new();
        let current = state.energy().total;
        for c in state.evaluate(ops) {
            if let Some(e) = state.energy_after(&c) {
                heap.push(Queued {
                    gain: current - e.total,
                    seq,
                    candidate: candidates.len(),
                });
                seq += 1;
            }
            candidates.push(c);
        }

        let mut applied_this_pass = false;
        while let Some(top) = heap.pop() {
            let c = &candidates[top.candidate];
            if c.op.slots().iter().any(|&s| state.slots[s].is_none()) {
                continue;
            }
            let before = state.energy();
            let Some(after) = state.energy_after(c) else { continue };
            let gain = before.total - after.total;
            if gain < top.gain && heap.peek().is_some_and(|next| next.gain > gain) {
                heap.push(Queued { gain, seq, candidate: top.candidate });
                seq += 1;
                continue;
            }
            if gain <= MIN_GAIN {
                continue;
            }
            if stats.applied.len() >= MAX_OPERATIONS {
                stats.hit_cap = true;
                break 'passes;
            }
            let op = c.op;
            let kind = match op {
                Op::Split(_) => OpKind::Split,
                Op::Merge(..) => OpKind::Merge,
            };
            let cand = std::mem::replace(
                &mut candidates[top.candidate],
                Candidate {
                    op,
                    result: Vec::new(),
                },
            );
            let fresh = state.apply(&cand);
            applied_this_pass = true;
            let now = state.energy();
            let scratch = energy_from_scratch(&state.configuration(), cloud);
            stats.max_energy_drift = stats.max_energy_drift.max((scratch.total - now.total).abs());
            debug_assert!((scratch.total - now.total).abs() < 1e-9);
            debug_assert!(now.total < before.total);
            stats.applied.push(AppliedOp {
                kind,
                energy_before: before.total,
                energy_after: now.total,
            });
            log::debug!("applied {kind:?}: E {:.6} -> {:.6}", before.total, now.total);

            let ops = state.ops_for(&fresh);
            let current = now.total;
            for c in state.evaluate(ops) {
                if let Some(e) = state.energy_after(&c) {
                    heap.push(Queued {
                        gain: current - e.total,
                        seq,
                        candidate: candidates.len(),
                    });
                    seq += 1;
                }
                candidates.push(c);
            }
        }
        if !applied_this_pass {
            break;
        }
    }
    let out = state.configuration();
    stats.last = energy(&out);
    (out, stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::primitives::{fit_primitive, PrimitiveKind, Weights};
    use crate::Point3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn plane_patch(rng: &mut ChaCha8Rng, n: usize, x: (f64, f64), y: (f64, f64), z: f64) -> Vec<Point3> {
        (0..n)
            .map(|_| Point3::new(rng.random_range(x.0..x.1), rng.random_range(y.0..y.1), z))
            .collect()
    }

    fn config_with(cloud: &PointCloud, groups: &[Vec<usize>], sigma: usize) -> Configuration {
        let mut config = Configuration::new(cloud.len(), sigma, 0.1, Weights::default()).unwrap();
        for g in groups {
            config.primitives.push(fit_primitive(PrimitiveKind::Plane, cloud, g).unwrap());
        }
        config
    }

    #[test]
    fn split_parallel_planes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pts = plane_patch(&mut rng, 200, (0.0, 0.5), (0.0, 0.5), 0.0);
        pts.extend(plane_patch(&mut rng, 200, (0.0, 0.5), (0.0, 0.5), 1.0));
        let cloud = PointCloud::new(pts).unwrap();
        let config = config_with(&cloud, &[(0..400).collect()], 30);
        let out = split(&config, &cloud, 0);
        assert!(out.rejected.is_none(), "{:?}", out.rejected);
        let mut offsets: Vec<f64> = out
            .config
            .primitives
            .iter()
            .map(|p| match p.shape {
                crate::primitives::Shape::Plane { offset, .. } => offset,
                _ => panic!(),
            })
            .collect();
        offsets.sort_by(f64::total_cmp);
        assert!(offsets[0].abs() < 1e-6 && (offsets[1] - 1.0).abs() < 1e-6, "{offsets:?}");
        out.config.validate(&cloud).unwrap();
    }

    #[test]
    fn split_below_two_sigma_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cloud = PointCloud::new(plane_patch(&mut rng, 59, (0.0, 1.0), (0.0, 1.0), 0.0)).unwrap();
        let config = config_with(&cloud, &[(0..59).collect()], 30);
        assert!(split(&config, &cloud, 0).rejected.is_some());
    }

    #[test]
    fn split_of_a_genuine_plane_does_not_lower_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cloud = PointCloud::new(plane_patch(&mut rng, 600, (0.0, 2.0), (0.0, 1.0), 0.0)).unwrap();
        let config = config_with(&cloud, &[(0..600).collect()], 30);
        let out = split(&config, &cloud, 0);
        assert!(out.rejected.is_none());
        assert!(energy(&out.config).total >= energy(&config).total);
        let (refined, stats) = refine(&config, &cloud);
        assert!(stats.applied.is_empty());
        assert_eq!(refined, config);
    }

    #[test]
    fn merge_over_segmented_plane() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut pts = plane_patch(&mut rng, 300, (0.0, 1.0), (0.0, 1.0), 0.0);
        pts.extend(plane_patch(&mut rng, 300, (1.0, 2.0), (0.0, 1.0), 0.0));
        let cloud = PointCloud::new(pts).unwrap();
        let config = config_with(&cloud, &[(0..300).collect(), (300..600).collect()], 30);
        let out = merge(&config, &cloud, 0, 1);
        assert!(out.rejected.is_none());
        assert_eq!(out.config.primitives.len(), 1);
        assert!(out.config.primitives[0].fit_rms < 1e-12);
        assert!(energy(&out.config).total < energy(&config).total);
    }

    #[test]
    fn merge_rejections() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut pts = plane_patch(&mut rng, 300, (0.0, 1.0), (0.0, 1.0), 0.0);
        pts.extend(plane_patch(&mut rng, 300, (0.0, 1.0), (0.0, 1.0), 5.0));
        let cloud = PointCloud::new(pts).unwrap();
        let config = config_with(&cloud, &[(0..300).collect(), (300..600).collect()], 30);
        assert!(merge(&config, &cloud, 0, 1).rejected.unwrap().contains("adjacent"));

        let mut mixed = config.clone();
        mixed.primitives[1].shape = crate::primitives::Shape::Sphere {
            center: Point3::new(0.5, 0.5, 5.0),
            radius: 100.0,
        };
        assert!(merge(&mixed, &cloud, 0, 1).rejected.unwrap().contains("merge a"));
    }

    #[test]
    fn refine_fixes_a_creased_under_segmentation() {
        // two planes meeting at a shallow crease, covered by a single plane
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let slope = 0.15f64;
        let mut pts = Vec::new();
        for _ in 0..1200 {
            let x: f64 = rng.random_range(-1.0..1.0);
            let y: f64 = rng.random_range(0.0..1.0);
            pts.push(Point3::new(x, y, slope * x.abs()));
        }
        let cloud = PointCloud::new(pts).unwrap();
        let plane = fit_primitive(PrimitiveKind::Plane, &cloud, &(0..1200).collect::<Vec<_>>()).unwrap();
        let mut config = Configuration::new(1200, 30, 0.1, Weights::default()).unwrap();
        config.primitives.push(Primitive::within(plane.shape, &cloud, &(0..1200).collect::<Vec<_>>(), 0.1));
        let (refined, stats) = refine(&config, &cloud);
        assert_eq!(refined.primitives.len(), 2);
        assert!(stats.applied.iter().all(|op| op.energy_after < op.energy_before));
        assert!(stats.max_energy_drift < 1e-9);
        refined.validate(&cloud).unwrap();
    }
}
