//! Coarse-to-fine rigid alignment of a scan to samples of the CAD surface.
//!
//! The coarse stage matches centroids and principal axes; the fine stage is
//! trimmed point-to-point ICP with a closed-form SVD pose update.

use nalgebra::Matrix3;
use rayon::prelude::*;

use crate::geometry::{covariance, sorted_eigen, Point3, PointCloud, RigidTransform, SpatialIndex};
use crate::{Error, Result};

pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-6;

/// Pairs farther than this multiple of the median pair distance are ignored.
const TRIM_FACTOR: f64 = 3.0;
/// Source points used to score the axis-sign candidates.
const COARSE_SCORE_SAMPLES: usize = 2000;

#[derive(Debug, Clone)]
pub struct CoarseAlignment {
    pub transform: RigidTransform,
    /// Set when either covariance had rank < 3 and only the centroids were matched.
    pub degenerate: bool,
}

#[derive(Debug, Clone)]
pub struct RegistrationResult {
    pub transform: RigidTransform,
    pub rmse: f64,
    pub iterations: usize,
    pub converged: bool,
    /// RMSE at the initial pose followed by one entry per accepted update.
    /// `iterations` counts every computed update, including a final rejected one.
    pub rmse_history: Vec<f64>,
}

fn principal_frame(points: &[Point3]) -> Option<(Point3, Matrix3<f64>, bool)> {
    principal_axes(points).map(|(c, _, vecs, ok)| (c, vecs, ok))
}

fn principal_axes(points: &[Point3]) -> Option<(Point3, [f64; 3], Matrix3<f64>, bool)> {
    let (c, cov) = covariance(points.iter())?;
    let (vals, vecs) = sorted_eigen(&cov);
    let full_rank = points.len() >= 4 && vals[2] > 1e-12 * vals[0].max(f64::MIN_POSITIVE);
    Some((c, vals, vecs, full_rank))
}

/// Mean distance from each (transformed) source sample to its nearest target point.
fn mean_nn_distance(tree: &SpatialIndex, points: &[Point3], t: &RigidTransform) -> f64 {
    let d: Vec<f64> = points
        .par_iter()
        .map(|p| tree.nearest(&t.apply(p)).map(|(_, d2)| d2.sqrt()).unwrap_or(f64::INFINITY))
        .collect();
    d.iter().sum::<f64>() / d.len() as f64
}

pub fn coarse_register(source: &PointCloud, target: &PointCloud) -> Result<CoarseAlignment> {
    let (Some((cs, es, src_ok)), Some((ct, et, tgt_ok))) =
        (principal_frame(source.points()), principal_frame(target.points()))
    else {
        return Err(Error::InvalidArgument("registration needs non-empty clouds".into()));
    };
    let centroid_only = RigidTransform::from_translation(ct - cs);
    if !(src_ok && tgt_ok) {
        log::warn!("degenerate covariance; coarse alignment falls back to centroid translation");
        return Ok(CoarseAlignment {
            transform: centroid_only,
            degenerate: true,
        });
    }

    let tree = SpatialIndex::new(target.points());
    let stride = (source.len() / COARSE_SCORE_SAMPLES).max(1);
    let probe: Vec<Point3> = source.points().iter().step_by(stride).copied().collect();

    let mut best: Option<(f64, RigidTransform)> = None;
    for (s1, s2) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
        let mut signs = Matrix3::from_diagonal(&nalgebra::Vector3::new(s1, s2, 1.0));
        let r = et * signs * es.transpose();
        if r.determinant() < 0.0 {
            signs[(2, 2)] = -1.0;
        }
        let r = et * signs * es.transpose();
        let t = RigidTransform::from_matrix_orthonormalized(&r, nalgebra::Vector3::zeros());
        let t = RigidTransform::new(*t.rotation(), ct.coords - t.rotation() * cs.coords)?;
        let cost = mean_nn_distance(&tree, &probe, &t);
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, t));
        }
    }
    Ok(CoarseAlignment {
        transform: best.unwrap().1,
        degenerate: false,
    })
}

struct Correspondences {
    pairs: Vec<(usize, usize)>,
    rmse: f64,
}

fn correspondences(src: &[Point3], tree: &SpatialIndex, t: &RigidTransform) -> Result<Correspondences> {
    let nn: Vec<(usize, f64)> = src
        .par_iter()
        .map(|p| tree.nearest(&t.apply(p)).unwrap())
        .collect();
    let mut d: Vec<f64> = nn.iter().map(|&(_, d2)| d2.sqrt()).collect();
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = d[d.len() / 2];
    let limit = TRIM_FACTOR * median;
    let mut pairs = Vec::with_capacity(src.len());
    let mut sq = 0.0;
    for (i, &(j, d2)) in nn.iter().enumerate() {
        if d2.sqrt() <= limit {
            pairs.push((i, j));
            sq += d2;
        }
    }
    if pairs.is_empty() {
        return Err(Error::NoCorrespondences);
    }
    Ok(Correspondences {
        rmse: (sq / pairs.len() as f64).sqrt(),
        pairs,
    })
}

/// Closed-form least-squares rigid motion mapping `a[i]` onto `b[i]`.
pub fn kabsch(a: &[Point3], b: &[Point3]) -> RigidTransform {
    let n = a.len() as f64;
    let ca = a.iter().fold(nalgebra::Vector3::zeros(), |s, p| s + p.coords) / n;
    let cb = b.iter().fold(nalgebra::Vector3::zeros(), |s, p| s + p.coords) / n;
    let mut h = Matrix3::zeros();
    for (p, q) in a.iter().zip(b) {
        h += (p.coords - ca) * (q.coords - cb).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u.unwrap();
    let v = svd.v_t.unwrap().transpose();
    let mut d = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = v * d * u.transpose();
    let t = RigidTransform::from_matrix_orthonormalized(&r, nalgebra::Vector3::zeros());
    let r = *t.rotation();
    RigidTransform::from_matrix_orthonormalized(&r, cb - r * ca)
}

/// Trimmed point-to-point ICP starting from `init`.
///
/// Stops when an update improves the RMSE by less than `tol` or after
/// `max_iter` updates. An update that would raise the RMSE is discarded, so
/// the reported RMSE sequence never increases.
pub fn icp_refine(
    source: &PointCloud,
    target: &PointCloud,
    init: &RigidTransform,
    max_iter: usize,
    tol: f64,
) -> Result<RegistrationResult> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::InvalidArgument("registration needs non-empty clouds".into()));
    }
    if max_iter == 0 {
        return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
    }
    icp_with_tree(source.points(), target.points(), &SpatialIndex::new(target.points()), init, max_iter, tol)
}

fn icp_with_tree(
    src: &[Point3],
    tgt: &[Point3],
    tree: &SpatialIndex,
    init: &RigidTransform,
    max_iter: usize,
    tol: f64,
) -> Result<RegistrationResult> {
    let mut pose = *init;
    let mut corr = correspondences(src, tree, &pose)?;
    let mut history = vec![corr.rmse];
    let mut iterations = 0;
    let mut converged = false;
    for it in 1..=max_iter {
        let a: Vec<Point3> = corr.pairs.iter().map(|&(i, _)| pose.apply(&src[i])).collect();
        let b: Vec<Point3> = corr.pairs.iter().map(|&(_, j)| tgt[j]).collect();
        let candidate = kabsch(&a, &b).compose(&pose);
        let next = correspondences(src, tree, &candidate)?;
        if next.rmse > corr.rmse {
            iterations = it;
            converged = true;
            break;
        }
        let improvement = corr.rmse - next.rmse;
        pose = candidate;
        corr = next;
        history.push(corr.rmse);
        iterations = it;
        if improvement < tol {
            converged = true;
            break;
        }
    }
    Ok(RegistrationResult {
        transform: pose,
        rmse: corr.rmse,
        iterations,
        converged,
        rmse_history: history,
    })
}

/// In-plane turns tried when the two largest principal variances are this
/// close, as a ratio.
const ROUND_RATIO: f64 = 1.25;
const SPIN_STEPS: usize = 30;
/// Screening round of [`register`]: probe size, ICP iterations, survivors.
const SCREEN: (usize, usize, usize) = (500, 10, 8);
/// Target points used in the screening round.
const SCREEN_TARGET: usize = 20_000;
/// Second round on the survivors: probe size and ICP iterations.
const CONFIRM: (usize, usize) = (10000, 30);

/// The 24 rotations that map the coordinate axes onto signed coordinate axes.
fn axis_rotations() -> Vec<Matrix3<f64>> {
    let mut out = Vec::with_capacity(24);
    for perm in [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
        for signs in 0..8 {
            let mut m = Matrix3::zeros();
            for (row, &col) in perm.iter().enumerate() {
                m[(row, col)] = if signs >> row & 1 == 1 { -1.0 } else { 1.0 };
            }
            if m.determinant() > 0.0 {
                out.push(m);
            }
        }
    }
    out
}

fn probe(points: &[Point3], size: usize) -> Vec<Point3> {
    points.iter().step_by((points.len() / size).max(1)).copied().collect()
}

/// Short ICP runs from every start, ranked by the mean nearest-neighbour
/// distance of the probe points. Ties keep the earlier start.
fn rank_starts(probe: &[Point3], tgt: &[Point3], tree: &SpatialIndex, starts: &[RigidTransform], iterations: usize, tol: f64) -> Vec<(f64, RigidTransform)> {
    let mut ranked: Vec<(f64, RigidTransform)> = starts
        .iter()
        .filter_map(|start| {
            let short = icp_with_tree(probe, tgt, tree, start, iterations, tol).ok()?;
            Some((mean_nn_distance(tree, probe, &short.transform), short.transform))
        })
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0));
    ranked
}

/// Coarse-to-fine registration robust to symmetric parts.
///
/// Principal axes pin down the orientation only up to the symmetries of the
/// part's inertia: a square plate has no preferred in-plane direction and
/// matches its mirror image almost as well. Besides the coarse alignment and
/// the scan's own orientation, every rotation taking the scan's principal
/// frame onto the target's signed, permuted axes is tried, each also turned
/// in 3° steps about the scan's thinnest axis. Short ICP runs on small
/// subsamples pick the start that the full ICP then refines.
pub fn register(source: &PointCloud, target: &PointCloud, max_iter: usize, tol: f64) -> Result<RegistrationResult> {
    if max_iter == 0 {
        return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
    }
    let coarse = coarse_register(source, target)?;
    let (Some((cs, vals, es, _)), Some((ct, _, et, _))) = (principal_axes(source.points()), principal_axes(target.points())) else {
        return Err(Error::InvalidArgument("registration needs non-empty clouds".into()));
    };
    let mut starts = vec![coarse.transform, RigidTransform::from_translation(ct - cs)];
    if !coarse.degenerate {
        let round = vals[0] <= ROUND_RATIO * vals[1];
        let thin = es.column(2).into_owned();
        for step in 0..SPIN_STEPS {
            let turn = std::f64::consts::FRAC_PI_2 * step as f64 / SPIN_STEPS as f64;
            let spin = RigidTransform::from_axis_angle(&thin, turn, nalgebra::Vector3::zeros());
            for m in axis_rotations() {
                // turning only helps when the thin axes stay matched
                if step > 0 && !(round && m[(2, 2)] != 0.0) {
                    continue;
                }
                let r = RigidTransform::from_matrix_orthonormalized(&(et * m * es.transpose() * spin.rotation()), nalgebra::Vector3::zeros());
                starts.push(RigidTransform::new(*r.rotation(), ct.coords - r.rotation() * cs.coords)?);
            }
        }
    }
    let tgt = target.points();
    let tree = SpatialIndex::new(tgt);
    let (size, iterations, keep) = SCREEN;
    let coarse_tgt = probe(tgt, SCREEN_TARGET);
    let coarse_tree = SpatialIndex::new(&coarse_tgt);
    let screened = rank_starts(&probe(source.points(), size), &coarse_tgt, &coarse_tree, &starts, iterations.min(max_iter), tol);
    let survivors: Vec<RigidTransform> = screened.iter().take(keep).map(|s| s.1).collect();
    let (size, iterations) = CONFIRM;
    let confirmed = rank_starts(&probe(source.points(), size), tgt, &tree, &survivors, iterations.min(max_iter), tol);
    let (cost, pose) = *confirmed.first().ok_or(Error::NoCorrespondences)?;
    log::debug!("registration: {} starts, best probe distance {cost:.5}", starts.len());
    icp_with_tree(source.points(), tgt, &tree, &pose, max_iter, tol)
}

/// Mean nearest-neighbour distance from the registered scan to the CAD samples.
pub fn registration_error(registered: &PointCloud, cad_samples: &PointCloud) -> f64 {
    if registered.is_empty() || cad_samples.is_empty() {
        return 0.0;
    }
    let tree = SpatialIndex::new(cad_samples.points());
    mean_nn_distance(&tree, registered.points(), &RigidTransform::identity())
}
