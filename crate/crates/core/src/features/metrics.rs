use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::circle::Circle3D;
use crate::{Error, Result};

/// Feature-level deviations over matched circle pairs, plus the unmatched
/// counts on both sides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureError {
    pub radius_avg: f64,
    pub radius_max: f64,
    pub centroid_avg: f64,
    pub centroid_max: f64,
    pub matched: usize,
    pub false_negatives: usize,
    pub false_positives: usize,
}

/// One-to-one matching by nearest centroid.
///
/// All pairs whose centers and radii both differ by at most `tol` are ranked
/// by centroid distance and taken greedily. Returns `(fitted, truth)` index
/// pairs in the order they were matched.
pub fn match_circles(fitted: &[Circle3D], truth: &[Circle3D], tol: f64) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, f) in fitted.iter().enumerate() {
        for (j, t) in truth.iter().enumerate() {
            let d = (f.center - t.center).norm();
            if d <= tol && (f.radius - t.radius).abs() <= tol {
                pairs.push((d, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_f = vec![false; fitted.len()];
    let mut used_t = vec![false; truth.len()];
    let mut out = Vec::new();
    for (_, i, j) in pairs {
        if !used_f[i] && !used_t[j] {
            used_f[i] = true;
            used_t[j] = true;
            out.push((i, j));
        }
    }
    out
}

/// Radius and centroid deviations over the circles matched within `match_tol`.
pub fn feature_level_error(fitted: &[Circle3D], truth: &[Circle3D], match_tol: f64) -> Result<FeatureError> {
    let pairs = match_circles(fitted, truth, match_tol);
    if pairs.is_empty() {
        return Err(Error::Degenerate("no fitted circle matches a reference circle".into()));
    }
    let n = pairs.len() as f64;
    let (mut ra, mut rm, mut ca, mut cm) = (0.0, 0.0f64, 0.0, 0.0f64);
    for &(i, j) in &pairs {
        let dr = (fitted[i].radius - truth[j].radius).abs();
        let dc = (fitted[i].center - truth[j].center).norm();
        ra += dr;
        ca += dc;
        rm = rm.max(dr);
        cm = cm.max(dc);
    }
    Ok(FeatureError {
        radius_avg: ra / n,
        radius_max: rm,
        centroid_avg: ca / n,
        centroid_max: cm,
        matched: pairs.len(),
        false_negatives: truth.len() - pairs.len(),
        false_positives: fitted.len() - pairs.len(),
    })
}

/// Missed reference circles and spurious fitted circles.
pub fn fn_fp_counts(fitted: &[Circle3D], truth: &[Circle3D], match_tol: f64) -> (usize, usize) {
    let m = match_circles(fitted, truth, match_tol).len();
    (truth.len() - m, fitted.len() - m)
}

/// Percentage of points whose label disagrees with the truth under the best
/// one-to-one mapping of cluster ids. `-1` only ever maps to `-1`.
///
/// # Panics
///
/// When the two label lists differ in length.
pub fn misclassification_error(labels: &[i32], truth: &[i32]) -> f64 {
    assert_eq!(labels.len(), truth.len(), "label lists differ in length");
    if labels.is_empty() {
        return 0.0;
    }
    let ids = |l: &[i32]| -> BTreeMap<i32, usize> {
        let mut m = BTreeMap::new();
        for &x in l.iter().filter(|&&x| x >= 0) {
            let next = m.len();
            m.entry(x).or_insert(next);
        }
        m
    };
    let (pred_ids, truth_ids) = (ids(labels), ids(truth));
    let mut confusion = vec![vec![0i64; truth_ids.len()]; pred_ids.len()];
    let mut correct = 0usize;
    for (&p, &t) in labels.iter().zip(truth) {
        match (p >= 0, t >= 0) {
            (false, false) => correct += 1,
            (true, true) => confusion[pred_ids[&p]][truth_ids[&t]] += 1,
            _ => {}
        }
    }
    correct += max_assignment(&confusion) as usize;
    100.0 * (labels.len() - correct) as f64 / labels.len() as f64
}

/// Largest total weight of a one-to-one row/column assignment (Hungarian
/// method on the negated, square-padded matrix).
pub(crate) fn max_assignment(w: &[Vec<i64>]) -> i64 {
    let rows = w.len();
    let cols = w.first().map_or(0, |r| r.len());
    let n = rows.max(cols);
    if n == 0 {
        return 0;
    }
    let cost = |i: usize, j: usize| -> i64 {
        if i < rows && j < cols {
            -w[i][j]
        } else {
            0
        }
    };
    // potentials and matching are 1-based, with index 0 as the sentinel
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![i64::MAX; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = i64::MAX;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n).map(|j| if p[j] > 0 { -cost(p[j] - 1, j - 1) } else { 0 }).sum()
}
