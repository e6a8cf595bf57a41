
use crate::geometry::{covariance, orthonormal_basis, sorted_eigen, Point3, Vector3};
use crate::numeric::{levenberg_marquardt, pratt_fit, LocalProblem};
use crate::primitives::canonical_direction;
use crate::{Error, Result};

/// A circle in space. The normal is a unit vector with a canonical sign
/// (positive z, then positive y, then positive x).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Circle3D {
    pub center: Point3,
    pub radius: f64,
    pub normal: Vector3,
}

impl Circle3D {
    pub fn new(center: Point3, radius: f64, normal: Vector3) -> Result<Self> {
        let len = normal.norm();
        if !(radius > 0.0 && radius.is_finite()) || !(len > 0.0 && len.is_finite()) || !center.coords.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid circle: center {center}, radius {radius}")));
        }
        Ok(Circle3D {
            center,
            radius,
            normal: canonical_direction(normal / len),
        })
    }

    pub fn distance(&self, p: &Point3) -> f64 {
        point_to_circle_distance(p, self)
    }

    /// `segments` points evenly spaced around the circle.
    pub fn polyline(&self, segments: usize) -> Vec<Point3> {
        let (u, w) = orthonormal_basis(&self.normal);
        (0..segments)
            .map(|k| {
                let t = k as f64 / segments as f64 * std::f64::consts::TAU;
                self.center + (u * t.cos() + w * t.sin()) * self.radius
            })
            .collect()
    }
}

/// Distance from `p` to the nearest point of the circle.
pub fn point_to_circle_distance(p: &Point3, c: &Circle3D) -> f64 {
    let d = p - c.center;
    let h = d.dot(&c.normal);
    let g = ((d - c.normal * h).norm() - c.radius).abs();
    (h * h + g * g).sqrt()
}

/// Circle through three points, or `None` when they are (numerically) collinear.
pub fn circumcircle(a: &Point3, b: &Point3, c: &Point3) -> Option<Circle3D> {
    let ab = b - a;
    let ac = c - a;
    let n = ab.cross(&ac);
    let n2 = n.norm_squared();
    let span2 = ab.norm_squared().max(ac.norm_squared()).max((c - b).norm_squared());
    // twice the triangle area against the squared span
    if n2.sqrt() * 0.5 < 1e-9 * span2 || n2 == 0.0 {
        return None;
    }
    let offset = (n.cross(&ab) * ac.norm_squared() + ac.cross(&n) * ab.norm_squared()) / (2.0 * n2);
    Circle3D::new(a + offset, offset.norm(), n).ok()
}

struct Circle2dProblem<'a> {
    pts: &'a [[f64; 2]],
    c: [f64; 2],
    r: f64,
    scale: f64,
}

impl LocalProblem for Circle2dProblem<'_> {
    fn dim(&self) -> usize {
        3
    }
    fn residuals(&self, d: &[f64], out: &mut [f64]) {
        let (cx, cy, r) = (self.c[0] + d[0], self.c[1] + d[1], self.r + d[2]);
        for (o, p) in out.iter_mut().zip(self.pts) {
            *o = (p[0] - cx).hypot(p[1] - cy) - r;
        }
    }
    fn retract(&mut self, d: &[f64]) {
        self.c[0] += d[0];
        self.c[1] += d[1];
        self.r += d[2];
    }
    fn scales(&self) -> Vec<f64> {
        vec![self.scale; 3]
    }
}

/// Least-squares circle: PCA plane, then an algebraic circle in that plane
/// polished by Gauss-Newton on the in-plane geometric distance.
pub fn fit_circle(points: &[Point3]) -> Result<Circle3D> {
    if points.len() < 3 {
        return Err(Error::InvalidArgument("a circle needs at least 3 points".into()));
    }
    let (c, cov) = covariance(points.iter()).expect("non-empty");
    let (vals, vecs) = sorted_eigen(&cov);
    if vals[1] <= 1e-14 * vals[0].max(f64::MIN_POSITIVE) {
        return Err(Error::Degenerate("circle fit on collinear points".into()));
    }
    let normal: Vector3 = vecs.column(2).into_owned();
    let (u, w) = (vecs.column(0).into_owned(), vecs.column(1).into_owned());
    let flat: Vec<[f64; 2]> = points
        .iter()
        .map(|p| {
            let d = p - c;
            [d.dot(&u), d.dot(&w)]
        })
        .collect();
    let (c2, r) = pratt_fit(&flat).ok_or_else(|| Error::Degenerate("circle fit on collinear points".into()))?;
    let mut prob = Circle2dProblem {
        pts: &flat,
        c: c2,
        r,
        scale: r.max(vals[0].sqrt()),
    };
    if points.len() > 3 {
        levenberg_marquardt(&mut prob, flat.len(), crate::primitives::FIT_MAX_ITER);
    }
    Circle3D::new(c + u * prob.c[0] + w * prob.c[1], prob.r.abs(), normal)
}

/// Result of [`fit_circle_iterative`].
#[derive(Debug, Clone, PartialEq)]
pub struct IterativeCircleFit {
    pub circle: Circle3D,
    /// Indices into the input slice, ascending.
    pub inliers: Vec<usize>,
    pub iterations: usize,
    /// False when the iteration budget ran out before the parameters settled.
    pub converged: bool,
}

/// Largest of the center shift, radius change and normal tilt scaled by radius.
pub fn circle_change(a: &Circle3D, b: &Circle3D) -> f64 {
    let angle = a.normal.cross(&b.normal).norm().atan2(a.normal.dot(&b.normal).abs());
    (a.center - b.center)
        .norm()
        .max((a.radius - b.radius).abs())
        .max(angle * b.radius)
}

/// Least-squares circle with iterative rejection of points farther than `eps`.
///
/// The rejection distance starts at three times the median residual of the
/// first fit and shrinks by at least 30% a round until it reaches `eps`, so a
/// first fit dragged off by gross outliers does not discard the true circle.
/// Every shrinking step that discards points refits on the survivors. The
/// loop ends once the distance is down to `eps` and a round discards nothing
/// or moves the parameters by less than `eta`, or after `max_iter` fits.
pub fn fit_circle_iterative(points: &[Point3], eps: f64, eta: f64, max_iter: usize) -> Result<IterativeCircleFit> {
    if max_iter == 0 {
        return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
    }
    let mut inliers: Vec<usize> = (0..points.len()).collect();
    let gather = |idx: &[usize]| idx.iter().map(|&i| points[i]).collect::<Vec<_>>();
    let mut circle = fit_circle(points)?;
    let mut iterations = 1;
    let mut converged = false;
    let mut cut = f64::INFINITY;
    while iterations < max_iter {
        let d: Vec<f64> = inliers.iter().map(|&i| circle.distance(&points[i])).collect();
        let mut sorted = d.clone();
        sorted.sort_by(f64::total_cmp);
        cut = eps.max((3.0 * sorted[sorted.len() / 2]).min(0.7 * cut));
        let keep: Vec<usize> = inliers.iter().zip(&d).filter(|(_, &di)| di <= cut).map(|(&i, _)| i).collect();
        if keep.len() == inliers.len() {
            if cut <= eps {
                converged = true;
                break;
            }
            continue;
        }
        if keep.len() < 3 {
            return Err(Error::CircleCollapsed);
        }
        inliers = keep;
        let next = match fit_circle(&gather(&inliers)) {
            Ok(c) => c,
            Err(Error::Degenerate(_)) => return Err(Error::CircleCollapsed),
            Err(e) => return Err(e),
        };
        iterations += 1;
        let change = circle_change(&circle, &next);
        circle = next;
        if change < eta && cut <= eps {
            converged = true;
            break;
        }
    }
    if !converged {
        // the budget ran out; report whether the last fit already explains its inliers
        converged = inliers.iter().all(|&i| circle.distance(&points[i]) <= eps);
    }
    Ok(IterativeCircleFit {
        circle,
        inliers,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::TAU;

    fn ring(c: &Circle3D, n: usize) -> Vec<Point3> {
        c.polyline(n)
    }

    #[test]
    fn distance_cases() {
        let c = Circle3D::new(Point3::origin(), 2.0, Vector3::z()).unwrap();
        assert!(c.distance(&Point3::new(2.0, 0.0, 0.0)).abs() < 1e-15);
        assert!((c.distance(&Point3::origin()) - 2.0).abs() < 1e-15);
        assert!((c.distance(&Point3::new(0.0, 5.0, 4.0)) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn distance_matches_dense_parameterization() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = Circle3D::new(Point3::new(0.3, -0.2, 1.0), 1.5, Vector3::new(0.2, 0.5, 1.0)).unwrap();
        let dense = c.polyline(1_000_000);
        for _ in 0..10 {
            let p = Point3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-2.0..3.0));
            let oracle = dense.iter().map(|q| (q - p).norm()).fold(f64::INFINITY, f64::min);
            // chord sagitta at this resolution is far below 1e-9
            assert!((oracle - c.distance(&p)).abs() < 1e-9, "{oracle} {}", c.distance(&p));
        }
    }

    #[test]
    fn circumcircle_cases() {
        let c = circumcircle(&Point3::new(1.0, 0.0, 0.0), &Point3::new(0.0, 1.0, 0.0), &Point3::new(-1.0, 0.0, 0.0)).unwrap();
        assert!(c.center.coords.norm() < 1e-15);
        assert!((c.radius - 1.0).abs() < 1e-15);
        assert_eq!(c.normal, Vector3::z());
        assert!(circumcircle(&Point3::origin(), &Point3::new(1.0, 1.0, 1.0), &Point3::new(2.0, 2.0, 2.0)).is_none());
    }

    #[test]
    fn canonical_normal() {
        let c = Circle3D::new(Point3::origin(), 1.0, Vector3::new(0.0, 0.0, -3.0)).unwrap();
        assert_eq!(c.normal, Vector3::z());
        let c = Circle3D::new(Point3::origin(), 1.0, Vector3::new(1.0, -1.0, 0.0)).unwrap();
        assert!(c.normal.y > 0.0);
        assert!(Circle3D::new(Point3::origin(), 0.0, Vector3::z()).is_err());
    }

    #[test]
    fn exact_circle_one_iteration() {
        let truth = Circle3D::new(Point3::new(1.0, 2.0, 3.0), 0.7, Vector3::new(0.3, -0.4, 1.0)).unwrap();
        let pts = ring(&truth, 40);
        let fit = fit_circle_iterative(&pts, 0.1, 0.03, 150).unwrap();
        assert_eq!(fit.iterations, 1);
        assert_eq!(fit.inliers.len(), 40);
        assert!(circle_change(&fit.circle, &truth) < 1e-9);
    }

    #[test]
    fn three_points_give_the_circumcircle() {
        let (a, b, c) = (Point3::new(0.0, 0.0, 0.0), Point3::new(2.0, 0.0, 1.0), Point3::new(1.0, 3.0, 0.0));
        let fit = fit_circle_iterative(&[a, b, c], 0.1, 0.03, 150).unwrap();
        let cc = circumcircle(&a, &b, &c).unwrap();
        assert!(circle_change(&fit.circle, &cc) < 1e-9);
    }

    #[test]
    fn gross_outliers_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let truth = Circle3D::new(Point3::new(0.0, 0.0, 0.0), 1.0, Vector3::z()).unwrap();
        let mut pts = ring(&truth, 80);
        for _ in 0..20 {
            let t: f64 = rng.random_range(0.0..TAU);
            let r: f64 = rng.random_range(1.3..2.0);
            pts.push(Point3::new(r * t.cos(), r * t.sin(), rng.random_range(-0.3..0.3)));
        }
        let fit = fit_circle_iterative(&pts, 0.1, 0.03, 150).unwrap();
        assert!(fit.inliers.iter().all(|&i| i < 80));
        assert!(circle_change(&fit.circle, &truth) < 1e-3);
    }

    #[test]
    fn collapse_is_reported() {
        // the off-line point goes first, leaving a collinear set without a circle
        let mut pts: Vec<Point3> = (0..10).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        pts.push(Point3::new(4.5, 3.0, 0.0));
        assert!(matches!(fit_circle_iterative(&pts, 0.1, 0.03, 150), Err(Error::CircleCollapsed)));
    }

    proptest! {
        #[test]
        fn inliers_never_grow_and_budget_holds(seed in 0u64..500, eps in 0.02..0.5f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Point3> = (0..60)
                .map(|_| {
                    let t: f64 = rng.random_range(0.0..TAU);
                    let r = 1.0 + rng.random_range(-0.3..0.3);
                    Point3::new(r * t.cos(), r * t.sin(), rng.random_range(-0.1..0.1))
                })
                .collect();
            if let Ok(fit) = fit_circle_iterative(&pts, eps, 0.03, 150) {
                prop_assert!(fit.iterations <= 150);
                prop_assert!(fit.inliers.len() <= pts.len());
                prop_assert!(fit.inliers.windows(2).all(|w| w[0] < w[1]));
            }
        }

        #[test]
        fn distance_zero_iff_on_circle(t in 0.0..TAU, off in 1e-6..1.0f64) {
            let c = Circle3D::new(Point3::new(0.5, 0.1, -0.2), 1.2, Vector3::new(0.1, 0.9, 0.4)).unwrap();
            let (u, w) = orthonormal_basis(&c.normal);
            let on = c.center + (u * t.cos() + w * t.sin()) * c.radius;
            prop_assert!(c.distance(&on) < 1e-9);
            prop_assert!(c.distance(&(on + c.normal * off)) > 1e-9);
        }
    }
}
