//! Small numerical kernels shared by the shape and circle fitters.

use nalgebra::{DMatrix, DVector};

/// A nonlinear least-squares problem expressed in a local chart around the
/// current estimate. `residuals(delta)` evaluates the model moved by `delta`
/// without committing; `retract(delta)` commits the move.
pub(crate) trait LocalProblem {
    fn dim(&self) -> usize;
    fn residuals(&self, delta: &[f64], out: &mut [f64]);
    fn retract(&mut self, delta: &[f64]);
    /// Natural magnitude of each parameter, used for step sizes and the
    /// convergence test.
    fn scales(&self) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LmOutcome {
    pub iterations: usize,
    pub converged: bool,
    pub cost: f64,
}

/// Levenberg-Marquardt with central-difference Jacobians.
///
/// Converges when a step no longer changes the parameters relative to their
/// scales, when the cost stops decreasing, or when no damped step lowers the cost.
pub(crate) fn levenberg_marquardt<P: LocalProblem>(
    problem: &mut P,
    n_residuals: usize,
    max_iter: usize,
) -> LmOutcome {
    let p = problem.dim();
    let scales = problem.scales();
    let zero = vec![0.0; p];
    let mut r = vec![0.0; n_residuals];
    problem.residuals(&zero, &mut r);
    let mut cost: f64 = r.iter().map(|x| x * x).sum();
    let mut lambda = 1e-3;
    let mut plus = vec![0.0; n_residuals];
    let mut minus = vec![0.0; n_residuals];
    let mut trial = vec![0.0; n_residuals];

    for it in 1..=max_iter {
        if cost == 0.0 {
            return LmOutcome { iterations: it - 1, converged: true, cost };
        }
        let mut jac = DMatrix::<f64>::zeros(n_residuals, p);
        let mut delta = zero.clone();
        for k in 0..p {
            let h = 1e-7 * scales[k];
            delta[k] = h;
            problem.residuals(&delta, &mut plus);
            delta[k] = -h;
            problem.residuals(&delta, &mut minus);
            delta[k] = 0.0;
            for i in 0..n_residuals {
                jac[(i, k)] = (plus[i] - minus[i]) / (2.0 * h);
            }
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * DVector::from_column_slice(&r);

        let mut accepted = None;
        for _ in 0..12 {
            let mut a = jtj.clone();
            for k in 0..p {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12 * scales[k].powi(-2));
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&(-&jtr))) else {
                lambda *= 10.0;
                continue;
            };
            let step: Vec<f64> = step.iter().copied().collect();
            if step.iter().any(|s| !s.is_finite()) {
                lambda *= 10.0;
                continue;
            }
            problem.residuals(&step, &mut trial);
            let new_cost: f64 = trial.iter().map(|x| x * x).sum();
            if new_cost < cost {
                accepted = Some((step, new_cost));
                lambda = (lambda * 0.1).max(1e-12);
                break;
            }
            lambda *= 10.0;
        }
        let Some((step, new_cost)) = accepted else {
            return LmOutcome { iterations: it, converged: true, cost };
        };
        problem.retract(&step);
        std::mem::swap(&mut r, &mut trial);
        let small_step = step.iter().zip(&scales).all(|(s, sc)| s.abs() <= 1e-10 * sc);
        let small_gain = cost - new_cost <= 1e-14 * cost;
        cost = new_cost;
        if small_step || small_gain {
            return LmOutcome { iterations: it, converged: true, cost };
        }
    }
    LmOutcome { iterations: max_iter, converged: false, cost }
}

/// Algebraic hypersphere fit with the Pratt normalisation in `D` dimensions
/// (a circle for `D = 2`, a sphere for `D = 3`). Returns the center and radius,
/// or `None` when the points are (nearly) on a hyperplane.
pub(crate) fn pratt_fit<const D: usize>(points: &[[f64; D]]) -> Option<([f64; D], f64)> {
    let n = points.len();
    if n < D + 1 {
        return None;
    }
    // center and scale for conditioning
    let mut mean = [0.0; D];
    for p in points {
        for k in 0..D {
            mean[k] += p[k] / n as f64;
        }
    }
    let scale = (points
        .iter()
        .map(|p| (0..D).map(|k| (p[k] - mean[k]).powi(2)).sum::<f64>())
        .sum::<f64>()
        / n as f64)
        .sqrt();
    if scale <= 0.0 || !scale.is_finite() {
        return None;
    }
    let m = D + 2;
    let mut mm = DMatrix::<f64>::zeros(m, m);
    let mut z = vec![0.0; m];
    for p in points {
        let mut sq = 0.0;
        for k in 0..D {
            let x = (p[k] - mean[k]) / scale;
            z[k + 1] = x;
            sq += x * x;
        }
        z[0] = sq;
        z[m - 1] = 1.0;
        for a in 0..m {
            for b in 0..m {
                mm[(a, b)] += z[a] * z[b];
            }
        }
    }
    mm /= n as f64;
    // constraint |b|^2 - 4ac = 1
    let mut bmat = DMatrix::<f64>::zeros(m, m);
    for k in 1..=D {
        bmat[(k, k)] = 1.0;
    }
    bmat[(0, m - 1)] = -2.0;
    bmat[(m - 1, 0)] = -2.0;
    let binv = bmat.clone().try_inverse()?;
    let eta = (binv * &mm)
        .complex_eigenvalues()
        .iter()
        .filter(|c| c.im.abs() <= 1e-9 * (1.0 + c.re.abs()) && c.re >= -1e-9)
        .map(|c| c.re.max(0.0))
        .fold(f64::INFINITY, f64::min);
    if !eta.is_finite() {
        return None;
    }
    let svd = (mm - bmat * eta).svd(false, true);
    let vt = svd.v_t?;
    let (imin, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())?;
    let coef: Vec<f64> = vt.row(imin).iter().copied().collect();
    let a = coef[0];
    let c = coef[m - 1];
    let bsq: f64 = (1..=D).map(|k| coef[k] * coef[k]).sum();
    if a.abs() <= 1e-12 * (bsq.sqrt() + c.abs()) {
        return None;
    }
    let disc = bsq - 4.0 * a * c;
    if disc <= 0.0 {
        return None;
    }
    let mut center = [0.0; D];
    for k in 0..D {
        center[k] = mean[k] - coef[k + 1] / (2.0 * a) * scale;
    }
    let radius = disc.sqrt() / (2.0 * a.abs()) * scale;
    (radius.is_finite() && radius > 0.0).then_some((center, radius))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pratt_exact_circle() {
        let pts: Vec<[f64; 2]> = (0..7)
            .map(|i| {
                let t = i as f64 * 0.4;
                [3.0 + 2.0 * t.cos(), -1.0 + 2.0 * t.sin()]
            })
            .collect();
        let (c, r) = pratt_fit(&pts).unwrap();
        assert!((c[0] - 3.0).abs() < 1e-9 && (c[1] + 1.0).abs() < 1e-9);
        assert!((r - 2.0).abs() < 1e-9);
    }

    #[test]
    fn pratt_octahedron_sphere() {
        let pts = [
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, 0.0, -1.0],
        ];
        let (c, r) = pratt_fit(&pts).unwrap();
        assert!(c.iter().all(|x| x.abs() < 1e-12));
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pratt_rejects_line() {
        let pts: Vec<[f64; 2]> = (0..5).map(|i| [i as f64, 2.0 * i as f64]).collect();
        assert!(pratt_fit(&pts).is_none());
    }

    struct Quadratic {
        x: [f64; 2],
    }

    impl LocalProblem for Quadratic {
        fn dim(&self) -> usize {
            2
        }
        fn residuals(&self, d: &[f64], out: &mut [f64]) {
            let a = self.x[0] + d[0];
            let b = self.x[1] + d[1];
            out[0] = 10.0 * (b - a * a);
            out[1] = 1.0 - a;
        }
        fn retract(&mut self, d: &[f64]) {
            self.x[0] += d[0];
            self.x[1] += d[1];
        }
        fn scales(&self) -> Vec<f64> {
            vec![1.0, 1.0]
        }
    }

    #[test]
    fn lm_solves_rosenbrock() {
        let mut p = Quadratic { x: [-1.2, 1.0] };
        let out = levenberg_marquardt(&mut p, 2, 200);
        assert!(out.converged);
        assert!((p.x[0] - 1.0).abs() < 1e-6 && (p.x[1] - 1.0).abs() < 1e-6);
    }
}
