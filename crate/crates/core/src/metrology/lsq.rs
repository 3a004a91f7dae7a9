//! Damped Gauss-Newton (Levenberg-Marquardt) least squares with linearised
//! confidence intervals.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Stop when the step is this small relative to the parameter vector.
pub const REL_STEP_TOL: f64 = 1e-9;
pub const MAX_ITERATIONS: usize = 200;
/// Stop when an accepted step lowers the cost by less than this fraction.
pub const COST_TOL: f64 = 1e-14;

/// A least-squares problem: residuals `r(p)` and their Jacobian `dr/dp`.
pub trait Problem {
    fn n_params(&self) -> usize;
    fn n_residuals(&self) -> usize;
    fn residuals(&self, p: &DVector<f64>) -> DVector<f64>;
    fn jacobian(&self, p: &DVector<f64>) -> DMatrix<f64>;
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub params: DVector<f64>,
    pub residuals: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    pub iterations: usize,
}

impl Solution {
    pub fn cost(&self) -> f64 {
        self.residuals.norm_squared()
    }
}

fn finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Minimises `|r(p)|^2` from `p0`.
pub fn solve<P: Problem>(problem: &P, p0: DVector<f64>) -> Result<Solution> {
    let n = problem.n_params();
    if p0.len() != n {
        return Err(Error::param("initial guess has the wrong length"));
    }
    let mut p = p0;
    let mut r = problem.residuals(&p);
    if !finite(&r) {
        return Err(Error::FitFailure("residuals are not finite at the initial guess".into()));
    }
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    for iteration in 1..=MAX_ITERATIONS {
        let j = problem.jacobian(&p);
        let jtj = j.transpose() * &j;
        let g = j.transpose() * &r;
        if cost == 0.0 || g.amax() == 0.0 {
            return Ok(Solution { params: p, residuals: r, jacobian: j, iterations: iteration });
        }
        loop {
            let mut a = jtj.clone();
            for k in 0..n {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let step = match a.cholesky() {
                Some(ch) => -ch.solve(&g),
                None => {
                    lambda *= 10.0;
                    if lambda > 1e16 {
                        return Err(Error::FitFailure("normal equations are singular".into()));
                    }
                    continue;
                }
            };
            let small = step.norm() <= REL_STEP_TOL * (p.norm() + REL_STEP_TOL);
            let trial = &p + &step;
            let r_trial = problem.residuals(&trial);
            let c_trial = r_trial.norm_squared();
            if finite(&r_trial) && c_trial <= cost {
                // A tiny step only signals convergence when it is not just
                // the damping holding it back.
                let converged = (small && lambda <= 1.0) || cost - c_trial <= COST_TOL * cost;
                p = trial;
                r = r_trial;
                cost = c_trial;
                lambda = (lambda / 10.0).max(1e-12);
                if converged {
                    let j = problem.jacobian(&p);
                    return Ok(Solution { params: p, residuals: r, jacobian: j, iterations: iteration });
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e16 {
                // No downhill step left at rounding resolution.
                return Ok(Solution { params: p, residuals: r, jacobian: j, iterations: iteration });
            }
        }
    }
    Err(Error::FitFailure(format!("no convergence within {MAX_ITERATIONS} iterations")))
}

/// 95 % confidence half-widths `t_{0.975, m-n} sqrt(diag(s^2 (J^T J)^-1))`
/// with `s^2 = |r|^2 / (m - n)`.
pub fn ci95(sol: &Solution) -> Result<Vec<f64>> {
    let (m, n) = sol.jacobian.shape();
    if m <= n {
        return Err(Error::FitFailure(format!(
            "{m} residuals leave no degrees of freedom for {n} parameters"
        )));
    }
    let dof = (m - n) as f64;
    let s2 = sol.cost() / dof;
    let cov = (sol.jacobian.transpose() * &sol.jacobian)
        .try_inverse()
        .ok_or_else(|| Error::FitFailure("singular Jacobian at the optimum".into()))?;
    let t = StudentsT::new(0.0, 1.0, dof)
        .map_err(|e| Error::FitFailure(e.to_string()))?
        .inverse_cdf(0.975);
    Ok((0..n).map(|k| t * (s2 * cov[(k, k)]).max(0.0).sqrt()).collect())
}

/// Jacobian by central differences, for problems without analytic
/// derivatives.
pub fn numeric_jacobian<F: Fn(&DVector<f64>) -> DVector<f64>>(f: F, p: &DVector<f64>) -> DMatrix<f64> {
    let r0 = f(p);
    let mut j = DMatrix::zeros(r0.len(), p.len());
    for k in 0..p.len() {
        let h = 1e-6 * p[k].abs().max(1e-3);
        let mut hi = p.clone();
        let mut lo = p.clone();
        hi[k] += h;
        lo[k] -= h;
        j.set_column(k, &((f(&hi) - f(&lo)) / (2.0 * h)));
    }
    j
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Straight line y = p0 + p1 x.
    struct Line {
        x: Vec<f64>,
        y: Vec<f64>,
    }

    impl Problem for Line {
        fn n_params(&self) -> usize {
            2
        }
        fn n_residuals(&self) -> usize {
            self.x.len()
        }
        fn residuals(&self, p: &DVector<f64>) -> DVector<f64> {
            DVector::from_iterator(self.x.len(), self.x.iter().zip(&self.y).map(|(x, y)| p[0] + p[1] * x - y))
        }
        fn jacobian(&self, _: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::from_fn(self.x.len(), 2, |i, k| if k == 0 { 1.0 } else { self.x[i] })
        }
    }

    #[test]
    fn line_fit_matches_textbook_intervals() {
        // Textbook OLS oracle: se(slope) = s / sqrt(Sxx), se(intercept) =
        // s sqrt(1/n + xbar^2 / Sxx), t_{0.975, 3} = 3.182446305284263.
        let x = vec![0.0, 1.0, 2.0, 3.0, 4.0];
        let y = vec![1.1, 2.9, 5.2, 6.8, 9.1];
        let sol = solve(&Line { x: x.clone(), y: y.clone() }, DVector::from_vec(vec![0.0, 0.0])).unwrap();
        let n = 5.0;
        let xbar = 2.0;
        let ybar = y.iter().sum::<f64>() / n;
        let sxx: f64 = x.iter().map(|v| (v - xbar).powi(2)).sum();
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - xbar) * (b - ybar)).sum();
        let slope = sxy / sxx;
        let icpt = ybar - slope * xbar;
        assert_relative_eq!(sol.params[1], slope, max_relative = 1e-9);
        assert_relative_eq!(sol.params[0], icpt, max_relative = 1e-9);
        let rss: f64 = x.iter().zip(&y).map(|(a, b)| (b - icpt - slope * a).powi(2)).sum();
        let s = (rss / 3.0).sqrt();
        let t = 3.182_446_305_284_263;
        let ci = ci95(&sol).unwrap();
        assert_relative_eq!(ci[1], t * s / sxx.sqrt(), max_relative = 1e-6);
        assert_relative_eq!(ci[0], t * s * (1.0 / n + xbar * xbar / sxx).sqrt(), max_relative = 1e-6);
    }

    #[test]
    fn exact_system_has_no_interval() {
        let sol = solve(
            &Line { x: vec![0.0, 1.0], y: vec![1.0, 3.0] },
            DVector::from_vec(vec![0.0, 0.0]),
        )
        .unwrap();
        assert!(ci95(&sol).is_err());
    }

    #[test]
    fn numeric_jacobian_of_line() {
        let line = Line { x: vec![1.0, 2.0, 5.0], y: vec![0.0; 3] };
        let p = DVector::from_vec(vec![0.3, -2.0]);
        let j = numeric_jacobian(|q| line.residuals(q), &p);
        assert!((j - line.jacobian(&p)).amax() < 1e-8);
    }
}
