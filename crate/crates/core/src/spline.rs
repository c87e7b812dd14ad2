//! Natural cubic spline basis and Poisson regression by IRLS.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Truncated-power natural cubic spline basis with `df` non-constant
/// columns and `df + 1` equally spaced knots spanning `[lo, hi]`. The
/// constant column is not included.
#[derive(Debug, Clone)]
pub struct NaturalSplineBasis {
    knots: Vec<f64>,
    lo: f64,
    scale: f64,
}

impl NaturalSplineBasis {
    pub fn new(lo: f64, hi: f64, df: usize) -> Result<Self> {
        if df < 1 {
            return Err(Error::InvalidInput("spline df must be at least 1".into()));
        }
        if !(hi > lo) {
            return Err(Error::InvalidInput("spline range must have positive width".into()));
        }
        let k = df + 1;
        let knots = (0..k).map(|i| i as f64 / (k - 1) as f64).collect();
        Ok(NaturalSplineBasis { knots, lo, scale: hi - lo })
    }

    pub fn df(&self) -> usize {
        self.knots.len() - 1
    }

    fn d(&self, k: usize, u: f64) -> f64 {
        let last = *self.knots.last().unwrap();
        let c = |t: f64| (u - t).max(0.0).powi(3);
        (c(self.knots[k]) - c(last)) / (last - self.knots[k])
    }

    /// Basis row at `x`, without the constant column.
    pub fn row(&self, x: f64) -> Vec<f64> {
        let u = (x - self.lo) / self.scale;
        let k = self.knots.len();
        let mut r = Vec::with_capacity(k - 1);
        r.push(u);
        if k > 2 {
            let dk1 = self.d(k - 2, u);
            for j in 0..k - 2 {
                r.push(self.d(j, u) - dk1);
            }
        }
        r
    }

    /// Design matrix with a leading constant column.
    pub fn design(&self, xs: &[f64]) -> DMatrix<f64> {
        let p = self.df() + 1;
        let mut m = DMatrix::zeros(xs.len(), p);
        for (i, &x) in xs.iter().enumerate() {
            m[(i, 0)] = 1.0;
            for (j, v) in self.row(x).into_iter().enumerate() {
                m[(i, j + 1)] = v;
            }
        }
        m
    }
}

#[derive(Debug, Clone)]
pub struct PoissonFit {
    pub coef: DVector<f64>,
    pub fitted: Vec<f64>,
    pub deviance: f64,
    pub iterations: usize,
}

fn poisson_deviance(y: &[f64], mu: &[f64]) -> f64 {
    2.0 * y
        .iter()
        .zip(mu)
        .map(|(&y, &m)| if y > 0.0 { y * (y / m).ln() - (y - m) } else { m })
        .sum::<f64>()
}

/// Poisson log-link regression by iteratively reweighted least squares.
/// Stops when the relative deviance change is at most `tol`.
pub fn poisson_irls(x: &DMatrix<f64>, y: &[f64], tol: f64, max_iter: usize) -> Result<PoissonFit> {
    let n = y.len();
    assert_eq!(x.nrows(), n);
    let mut mu: Vec<f64> = y.iter().map(|&v| v + 0.1).collect();
    let mut eta: Vec<f64> = mu.iter().map(|m| m.ln()).collect();
    let mut dev = poisson_deviance(y, &mu);
    let mut last_change = f64::INFINITY;
    for it in 1..=max_iter {
        let w = DVector::from_iterator(n, mu.iter().copied());
        let z = DVector::from_iterator(n, (0..n).map(|i| eta[i] + (y[i] - mu[i]) / mu[i]));
        let xtw = {
            let mut t = x.transpose();
            for (j, mut col) in t.column_iter_mut().enumerate() {
                col *= w[j];
            }
            t
        };
        let lhs = &xtw * x;
        let rhs = &xtw * z;
        let coef = lhs
            .clone()
            .cholesky()
            .map(|c| c.solve(&rhs))
            .or_else(|| lhs.lu().solve(&rhs))
            .ok_or_else(|| Error::Numerical("singular IRLS normal equations".into()))?;
        let e = x * &coef;
        eta = e.iter().copied().collect();
        mu = eta.iter().map(|v| v.exp()).collect();
        if mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::Numerical("IRLS fitted values overflowed".into()));
        }
        let new_dev = poisson_deviance(y, &mu);
        last_change = (new_dev - dev).abs() / (new_dev.abs() + 0.1);
        dev = new_dev;
        if last_change <= tol {
            return Ok(PoissonFit {
                coef,
                fitted: mu,
                deviance: dev,
                iterations: it,
            });
        }
    }
    Err(Error::IrlsNonConvergence {
        iterations: max_iter,
        last_change,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_is_linear_beyond_boundary_knots() {
        let b = NaturalSplineBasis::new(0.0, 1.0, 4).unwrap();
        for j in 0..4 {
            let f = |x: f64| b.row(x)[j];
            // second difference vanishes outside [0, 1]
            let s = f(1.2) - 2.0 * f(1.4) + f(1.6);
            assert!(s.abs() < 1e-10, "col {j}: {s}");
            let s = f(-0.6) - 2.0 * f(-0.4) + f(-0.2);
            assert!(s.abs() < 1e-10);
        }
    }

    #[test]
    fn irls_recovers_loglinear_truth() {
        let xs: Vec<f64> = (0..40).map(|i| i as f64 / 39.0).collect();
        let b = NaturalSplineBasis::new(0.0, 1.0, 3).unwrap();
        let x = b.design(&xs);
        // noiseless mean whose log lies in the span of the basis
        let truth = DVector::from_column_slice(&[2.0, 1.0, -0.8, 0.5]);
        let y: Vec<f64> = (&x * truth).iter().map(|e| e.exp()).collect();
        let fit = poisson_irls(&x, &y, 1e-12, 100).unwrap();
        for (a, b) in fit.fitted.iter().zip(&y) {
            assert!((a - b).abs() / b < 1e-6);
        }
    }

    #[test]
    fn irls_reports_non_convergence() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let b = NaturalSplineBasis::new(0.0, 9.0, 2).unwrap();
        let y: Vec<f64> = (0..10).map(|i| (i * 7 % 5) as f64).collect();
        let r = poisson_irls(&b.design(&xs), &y, 0.0, 1);
        assert!(matches!(r, Err(Error::IrlsNonConvergence { iterations: 1, .. })));
    }
}
