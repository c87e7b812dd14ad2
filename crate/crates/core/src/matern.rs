//! Matérn covariance, covariance assembly with a jitter ladder, and Gaussian
//! random field simulation through a Cholesky factor.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::bessel::bessel_k_scaled;
use crate::error::{Error, Result};
use crate::region::DistanceMatrix;
use crate::seed;

/// Diagonal jitter levels tried in order, relative to the marginal variance.
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-10, 1e-8, 1e-6];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternParams {
    /// standard deviation of the field (log-rate scale)
    pub sigma: f64,
    /// range, in map units
    pub rho: f64,
    /// smoothness
    pub nu: f64,
}

impl MaternParams {
    pub fn new(sigma: f64, rho: f64, nu: f64) -> Result<Self> {
        let p = MaternParams { sigma, rho, nu };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("sigma", self.sigma), ("rho", self.rho), ("nu", self.nu)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "Matérn {name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Which parameterisation of the Matérn function to evaluate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaternForm {
    /// σ² / (2^{ν-1} Γ(ν)) (d/ρ)^ν K_ν(d/ρ); variance σ² at d = 0.
    #[default]
    Standard,
    /// σ² / (2^{ν-1} Γ(ν)) (√ν d/ρ)^ν K_ν(d/ρ); equals `Standard` only at ν = 1,
    /// with variance σ² ν^{ν/2} otherwise.
    ScaledPower,
}

/// Unit-variance Matérn correlation at distance `d`.
pub fn matern_corr(d: f64, rho: f64, nu: f64) -> f64 {
    debug_assert!(d >= 0.0);
    if d == 0.0 {
        return 1.0;
    }
    let x = d / rho;
    let ks = bessel_k_scaled(nu, x);
    let log_c = (1.0 - nu) * std::f64::consts::LN_2 - ln_gamma(nu) + nu * x.ln() - x + ks.ln();
    log_c.exp().min(1.0)
}

/// Matérn covariance in the standard form.
pub fn matern_cov(d: f64, p: &MaternParams) -> f64 {
    matern_cov_with(d, p, MaternForm::Standard)
}

pub fn matern_cov_with(d: f64, p: &MaternParams, form: MaternForm) -> f64 {
    let c = p.sigma * p.sigma * matern_corr(d, p.rho, p.nu);
    match form {
        MaternForm::Standard => c,
        MaternForm::ScaledPower => c * p.nu.powf(0.5 * p.nu),
    }
}

/// Correlation matrix R(ρ) over a distance matrix.
pub fn build_corr(dm: &DistanceMatrix, rho: f64, nu: f64) -> DMatrix<f64> {
    let m = dm.len();
    let mut r = DMatrix::<f64>::identity(m, m);
    for i in 0..m {
        for j in (i + 1)..m {
            let v = matern_corr(dm.get(i, j), rho, nu);
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    r
}

/// Covariance matrix Σ over a distance matrix.
pub fn build_cov(dm: &DistanceMatrix, p: &MaternParams) -> DMatrix<f64> {
    build_cov_with(dm, p, MaternForm::Standard)
}

pub fn build_cov_with(dm: &DistanceMatrix, p: &MaternParams, form: MaternForm) -> DMatrix<f64> {
    let scale = matern_cov_with(0.0, p, form);
    build_corr(dm, p.rho, p.nu) * scale
}

/// Lower Cholesky factor; on failure returns the 1-based order of the
/// first leading minor that is not positive definite.
pub fn cholesky_lower(a: &DMatrix<f64>) -> std::result::Result<DMatrix<f64>, usize> {
    let n = a.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(j + 1);
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Σ = LLᵀ, possibly after adding `jitter` to the diagonal.
#[derive(Debug, Clone)]
pub struct CovFactor {
    l: DMatrix<f64>,
    jitter: f64,
}

impl CovFactor {
    /// Factor a symmetric matrix, climbing the jitter ladder (scaled by
    /// `scale`, normally the marginal variance) until it succeeds.
    pub fn new(sigma: &DMatrix<f64>, scale: f64) -> Result<Self> {
        let mut last = 0;
        for &j in &JITTER_LADDER {
            let jitter = j * scale;
            let mut a = sigma.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += jitter;
            }
            match cholesky_lower(&a) {
                Ok(l) => return Ok(CovFactor { l, jitter }),
                Err(idx) => last = idx,
            }
        }
        Err(Error::NotPositiveDefinite {
            index: last,
            jitter: JITTER_LADDER[JITTER_LADDER.len() - 1] * scale,
        })
    }

    pub fn from_params(dm: &DistanceMatrix, p: &MaternParams) -> Result<Self> {
        Self::new(&build_cov(dm, p), p.sigma * p.sigma)
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// Diagonal of LLᵀ, i.e. the marginal variances including jitter.
    pub fn variances(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|i| (0..=i).map(|k| self.l[(i, k)].powi(2)).sum())
            .collect()
    }

    /// log |LLᵀ|
    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// L⁻¹ z by forward substitution.
    pub fn whiten(&self, z: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut s = z[i];
            for k in 0..i {
                s -= self.l[(i, k)] * out[k];
            }
            out[i] = s / self.l[(i, i)];
        }
        out
    }

    /// (LLᵀ)⁻¹ as a dense matrix.
    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut linv = DMatrix::<f64>::zeros(n, n);
        for c in 0..n {
            let mut e = vec![0.0; n];
            e[c] = 1.0;
            let col = self.whiten(&e);
            for r in 0..n {
                linv[(r, c)] = col[r];
            }
        }
        linv.transpose() * linv
    }

    /// Maximum entrywise error of LLᵀ against `sigma`.
    pub fn reconstruction_error(&self, sigma: &DMatrix<f64>) -> f64 {
        (&self.l * self.l.transpose() - sigma).amax()
    }

    /// L ε for a supplied vector of standard normals.
    pub fn apply(&self, eps: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|i| (0..=i).map(|k| self.l[(i, k)] * eps[k]).sum())
            .collect()
    }

    pub fn sample<R: rand::Rng>(&self, rng: &mut R) -> Vec<f64> {
        let eps: Vec<f64> = (0..self.dim()).map(|_| StandardNormal.sample(rng)).collect();
        self.apply(&eps)
    }
}

/// Draw one realisation Z = Lε of the field.
pub fn simulate_grf(f: &CovFactor, seed: u64) -> Vec<f64> {
    f.sample(&mut seed::rng(seed))
}

/// Dense covariance as a CSV string, for debugging dumps.
pub fn cov_to_csv(sigma: &DMatrix<f64>) -> String {
    let mut s = String::new();
    for i in 0..sigma.nrows() {
        let row: Vec<String> = (0..sigma.ncols()).map(|j| format!("{}", sigma[(i, j)])).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn to_dvector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn p(sigma: f64, rho: f64, nu: f64) -> MaternParams {
        MaternParams::new(sigma, rho, nu).unwrap()
    }

    #[test]
    fn zero_lag_is_variance() {
        assert_eq!(matern_cov(0.0, &p(1.7, 3.0, 0.8)), 1.7 * 1.7);
    }

    #[test]
    fn exponential_and_bessel_values() {
        assert_abs_diff_eq!(matern_cov(2.0, &p(1.0, 2.0, 0.5)), (-1.0f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(matern_cov(1.0, &p(1.0, 1.0, 1.0)), 0.601_907_230_197_234_6, epsilon = 1e-12);
    }

    #[test]
    fn closed_forms_for_half_integers() {
        for &d in &[0.01, 0.5, 1.0, 3.0, 10.0, 30.0] {
            let rho = 2.5;
            let x: f64 = d / rho;
            let s2 = 0.49;
            let e = (-x).exp() * s2;
            assert!((matern_cov(d, &p(0.7, rho, 0.5)) - e).abs() <= 1e-10 * s2);
            assert!((matern_cov(d, &p(0.7, rho, 1.5)) - (1.0 + x) * e).abs() <= 1e-10 * s2);
        }
    }

    #[test]
    fn scaled_power_form_agrees_at_nu_one() {
        let q = p(0.3, 5.0, 1.0);
        for &d in &[0.0, 1.0, 7.0] {
            assert_eq!(matern_cov_with(d, &q, MaternForm::ScaledPower), matern_cov(d, &q));
        }
        let q = p(1.0, 5.0, 0.5);
        assert!((matern_cov_with(0.0, &q, MaternForm::ScaledPower) - 0.5f64.powf(0.25)).abs() < 1e-15);
    }

    #[test]
    fn bounded_and_decreasing() {
        let q = p(0.5, 20.0, 1.0);
        let mut prev = matern_cov(0.0, &q);
        for k in 1..400 {
            let c = matern_cov(k as f64 * 0.5, &q);
            assert!(c > 0.0 && c < prev, "d = {}", k as f64 * 0.5);
            prev = c;
        }
        assert!((matern_cov(1e-9, &q) - 0.25).abs() < 1e-8);
    }

    #[test]
    fn single_site_factor() {
        let dm = DistanceMatrix::from_points(&[(1.0, 1.0)]);
        let f = CovFactor::from_params(&dm, &p(0.4, 1.0, 1.0)).unwrap();
        assert_abs_diff_eq!(f.lower()[(0, 0)], 0.4, epsilon = 1e-15);
        assert_eq!(f.jitter(), 0.0);
    }

    #[test]
    fn coincident_sites_engage_jitter() {
        let dm = DistanceMatrix::from_points(&[(1.0, 1.0), (1.0, 1.0), (4.0, 0.0)]);
        let f = CovFactor::from_params(&dm, &p(1.0, 2.0, 1.0)).unwrap();
        assert!(f.jitter() > 0.0);
    }

    #[test]
    fn non_psd_reports_minor() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        match CovFactor::new(&a, 1.0) {
            Err(Error::NotPositiveDefinite { index, .. }) => assert_eq!(index, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inverse_and_whiten() {
        let dm = DistanceMatrix::from_points(&[(0.0, 0.0), (1.0, 0.0), (0.0, 2.0)]);
        let sig = build_cov(&dm, &p(1.2, 1.5, 1.0));
        let f = CovFactor::new(&sig, 1.44).unwrap();
        let id = &sig * f.inverse();
        assert!((id - DMatrix::<f64>::identity(3, 3)).amax() < 1e-12);
        let z = [0.3, -1.0, 2.0];
        let w = f.whiten(&z);
        let back = f.apply(&w);
        for (a, b) in back.iter().zip(&z) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let dm = DistanceMatrix::from_points(&[(0.0, 0.0), (1.0, 0.0), (0.0, 2.0)]);
        let f = CovFactor::from_params(&dm, &p(1.0, 1.0, 1.0)).unwrap();
        assert_eq!(simulate_grf(&f, 11), simulate_grf(&f, 11));
        assert_ne!(simulate_grf(&f, 11), simulate_grf(&f, 12));
    }
}
