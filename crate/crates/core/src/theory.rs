//! Numerical checks of how a lognormal Poisson mixture's right tail compares
//! with the Poisson tail of the same mean: the heavier-tail property, the
//! second-order expansion of the tail difference in the small-variance
//! limit, and the sign condition on the correction term.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;

use crate::error::{Error, Result};
use crate::matern::CovFactor;
use crate::quadrature;
use crate::seed;
use crate::stats;

/// Poisson probability mass e^{-λ} λ^j / j!.
pub fn poisson_pmf(j: u64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return if j == 0 { 1.0 } else { 0.0 };
    }
    (j as f64 * lambda.ln() - lambda - ln_factorial(j)).exp()
}

/// P(Y ≥ k) for Y ~ Poisson(λ).
pub fn poisson_tail(k: u64, lambda: f64) -> f64 {
    assert!(lambda >= 0.0);
    if k == 0 {
        return 1.0;
    }
    if lambda == 0.0 {
        return 0.0;
    }
    if (k as f64) <= lambda {
        // 1 - P(Y < k); the summed terms increase towards the mode
        let mut p = (-lambda).exp();
        let mut s = 0.0;
        if p > 0.0 {
            for j in 0..k {
                s += p;
                p *= lambda / (j + 1) as f64;
            }
        } else {
            s = (0..k).map(|j| poisson_pmf(j, lambda)).sum();
        }
        (1.0 - s).clamp(0.0, 1.0)
    } else {
        let mut p = poisson_pmf(k, lambda);
        let mut s = 0.0;
        let mut j = k;
        while p > 0.0 {
            s += p;
            j += 1;
            p *= lambda / j as f64;
            if p < s * 1e-18 {
                break;
            }
        }
        s.min(1.0)
    }
}

/// P_{k-2} - P_{k-1} at λ, written as P_{k-2}(1 - λ/(k-1)) so that the
/// sign is exact.
fn pmf_second_difference(k: u64, lambda: f64) -> f64 {
    assert!(k >= 2);
    poisson_pmf(k - 2, lambda) * (1.0 - lambda / (k - 1) as f64)
}

/// Second-order correction (P_{k-2} - P_{k-1}) e^{2β} V_n / (2n), with the
/// Poisson probabilities evaluated at `lambda_bar`.
pub fn prop2_correction(k: u64, lambda_bar: f64, beta: f64, v_n: f64, n: f64) -> f64 {
    pmf_second_difference(k, lambda_bar) * (2.0 * beta).exp() * v_n / (2.0 * n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TailMethod {
    MonteCarlo { n_samples: usize, seed: u64 },
    /// Gauss–Hermite over a single lognormal aggregate.
    Quadrature { nodes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub value: f64,
    pub se: f64,
}

/// A Poisson count aggregated over regions with rate e^β Σ N_i e^{Z_i},
/// Z ~ N(0, Σ).
#[derive(Debug, Clone)]
pub struct MixtureSetup {
    pub beta: f64,
    pub populations: Vec<f64>,
    pub cov: DMatrix<f64>,
}

impl MixtureSetup {
    pub fn new(beta: f64, populations: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let m = populations.len();
        if m == 0 || cov.nrows() != m || cov.ncols() != m {
            return Err(Error::InvalidInput("covariance must be m x m for m populations".into()));
        }
        Ok(MixtureSetup { beta, populations, cov })
    }

    pub fn single(beta: f64, population: f64, variance: f64) -> Self {
        MixtureSetup {
            beta,
            populations: vec![population],
            cov: DMatrix::from_element(1, 1, variance),
        }
    }

    /// Same setup with Var(Z) divided by `n`.
    pub fn scaled(&self, n: f64) -> Self {
        MixtureSetup {
            beta: self.beta,
            populations: self.populations.clone(),
            cov: &self.cov / n,
        }
    }

    fn is_degenerate(&self) -> bool {
        self.cov.iter().all(|&v| v == 0.0)
    }

    /// λ̄ = E[λ_A] = e^β Σ N_i e^{Σ_ii / 2}.
    pub fn mean_rate(&self) -> f64 {
        self.beta.exp()
            * self
                .populations
                .iter()
                .enumerate()
                .map(|(i, n)| n * (0.5 * self.cov[(i, i)]).exp())
                .sum::<f64>()
    }

    /// Var(λ_A), exactly.
    pub fn rate_variance(&self) -> f64 {
        let m = self.populations.len();
        let mut s = 0.0;
        for i in 0..m {
            for j in 0..m {
                let (ci, cj) = (self.cov[(i, i)], self.cov[(j, j)]);
                s += self.populations[i]
                    * self.populations[j]
                    * (0.5 * (ci + cj)).exp()
                    * self.cov[(i, j)].exp_m1();
            }
        }
        (2.0 * self.beta).exp() * s
    }

    /// Var(Σ N_i Z_i) = Nᵀ Σ N.
    pub fn weighted_field_variance(&self) -> f64 {
        let n = nalgebra::DVector::from_column_slice(&self.populations);
        (n.transpose() * &self.cov * n)[(0, 0)]
    }

    fn factor(&self) -> Result<CovFactor> {
        let scale = (0..self.cov.nrows()).map(|i| self.cov[(i, i)]).fold(0.0, f64::max);
        CovFactor::new(&self.cov, scale.max(f64::MIN_POSITIVE))
    }
}

fn mc_rates(setup: &MixtureSetup, n_samples: usize, seed: u64) -> Result<Vec<f64>> {
    let f = setup.factor()?;
    let eb = setup.beta.exp();
    const BATCH: usize = 4096;
    let batches = n_samples.div_ceil(BATCH);
    let out: Vec<Vec<f64>> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = seed::rng_for(seed, &[b as u64]);
            let len = BATCH.min(n_samples - b * BATCH);
            (0..len)
                .map(|_| {
                    let z = f.sample(&mut rng);
                    eb * setup.populations.iter().zip(&z).map(|(n, z)| n * z.exp()).sum::<f64>()
                })
                .collect()
        })
        .collect();
    Ok(out.into_iter().flatten().collect())
}

/// P(Y_A ≥ k) under the lognormal mixture.
pub fn mixture_tail(k: u64, setup: &MixtureSetup, method: TailMethod) -> Result<TailEstimate> {
    if setup.is_degenerate() {
        return Ok(TailEstimate {
            value: poisson_tail(k, setup.mean_rate()),
            se: 0.0,
        });
    }
    match method {
        TailMethod::Quadrature { nodes } => {
            if setup.populations.len() != 1 {
                return Err(Error::InvalidInput(
                    "quadrature applies only to a single lognormal aggregate".into(),
                ));
            }
            if nodes < 64 {
                return Err(Error::InvalidInput("quadrature needs at least 64 nodes".into()));
            }
            let base = setup.beta.exp() * setup.populations[0];
            let sd = setup.cov[(0, 0)].sqrt();
            let value = quadrature::normal_expectation(nodes, 0.0, sd, |z| poisson_tail(k, base * z.exp()));
            Ok(TailEstimate { value, se: 0.0 })
        }
        TailMethod::MonteCarlo { n_samples, seed } => {
            let vals: Vec<f64> = mc_rates(setup, n_samples, seed)?
                .into_iter()
                .map(|l| poisson_tail(k, l))
                .collect();
            Ok(TailEstimate {
                value: stats::mean(&vals),
                se: stats::sd(&vals) / (vals.len() as f64).sqrt(),
            })
        }
    }
}

/// Mixture and mean-matched Poisson tails side by side.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailComparison {
    pub k: u64,
    pub lambda_bar: f64,
    pub beta: f64,
    pub n: f64,
    pub v_n: f64,
    pub p1_tail: f64,
    pub p2_tail: f64,
    pub p2_se: f64,
    pub correction: f64,
    pub remainder: f64,
}

/// Compare tails for `base` with its covariance scaled by 1/n.
///
/// With the quadrature method the mixture tail is integrated directly. The
/// Monte Carlo method estimates only the part of the tail difference beyond
/// second order, using the exactly known first two moments of λ_A as
/// control variates; reusing the same seed across `n` gives common random
/// numbers.
pub fn compare_tails(k: u64, base: &MixtureSetup, n: f64, method: TailMethod) -> Result<TailComparison> {
    if k < 2 {
        return Err(Error::InvalidInput("the correction term needs k >= 2".into()));
    }
    let setup = base.scaled(n);
    let lambda_bar = setup.mean_rate();
    let v_n = n * setup.weighted_field_variance();
    let p1 = poisson_tail(k, lambda_bar);
    let correction = prop2_correction(k, lambda_bar, setup.beta, v_n, n);
    let (p2, se) = if setup.is_degenerate() {
        (p1, 0.0)
    } else {
        match method {
            TailMethod::Quadrature { .. } => {
                let t = mixture_tail(k, &setup, method)?;
                (t.value, t.se)
            }
            TailMethod::MonteCarlo { n_samples, seed } => {
                let var = setup.rate_variance();
                let d1 = poisson_pmf(k - 1, lambda_bar);
                let d2 = pmf_second_difference(k, lambda_bar);
                let h: Vec<f64> = mc_rates(&setup, n_samples, seed)?
                    .into_iter()
                    .map(|l| {
                        let dl = l - lambda_bar;
                        poisson_tail(k, l) - p1 - d1 * dl - 0.5 * d2 * (dl * dl - var)
                    })
                    .collect();
                let p2 = p1 + 0.5 * d2 * var + stats::mean(&h);
                (p2, stats::sd(&h) / (h.len() as f64).sqrt())
            }
        }
    };
    Ok(TailComparison {
        k,
        lambda_bar,
        beta: setup.beta,
        n,
        v_n,
        p1_tail: p1,
        p2_tail: p2,
        p2_se: se,
        correction,
        remainder: p2 - p1 - correction,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Prop2Report {
    pub rows: Vec<TailComparison>,
    /// least-squares slope of log|remainder| on log n; `None` when every
    /// remainder is zero
    pub slope: Option<f64>,
}

/// Evaluate the remainder of the second-order tail expansion over a grid of
/// scaling indices.
pub fn verify_prop2(k: u64, base: &MixtureSetup, n_grid: &[f64], method: TailMethod) -> Result<Prop2Report> {
    let mut rows = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let row = compare_tails(k, base, n, method)?;
        if row.p2_se > 0.05 * row.correction.abs() {
            return Err(Error::InsufficientSamples {
                se: row.p2_se,
                correction: row.correction,
            });
        }
        rows.push(row);
    }
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.remainder != 0.0)
        .map(|r| (r.n.ln(), r.remainder.abs().ln()))
        .collect();
    let slope = (pts.len() >= 2).then(|| {
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    });
    Ok(Prop2Report { rows, slope })
}

/// Smallest k in `[λ̄, λ̄ + 10√λ̄]` beyond which the mixture tail exceeds the
/// Poisson tail at every searched k, or `None` if there is none.
pub fn heavier_tail_threshold(setup: &MixtureSetup, method: TailMethod) -> Result<Option<u64>> {
    let lb = setup.mean_rate();
    let lo = lb.floor() as u64;
    let hi = (lb + 10.0 * lb.sqrt()).ceil() as u64;
    let mut threshold = None;
    for k in (lo.max(1)..=hi).rev() {
        let p2 = mixture_tail(k, setup, method)?;
        let p1 = poisson_tail(k, lb);
        if p2.value - 3.0 * p2.se > p1 {
            threshold = Some(k);
        } else {
            break;
        }
    }
    Ok(threshold)
}

/// One named pass/fail line of the theory report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TheoryReport {
    pub checks: Vec<CheckOutcome>,
}

impl TheoryReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_text(&self) -> String {
        self.checks
            .iter()
            .map(|c| format!("[{}] {}: {}\n", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail))
            .collect()
    }
}

/// Run the standard battery of tail checks.
pub fn run_checks(seed: u64) -> Result<TheoryReport> {
    let mut checks = Vec::new();

    // sign of the correction across a grid
    let mut mismatches = 0;
    for &lb in &[1.0, 2.0, 5.0, 10.0, 20.0] {
        for k in 2..=40u64 {
            let c = prop2_correction(k, lb, 0.0, 1.0, 1.0);
            let want = (k as f64 - lb - 1.0).signum();
            let ok = if k as f64 == lb + 1.0 { c.abs() <= 1e-14 } else { c.signum() == want };
            if !ok {
                mismatches += 1;
            }
        }
    }
    checks.push(CheckOutcome {
        name: "correction sign equals sign(k - lambda - 1)".into(),
        passed: mismatches == 0,
        detail: format!("{mismatches} mismatches over 195 grid points"),
    });

    // second-order expansion, single region by quadrature
    let single = MixtureSetup::single(0.0, 5.0, 1.0);
    let rep = verify_prop2(9, &single, &[1e2, 1e3, 1e4], TailMethod::Quadrature { nodes: 96 })?;
    let slope = rep.slope.unwrap_or(f64::NAN);
    let last = rep.rows.last().unwrap();
    let ratio = (last.remainder / last.correction).abs();
    checks.push(CheckOutcome {
        name: "second-order expansion remainder (quadrature)".into(),
        passed: slope <= -1.25 && ratio <= 0.01,
        detail: format!("slope {slope:.3}, remainder/correction at n=1e4 {ratio:.2e}"),
    });

    // correlated three-region setup by Monte Carlo with common random numbers
    let cov = DMatrix::from_row_slice(3, 3, &[1.0, 0.6, 0.3, 0.6, 1.0, 0.6, 0.3, 0.6, 1.0]);
    let three = MixtureSetup::new(-1.0, vec![4.0, 6.0, 5.0], cov)?;
    let method = TailMethod::MonteCarlo { n_samples: 400_000, seed };
    let rep = verify_prop2(9, &three, &[1e1, 1e2, 1e3], method)?;
    let rem: Vec<f64> = rep.rows.iter().map(|r| r.remainder.abs()).collect();
    let shrinking = rem.windows(2).zip(&rep.rows[1..]).all(|(w, r)| w[1] < w[0] + 3.0 * r.p2_se);
    checks.push(CheckOutcome {
        name: "remainder shrinks with n (correlated, Monte Carlo)".into(),
        passed: shrinking,
        detail: format!("|remainder| = {:?}", rem.iter().map(|r| format!("{r:.3e}")).collect::<Vec<_>>()),
    });

    // heavier right tail
    let moderate = MixtureSetup::single(0.0, 10.0, 0.25);
    let k_star = heavier_tail_threshold(&moderate, TailMethod::Quadrature { nodes: 96 })?;
    checks.push(CheckOutcome {
        name: "mixture tail eventually exceeds Poisson tail".into(),
        passed: k_star.is_some(),
        detail: format!("threshold k* = {k_star:?} (lambda_bar = {:.3})", moderate.mean_rate()),
    });

    // degenerate mixture
    let zero = MixtureSetup::new(0.3, vec![2.0, 3.0], DMatrix::zeros(2, 2))?;
    let t = mixture_tail(7, &zero, method)?;
    let exact = poisson_tail(7, 0.3f64.exp() * 5.0);
    checks.push(CheckOutcome {
        name: "zero covariance reduces to Poisson".into(),
        passed: (t.value - exact).abs() <= 1e-12,
        detail: format!("difference {:.1e}", (t.value - exact).abs()),
    });

    Ok(TheoryReport { checks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn direct_tail(k: u64, lambda: f64, terms: u64) -> f64 {
        // independent oracle: straight summation of factorial-form terms
        let mut s = 0.0;
        for j in k..k + terms {
            let mut t = (-lambda).exp();
            for i in 1..=j {
                t *= lambda / i as f64;
            }
            s += t;
        }
        s
    }

    #[test]
    fn tail_values() {
        assert_eq!(poisson_tail(0, 3.0), 1.0);
        assert_abs_diff_eq!(poisson_tail(2, 1.0), 1.0 - 2.0 * (-1.0f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(poisson_tail(30, 5.0), direct_tail(30, 5.0, 200), epsilon = 1e-12);
        for &(k, l) in &[(3u64, 7.5), (12, 7.5), (1, 0.2), (40, 30.0)] {
            assert_abs_diff_eq!(poisson_tail(k, l), 1.0 - (0..k).map(|j| direct_tail(j, l, 1)).sum::<f64>(), epsilon = 1e-12);
        }
    }

    #[test]
    fn tail_monotonicity() {
        for k in 1..30 {
            assert!(poisson_tail(k + 1, 6.0) < poisson_tail(k, 6.0));
            assert!(poisson_tail(k, 6.5) > poisson_tail(k, 6.0));
        }
    }

    #[test]
    fn correction_values() {
        // λ = 5, k = 9: (P7 - P8) / 200
        let want = (direct_tail(7, 5.0, 1) - direct_tail(8, 5.0, 1)) / 200.0;
        assert_abs_diff_eq!(prop2_correction(9, 5.0, 0.0, 1.0, 100.0), want, epsilon = 1e-15);
        assert!((want - 1.958e-4).abs() < 1e-6);
        assert_eq!(prop2_correction(6, 5.0, 0.0, 1.0, 10.0), 0.0);
        assert!(prop2_correction(5, 5.0, 0.0, 1.0, 10.0) < 0.0);
    }

    #[test]
    fn degenerate_mixture_is_poisson() {
        let s = MixtureSetup::new(0.1, vec![1.0, 2.0], DMatrix::zeros(2, 2)).unwrap();
        let t = mixture_tail(4, &s, TailMethod::MonteCarlo { n_samples: 10, seed: 1 }).unwrap();
        assert_eq!(t.value, poisson_tail(4, 0.1f64.exp() * 3.0));
    }

    #[test]
    fn quadrature_matches_monte_carlo() {
        let s = MixtureSetup::single(-0.5, 8.0, 0.2);
        let q = mixture_tail(8, &s, TailMethod::Quadrature { nodes: 64 }).unwrap();
        let mc = mixture_tail(8, &s, TailMethod::MonteCarlo { n_samples: 1_000_000, seed: 4 }).unwrap();
        assert!((q.value - mc.value).abs() < 3.0 * mc.se, "{q:?} {mc:?}");
    }

    #[test]
    fn heavier_tail_for_large_k() {
        let s = MixtureSetup::single(0.0, 10.0, 0.25);
        let lb = s.mean_rate();
        let k = (lb + 5.0 * lb.sqrt()).ceil() as u64 + 1;
        let p2 = mixture_tail(k, &s, TailMethod::Quadrature { nodes: 64 }).unwrap().value;
        assert!(p2 > poisson_tail(k, lb));
    }

    #[test]
    fn zero_variance_remainder_is_zero() {
        let s = MixtureSetup::single(0.0, 5.0, 0.0);
        let r = verify_prop2(9, &s, &[1e2, 1e3], TailMethod::Quadrature { nodes: 64 }).unwrap();
        assert!(r.rows.iter().all(|row| row.remainder == 0.0));
        assert!(r.slope.is_none());
    }

    #[test]
    fn single_region_slope() {
        // remainders from 40-digit adaptive quadrature of the lognormal mixture
        const ORACLE: [(f64, f64); 3] = [
            (1e2, -3.6634042218373984e-5),
            (1e3, -2.9409737065590716e-7),
            (1e4, -2.8644635437216082e-9),
        ];
        let s = MixtureSetup::single(0.0, 5.0, 1.0);
        let r = verify_prop2(9, &s, &[1e2, 1e3, 1e4], TailMethod::Quadrature { nodes: 96 }).unwrap();
        for (row, (n, rem)) in r.rows.iter().zip(ORACLE) {
            assert_eq!(row.n, n);
            assert!(((row.remainder - rem) / rem).abs() < 1e-4, "n={n}: {} vs {rem}", row.remainder);
        }
        let slope = r.slope.unwrap();
        assert!(slope <= -1.25);
        assert!((slope + 2.053420771129991).abs() < 1e-3, "slope {slope}");
    }

    #[test]
    fn mc_needs_enough_samples() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let s = MixtureSetup::new(0.0, vec![3.0, 3.0], cov).unwrap();
        let r = verify_prop2(12, &s, &[1.0], TailMethod::MonteCarlo { n_samples: 8, seed: 1 });
        assert!(matches!(r, Err(Error::InsufficientSamples { .. })));
    }
}
