//! Scan with a reference distribution simulated from the fitted spatial
//! model instead of independent Poisson counts.
//!
//! `adjusted_scan` screens clusters classically, fits the mixed model on the
//! regions outside them, simulates the maximised statistic under the fitted
//! model, re-assesses, and repeats until the screened cluster set is stable.
//! `train_test_adjusted_scan` fits once on training periods and assesses
//! each test period against its own simulated reference.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glmm::{self, FitData, FitReport, McmcConfig, ModelIIFit, PosteriorMeans, PriorSpec, MIN_FIT_REGIONS};
use crate::matern::{build_corr, CovFactor};
use crate::output;
use crate::region::{DistanceMatrix, StudyRegion, WindowSet};
use crate::scan::{self, mc_pvalue, Model1Simulator, NullSimulator, ScanContext, ScanResult};
use crate::seed;
use crate::stats::Summary;

const MAX_LOG_RATE: f64 = 700.0;

/// One draw of Y_i ~ Poisson(N_i e^{β + Z_i}) given a field realisation.
pub fn poisson_counts<R: Rng>(rng: &mut R, populations: &[f64], beta: f64, z: &[f64]) -> Result<Vec<u64>> {
    populations
        .iter()
        .zip(z)
        .enumerate()
        .map(|(i, (&n, &zi))| {
            let log_rate = beta + zi + n.ln();
            if !(log_rate < MAX_LOG_RATE) {
                return Err(Error::RateOverflow { region: i, log_rate });
            }
            let lam = log_rate.exp();
            Ok(if lam > 0.0 {
                Poisson::new(lam).map_err(|e| Error::Numerical(e.to_string()))?.sample(rng) as u64
            } else {
                0
            })
        })
        .collect()
}

/// Unconditional counts from the spatial model with a fixed covariance.
#[derive(Debug, Clone)]
pub struct Model2Simulator {
    populations: Vec<f64>,
    beta: f64,
    sigma: f64,
    /// Cholesky factor of the correlation matrix; `None` when σ = 0
    corr: Option<Arc<CovFactor>>,
}

impl Model2Simulator {
    pub fn new(populations: Vec<f64>, beta: f64, sigma: f64, corr: Option<Arc<CovFactor>>) -> Result<Self> {
        if sigma < 0.0 || !sigma.is_finite() {
            return Err(Error::InvalidInput(format!("sigma must be finite and non-negative, got {sigma}")));
        }
        if sigma > 0.0 {
            match &corr {
                Some(f) if f.dim() == populations.len() => {}
                _ => return Err(Error::InvalidInput("correlation factor does not match the regions".into())),
            }
        }
        Ok(Model2Simulator { populations, beta, sigma, corr })
    }

    /// Matérn field with parameters (σ, ρ, ν) over `dm`.
    pub fn matern(populations: Vec<f64>, beta: f64, sigma: f64, rho: f64, nu: f64, dm: &DistanceMatrix) -> Result<Self> {
        let corr = if sigma > 0.0 {
            Some(Arc::new(CovFactor::new(&build_corr(dm, rho, nu), 1.0)?))
        } else {
            None
        };
        Self::new(populations, beta, sigma, corr)
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Var(Z_i), including any Cholesky jitter.
    pub fn variances(&self) -> Vec<f64> {
        match &self.corr {
            Some(f) if self.sigma > 0.0 => f.variances().iter().map(|v| v * self.sigma * self.sigma).collect(),
            _ => vec![0.0; self.populations.len()],
        }
    }

    /// Same field, intercept chosen so that E[Y_G] equals `total`.
    pub fn recentered(mut self, total: u64) -> Result<Self> {
        self.beta = recentered_beta(total, &self.populations, &self.variances())?;
        Ok(self)
    }

    pub fn field<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        match &self.corr {
            Some(f) if self.sigma > 0.0 => f.sample(rng).into_iter().map(|v| v * self.sigma).collect(),
            _ => vec![0.0; self.populations.len()],
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<Vec<u64>> {
        let z = self.field(rng);
        poisson_counts(rng, &self.populations, self.beta, &z)
    }
}

impl NullSimulator for Model2Simulator {
    fn simulate(&self, seed: u64) -> Result<Vec<u64>> {
        self.sample(&mut seed::rng(seed))
    }
}

/// Draw Z = Lε and then independent Poisson counts, deterministically in
/// `seed`.
pub fn simulate_model2_counts(populations: &[f64], beta: f64, sigma: f64, f: &CovFactor, seed: u64) -> Result<Vec<u64>> {
    let mut rng = seed::rng(seed);
    let z: Vec<f64> = f.sample(&mut rng).into_iter().map(|v| v * sigma).collect();
    poisson_counts(&mut rng, populations, beta, &z)
}

/// β with e^β Σ N_i e^{Var(Z_i)/2} = `total`.
pub fn recentered_beta(total: u64, populations: &[f64], variances: &[f64]) -> Result<f64> {
    if total == 0 {
        return Err(Error::ZeroCases("cannot match the rate of a period with no cases".into()));
    }
    let s: f64 = populations.iter().zip(variances).map(|(n, v)| n * (0.5 * v).exp()).sum();
    Ok((total as f64 / s).ln())
}

/// Simulator that draws (β, σ, ρ) from the posterior for every dataset.
pub struct PosteriorPredictiveSimulator {
    populations: Vec<f64>,
    draws: Vec<(f64, f64, usize)>,
    factors: Vec<Option<Arc<CovFactor>>>,
    recenter_total: Option<u64>,
}

impl PosteriorPredictiveSimulator {
    pub fn new(fit: &ModelIIFit, populations: Vec<f64>, dm: &DistanceMatrix, recenter_total: Option<u64>) -> Result<Self> {
        let mut factors: Vec<Option<Arc<CovFactor>>> = vec![None; fit.prior.u + 1];
        let mut draws = Vec::with_capacity(fit.draws.len());
        for d in &fit.draws {
            let r = d.rho as usize;
            if factors[r].is_none() {
                factors[r] = Some(Arc::new(CovFactor::new(&build_corr(dm, d.rho, fit.nu), 1.0)?));
            }
            draws.push((d.beta, d.sigma, r));
        }
        Ok(PosteriorPredictiveSimulator {
            populations,
            draws,
            factors,
            recenter_total,
        })
    }
}

impl NullSimulator for PosteriorPredictiveSimulator {
    fn simulate(&self, seed: u64) -> Result<Vec<u64>> {
        let mut rng = seed::rng(seed);
        let (beta, sigma, r) = self.draws[rng.random_range(0..self.draws.len())];
        let mut sim = Model2Simulator::new(self.populations.clone(), beta, sigma, self.factors[r].clone())?;
        if let Some(t) = self.recenter_total {
            sim = sim.recentered(t)?;
        }
        sim.sample(&mut rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdjustedConfig {
    pub alpha_screen: f64,
    pub alpha: f64,
    pub mc_size: usize,
    pub max_iter: usize,
    pub u: usize,
    pub nu: f64,
    pub mcmc: McmcConfig,
    /// match each reference to the observed case total
    pub recenter_beta: bool,
    /// draw parameters per simulation from the posterior instead of
    /// plugging in posterior means
    pub posterior_predictive: bool,
    pub seed: u64,
}

impl Default for AdjustedConfig {
    fn default() -> Self {
        AdjustedConfig {
            alpha_screen: 0.1,
            alpha: 0.05,
            mc_size: 999,
            max_iter: 5,
            u: 70,
            nu: 1.0,
            mcmc: McmcConfig::default(),
            recenter_beta: true,
            posterior_predictive: false,
            seed: 1,
        }
    }
}

impl AdjustedConfig {
    pub fn prior(&self) -> Result<PriorSpec> {
        PriorSpec::new(self.u)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mc_size < 99 {
            return Err(Error::InvalidInput(format!("Monte Carlo size must be at least 99, got {}", self.mc_size)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidInput("max_iter must be at least 1".into()));
        }
        for a in [self.alpha, self.alpha_screen] {
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::InvalidInput(format!("significance level {a} outside (0, 1)")));
            }
        }
        self.prior()?;
        self.mcmc.validate()
    }
}

/// Reference simulator for one period, built from a fit.
pub fn reference_simulator(
    fit: &ModelIIFit,
    populations: &[f64],
    total: u64,
    dm: &DistanceMatrix,
    cfg: &AdjustedConfig,
) -> Result<Box<dyn NullSimulator>> {
    if cfg.posterior_predictive {
        let t = cfg.recenter_beta.then_some(total);
        return Ok(Box::new(PosteriorPredictiveSimulator::new(fit, populations.to_vec(), dm, t)?));
    }
    let m = fit.means;
    let mut sim = Model2Simulator::matern(populations.to_vec(), m.beta, m.sigma, m.rho, fit.nu, dm)?;
    if cfg.recenter_beta {
        sim = sim.recentered(total)?;
    }
    Ok(Box::new(sim))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdjustedIteration {
    pub excluded: Vec<usize>,
    pub fit: FitReport,
    pub reference: Summary,
    pub scan: ScanResult,
    pub screened: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdjustedScanResult {
    pub classical: ScanResult,
    pub iterations: Vec<AdjustedIteration>,
    pub converged: bool,
    /// final adjusted scan
    pub result: ScanResult,
    /// maximised statistics of the final reference sample
    pub reference: Vec<f64>,
}

impl AdjustedScanResult {
    pub fn p_value(&self) -> Option<f64> {
        self.result.p_value
    }

    /// JSON report plus a CSV of the final reference sample.
    pub fn write(&self, dir: &std::path::Path) -> Result<()> {
        output::write_json(&dir.join("adjusted_scan.json"), self)?;
        let rows: Vec<Vec<String>> = self
            .reference
            .iter()
            .enumerate()
            .map(|(j, v)| vec![j.to_string(), v.to_string()])
            .collect();
        output::write_csv(&dir.join("reference_llr.csv"), &["replicate", "llr_star"], &rows)
    }
}

fn fit_regions(m: usize, clusters: &[Vec<usize>]) -> (Vec<usize>, Vec<usize>) {
    let mut excluded: Vec<usize> = clusters.iter().flatten().copied().collect();
    excluded.sort_unstable();
    excluded.dedup();
    let keep = (0..m).filter(|i| excluded.binary_search(i).is_err()).collect();
    (excluded, keep)
}

/// The iterative adjusted scan on one period.
pub fn adjusted_scan(
    sr: &StudyRegion,
    dm: &DistanceMatrix,
    windows: &WindowSet,
    period: usize,
    cfg: &AdjustedConfig,
) -> Result<AdjustedScanResult> {
    cfg.validate()?;
    let prior = cfg.prior()?;
    let ctx = ScanContext::for_period(windows, sr, period);
    let total = sr.totals(period).cases;

    let mut classical = scan::scan(sr, windows, period)?;
    let m1 = Model1Simulator::for_period(sr, period);
    let t1 = mc_pvalue(classical.llr_star, &ctx, cfg.mc_size, &m1, seed::derive(cfg.seed, &[0]))?;
    classical.assess(&t1.reference);

    let mut screened = classical.significant_sets(cfg.alpha_screen);
    let mut iterations = Vec::new();
    let mut converged = false;
    let mut reference = Vec::new();
    for it in 0..cfg.max_iter {
        let (excluded, keep) = fit_regions(sr.len(), &screened);
        if keep.len() < MIN_FIT_REGIONS {
            return Err(Error::FitSetTooSmall {
                found: keep.len(),
                required: MIN_FIT_REGIONS,
            });
        }
        let data = FitData::from_region(sr, dm, period, &keep)?;
        let fit = glmm::fit_model2(&data, &prior, cfg.nu, &cfg.mcmc, seed::derive(cfg.seed, &[1, it as u64]))?;
        let sim = reference_simulator(&fit, sr.populations(period), total, dm, cfg)?;
        let test = mc_pvalue(classical.llr_star, &ctx, cfg.mc_size, sim.as_ref(), seed::derive(cfg.seed, &[2, it as u64]))?;
        let mut res = classical.clone();
        res.assess(&test.reference);
        let now = res.significant_sets(cfg.alpha_screen);
        let same = now == screened;
        iterations.push(AdjustedIteration {
            excluded,
            fit: fit.report(),
            reference: Summary::of(&test.reference),
            scan: res,
            screened: now.clone(),
        });
        reference = test.reference;
        screened = now;
        if same {
            converged = true;
            break;
        }
    }
    let result = iterations.last().expect("at least one iteration").scan.clone();
    Ok(AdjustedScanResult {
        classical,
        iterations,
        converged,
        result,
        reference,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeriodAssessment {
    pub period: String,
    pub cases: u64,
    pub llr_star: f64,
    pub classical_p: f64,
    pub adjusted_p: f64,
    /// intercept used for this period's reference simulations
    pub beta_sim: f64,
    pub scan: ScanResult,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainTestResult {
    pub fit: FitReport,
    pub means: PosteriorMeans,
    pub periods: Vec<PeriodAssessment>,
}

/// Fit once on the (aggregated) training periods and assess each test
/// period against a reference simulated at that period's case total.
pub fn train_test_adjusted_scan(
    sr: &StudyRegion,
    dm: &DistanceMatrix,
    windows: &WindowSet,
    train_periods: &[usize],
    test_periods: &[usize],
    cfg: &AdjustedConfig,
) -> Result<TrainTestResult> {
    cfg.validate()?;
    if train_periods.is_empty() || test_periods.is_empty() {
        return Err(Error::InvalidInput("need at least one training and one test period".into()));
    }
    if train_periods.iter().any(|t| test_periods.contains(t)) {
        return Err(Error::InvalidInput("training and test periods overlap".into()));
    }
    let train = sr.aggregate(train_periods, "train")?;
    if train.totals(0).cases == 0 {
        return Err(Error::ZeroCases("training period has no cases".into()));
    }
    let all: Vec<usize> = (0..sr.len()).collect();
    let data = FitData::from_region(&train, dm, 0, &all)?;
    let fit = glmm::fit_model2(&data, &cfg.prior()?, cfg.nu, &cfg.mcmc, seed::derive(cfg.seed, &[10]))?;

    let mut periods = Vec::with_capacity(test_periods.len());
    for (k, &t) in test_periods.iter().enumerate() {
        let ctx = ScanContext::for_period(windows, sr, t);
        let mut res = scan::scan(sr, windows, t)?;
        let total = sr.totals(t).cases;
        let m1 = Model1Simulator::for_period(sr, t);
        let classical = mc_pvalue(res.llr_star, &ctx, cfg.mc_size, &m1, seed::derive(cfg.seed, &[11, k as u64]))?;
        let sim = Model2Simulator::matern(sr.populations(t).to_vec(), fit.means.beta, fit.means.sigma, fit.means.rho, fit.nu, dm)?;
        let sim = if cfg.recenter_beta { sim.recentered(total)? } else { sim };
        let beta_sim = sim.beta();
        let boxed: Box<dyn NullSimulator> = if cfg.posterior_predictive {
            reference_simulator(&fit, sr.populations(t), total, dm, cfg)?
        } else {
            Box::new(sim)
        };
        let adjusted = mc_pvalue(res.llr_star, &ctx, cfg.mc_size, boxed.as_ref(), seed::derive(cfg.seed, &[12, k as u64]))?;
        res.assess(&adjusted.reference);
        periods.push(PeriodAssessment {
            period: sr.periods()[t].clone(),
            cases: total,
            llr_star: res.llr_star,
            classical_p: classical.p_value,
            adjusted_p: adjusted.p_value,
            beta_sim,
            scan: res,
        });
    }
    Ok(TrainTestResult {
        fit: fit.report(),
        means: fit.means,
        periods,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::region::Region;

    fn geometry(m: usize) -> (Vec<(f64, f64)>, DistanceMatrix) {
        let pts: Vec<(f64, f64)> = (0..m).map(|i| ((i % 4) as f64 * 20.0, (i / 4) as f64 * 20.0)).collect();
        let dm = DistanceMatrix::from_points(&pts);
        (pts, dm)
    }

    #[test]
    fn sigma_zero_is_independent_poisson() {
        let pops = vec![10.0, 40.0, 25.0];
        let sim = Model2Simulator::new(pops.clone(), -0.5, 0.0, None).unwrap();
        let n = 100_000;
        let mut sums = [0.0f64; 3];
        for s in 0..n {
            let y = sim.simulate(s).unwrap();
            for i in 0..3 {
                sums[i] += y[i] as f64;
            }
        }
        for i in 0..3 {
            let mu = pops[i] * (-0.5f64).exp();
            let se = (mu / n as f64).sqrt();
            assert!((sums[i] / n as f64 - mu).abs() < 4.0 * se);
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let (_, dm) = geometry(8);
        let f = CovFactor::new(&build_corr(&dm, 20.0, 1.0), 1.0).unwrap();
        let pops = vec![30.0; 8];
        let a = simulate_model2_counts(&pops, -1.0, 0.3, &f, 42).unwrap();
        let b = simulate_model2_counts(&pops, -1.0, 0.3, &f, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn overflow_names_the_region() {
        let sim = Model2Simulator::new(vec![1.0, 1.0], 800.0, 0.0, None).unwrap();
        assert!(matches!(sim.simulate(1), Err(Error::RateOverflow { region: 0, .. })));
    }

    #[test]
    fn recentering_matches_total() {
        let (_, dm) = geometry(8);
        let pops: Vec<f64> = (0..8).map(|i| 20.0 + 5.0 * i as f64).collect();
        let sim = Model2Simulator::matern(pops, 0.0, 0.4, 30.0, 1.0, &dm).unwrap().recentered(500).unwrap();
        let n = 20_000;
        let mean = (0..n).map(|s| sim.simulate(s).unwrap().iter().sum::<u64>() as f64).sum::<f64>() / n as f64;
        assert!((mean / 500.0 - 1.0).abs() < 0.02, "mean total {mean}");
    }

    #[test]
    fn config_validation() {
        let cfg = AdjustedConfig { mc_size: 50, ..Default::default() };
        assert!(cfg.validate().is_err());
        assert!(AdjustedConfig::default().validate().is_ok());
    }

    #[test]
    fn overlapping_train_test_rejected() {
        let (pts, dm) = geometry(8);
        let regions: Vec<Region> = pts
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| Region { id: format!("r{i}"), x, y })
            .collect();
        let sr = StudyRegion::new(
            regions,
            vec!["a".into(), "b".into()],
            vec![vec![10.0; 8], vec![10.0; 8]],
            vec![vec![1; 8], vec![2; 8]],
        )
        .unwrap();
        let ws = crate::region::enumerate_windows(&sr, &dm, 0.5).unwrap();
        let cfg = AdjustedConfig { mc_size: 99, ..Default::default() };
        assert!(train_test_adjusted_scan(&sr, &dm, &ws, &[0], &[0, 1], &cfg).is_err());
    }
}
