//! Bayesian fit of the spatial Poisson mixed model
//!
//! ```text
//! Y_i ~ Poisson(N_i exp(β + Z_i)),   Z ~ N(0, σ² R(ρ)),
//! ```
//!
//! with R(ρ) the unit-variance Matérn correlation, flat priors on β and σ,
//! and a uniform prior on the integer grid ρ ∈ {1, …, U}.
//!
//! The sampler is Metropolis-within-Gibbs. Each sweep updates Z one
//! component at a time by random walk, β by random walk, the pair
//! (β + c, Z − c·1) by an exact Gibbs draw of c, log σ by random walk,
//! (σ, Z) jointly by a random-walk rescaling, and ρ exactly from its discrete full conditional. Random-walk scales
//! adapt towards 0.44 acceptance during burn-in and are frozen afterwards.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matern::{build_corr, CovFactor};
use crate::output;
use crate::region::{DistanceMatrix, StudyRegion};
use crate::seed;
use crate::stats::{self, Summary};

pub const MIN_FIT_REGIONS: usize = 5;
const TARGET_ACCEPT: f64 = 0.44;
const ADAPT_BATCH: usize = 50;
const MAX_LOG_RATE: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    /// upper end of the ρ grid {1, …, U}
    pub u: usize,
}

impl PriorSpec {
    pub fn new(u: usize) -> Result<Self> {
        let p = PriorSpec { u };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.u < 2 {
            return Err(Error::InvalidInput(format!("rho grid bound U must be at least 2, got {}", self.u)));
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<f64> {
        (1..=self.u).map(|r| r as f64).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// iterations with σ above 10× its running median before aborting
    pub divergence_window: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            n_iter: 55_000,
            burn_in: 5_000,
            thin: 10,
            divergence_window: 1_000,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 || self.burn_in >= self.n_iter {
            return Err(Error::InvalidInput("need thin >= 1 and burn_in < n_iter".into()));
        }
        Ok(())
    }

    pub fn retained(&self) -> usize {
        (self.n_iter - self.burn_in) / self.thin
    }
}

/// Counts, populations and geometry of the regions used for fitting.
#[derive(Debug, Clone)]
pub struct FitData {
    pub counts: Vec<u64>,
    pub populations: Vec<f64>,
    pub dm: DistanceMatrix,
}

impl FitData {
    pub fn new(counts: Vec<u64>, populations: Vec<f64>, dm: DistanceMatrix) -> Result<Self> {
        if counts.len() != populations.len() || dm.len() != counts.len() {
            return Err(Error::InvalidInput("counts, populations and distances disagree in size".into()));
        }
        Ok(FitData { counts, populations, dm })
    }

    /// Period `period` of `sr`, restricted to the regions in `keep`.
    pub fn from_region(sr: &StudyRegion, dm: &DistanceMatrix, period: usize, keep: &[usize]) -> Result<Self> {
        Self::new(
            keep.iter().map(|&i| sr.cases(period)[i]).collect(),
            keep.iter().map(|&i| sr.populations(period)[i]).collect(),
            dm.submatrix(keep),
        )
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    fn check(&self) -> Result<()> {
        if self.len() < MIN_FIT_REGIONS {
            return Err(Error::FitSetTooSmall {
                found: self.len(),
                required: MIN_FIT_REGIONS,
            });
        }
        if self.counts.iter().all(|&c| c == 0) {
            return Err(Error::ZeroCases("all counts in the fit set are zero; the intercept is not identifiable".into()));
        }
        Ok(())
    }
}

/// Log posterior density up to a constant:
/// Σ [Y_i(β + log N_i + Z_i) − N_i e^{β+Z_i}] − ½ Zᵀ(σ²R)⁻¹Z − ½ log|σ²R|.
/// Returns −∞ when a rate overflows or the correlation matrix cannot be
/// factored, so callers can treat it as a rejected state.
pub fn log_posterior(beta: f64, sigma: f64, rho: f64, z: &[f64], data: &FitData, nu: f64) -> f64 {
    let m = data.len();
    if !(sigma > 0.0) || z.len() != m {
        return f64::NEG_INFINITY;
    }
    let mut ll = 0.0;
    for i in 0..m {
        let eta = beta + z[i];
        if eta > MAX_LOG_RATE {
            return f64::NEG_INFINITY;
        }
        ll += data.counts[i] as f64 * (eta + data.populations[i].ln()) - data.populations[i] * eta.exp();
    }
    let Ok(f) = CovFactor::new(&build_corr(&data.dm, rho, nu), 1.0) else {
        return f64::NEG_INFINITY;
    };
    let w = f.whiten(z);
    let quad: f64 = w.iter().map(|v| v * v).sum::<f64>() / (sigma * sigma);
    let v = ll - 0.5 * quad - 0.5 * (f.log_det() + 2.0 * m as f64 * sigma.ln());
    if v.is_finite() {
        v
    } else {
        f64::NEG_INFINITY
    }
}

/// R(ρ)⁻¹ and log|R(ρ)| for one grid value.
struct GridPoint {
    rinv: Vec<f64>,
    rinv_one: Vec<f64>,
    one_rinv_one: f64,
    log_det: f64,
}

fn precompute_grid(dm: &DistanceMatrix, grid: &[f64], nu: f64) -> Result<Vec<GridPoint>> {
    grid.par_iter()
        .map(|&rho| {
            let f = CovFactor::new(&build_corr(dm, rho, nu), 1.0)?;
            let inv = f.inverse();
            let m = inv.nrows();
            let rinv: Vec<f64> = (0..m * m).map(|k| inv[(k / m, k % m)]).collect();
            let rinv_one: Vec<f64> = (0..m).map(|i| inv.row(i).sum()).collect();
            Ok(GridPoint {
                one_rinv_one: rinv_one.iter().sum(),
                rinv_one,
                rinv,
                log_det: f.log_det(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Draw {
    pub beta: f64,
    pub sigma: f64,
    pub rho: f64,
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorMeans {
    pub beta: f64,
    pub sigma: f64,
    pub rho: f64,
    /// ρ̂ rounded to the nearest grid point
    pub rho_grid: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceRates {
    /// mean over the componentwise Z updates
    pub z: f64,
    pub beta: f64,
    pub sigma: f64,
    /// joint (σ, Z) rescaling move
    pub joint: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ess {
    pub beta: f64,
    pub sigma: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelIIFit {
    pub draws: Vec<Draw>,
    pub means: PosteriorMeans,
    pub acceptance: AcceptanceRates,
    pub ess: Ess,
    /// fraction of ρ draws above 0.95 U
    pub rho_boundary_fraction: f64,
    pub config: McmcConfig,
    pub prior: PriorSpec,
    pub nu: f64,
    pub seed: u64,
    pub warnings: Vec<String>,
}

/// Posterior means over retained draws, with ρ̂ also rounded to the grid.
pub fn posterior_means(draws: &[Draw], prior: &PriorSpec) -> PosteriorMeans {
    assert!(!draws.is_empty(), "need at least one retained draw");
    let n = draws.len() as f64;
    let beta = draws.iter().map(|d| d.beta).sum::<f64>() / n;
    let sigma = draws.iter().map(|d| d.sigma).sum::<f64>() / n;
    let rho = draws.iter().map(|d| d.rho).sum::<f64>() / n;
    PosteriorMeans {
        beta,
        sigma,
        rho,
        rho_grid: rho.round().clamp(1.0, prior.u as f64),
    }
}

/// Batch-adaptive random-walk scale on the log scale.
#[derive(Debug, Clone)]
struct Scale {
    log_s: f64,
    batch_acc: usize,
    acc: usize,
    tries: usize,
}

impl Scale {
    fn new(s: f64) -> Self {
        Scale {
            log_s: s.ln(),
            batch_acc: 0,
            acc: 0,
            tries: 0,
        }
    }

    fn s(&self) -> f64 {
        self.log_s.exp()
    }

    fn record(&mut self, accepted: bool, counting: bool) {
        if accepted {
            self.batch_acc += 1;
            if counting {
                self.acc += 1;
            }
        }
        if counting {
            self.tries += 1;
        }
    }

    fn end_batch(&mut self, batch_index: usize, adapting: bool) {
        if adapting {
            let rate = self.batch_acc as f64 / ADAPT_BATCH as f64;
            let step = (1.0 / (batch_index as f64).sqrt()).min(0.1);
            self.log_s += if rate > TARGET_ACCEPT { step } else { -step };
        }
        self.batch_acc = 0;
    }

    fn rate(&self) -> f64 {
        if self.tries == 0 {
            0.0
        } else {
            self.acc as f64 / self.tries as f64
        }
    }
}

struct Chain<'a> {
    data: &'a FitData,
    grid: &'a [GridPoint],
    beta: f64,
    sigma: f64,
    r: usize,
    z: Vec<f64>,
    /// R(ρ)⁻¹ Z for the current ρ
    w: Vec<f64>,
    /// Zᵀ R(ρ)⁻¹ Z
    quad: f64,
}

impl Chain<'_> {
    fn m(&self) -> usize {
        self.z.len()
    }

    fn refresh(&mut self) {
        let m = self.m();
        let g = &self.grid[self.r];
        for i in 0..m {
            self.w[i] = (0..m).map(|j| g.rinv[i * m + j] * self.z[j]).sum();
        }
        self.quad = self.z.iter().zip(&self.w).map(|(a, b)| a * b).sum();
    }

    fn update_z(&mut self, rng: &mut seed::Rng, scales: &mut [Scale], counting: bool) {
        let m = self.m();
        let s2 = self.sigma * self.sigma;
        let eb = self.beta.exp();
        for i in 0..m {
            let d = scales[i].s() * rng.sample::<f64, _>(StandardNormal);
            let zi = self.z[i];
            let zn = zi + d;
            let ok = if self.beta + zn > MAX_LOG_RATE {
                false
            } else {
                let g = &self.grid[self.r];
                let dq = 2.0 * d * self.w[i] + d * d * g.rinv[i * m + i];
                let dl = self.data.counts[i] as f64 * d - self.data.populations[i] * eb * (zn.exp() - zi.exp())
                    - 0.5 * dq / s2;
                if rng.random::<f64>().ln() < dl {
                    self.z[i] = zn;
                    for k in 0..m {
                        self.w[k] += d * g.rinv[k * m + i];
                    }
                    self.quad += dq;
                    true
                } else {
                    false
                }
            };
            scales[i].record(ok, counting);
        }
    }

    fn update_beta(&mut self, rng: &mut seed::Rng, scale: &mut Scale, counting: bool, y_total: f64) {
        let d = scale.s() * rng.sample::<f64, _>(StandardNormal);
        let bn = self.beta + d;
        let zmax = self.z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let ok = bn + zmax <= MAX_LOG_RATE && {
            let s: f64 = self.data.populations.iter().zip(&self.z).map(|(n, z)| n * z.exp()).sum();
            let dl = y_total * d - s * (bn.exp() - self.beta.exp());
            rng.random::<f64>().ln() < dl
        };
        if ok {
            self.beta = bn;
        }
        scale.record(ok, counting);
    }

    /// Exact draw along (β + c, Z − c·1): the likelihood is unchanged and
    /// the conditional of c is N(1ᵀw / 1ᵀR⁻¹1, σ² / 1ᵀR⁻¹1).
    fn update_shift(&mut self, rng: &mut seed::Rng) {
        let g = &self.grid[self.r];
        let a = g.one_rinv_one;
        let s: f64 = self.w.iter().sum();
        let c = s / a + self.sigma / a.sqrt() * rng.sample::<f64, _>(StandardNormal);
        self.beta += c;
        for (i, zi) in self.z.iter_mut().enumerate() {
            *zi -= c;
            self.w[i] -= c * g.rinv_one[i];
        }
        self.quad += -2.0 * c * s + c * c * a;
    }

    fn update_sigma(&mut self, rng: &mut seed::Rng, scale: &mut Scale, counting: bool) {
        let ls = self.sigma.ln();
        let ln = ls + scale.s() * rng.sample::<f64, _>(StandardNormal);
        let sn = ln.exp();
        let m = self.m() as f64;
        // flat prior on σ, proposal on log σ: the Jacobian adds log σ
        let dl = -0.5 * self.quad * (1.0 / (sn * sn) - 1.0 / (self.sigma * self.sigma)) - (m - 1.0) * (ln - ls);
        let ok = sn.is_finite() && sn > 0.0 && rng.random::<f64>().ln() < dl;
        if ok {
            self.sigma = sn;
        }
        scale.record(ok, counting);
    }

    /// Joint move (σ, Z) → (tσ, tZ). The Gaussian prior density of Z
    /// and the Jacobian t^m cancel, leaving the likelihood ratio and the
    /// log-scale proposal term.
    fn update_scale(&mut self, rng: &mut seed::Rng, scale: &mut Scale, counting: bool) {
        let lt = scale.s() * rng.sample::<f64, _>(StandardNormal);
        let t = lt.exp();
        let eb = self.beta.exp();
        let mut dl = lt;
        let mut ok = true;
        for i in 0..self.m() {
            let (zi, zn) = (self.z[i], t * self.z[i]);
            if self.beta + zn > MAX_LOG_RATE {
                ok = false;
                break;
            }
            dl += self.data.counts[i] as f64 * (zn - zi) - self.data.populations[i] * eb * (zn.exp() - zi.exp());
        }
        let ok = ok && (self.sigma * t).is_finite() && rng.random::<f64>().ln() < dl;
        if ok {
            self.sigma *= t;
            for i in 0..self.m() {
                self.z[i] *= t;
                self.w[i] *= t;
            }
            self.quad *= t * t;
        }
        scale.record(ok, counting);
    }

    fn update_rho(&mut self, rng: &mut seed::Rng, logw: &mut [f64]) {
        let m = self.m();
        let s2 = self.sigma * self.sigma;
        for (r, g) in self.grid.iter().enumerate() {
            let mut q = 0.0;
            for i in 0..m {
                let row = &g.rinv[i * m..(i + 1) * m];
                let t: f64 = row.iter().zip(&self.z).map(|(a, b)| a * b).sum();
                q += self.z[i] * t;
            }
            logw[r] = -0.5 * q / s2 - 0.5 * g.log_det;
        }
        let mx = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = logw.iter().map(|v| (v - mx).exp()).sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = logw.len() - 1;
        for (r, v) in logw.iter().enumerate() {
            u -= (v - mx).exp();
            if u <= 0.0 {
                pick = r;
                break;
            }
        }
        self.r = pick;
        self.refresh();
    }
}

/// Run one chain.
pub fn fit_model2(data: &FitData, prior: &PriorSpec, nu: f64, cfg: &McmcConfig, seed: u64) -> Result<ModelIIFit> {
    data.check()?;
    prior.validate()?;
    cfg.validate()?;
    if !(nu > 0.0) {
        return Err(Error::InvalidInput("nu must be positive".into()));
    }
    let grid_vals = prior.grid();
    let grid = precompute_grid(&data.dm, &grid_vals, nu)?;
    let m = data.len();
    let y_total = data.counts.iter().sum::<u64>() as f64;
    let n_total: f64 = data.populations.iter().sum();

    let mut chain = Chain {
        data,
        grid: &grid,
        beta: (y_total / n_total).ln(),
        sigma: 0.1,
        r: (prior.u - 1) / 2,
        z: vec![0.0; m],
        w: vec![0.0; m],
        quad: 0.0,
    };
    let mut rng = seed::rng(seed);
    let mut z_scales: Vec<Scale> = (0..m)
        .map(|i| {
            let mu = data.populations[i] * chain.beta.exp();
            Scale::new(2.4 / (mu + 100.0).sqrt())
        })
        .collect();
    let mut beta_scale = Scale::new(0.5 / y_total.sqrt());
    let mut sigma_scale = Scale::new(0.3);
    let mut joint_scale = Scale::new(0.3);
    let mut logw = vec![0.0; grid.len()];

    let mut draws = Vec::with_capacity(cfg.retained());
    let mut sigma_trace: Vec<f64> = Vec::with_capacity(cfg.n_iter / 10 + 1);
    let mut running_median = f64::INFINITY;
    let mut above = 0usize;

    for it in 0..cfg.n_iter {
        let counting = it >= cfg.burn_in;
        chain.update_z(&mut rng, &mut z_scales, counting);
        chain.update_beta(&mut rng, &mut beta_scale, counting, y_total);
        chain.update_shift(&mut rng);
        chain.update_sigma(&mut rng, &mut sigma_scale, counting);
        chain.update_scale(&mut rng, &mut joint_scale, counting);
        chain.update_rho(&mut rng, &mut logw);

        if (it + 1) % ADAPT_BATCH == 0 {
            let b = (it + 1) / ADAPT_BATCH;
            let adapting = it < cfg.burn_in;
            for s in z_scales.iter_mut() {
                s.end_batch(b, adapting);
            }
            beta_scale.end_batch(b, adapting);
            sigma_scale.end_batch(b, adapting);
            joint_scale.end_batch(b, adapting);
        }

        if it % 10 == 0 {
            sigma_trace.push(chain.sigma);
        }
        if it % 500 == 0 && !sigma_trace.is_empty() {
            running_median = stats::median(&sigma_trace);
        }
        if chain.sigma > 10.0 * running_median {
            above += 1;
            if above >= cfg.divergence_window {
                return Err(Error::Divergence(format!(
                    "sigma stayed above 10x its running median ({running_median:.4}) for {above} iterations at iteration {it}"
                )));
            }
        } else {
            above = 0;
        }
        if !chain.beta.is_finite() || !chain.quad.is_finite() {
            return Err(Error::Numerical(format!("chain left the finite state space at iteration {it}")));
        }

        if counting && (it + 1 - cfg.burn_in) % cfg.thin == 0 {
            draws.push(Draw {
                beta: chain.beta,
                sigma: chain.sigma,
                rho: grid_vals[chain.r],
                z: chain.z.clone(),
            });
        }
    }
    if draws.is_empty() {
        return Err(Error::InvalidInput("configuration retains no draws".into()));
    }

    let betas: Vec<f64> = draws.iter().map(|d| d.beta).collect();
    let sigmas: Vec<f64> = draws.iter().map(|d| d.sigma).collect();
    let rhos: Vec<f64> = draws.iter().map(|d| d.rho).collect();
    let ess = Ess {
        beta: stats::effective_sample_size(&betas),
        sigma: stats::effective_sample_size(&sigmas),
        rho: stats::effective_sample_size(&rhos),
    };
    let mut warnings = Vec::new();
    if ess.beta < 100.0 {
        warnings.push(format!("effective sample size for beta is {:.0} (< 100); lengthen the chain", ess.beta));
    }
    let cut = 0.95 * prior.u as f64;
    let rho_boundary_fraction = rhos.iter().filter(|&&r| r > cut).count() as f64 / rhos.len() as f64;
    if rho_boundary_fraction > 0.1 {
        warnings.push(format!(
            "{:.0}% of rho draws lie in the top 5% of the grid; consider a larger U",
            100.0 * rho_boundary_fraction
        ));
    }
    let acceptance = AcceptanceRates {
        z: z_scales.iter().map(Scale::rate).sum::<f64>() / m as f64,
        beta: beta_scale.rate(),
        sigma: sigma_scale.rate(),
        joint: joint_scale.rate(),
    };
    Ok(ModelIIFit {
        means: posterior_means(&draws, prior),
        draws,
        acceptance,
        ess,
        rho_boundary_fraction,
        config: *cfg,
        prior: *prior,
        nu,
        seed,
        warnings,
    })
}

/// Independent chains in parallel; chain `c` uses the seed derived from
/// `(seed, c)`.
pub fn fit_model2_chains(
    data: &FitData,
    prior: &PriorSpec,
    nu: f64,
    cfg: &McmcConfig,
    seed: u64,
    n_chains: usize,
) -> Result<Vec<ModelIIFit>> {
    (0..n_chains)
        .into_par_iter()
        .map(|c| fit_model2(data, prior, nu, cfg, seed::derive(seed, &[c as u64])))
        .collect()
}

/// Serializable summary of a fit, without the draws.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub n_regions: usize,
    pub config: McmcConfig,
    pub prior: PriorSpec,
    pub nu: f64,
    pub seed: u64,
    pub means: PosteriorMeans,
    pub beta: Summary,
    pub sigma: Summary,
    pub rho: Summary,
    pub acceptance: AcceptanceRates,
    pub ess: Ess,
    pub rho_boundary_fraction: f64,
    pub warnings: Vec<String>,
}

impl ModelIIFit {
    pub fn betas(&self) -> Vec<f64> {
        self.draws.iter().map(|d| d.beta).collect()
    }

    pub fn sigmas(&self) -> Vec<f64> {
        self.draws.iter().map(|d| d.sigma).collect()
    }

    pub fn rhos(&self) -> Vec<f64> {
        self.draws.iter().map(|d| d.rho).collect()
    }

    /// Equal-tailed credible interval for a parameter trace.
    pub fn interval(trace: &[f64], level: f64) -> (f64, f64) {
        let a = 0.5 * (1.0 - level);
        (stats::quantile(trace, a), stats::quantile(trace, 1.0 - a))
    }

    pub fn report(&self) -> FitReport {
        FitReport {
            n_regions: self.draws[0].z.len(),
            config: self.config,
            prior: self.prior,
            nu: self.nu,
            seed: self.seed,
            means: self.means,
            beta: Summary::of(&self.betas()),
            sigma: Summary::of(&self.sigmas()),
            rho: Summary::of(&self.rhos()),
            acceptance: self.acceptance,
            ess: self.ess,
            rho_boundary_fraction: self.rho_boundary_fraction,
            warnings: self.warnings.clone(),
        }
    }

    /// Thinned draws as CSV rows: beta, sigma, rho, z_1 … z_m.
    pub fn write_draws_csv(&self, path: &std::path::Path) -> Result<()> {
        let m = self.draws[0].z.len();
        let mut header: Vec<String> = vec!["beta".into(), "sigma".into(), "rho".into()];
        header.extend((1..=m).map(|i| format!("z{i}")));
        let hdr: Vec<&str> = header.iter().map(String::as_str).collect();
        let rows: Vec<Vec<String>> = self
            .draws
            .iter()
            .map(|d| {
                let mut r = vec![d.beta.to_string(), d.sigma.to_string(), d.rho.to_string()];
                r.extend(d.z.iter().map(|v| v.to_string()));
                r
            })
            .collect();
        output::write_csv(path, &hdr, &rows)
    }
}
