//! Local false discovery rates against an empirical normal null.
//!
//! p-values are mapped to z = Φ⁻¹(p), the marginal density f of the z's is
//! estimated by a Poisson spline regression on histogram counts, a normal
//! null f₀ is matched to the centre of f, and fdr(z) = f₀(z)/f(z).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spline::{poisson_irls, NaturalSplineBasis};
use crate::stats;

pub const DEFAULT_SPLINE_DF: usize = 3;
pub const DEFAULT_MARGIN: f64 = 2.0;
pub const DEFAULT_MATCH_HALF_WIDTH: f64 = 1.5;
pub const DEFAULT_P0_BOUND: f64 = 0.9;
pub const DEFAULT_THRESHOLD: f64 = 0.1;
pub const MIN_Z: usize = 30;

/// z = Φ⁻¹(p). A p-value of exactly 1 from a Monte Carlo test of size
/// `mc_size` is moved to 1 - 1/(2(M+1)).
pub fn p_to_z(p: f64, mc_size: Option<usize>) -> Result<f64> {
    let p = match (p, mc_size) {
        (p, Some(m)) if p == 1.0 => 1.0 - 0.5 / (m as f64 + 1.0),
        _ => p,
    };
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidInput(format!("p-value {p} outside (0, 1)")));
    }
    Ok(stats::normal_quantile(p))
}

pub fn default_bins(n: usize) -> usize {
    n.div_ceil(5).clamp(20, 60)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Equal-width bins over [min - margin, max + margin].
    pub fn new(z: &[f64], bins: usize, margin: f64) -> Result<Self> {
        if bins < 2 {
            return Err(Error::InvalidInput("need at least 2 histogram bins".into()));
        }
        if !(margin >= 0.0 && margin.is_finite()) {
            return Err(Error::InvalidInput(format!("histogram margin {margin} must be finite and non-negative")));
        }
        let lo = z.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::InvalidInput("z-values must be finite".into()));
        }
        if hi == lo {
            return Err(Error::InvalidInput("all z-values are equal; histogram has zero width".into()));
        }
        let (a, b) = (lo - margin, hi + margin);
        let w = (b - a) / bins as f64;
        let edges: Vec<f64> = (0..=bins).map(|i| a + i as f64 * w).collect();
        let mut counts = vec![0u64; bins];
        for &v in z {
            let i = (((v - a) / w) as usize).min(bins - 1);
            counts[i] += 1;
        }
        Ok(Histogram { edges, counts })
    }

    pub fn width(&self) -> f64 {
        self.edges[1] - self.edges[0]
    }

    pub fn midpoints(&self) -> Vec<f64> {
        self.edges.windows(2).map(|e| 0.5 * (e[0] + e[1])).collect()
    }
}

/// A density tabulated on an increasing grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridDensity {
    pub grid: Vec<f64>,
    pub f: Vec<f64>,
}

impl GridDensity {
    /// f at `z`, interpolated linearly in log f; outside the grid the
    /// nearest endpoint is used and the flag is set.
    pub fn eval(&self, z: f64) -> (f64, bool) {
        let g = &self.grid;
        let n = g.len();
        if z <= g[0] {
            return (self.f[0], z < g[0]);
        }
        if z >= g[n - 1] {
            return (self.f[n - 1], z > g[n - 1]);
        }
        let i = g.partition_point(|&x| x <= z) - 1;
        let t = (z - g[i]) / (g[i + 1] - g[i]);
        (((1.0 - t) * self.f[i].ln() + t * self.f[i + 1].ln()).exp(), false)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityFit {
    pub histogram: Histogram,
    pub density: GridDensity,
    pub irls_iterations: usize,
}

/// Spline-Poisson estimate of the marginal z density at the bin midpoints.
/// Empty bins in the margin beyond the data keep the fitted tails from
/// flattening out at the extreme observations.
pub fn fit_empirical_density(z: &[f64], bins: usize, spline_df: usize, margin: f64) -> Result<DensityFit> {
    if z.len() < MIN_Z {
        return Err(Error::InvalidInput(format!(
            "need at least {MIN_Z} z-values for a density fit, got {}",
            z.len()
        )));
    }
    let histogram = Histogram::new(z, bins, margin)?;
    let mids = histogram.midpoints();
    let basis = NaturalSplineBasis::new(mids[0], mids[mids.len() - 1], spline_df)?;
    let y: Vec<f64> = histogram.counts.iter().map(|&c| c as f64).collect();
    let fit = poisson_irls(&basis.design(&mids), &y, 1e-8, 100)?;
    let total: f64 = fit.fitted.iter().sum::<f64>() * histogram.width();
    let f = fit.fitted.iter().map(|m| m / total).collect();
    Ok(DensityFit {
        histogram,
        density: GridDensity { grid: mids, f },
        irls_iterations: fit.iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalNull {
    pub delta0: f64,
    pub sigma0: f64,
}

impl EmpiricalNull {
    pub fn density(&self, z: f64) -> f64 {
        stats::normal_pdf((z - self.delta0) / self.sigma0) / self.sigma0
    }
}

/// Central matching: least-squares quadratic in z fitted to log f over the
/// grid points within `half_width` of the mode.
pub fn fit_empirical_null(d: &GridDensity, half_width: f64) -> Result<EmpiricalNull> {
    if !(half_width > 0.0) {
        return Err(Error::InvalidInput(format!("matching half-width {half_width} must be positive")));
    }
    let n = d.grid.len();
    let mode = (0..n)
        .max_by(|&a, &b| d.f[a].total_cmp(&d.f[b]))
        .ok_or_else(|| Error::NonConcaveNull("empty density grid".into()))?;
    if mode == 0 || mode == n - 1 {
        return Err(Error::NonConcaveNull("density mode lies on the grid boundary".into()));
    }
    let zm = d.grid[mode];
    let pts: Vec<(f64, f64)> = (0..n)
        .filter(|&i| (d.grid[i] - zm).abs() <= half_width + 1e-12 && d.f[i] > 0.0)
        .map(|i| (d.grid[i] - zm, d.f[i].ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::NonConcaveNull("fewer than 3 grid points near the mode".into()));
    }
    let x = nalgebra::DMatrix::from_fn(pts.len(), 3, |i, j| pts[i].0.powi(j as i32));
    let y = nalgebra::DVector::from_iterator(pts.len(), pts.iter().map(|p| p.1));
    let coef = x
        .svd(true, true)
        .solve(&y, 1e-14)
        .map_err(|e| Error::Numerical(format!("central matching least squares failed: {e}")))?;
    let (b, a) = (coef[1], coef[2]);
    if !(a < 0.0) {
        return Err(Error::NonConcaveNull(format!("quadratic coefficient {a} is not negative")));
    }
    Ok(EmpiricalNull {
        delta0: zm - b / (2.0 * a),
        sigma0: (-2.0 * a).powf(-0.5),
    })
}

/// fdr(z) = f₀(z)/f(z), capped at 1, with an out-of-grid flag.
pub fn local_fdr(density: &GridDensity, null: &EmpiricalNull, z: f64) -> (f64, bool) {
    let (f, outside) = density.eval(z);
    let zc = if outside { z.clamp(density.grid[0], *density.grid.last().unwrap()) } else { z };
    let v = if f > 0.0 { null.density(zc) / f } else { 1.0 };
    (v.min(1.0).max(f64::MIN_POSITIVE), outside)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FdrConfig {
    pub bins: Option<usize>,
    pub spline_df: usize,
    /// histogram range extends this far beyond the smallest and largest z
    pub margin: f64,
    /// central matching uses grid points within this distance of the mode
    pub match_half_width: f64,
    pub p0_bound: f64,
    pub threshold: f64,
}

impl Default for FdrConfig {
    fn default() -> Self {
        FdrConfig {
            bins: None,
            spline_df: DEFAULT_SPLINE_DF,
            margin: DEFAULT_MARGIN,
            match_half_width: DEFAULT_MATCH_HALF_WIDTH,
            p0_bound: DEFAULT_P0_BOUND,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FdrModel {
    pub z: Vec<f64>,
    pub fit: DensityFit,
    pub null: EmpiricalNull,
    pub p0_bound: f64,
    pub threshold: f64,
    pub fdr: Vec<f64>,
    pub out_of_grid: Vec<bool>,
    pub warnings: Vec<String>,
}

impl FdrModel {
    pub fn fit_z(z: Vec<f64>, cfg: &FdrConfig) -> Result<Self> {
        let mut warnings = Vec::new();
        if z.len() < 100 {
            warnings.push(format!("only {} z-values; density estimate is rough", z.len()));
        }
        let bins = cfg.bins.unwrap_or_else(|| default_bins(z.len()));
        let fit = fit_empirical_density(&z, bins, cfg.spline_df, cfg.margin)?;
        let null = fit_empirical_null(&fit.density, cfg.match_half_width)?;
        let (fdr, out_of_grid) = z.iter().map(|&v| local_fdr(&fit.density, &null, v)).unzip();
        Ok(FdrModel {
            z,
            fit,
            null,
            p0_bound: cfg.p0_bound,
            threshold: cfg.threshold,
            fdr,
            out_of_grid,
            warnings,
        })
    }

    pub fn fit_p(p: &[f64], mc_size: Option<usize>, cfg: &FdrConfig) -> Result<Self> {
        let z = p.iter().map(|&v| p_to_z(v, mc_size)).collect::<Result<Vec<_>>>()?;
        Self::fit_z(z, cfg)
    }

    pub fn fdr_at(&self, z: f64) -> (f64, bool) {
        local_fdr(&self.fit.density, &self.null, z)
    }

    /// Indices whose fdr falls below the decision threshold.
    pub fn flagged(&self) -> Vec<usize> {
        (0..self.fdr.len()).filter(|&i| self.fdr[i] < self.threshold).collect()
    }
}
