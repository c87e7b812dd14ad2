//! Simulation studies of false-alarm rates, synthetic geometries, and the
//! per-period surveillance workflow.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjusted::{self, AdjustedConfig, Model2Simulator, TrainTestResult};
use crate::error::{Error, Result};
use crate::fdr::{self, FdrConfig, FdrModel};
use crate::glmm::McmcConfig;
use crate::output;
use crate::region::{distance_matrix, enumerate_windows, DistanceMatrix, InputFiles, Region, StudyRegion, WindowSet};
use crate::scan::{self, mc_pvalue, Model1Simulator, ScanContext};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Model I reference
    Classical,
    /// iterative adjusted scan with a fit per replicate
    AdjustedFitted,
    /// Model II reference at the generating parameters
    AdjustedTrueParams,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Classical => "classical",
            Mode::AdjustedFitted => "adjusted_fitted",
            Mode::AdjustedTrueParams => "adjusted_true_params",
        }
    }
}

/// Random centroids and lognormal populations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub m: usize,
    /// (xmin, xmax, ymin, ymax)
    pub bbox: (f64, f64, f64, f64),
    pub pop_meanlog: f64,
    pub pop_sdlog: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        // 32 sites on a 8..162 square; with β = −0.8 a site expects about
        // 50 cases on average, with a long upper tail
        SynthSpec {
            m: 32,
            bbox: (8.0, 162.0, 8.0, 162.0),
            pop_meanlog: 4.0,
            pop_sdlog: 1.2,
            seed: 1973,
        }
    }
}

/// Study region skeleton with uniform random centroids, lognormal
/// populations and zero cases.
pub fn synth_geometry(spec: &SynthSpec) -> Result<StudyRegion> {
    if spec.m == 0 {
        return Err(Error::InvalidInput("synthetic geometry needs m >= 1".into()));
    }
    let (x0, x1, y0, y1) = spec.bbox;
    if !(x1 > x0 && y1 > y0) {
        return Err(Error::InvalidInput("bounding box must have positive extent".into()));
    }
    let ln = LogNormal::new(spec.pop_meanlog, spec.pop_sdlog).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut rng = seed::rng(spec.seed);
    let width = spec.m.to_string().len().max(2);
    let mut regions = Vec::with_capacity(spec.m);
    let mut pops = Vec::with_capacity(spec.m);
    for i in 0..spec.m {
        regions.push(Region {
            id: format!("s{:0width$}", i + 1),
            x: rng.random_range(x0..x1),
            y: rng.random_range(y0..y1),
        });
        pops.push(ln.sample(&mut rng));
    }
    StudyRegion::single_period(regions, pops, vec![0; spec.m])
}

/// Append `extra` random sites inside the bounding box of `sr`.
pub fn densify(sr: &StudyRegion, extra: &SynthSpec) -> Result<StudyRegion> {
    let add = synth_geometry(extra)?;
    let mut regions = sr.regions().to_vec();
    let mut pops = sr.populations(0).to_vec();
    for (r, &p) in add.regions().iter().zip(add.populations(0)) {
        regions.push(Region {
            id: format!("x{}", r.id),
            x: r.x,
            y: r.y,
        });
        pops.push(p);
    }
    let n = regions.len();
    StudyRegion::single_period(regions, pops, vec![0; n])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeometrySource {
    Synthetic(SynthSpec),
    Files { geo: PathBuf, pop: PathBuf, cas: PathBuf },
}

impl Default for GeometrySource {
    fn default() -> Self {
        GeometrySource::Synthetic(SynthSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub geometry: GeometrySource,
    /// intercept; when absent it is log(Y_G/N_G) of the last period of the
    /// geometry files, or −0.8 for a synthetic geometry
    pub beta: Option<f64>,
    pub sigmas: Vec<f64>,
    pub rhos: Vec<f64>,
    pub nus: Vec<f64>,
    pub replicates: usize,
    pub mc_size: usize,
    pub alphas: Vec<f64>,
    pub modes: Vec<Mode>,
    pub max_fraction: f64,
    pub u: usize,
    pub mcmc: McmcConfig,
    pub recenter_beta: bool,
    pub seed: u64,
}

pub const DEFAULT_SYNTH_BETA: f64 = -0.8;

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            geometry: GeometrySource::default(),
            beta: None,
            sigmas: vec![0.1],
            rhos: vec![50.0],
            nus: vec![1.0],
            replicates: 200,
            mc_size: 199,
            alphas: vec![0.01, 0.05, 0.1],
            modes: vec![Mode::Classical],
            max_fraction: 0.5,
            u: 150,
            mcmc: McmcConfig {
                n_iter: 11_000,
                burn_in: 1_000,
                thin: 5,
                ..McmcConfig::default()
            },
            recenter_beta: true,
            seed: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates < 1 {
            return Err(Error::InvalidInput("replicates must be at least 1".into()));
        }
        if self.mc_size < 19 {
            return Err(Error::InvalidInput("Monte Carlo size must be at least 19".into()));
        }
        if self.sigmas.is_empty() || self.rhos.is_empty() || self.nus.is_empty() || self.alphas.is_empty() || self.modes.is_empty() {
            return Err(Error::InvalidInput("parameter grids must be non-empty".into()));
        }
        if self.sigmas.iter().any(|&s| !(s >= 0.0)) || self.rhos.iter().any(|&r| !(r > 0.0)) || self.nus.iter().any(|&n| !(n > 0.0)) {
            return Err(Error::InvalidInput("need sigma >= 0, rho > 0, nu > 0".into()));
        }
        if self.alphas.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
            return Err(Error::InvalidInput("significance levels must lie in (0, 1)".into()));
        }
        if self.modes.contains(&Mode::AdjustedFitted) && self.mc_size < 99 {
            return Err(Error::InvalidInput("the fitted adjusted scan needs a Monte Carlo size of at least 99".into()));
        }
        Ok(())
    }
}

/// Geometry, distances, windows and intercept shared by all replicates.
pub struct StudySetup {
    pub region: StudyRegion,
    pub dm: DistanceMatrix,
    pub windows: WindowSet,
    pub populations: Vec<f64>,
    pub beta: f64,
}

impl StudySetup {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let (region, default_beta) = match &cfg.geometry {
            GeometrySource::Synthetic(s) => (synth_geometry(s)?, DEFAULT_SYNTH_BETA),
            GeometrySource::Files { geo, pop, cas } => {
                let sr = InputFiles { geo: geo.clone(), pop: pop.clone(), cas: cas.clone() }.load()?;
                let t = sr.totals(sr.n_periods() - 1);
                if t.cases == 0 {
                    return Err(Error::ZeroCases("last period of the geometry files has no cases".into()));
                }
                let b = (t.cases as f64 / t.population).ln();
                (sr, b)
            }
        };
        let populations = region.populations(region.n_periods() - 1).to_vec();
        let region = StudyRegion::single_period(region.regions().to_vec(), populations.clone(), vec![0; region.len()])?;
        let dm = distance_matrix(&region);
        let windows = enumerate_windows(&region, &dm, cfg.max_fraction)?;
        Ok(StudySetup {
            region,
            dm,
            windows,
            populations,
            beta: cfg.beta.unwrap_or(default_beta),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueRecord {
    pub sigma: f64,
    pub rho: f64,
    pub nu: f64,
    pub mode: Mode,
    pub replicate: usize,
    pub llr_star: f64,
    /// `None` when the replicate failed in this mode
    pub p_value: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProportionRow {
    pub sigma: f64,
    pub rho: f64,
    pub nu: f64,
    pub alpha: f64,
    pub mode: Mode,
    pub replicates: usize,
    pub dropped: usize,
    pub proportion: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProportionTable {
    pub rows: Vec<ProportionRow>,
}

impl ProportionTable {
    /// Recompute the table from archived p-values.
    pub fn from_archive(archive: &[PValueRecord], alphas: &[f64]) -> Self {
        let mut keys: Vec<(f64, f64, f64, Mode)> = Vec::new();
        for r in archive {
            let k = (r.sigma, r.rho, r.nu, r.mode);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        let mut rows = Vec::new();
        for (sigma, rho, nu, mode) in keys {
            let recs: Vec<&PValueRecord> = archive
                .iter()
                .filter(|r| r.sigma == sigma && r.rho == rho && r.nu == nu && r.mode == mode)
                .collect();
            let ps: Vec<f64> = recs.iter().filter_map(|r| r.p_value).collect();
            let dropped = recs.len() - ps.len();
            for &alpha in alphas {
                let n = ps.len();
                let proportion = if n == 0 { f64::NAN } else { ps.iter().filter(|&&p| p <= alpha).count() as f64 / n as f64 };
                rows.push(ProportionRow {
                    sigma,
                    rho,
                    nu,
                    alpha,
                    mode,
                    replicates: n,
                    dropped,
                    proportion,
                    se: (proportion * (1.0 - proportion) / n as f64).sqrt(),
                });
            }
        }
        ProportionTable { rows }
    }

    pub fn get(&self, sigma: f64, rho: f64, nu: f64, alpha: f64, mode: Mode) -> Option<&ProportionRow> {
        self.rows
            .iter()
            .find(|r| r.sigma == sigma && r.rho == rho && r.nu == nu && r.alpha == alpha && r.mode == mode)
    }

    pub fn to_csv_rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    r.sigma.to_string(),
                    r.rho.to_string(),
                    r.nu.to_string(),
                    r.alpha.to_string(),
                    r.mode.name().to_string(),
                    r.replicates.to_string(),
                    r.dropped.to_string(),
                    r.proportion.to_string(),
                    r.se.to_string(),
                ]
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyOutput {
    pub table: ProportionTable,
    pub archive: Vec<PValueRecord>,
}

/// Generate replicate `r` of a setting: counts from the spatial model with
/// the true parameters.
fn replicate_counts(sim: &Model2Simulator, master: u64, setting: usize, r: usize) -> Result<Vec<u64>> {
    sim.sample(&mut seed::rng_for(master, &[setting as u64, r as u64, 0]))
}

fn run_replicate(
    cfg: &ExperimentConfig,
    setup: &StudySetup,
    truth: &Model2Simulator,
    (sigma, rho, nu): (f64, f64, f64),
    setting: usize,
    r: usize,
) -> Vec<PValueRecord> {
    let rec = |mode, llr_star, res: Result<f64>| {
        let (p_value, error) = match res {
            Ok(p) => (Some(p), None),
            Err(e) => (None, Some(e.to_string())),
        };
        PValueRecord { sigma, rho, nu, mode, replicate: r, llr_star, p_value, error }
    };
    let counts = match replicate_counts(truth, cfg.seed, setting, r) {
        Ok(c) => c,
        Err(e) => {
            let msg = e.to_string();
            return cfg.modes.iter().map(|&m| rec(m, f64::NAN, Err(Error::Numerical(msg.clone())))).collect();
        }
    };
    let total: u64 = counts.iter().sum();
    let ctx = ScanContext::new(&setup.windows, &setup.populations);
    let llr_star = ctx.max_llr(&counts);
    let mc_seed = |mode: Mode| seed::derive(cfg.seed, &[setting as u64, r as u64, 1 + mode as u64]);
    cfg.modes
        .iter()
        .map(|&mode| {
            let p = (|| -> Result<f64> {
                if total == 0 {
                    return Ok(1.0);
                }
                match mode {
                    Mode::Classical => {
                        let sim = Model1Simulator::new(&setup.populations, total);
                        Ok(mc_pvalue(llr_star, &ctx, cfg.mc_size, &sim, mc_seed(mode))?.p_value)
                    }
                    Mode::AdjustedTrueParams => {
                        let sim = Model2Simulator::matern(setup.populations.clone(), setup.beta, sigma, rho, nu, &setup.dm)?;
                        Ok(mc_pvalue(llr_star, &ctx, cfg.mc_size, &sim, mc_seed(mode))?.p_value)
                    }
                    Mode::AdjustedFitted => {
                        let sr = setup.region.with_cases(0, counts.clone())?;
                        let acfg = AdjustedConfig {
                            mc_size: cfg.mc_size,
                            u: cfg.u,
                            nu,
                            mcmc: cfg.mcmc,
                            recenter_beta: cfg.recenter_beta,
                            seed: mc_seed(mode),
                            ..AdjustedConfig::default()
                        };
                        let res = adjusted::adjusted_scan(&sr, &setup.dm, &setup.windows, 0, &acfg)?;
                        res.p_value().ok_or_else(|| Error::Numerical("adjusted scan produced no p-value".into()))
                    }
                }
            })();
            rec(mode, llr_star, p)
        })
        .collect()
}

/// Run every (σ, ρ, ν) setting for the configured modes. Replicates run in
/// parallel; each uses seeds derived from (master seed, setting, replicate),
/// so results do not depend on the thread count.
pub fn run_study(cfg: &ExperimentConfig) -> Result<StudyOutput> {
    cfg.validate()?;
    let setup = StudySetup::new(cfg)?;
    let mut archive = Vec::new();
    let mut setting = 0;
    for &sigma in &cfg.sigmas {
        for &rho in &cfg.rhos {
            for &nu in &cfg.nus {
                let truth = Model2Simulator::matern(setup.populations.clone(), setup.beta, sigma, rho, nu, &setup.dm)?;
                let recs: Vec<Vec<PValueRecord>> = (0..cfg.replicates)
                    .into_par_iter()
                    .map(|r| run_replicate(cfg, &setup, &truth, (sigma, rho, nu), setting, r))
                    .collect();
                archive.extend(recs.into_iter().flatten());
                setting += 1;
            }
        }
    }
    Ok(StudyOutput {
        table: ProportionTable::from_archive(&archive, &cfg.alphas),
        archive,
    })
}

/// Classical scan on data simulated from the spatial model.
pub fn type1_study(cfg: &ExperimentConfig) -> Result<StudyOutput> {
    if cfg.modes != [Mode::Classical] {
        return Err(Error::InvalidInput("type1 study runs the classical mode only".into()));
    }
    run_study(cfg)
}

/// Adjusted scans (fitted and/or true parameters) on data simulated from
/// the spatial model.
pub fn adjusted_study(cfg: &ExperimentConfig) -> Result<StudyOutput> {
    if cfg.modes.is_empty() || cfg.modes.contains(&Mode::Classical) {
        return Err(Error::InvalidInput("adjusted study modes must be adjusted_fitted and/or adjusted_true_params".into()));
    }
    run_study(cfg)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub files: Vec<String>,
    pub summary: serde_json::Value,
}

pub fn write_manifest(
    dir: &Path,
    command: &str,
    config: &impl Serialize,
    files: Vec<String>,
    summary: serde_json::Value,
) -> Result<()> {
    let m = Manifest {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: output::content_hash(config),
        config: serde_json::to_value(config).map_err(|e| Error::Numerical(e.to_string()))?,
        files,
        summary,
    };
    output::write_json(&dir.join("manifest.json"), &m)
}

/// Manifest, proportion table and p-value archive in a directory named by
/// the configuration hash; returns that directory.
pub fn write_study(out_dir: &Path, command: &str, cfg: &ExperimentConfig, out: &StudyOutput) -> Result<PathBuf> {
    let dir = output::run_dir(out_dir, command, cfg);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    output::write_csv(
        &dir.join("proportions.csv"),
        &["sigma", "rho", "nu", "alpha", "mode", "replicates", "dropped", "proportion", "se"],
        &out.table.to_csv_rows(),
    )?;
    let rows: Vec<Vec<String>> = out
        .archive
        .iter()
        .map(|r| {
            vec![
                r.sigma.to_string(),
                r.rho.to_string(),
                r.nu.to_string(),
                r.mode.name().to_string(),
                r.replicate.to_string(),
                r.llr_star.to_string(),
                r.p_value.map_or(String::new(), |p| p.to_string()),
                r.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    output::write_csv(
        &dir.join("pvalues.csv"),
        &["sigma", "rho", "nu", "mode", "replicate", "llr_star", "p_value", "error"],
        &rows,
    )?;
    let summary = serde_json::to_value(&out.table).map_err(|e| Error::Numerical(e.to_string()))?;
    write_manifest(&dir, command, cfg, vec!["proportions.csv".into(), "pvalues.csv".into()], summary)?;
    Ok(dir)
}

/// Read an archive written by [`write_study`].
pub fn read_archive(path: &Path) -> Result<Vec<PValueRecord>> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (line, row) in rd.records().enumerate() {
        let row = row.map_err(|e| Error::InvalidInput(e.to_string()))?;
        let bad = |msg: &str| Error::Parse {
            file: path.to_path_buf(),
            line: line + 2,
            msg: msg.to_string(),
        };
        let num = |i: usize| row[i].parse::<f64>().map_err(|_| bad("bad number"));
        let mode = match &row[3] {
            "classical" => Mode::Classical,
            "adjusted_fitted" => Mode::AdjustedFitted,
            "adjusted_true_params" => Mode::AdjustedTrueParams,
            _ => return Err(bad("unknown mode")),
        };
        out.push(PValueRecord {
            sigma: num(0)?,
            rho: num(1)?,
            nu: num(2)?,
            mode,
            replicate: row[4].parse().map_err(|_| bad("bad replicate"))?,
            llr_star: num(5)?,
            p_value: if row[6].is_empty() { None } else { Some(num(6)?) },
            error: if row[7].is_empty() { None } else { Some(row[7].to_string()) },
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurveillanceRow {
    pub period: String,
    pub cases: u64,
    pub classical_p: f64,
    pub adjusted_p: f64,
    pub z: f64,
    pub fdr: Option<f64>,
    pub cluster: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurveillanceReport {
    pub train: Vec<String>,
    pub assessment: TrainTestResult,
    /// `None` when there are too few test periods for a density fit
    pub fdr: Option<FdrModel>,
    pub rows: Vec<SurveillanceRow>,
}

/// Fit on the training periods, assess every other period, and add local
/// false discovery rates over the adjusted p-values.
pub fn surveillance_run(
    sr: &StudyRegion,
    train_periods: &[usize],
    cfg: &AdjustedConfig,
    fdr_cfg: &FdrConfig,
    max_fraction: f64,
) -> Result<SurveillanceReport> {
    if sr.n_periods() < 2 {
        return Err(Error::InvalidInput("surveillance needs at least two periods".into()));
    }
    let test: Vec<usize> = (0..sr.n_periods()).filter(|t| !train_periods.contains(t)).collect();
    let dm = distance_matrix(sr);
    let windows = enumerate_windows(sr, &dm, max_fraction)?;
    let assessment = adjusted::train_test_adjusted_scan(sr, &dm, &windows, train_periods, &test, cfg)?;
    let z: Vec<f64> = assessment
        .periods
        .iter()
        .map(|p| fdr::p_to_z(p.adjusted_p, Some(cfg.mc_size)))
        .collect::<Result<_>>()?;
    let fdr_model = if z.len() >= fdr::MIN_Z {
        Some(FdrModel::fit_z(z.clone(), fdr_cfg)?)
    } else {
        None
    };
    let ids = sr.ids();
    let rows = assessment
        .periods
        .iter()
        .enumerate()
        .map(|(k, p)| SurveillanceRow {
            period: p.period.clone(),
            cases: p.cases,
            classical_p: p.classical_p,
            adjusted_p: p.adjusted_p,
            z: z[k],
            fdr: fdr_model.as_ref().map(|m| m.fdr[k]),
            cluster: p
                .scan
                .primary
                .as_ref()
                .map(|c| c.cluster.members.iter().map(|&i| ids[i].to_string()).collect())
                .unwrap_or_default(),
        })
        .collect();
    Ok(SurveillanceReport {
        train: train_periods.iter().map(|&t| sr.periods()[t].clone()).collect(),
        assessment,
        fdr: fdr_model,
        rows,
    })
}

impl SurveillanceReport {
    pub fn write(&self, dir: &Path) -> Result<()> {
        output::write_json(&dir.join("surveillance.json"), self)?;
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.period.clone(),
                    r.cases.to_string(),
                    r.classical_p.to_string(),
                    r.adjusted_p.to_string(),
                    r.z.to_string(),
                    r.fdr.map_or(String::new(), |v| v.to_string()),
                    r.cluster.join(" "),
                ]
            })
            .collect();
        output::write_csv(
            &dir.join("periods.csv"),
            &["period", "cases", "classical_p", "adjusted_p", "z", "fdr", "cluster"],
            &rows,
        )
    }
}

/// Scan a single period with Model I p-values; convenience for drivers.
pub fn classical_period(sr: &StudyRegion, period: usize, max_fraction: f64, mc_size: usize, seed: u64) -> Result<scan::ScanResult> {
    let dm = distance_matrix(sr);
    let ws = enumerate_windows(sr, &dm, max_fraction)?;
    Ok(scan::classical_scan(sr, &ws, period, mc_size, seed)?.0)
}
