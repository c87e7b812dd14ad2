use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use corrscan::adjusted::adjusted_scan;
use corrscan::config::{self, Config};
use corrscan::error::{Error, Result};
use corrscan::fdr::FdrModel;
use corrscan::glmm::{fit_model2, FitData};
use corrscan::harness::{self, write_manifest, write_study};
use corrscan::output::{self, run_dir};
use corrscan::region::{distance_matrix, enumerate_windows, write_study_region, StudyRegion};
use corrscan::scan::classical_scan;
use corrscan::theory;

#[derive(Parser)]
#[command(name = "corrscan", version, about = "Spatial scan statistics with a correlated-field null")]
struct Cli {
    /// TOML configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// master seed (sets `seed`, `adjusted.seed` and `experiment.seed`)
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(..=i64::MAX as u64))]
    seed: Option<u64>,
    /// worker threads for replicate-level parallelism
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// override a config key, e.g. `--set scan.mc_size=199`
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// exit with status 4 when a fit or scan finishes with warnings
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum ValueKind {
    P,
    Z,
}

#[derive(Subcommand)]
enum Cmd {
    /// Classical scan of one period
    Scan,
    /// Fit the spatial mixed model to one period
    Fit,
    /// Scan one period against the fitted spatial model
    AdjustedScan,
    /// Fit on training periods, assess the rest, add local fdr
    Surveil,
    /// Classical false-alarm study on spatially correlated data
    Type1Study,
    /// False-alarm study of the adjusted scan
    AdjustedStudy,
    /// Local false discovery rates for a column of p- or z-values
    Fdr {
        /// CSV of `label,value` rows
        input: PathBuf,
        #[arg(long, value_enum, default_value = "p")]
        kind: ValueKind,
        /// Monte Carlo size the p-values came from, for the 1/(M+1) floor
        #[arg(long)]
        mc_size: Option<usize>,
    },
    /// Numerical checks of the tail-probability results
    CheckTheory,
    /// Write a synthetic geometry in the three-file input format
    SynthGeo,
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut sets = cli.set.clone();
    if let Some(s) = cli.seed {
        sets.push(format!("seed={s}"));
        sets.push(format!("adjusted.seed={s}"));
        sets.push(format!("experiment.seed={s}"));
    }
    if let Some(t) = cli.threads {
        sets.push(format!("threads={t}"));
    }
    if let Some(d) = &cli.out_dir {
        sets.push(format!("out_dir={}", toml::Value::String(d.display().to_string())));
    }
    if cli.strict {
        sets.push("strict=true".into());
    }
    config::load(cli.config.as_deref(), &sets)
}

fn period_of(sr: &StudyRegion, label: Option<&str>) -> Result<usize> {
    match label {
        None => Ok(sr.n_periods() - 1),
        Some(l) => sr
            .period_index(l)
            .ok_or_else(|| Error::InvalidInput(format!("no period labelled `{l}`"))),
    }
}

fn prepare_dir(cfg: &Config, command: &str, extra: serde_json::Value) -> Result<PathBuf> {
    let dir = run_dir(&cfg.out_dir, command, &(cfg, extra));
    std::fs::create_dir_all(&dir).map_err(|e| Error::Config(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

/// Rows of `label,value`; a first row whose value is not numeric is taken
/// as a header.
fn read_values(path: &Path) -> Result<(Vec<String>, Vec<f64>)> {
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    let (mut labels, mut values) = (Vec::new(), Vec::new());
    for (i, row) in rd.records().enumerate() {
        let row = row.map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
        let bad = |msg: String| Error::Parse { file: path.to_path_buf(), line: i + 1, msg };
        if row.len() != 2 {
            return Err(bad(format!("expected `label,value`, found {} fields", row.len())));
        }
        match row[1].parse::<f64>() {
            Ok(v) => {
                labels.push(row[0].to_string());
                values.push(v);
            }
            Err(_) if i == 0 => {}
            Err(_) => return Err(bad(format!("`{}` is not a number", &row[1]))),
        }
    }
    Ok((labels, values))
}

/// Returns the list of warnings produced by the command.
fn run(cmd: &Cmd, cfg: &Config) -> Result<Vec<String>> {
    let mut warnings = Vec::new();
    match cmd {
        Cmd::Scan => {
            let sr = cfg.input.files()?.load()?;
            let t = period_of(&sr, cfg.input.period.as_deref())?;
            let dm = distance_matrix(&sr);
            let ws = enumerate_windows(&sr, &dm, cfg.scan.max_fraction)?;
            let (res, _) = classical_scan(&sr, &ws, t, cfg.scan.mc_size, cfg.seed)?;
            let dir = prepare_dir(cfg, "scan", json!(null))?;
            let ids = sr.ids();
            let rows: Vec<Vec<String>> = res
                .clusters()
                .enumerate()
                .map(|(k, c)| {
                    vec![
                        k.to_string(),
                        c.llr.to_string(),
                        c.p_value.map_or(String::new(), |p| p.to_string()),
                        c.cluster.cases.to_string(),
                        c.cluster.population.to_string(),
                        c.cluster.members.iter().map(|&i| ids[i]).collect::<Vec<_>>().join(" "),
                    ]
                })
                .collect();
            output::write_json(&dir.join("scan.json"), &res)?;
            output::write_csv(&dir.join("clusters.csv"), &["rank", "llr", "p_value", "cases", "population", "members"], &rows)?;
            write_manifest(&dir, "scan", cfg, vec!["scan.json".into(), "clusters.csv".into()], json!({"llr_star": res.llr_star, "p_value": res.p_value}))?;
            println!("period {}: llr* = {:.4}, p = {:?}", sr.periods()[t], res.llr_star, res.p_value);
            println!("{}", dir.display());
        }
        Cmd::Fit => {
            let sr = cfg.input.files()?.load()?;
            let t = period_of(&sr, cfg.input.period.as_deref())?;
            let dm = distance_matrix(&sr);
            let all: Vec<usize> = (0..sr.len()).collect();
            let data = FitData::from_region(&sr, &dm, t, &all)?;
            let a = &cfg.adjusted;
            let fit = fit_model2(&data, &a.prior()?, a.nu, &a.mcmc, a.seed)?;
            let dir = prepare_dir(cfg, "fit", json!(null))?;
            let report = fit.report();
            output::write_json(&dir.join("fit.json"), &report)?;
            fit.write_draws_csv(&dir.join("draws.csv"))?;
            write_manifest(&dir, "fit", cfg, vec!["fit.json".into(), "draws.csv".into()], json!(report.means))?;
            let m = fit.means;
            println!("beta = {:.4}, sigma = {:.4}, rho = {:.2}", m.beta, m.sigma, m.rho);
            println!("{}", dir.display());
            warnings.extend(fit.warnings);
        }
        Cmd::AdjustedScan => {
            let sr = cfg.input.files()?.load()?;
            let t = period_of(&sr, cfg.input.period.as_deref())?;
            let dm = distance_matrix(&sr);
            let ws = enumerate_windows(&sr, &dm, cfg.scan.max_fraction)?;
            let res = adjusted_scan(&sr, &dm, &ws, t, &cfg.adjusted)?;
            let dir = prepare_dir(cfg, "adjusted-scan", json!(null))?;
            res.write(&dir)?;
            write_manifest(
                &dir,
                "adjusted-scan",
                cfg,
                vec!["adjusted_scan.json".into(), "reference_llr.csv".into()],
                json!({"classical_p": res.classical.p_value, "adjusted_p": res.p_value(), "converged": res.converged}),
            )?;
            println!("classical p = {:?}, adjusted p = {:?}", res.classical.p_value, res.p_value());
            println!("{}", dir.display());
            if !res.converged {
                warnings.push("screened cluster set did not stabilise".into());
            }
            for it in &res.iterations {
                warnings.extend(it.fit.warnings.iter().cloned());
            }
        }
        Cmd::Surveil => {
            let sr = cfg.input.files()?.load()?;
            if cfg.input.train.is_empty() {
                return Err(Error::Config("input.train must list the training periods".into()));
            }
            let train = cfg
                .input
                .train
                .iter()
                .map(|l| period_of(&sr, Some(l)))
                .collect::<Result<Vec<_>>>()?;
            let rep = harness::surveillance_run(&sr, &train, &cfg.adjusted, &cfg.fdr, cfg.scan.max_fraction)?;
            let dir = prepare_dir(cfg, "surveil", json!(null))?;
            rep.write(&dir)?;
            write_manifest(&dir, "surveil", cfg, vec!["surveillance.json".into(), "periods.csv".into()], json!(rep.assessment.means))?;
            for r in &rep.rows {
                println!("{}\tclassical {:.3}\tadjusted {:.3}\tfdr {}", r.period, r.classical_p, r.adjusted_p, r.fdr.map_or("-".into(), |v| format!("{v:.3}")));
            }
            println!("{}", dir.display());
            warnings.extend(rep.assessment.fit.warnings.iter().cloned());
            if let Some(f) = &rep.fdr {
                warnings.extend(f.warnings.iter().cloned());
            } else {
                warnings.push("too few test periods for local fdr".into());
            }
        }
        Cmd::Type1Study | Cmd::AdjustedStudy => {
            let (name, out) = if matches!(cmd, Cmd::Type1Study) {
                ("type1-study", harness::type1_study(&cfg.experiment)?)
            } else {
                ("adjusted-study", harness::adjusted_study(&cfg.experiment)?)
            };
            let dir = write_study(&cfg.out_dir, name, &cfg.experiment, &out)?;
            for r in &out.table.rows {
                println!(
                    "sigma {} rho {} nu {} alpha {} {}: {:.3} (se {:.3}, n {})",
                    r.sigma, r.rho, r.nu, r.alpha, r.mode.name(), r.proportion, r.se, r.replicates
                );
            }
            println!("{}", dir.display());
            let dropped = out.archive.iter().filter(|r| r.p_value.is_none()).count();
            if dropped > 0 {
                warnings.push(format!("{dropped} replicate(s) failed and were dropped"));
            }
        }
        Cmd::Fdr { input, kind, mc_size } => {
            let (labels, v) = read_values(input)?;
            let model = match kind {
                ValueKind::P => FdrModel::fit_p(&v, *mc_size, &cfg.fdr)?,
                ValueKind::Z => FdrModel::fit_z(v.clone(), &cfg.fdr)?,
            };
            let dir = prepare_dir(cfg, "fdr", json!({"input": &labels, "values": &v, "mc_size": mc_size}))?;
            let rows: Vec<Vec<String>> = (0..model.z.len())
                .map(|i| vec![labels[i].clone(), model.z[i].to_string(), model.fdr[i].to_string(), model.out_of_grid[i].to_string()])
                .collect();
            output::write_csv(&dir.join("fdr.csv"), &["label", "z", "fdr", "out_of_grid"], &rows)?;
            output::write_json(&dir.join("fdr.json"), &model)?;
            write_manifest(&dir, "fdr", cfg, vec!["fdr.csv".into(), "fdr.json".into()], json!(model.null))?;
            println!("empirical null: delta0 = {:.4}, sigma0 = {:.4}", model.null.delta0, model.null.sigma0);
            println!("{} of {} below {}", model.flagged().len(), model.z.len(), model.threshold);
            println!("{}", dir.display());
            warnings.extend(model.warnings);
        }
        Cmd::CheckTheory => {
            let rep = theory::run_checks(cfg.seed)?;
            if cfg.theory.json {
                println!("{}", serde_json::to_string_pretty(&rep).map_err(|e| Error::Numerical(e.to_string()))?);
            } else {
                print!("{}", rep.to_text());
            }
            if !rep.all_passed() {
                return Err(Error::Numerical("one or more theory checks failed".into()));
            }
        }
        Cmd::SynthGeo => {
            let sr = harness::synth_geometry(&cfg.synth)?;
            let dir = prepare_dir(cfg, "synth-geo", json!(null))?;
            let files = write_study_region(&sr, &dir, "synth")?;
            write_manifest(&dir, "synth-geo", cfg, vec!["synth.geo".into(), "synth.pop".into(), "synth.cas".into()], json!(files))?;
            println!("{}", dir.display());
        }
    }
    Ok(warnings)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    if let Some(n) = cfg.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: could not size thread pool: {e}");
        }
    }
    match run(&cli.cmd, &cfg) {
        Ok(warnings) => {
            for w in &warnings {
                eprintln!("warning: {w}");
            }
            if cfg.strict && !warnings.is_empty() {
                ExitCode::from(4)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
