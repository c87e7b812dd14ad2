//! TOML configuration with `section.key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adjusted::AdjustedConfig;
use crate::error::{Error, Result};
use crate::fdr::FdrConfig;
use crate::harness::{ExperimentConfig, SynthSpec};
use crate::region::InputFiles;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    pub geo: Option<PathBuf>,
    pub pop: Option<PathBuf>,
    pub cas: Option<PathBuf>,
    /// period label to scan or fit; the last period when absent
    pub period: Option<String>,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl InputConfig {
    pub fn files(&self) -> Result<InputFiles> {
        match (&self.geo, &self.pop, &self.cas) {
            (Some(geo), Some(pop), Some(cas)) => Ok(InputFiles {
                geo: geo.clone(),
                pop: pop.clone(),
                cas: cas.clone(),
            }),
            _ => Err(Error::Config("input.geo, input.pop and input.cas are all required".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    pub max_fraction: f64,
    pub mc_size: usize,
    pub alpha: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            max_fraction: 0.5,
            mc_size: 999,
            alpha: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoryConfig {
    pub json: bool,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        TheoryConfig { json: false }
    }
}

/// Everything the command-line tool can be configured with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub threads: Option<usize>,
    pub out_dir: PathBuf,
    pub strict: bool,
    pub input: InputConfig,
    pub scan: ScanConfig,
    pub adjusted: AdjustedConfig,
    pub experiment: ExperimentConfig,
    pub fdr: FdrConfig,
    pub synth: SynthSpec,
    pub theory: TheoryConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 1,
            threads: None,
            out_dir: PathBuf::from("out"),
            strict: false,
            input: InputConfig::default(),
            scan: ScanConfig::default(),
            adjusted: AdjustedConfig::default(),
            experiment: ExperimentConfig::default(),
            fdr: FdrConfig::default(),
            synth: SynthSpec::default(),
            theory: TheoryConfig::default(),
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Apply one `a.b.c=value` override to a TOML table. The value is read as
/// a TOML literal when possible and as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not of the form key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let raw = raw.trim();
    if raw.parse::<u64>().is_ok_and(|v| v > i64::MAX as u64) {
        return Err(Error::Config(format!("`{raw}` exceeds the largest representable integer {}", i64::MAX)));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{p}` in `{key}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_value(raw));
    Ok(())
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Read `path` (if any) on top of the defaults, apply the overrides in
/// order, and validate. Partially specified sections keep the defaults of
/// their enclosing section.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Config> {
    let mut table = toml::Table::try_from(Config::default()).map_err(|e| Error::Config(e.to_string()))?;
    if let Some(p) = path {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        let file = toml::from_str::<toml::Table>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
        merge(&mut table, file);
    }
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_from_empty() {
        assert_eq!(load(None, &[]).unwrap(), Config::default());
    }

    #[test]
    fn overrides_are_typed() {
        let c = load(
            None,
            &[
                "scan.mc_size=99".into(),
                "adjusted.recenter_beta=false".into(),
                "experiment.sigmas=[0.0, 0.05]".into(),
                "input.geo=data/nm.geo".into(),
                "experiment.mcmc.n_iter=2000".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.scan.mc_size, 99);
        assert!(!c.adjusted.recenter_beta);
        assert_eq!(c.experiment.sigmas, vec![0.0, 0.05]);
        assert_eq!(c.input.geo.as_deref(), Some(Path::new("data/nm.geo")));
        assert_eq!(c.experiment.mcmc.n_iter, 2000);
        assert_eq!(c.experiment.mcmc.burn_in, 1000);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(load(None, &["scan.nope=1".into()]).is_err());
        assert!(load(None, &["scan".into()]).is_err());
        assert!(load(None, &[format!("seed={}", u64::MAX)]).is_err());
    }

    #[test]
    fn file_then_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "seed = 7\n[scan]\nmc_size = 199\n[experiment.geometry]\nkind = \"synthetic\"\nm = 12\n").unwrap();
        let c = load(Some(&p), &["seed=8".into()]).unwrap();
        assert_eq!(c.seed, 8);
        assert_eq!(c.scan.mc_size, 199);
        match c.experiment.geometry {
            crate::harness::GeometrySource::Synthetic(s) => assert_eq!(s.m, 12),
            _ => panic!(),
        }
    }
}
