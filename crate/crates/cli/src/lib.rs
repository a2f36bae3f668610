//! Experiment runner for `randers-core`: strict TOML configs, seeded reproducible runs,
//! atomic CSV/JSON output and a run manifest.

pub mod config;
pub mod experiments;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use config::{Experiment, Parameters, RunConfig, Violation};
use experiments::{FileRecord, OutDir};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration:\n{}", format_violations(.0))]
    Validation(Vec<Violation>),
    #[error("{0}")]
    Experiment(#[from] randers_core::Error),
    #[error("{}: {}", .0.display(), .1)]
    Io(PathBuf, std::io::Error),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|x| format!("  {x}")).collect::<Vec<_>>().join("\n")
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Experiment(e) if e.is_numeric() => EXIT_NUMERIC,
            CliError::Experiment(_) => EXIT_VALIDATION,
            CliError::Io(..) => EXIT_IO,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub experiment: Experiment,
    pub config_sha256: String,
    pub tool_version: String,
    pub timestamp: String,
    pub root_seed: u64,
    pub seeds: BTreeMap<String, u64>,
    pub files: Vec<FileRecord>,
    pub metrics: serde_json::Value,
}

/// Command-line overrides of config fields.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

pub fn load(path: &Path) -> Result<RunConfig, CliError> {
    RunConfig::load(path).map_err(|e| match e {
        config::LoadError::Io(p, e) => CliError::Io(p, e),
        config::LoadError::Invalid(v) => CliError::Validation(v),
    })
}

/// Parses and validates without running.
pub fn validate_file(path: &Path) -> Result<RunConfig, CliError> {
    let cfg = load(path)?;
    let v = config::validate(&cfg, None);
    if !v.is_empty() {
        return Err(CliError::Validation(v));
    }
    Ok(cfg)
}

/// Runs a validated config and writes its outputs, then the manifest.
pub fn run(config: &RunConfig, overrides: &Overrides) -> Result<RunManifest, CliError> {
    let violations = config::validate(config, overrides.seed);
    if !violations.is_empty() {
        return Err(CliError::Validation(violations));
    }
    let root = overrides.seed.or(config.seed).expect("validated");
    let dir = overrides
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(config.experiment.name()));
    let mut out = OutDir::new(dir)?;
    let metrics = match &config.parameters {
        Parameters::Flow(p) => experiments::flow(p, root, &mut out)?,
        Parameters::Lipschitz(p) => experiments::lipschitz(p, root, &mut out)?,
        Parameters::Concentration(p) => experiments::concentration(p, root, &mut out)?,
        Parameters::Sphere(p) => experiments::sphere(p, root, &mut out)?,
        Parameters::Wep(p) => experiments::wep(p, root, &mut out)?,
        Parameters::Gravity(p) => experiments::gravity(p, &mut out)?,
    };
    let manifest = RunManifest {
        experiment: config.experiment,
        config_sha256: hex::encode(Sha256::digest(config.source.as_bytes())),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        timestamp: chrono::Utc::now().to_rfc3339(),
        root_seed: root,
        seeds: out.seeds.clone(),
        files: out.files.clone(),
        metrics,
    };
    let path = out.dir.join("manifest.json");
    randers_core::output::write_atomic(&path, |w| {
        serde_json::to_writer_pretty(&mut *w, &manifest).map_err(std::io::Error::other)?;
        w.write_all(b"\n")
    })
    .map_err(|e| CliError::Io(path.clone(), e))?;
    Ok(manifest)
}
