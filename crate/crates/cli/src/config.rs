use std::path::{Path, PathBuf};

use dfszeno::{LogicalQubit, Model, RunMode, Scheme, SchemeConfig, SweepSpec, SweepVariable};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Environment variable consulted for the seed when neither the command
/// line nor the config file sets one.
pub const SEED_ENV: &str = "SIM_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedState {
    Zero,
    One,
    Plus,
    Minus,
}

/// Logical input state: a named basis state or explicit amplitudes
/// `{"alpha": [re, im], "beta": [re, im]}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LogicalSpec {
    Named(NamedState),
    Amplitudes(LogicalQubit),
}

impl Default for LogicalSpec {
    fn default() -> Self {
        LogicalSpec::Named(NamedState::Plus)
    }
}

impl LogicalSpec {
    pub fn qubit(&self) -> LogicalQubit {
        match self {
            LogicalSpec::Named(NamedState::Zero) => LogicalQubit::zero(),
            LogicalSpec::Named(NamedState::One) => LogicalQubit::one(),
            LogicalSpec::Named(NamedState::Plus) => LogicalQubit::plus(),
            LogicalSpec::Named(NamedState::Minus) => LogicalQubit::minus(),
            LogicalSpec::Amplitudes(q) => *q,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
    /// Schemes to run at every value; empty means the `scheme` section's.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub schemes: Vec<Scheme>,
    /// Fit `leak ~ c N^p` per scheme. Defaults to on for N sweeps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Format of the single-run record; sweeps always write CSV tables.
    pub format: OutputFormat,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            format: OutputFormat::Json,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: Model,
    #[serde(default)]
    pub logical: LogicalSpec,
    pub scheme: SchemeConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub output: OutputSection,
}

/// A parsed config plus whether the file pinned the seed itself.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub file_seed: Option<u64>,
}

pub fn parse(text: &str, origin: &str) -> Result<LoadedConfig, CliError> {
    let config: ExperimentConfig =
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("{origin}: {e}")))?;
    let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| CliError::Config(format!("{origin}: {e}")))?;
    let file_seed = raw
        .get("scheme")
        .and_then(|s| s.get("seed"))
        .map(|_| config.scheme.seed);
    Ok(LoadedConfig { config, file_seed })
}

pub fn load(path: &Path) -> Result<LoadedConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse(&text, &path.display().to_string())
}

/// Seed precedence: command line, then config file, then `SIM_SEED`, then 0.
pub fn resolve_seed(flag: Option<u64>, file: Option<u64>, env: Option<&str>) -> Result<u64, CliError> {
    if let Some(s) = flag.or(file) {
        return Ok(s);
    }
    match env {
        Some(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("{SEED_ENV}={v:?} is not an unsigned 64-bit integer"))),
        None => Ok(0),
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<RunMode>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Apply overrides and the seed precedence, then validate. The returned
    /// config reproduces the run on its own.
    pub fn resolve(loaded: LoadedConfig, ov: &Overrides, env_seed: Option<&str>) -> Result<Self, CliError> {
        let mut c = loaded.config;
        c.scheme.seed = resolve_seed(ov.seed, loaded.file_seed, env_seed)?;
        if let Some(mode) = ov.mode {
            c.scheme.mode = mode;
        }
        if let Some(out) = &ov.out {
            c.output.dir = out.clone();
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let field = |section: &str, e: dfszeno::Error| match e {
            dfszeno::Error::InvalidConfig(m) => CliError::Config(format!("{section}.{m}")),
            other => CliError::Config(format!("{section}: {other}")),
        };
        self.model.validate().map_err(|e| field("model", e))?;
        self.logical.qubit().validate().map_err(|e| field("logical", e))?;
        self.scheme.validate().map_err(|e| field("scheme", e))?;
        if let Some(spec) = self.sweep_spec() {
            spec.validate().map_err(|e| field("sweep", e))?;
        }
        Ok(())
    }

    pub fn sweep_spec(&self) -> Option<SweepSpec> {
        let s = self.sweep.as_ref()?;
        let schemes = if s.schemes.is_empty() {
            vec![self.scheme.scheme]
        } else {
            s.schemes.clone()
        };
        Some(SweepSpec {
            variable: s.variable,
            values: s.values.clone(),
            base_model: self.model.clone(),
            base_cfg: self.scheme.clone(),
            schemes,
            logical: self.logical.qubit(),
        })
    }

    pub fn fit_enabled(&self) -> bool {
        self.sweep
            .as_ref()
            .is_some_and(|s| s.fit.unwrap_or(s.variable == SweepVariable::N))
    }
}
