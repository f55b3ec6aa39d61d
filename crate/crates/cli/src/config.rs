use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use likadj::inference::PlugIn;
use likadj::zoo::ModelConfig;

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Adjust,
    Bartlett,
    Pivots,
    Table,
    Bootstrap,
    Verify,
    Validate,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

/// Source of the cumulant arrays.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Provider {
    #[default]
    Analytic,
    Fd,
    Mc,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Relative tolerance for analytic identities.
    pub analytic_rel: Option<f64>,
    /// Relative tolerance for analytic vs finite-difference derivatives.
    pub fd_rel: Option<f64>,
    /// Standard-error multiple for Monte Carlo checks.
    pub mc_se_multiple: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub command: Option<Command>,
    pub model: Option<String>,
    pub model_config: Option<Value>,
    pub format: Format,
    pub seed: u64,
    pub reps: usize,
    pub psi0: Option<f64>,
    pub provider: Provider,
    pub workers: usize,
    pub precise: bool,
    pub table: Option<u8>,
    pub kind: Option<String>,
    pub quantity: Option<String>,
    pub n_grid: Option<Vec<usize>>,
    pub plug_in: PlugIn,
    pub data: Option<PathBuf>,
    pub tolerances: Tolerances,
}

pub const DEFAULT_SEED: u64 = 20240601;
pub const DEFAULT_REPS: usize = 10_000;

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: None,
            model: None,
            model_config: None,
            format: Format::Json,
            seed: DEFAULT_SEED,
            reps: DEFAULT_REPS,
            psi0: None,
            provider: Provider::Analytic,
            workers: 0,
            precise: false,
            table: None,
            kind: None,
            quantity: None,
            n_grid: None,
            plug_in: PlugIn::Constrained,
            data: None,
            tolerances: Tolerances::default(),
        }
    }
}

fn path_error(what: &str, path: String, inner: impl std::fmt::Display) -> CliError {
    let at = if path.is_empty() || path == "." { String::new() } else { format!(" at `{path}`") };
    CliError::Config(format!("{what}{at}: {inner}"))
}

pub fn load(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| path_error(&format!("config {}", path.display()), e.path().to_string(), e.inner()))
}

fn typed<T: DeserializeOwned>(v: Value) -> Result<T, CliError> {
    serde_path_to_error::deserialize(v).map_err(|e| path_error("model_config", e.path().to_string(), e.inner()))
}

/// The model configuration named `name`, with `value` overriding defaults.
pub fn model_config(name: &str, value: Option<Value>) -> Result<ModelConfig, CliError> {
    let base = ModelConfig::default_for(name).map_err(|e| CliError::Config(e.to_string()))?;
    let Some(v) = value else { return Ok(base) };
    Ok(match base {
        ModelConfig::NormalRegression(_) => ModelConfig::NormalRegression(typed(v)?),
        ModelConfig::NeymanScott(_) => ModelConfig::NeymanScott(typed(v)?),
        ModelConfig::BehrensFisher(_) => ModelConfig::BehrensFisher(typed(v)?),
        ModelConfig::ExpRegression(_) => ModelConfig::ExpRegression(typed(v)?),
        ModelConfig::InverseGaussian(_) => ModelConfig::InverseGaussian(typed(v)?),
        ModelConfig::MultiExp(_) => ModelConfig::MultiExp(typed(v)?),
        ModelConfig::CurvedNormal(_) => ModelConfig::CurvedNormal(typed(v)?),
        ModelConfig::NormalMean(_) => ModelConfig::NormalMean(typed(v)?),
    })
}

pub fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("configuration types serialize")
}
