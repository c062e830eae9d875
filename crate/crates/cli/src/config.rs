use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    #[default]
    Rl,
    Pl,
    /// RL followed by PL over every configured choice set.
    All,
}

impl Model {
    pub fn includes_rl(self) -> bool {
        matches!(self, Model::Rl | Model::All)
    }

    pub fn includes_pl(self) -> bool {
        matches!(self, Model::Pl | Model::All)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StdErrors {
    None,
    #[default]
    Hessian,
    Sandwich,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Sup-norm gradient tolerance of the optimizer.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub std_errors: StdErrors,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iterations: 200,
            std_errors: StdErrors::Hessian,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub n: usize,
    /// Choice-set file; when set, paths are drawn from the path logit over it.
    pub restriction: Option<PathBuf>,
    pub max_steps: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            restriction: None,
            max_steps: 10_000,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    pub demand: f64,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self { demand: 100.0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub k: usize,
    /// Attribute used as arc cost; `None` uses minus the arc utility.
    pub cost: Option<String>,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self { k: 8, cost: None }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub network: Option<PathBuf>,
    pub observations: Option<PathBuf>,
    pub choice_sets: Vec<PathBuf>,
    pub model: Model,
    /// Attribute columns entering the utility; empty means all of them.
    pub attributes: Vec<String>,
    /// Coefficients: the starting point for `estimate`, the truth for
    /// `simulate`, the model for everything else.
    pub beta: Vec<f64>,
    pub mu: Option<f64>,
    pub origin: Option<String>,
    pub destinations: Vec<String>,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    /// Round reports to table precision instead of full precision.
    pub rounded: bool,
    pub solver: SolverConfig,
    pub simulate: SimulateConfig,
    pub predict: PredictConfig,
    pub generate: GenerateConfig,
}

/// A configuration after overrides, with relative paths anchored.
pub struct Resolved {
    pub config: RunConfig,
    /// Directory relative paths in the config file are resolved against.
    pub base: PathBuf,
    pub hash: String,
}

impl Resolved {
    pub fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn network_path(&self) -> Result<PathBuf> {
        match &self.config.network {
            Some(p) => Ok(self.path(p)),
            None => bail!("no network file configured"),
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.path(self.config.output_dir.as_deref().unwrap_or(Path::new("out")))
    }

    pub fn mu(&self) -> f64 {
        self.config.mu.unwrap_or(1.0)
    }
}

pub fn load(path: Option<&Path>) -> Result<(RunConfig, PathBuf)> {
    match path {
        None => Ok((RunConfig::default(), PathBuf::from("."))),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            let config: RunConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?;
            let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
            let base = if base.as_os_str().is_empty() { PathBuf::from(".") } else { base };
            Ok((config, base))
        }
    }
}

/// Hex sha256 of the effective configuration. The output directory is left
/// out so relocated runs hash the same.
pub fn hash(config: &RunConfig) -> Result<String> {
    let mut config = config.clone();
    config.output_dir = None;
    let text = toml::to_string(&config).context("serializing config")?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}
