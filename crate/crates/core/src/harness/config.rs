use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::controller::{ControllerConfig, STATIC_GAMMA};
use crate::error::{Error, Result};
use crate::metrics::{CostModel, RewardConfig};
use crate::models::SyntheticPairConfig;

/// Name of the fixed-length baseline every speedup is measured against.
pub fn baseline_name() -> String {
    format!("static-{STATIC_GAMMA}")
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TableFormat {
    #[default]
    Csv,
    Tsv,
}

impl TableFormat {
    pub fn delimiter(self) -> char {
        match self {
            TableFormat::Csv => ',',
            TableFormat::Tsv => '\t',
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            TableFormat::Csv => "csv",
            TableFormat::Tsv => "tsv",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSource {
    /// Relative paths resolve against the config file's directory.
    pub path: PathBuf,
    pub vocab_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eos_token: Option<u32>,
}

/// A tagged prompt suite. Exactly one of `synthetic` or `trace` is set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub tag: String,
    /// The `seed` field is replaced by one derived from the run seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticPairConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<TraceSource>,
}

impl SuiteConfig {
    pub fn synthetic(tag: &str, config: SyntheticPairConfig) -> Self {
        SuiteConfig {
            tag: tag.to_string(),
            synthetic: Some(config),
            trace: None,
        }
    }

    pub fn trace(tag: &str, source: TraceSource) -> Self {
        SuiteConfig {
            tag: tag.to_string(),
            synthetic: None,
            trace: Some(source),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    #[serde(default = "ExperimentConfig::default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub reward: RewardConfig,
    #[serde(default)]
    pub cost: CostModel,
    #[serde(default)]
    pub format: TableFormat,
    /// Also write every session record to `sessions.jsonl`.
    #[serde(default)]
    pub write_sessions: bool,
    pub suites: Vec<SuiteConfig>,
    pub controllers: Vec<ControllerConfig>,
}

impl ExperimentConfig {
    fn default_output_dir() -> PathBuf {
        PathBuf::from("results")
    }

    pub fn new(seeds: Vec<u64>, suites: Vec<SuiteConfig>, controllers: Vec<ControllerConfig>) -> Self {
        ExperimentConfig {
            seeds,
            output_dir: Self::default_output_dir(),
            reward: RewardConfig::default(),
            cost: CostModel::default(),
            format: TableFormat::default(),
            write_sessions: false,
            suites,
            controllers,
        }
    }

    /// Parse TOML. Relative trace paths stay relative.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    /// Read a TOML file and resolve relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for suite in &mut config.suites {
            if let Some(trace) = &mut suite.trace {
                if trace.path.is_relative() {
                    trace.path = base.join(&trace.path);
                }
            }
        }
        if config.output_dir.is_relative() {
            config.output_dir = base.join(&config.output_dir);
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        if self.controllers.is_empty() {
            return Err(Error::config("at least one controller is required"));
        }
        if self.suites.is_empty() {
            return Err(Error::config("at least one suite is required"));
        }
        self.reward.validate()?;
        self.cost.validate()?;

        let mut seen = HashSet::new();
        for s in &self.seeds {
            if !seen.insert(*s) {
                return Err(Error::config(format!("duplicate seed {s}")));
            }
        }
        let baseline = baseline_name();
        let mut names = HashSet::new();
        for c in &self.controllers {
            c.validate()?;
            if c.name == baseline {
                return Err(Error::config(format!(
                    "controller name `{baseline}` is reserved for the baseline"
                )));
            }
            if !names.insert(c.name.as_str()) {
                return Err(Error::config(format!("duplicate controller name `{}`", c.name)));
            }
        }
        let mut tags = HashSet::new();
        for suite in &self.suites {
            if suite.tag.is_empty() {
                return Err(Error::config("suite tag is empty"));
            }
            if !tags.insert(suite.tag.as_str()) {
                return Err(Error::config(format!("duplicate suite tag `{}`", suite.tag)));
            }
            match (&suite.synthetic, &suite.trace) {
                (Some(s), None) => s.validate()?,
                (None, Some(t)) => {
                    if !t.path.is_file() {
                        return Err(Error::config(format!(
                            "suite `{}`: trace file {} not found",
                            suite.tag,
                            t.path.display()
                        )));
                    }
                }
                _ => {
                    return Err(Error::config(format!(
                        "suite `{}` needs exactly one of `synthetic` or `trace`",
                        suite.tag
                    )))
                }
            }
        }
        Ok(())
    }
}
