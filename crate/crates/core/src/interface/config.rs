//! Versioned TOML experiment configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::acquisition::{AcquisitionParams, Strategy};
use crate::alloop::{LoopConfig, OptimizerParams, ScheduleConfig, SplitConfig, TrainStrategy};
use crate::error::{Error, Result};
use crate::evaluation::MatchConfig;
use crate::surrogate::ProposalParams;
use crate::synthetic::SceneConfig;

pub const SCHEMA_VERSION: u32 = 1;

/// The documented default configuration, every key commented.
pub const DEFAULT_CONFIG_TOML: &str = include_str!("default_config.toml");

/// Where frames come from. Exactly one source per configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Generate scenes in memory.
    Synthetic(SceneConfig),
    /// A directory written by `gen`.
    Directory(PathBuf),
    /// Inference records from an external detector (selection only).
    Records(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<String>,
    /// Per-strategy seeds replacing `seed` for that strategy's run.
    #[serde(default)]
    pub seed_overrides: BTreeMap<String, u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub train: TrainStrategy,
    #[serde(default)]
    pub optimizer: OptimizerParams,
    #[serde(default)]
    pub acquisition: AcquisitionParams,
    #[serde(default)]
    pub matching: MatchConfig,
    #[serde(default)]
    pub proposal: ProposalParams,
}

fn default_strategies() -> Vec<String> {
    vec!["random".into(), "entropy".into()]
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            strategies: default_strategies(),
            seed_overrides: BTreeMap::new(),
            out: None,
            dataset: DatasetSource::Synthetic(SceneConfig::default()),
            split: SplitConfig::default(),
            schedule: ScheduleConfig::default(),
            train: TrainStrategy::default(),
            optimizer: OptimizerParams::default(),
            acquisition: AcquisitionParams::default(),
            matching: MatchConfig::default(),
            proposal: ProposalParams::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative dataset and output paths are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut cfg.dataset {
            DatasetSource::Directory(p) | DatasetSource::Records(p) => resolve(p),
            DatasetSource::Synthetic(_) => {}
        }
        if let Some(out) = &mut cfg.out {
            resolve(out);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.parsed_strategies()?;
        self.parsed_overrides()?;
        if let DatasetSource::Synthetic(scene) = &self.dataset {
            scene.validate()?;
        }
        self.train.validate()?;
        self.matching.validate()?;
        if self.acquisition.tcrb_window == 0 {
            return Err(Error::Config("acquisition.tcrb_window must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.acquisition.mc_drop_rate) {
            return Err(Error::Config("acquisition.mc_drop_rate must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Strategy names in configuration order; rejects unknown and repeated names.
    pub fn parsed_strategies(&self) -> Result<Vec<Strategy>> {
        if self.strategies.is_empty() {
            return Err(Error::Config("`strategies` must list at least one strategy".into()));
        }
        let mut out: Vec<Strategy> = Vec::new();
        for name in &self.strategies {
            let s: Strategy = name.parse()?;
            if out.contains(&s) {
                return Err(Error::Config(format!("strategy `{name}` listed twice")));
            }
            out.push(s);
        }
        Ok(out)
    }

    pub fn parsed_overrides(&self) -> Result<BTreeMap<Strategy, u64>> {
        self.seed_overrides
            .iter()
            .map(|(k, &v)| Ok((k.parse()?, v)))
            .collect()
    }

    pub fn loop_config(&self) -> LoopConfig {
        LoopConfig {
            schedule: self.schedule.clone(),
            train: self.train,
            optimizer: self.optimizer,
            acquisition: self.acquisition,
            matching: self.matching.clone(),
            proposal: self.proposal,
        }
    }
}
