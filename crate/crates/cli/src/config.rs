//! Experiment configuration: one JSON document, every field optional.

use std::path::Path;

use brain3d::decoder::DecodeConfig;
use brain3d::interpret::LimeConfig;
use brain3d::model::ModelConfig;
use brain3d::pipeline::StageConfigs;
use brain3d::synth::{derive_seed, CohortConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub cohort: CohortConfig,
    /// Train, validation and test fractions.
    pub splits: [f64; 3],
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            cohort: CohortConfig::default(),
            splits: [0.7, 0.1, 0.2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n_boot: usize,
    /// Split scored by `generate` and `evaluate` when none is given.
    pub split: SplitName,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_boot: 1000,
            split: SplitName::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: StageConfigs,
    pub decode: DecodeConfig,
    pub eval: EvalConfig,
    pub interpret: LimeConfig,
    /// Global seed. Every per-section seed is derived from it.
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: StageConfigs::default(),
            decode: DecodeConfig::default(),
            eval: EvalConfig::default(),
            interpret: LimeConfig::default(),
            seed: 1234,
        }
    }
}

/// Seed streams derived from the global seed.
pub mod stream {
    pub const COHORT: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const INIT: u64 = 3;
    pub const TRAIN: u64 = 4;
    pub const DECODE: u64 = 5;
    pub const BOOTSTRAP: u64 = 6;
    pub const LIME: u64 = 7;
}

impl ExperimentConfig {
    /// Reads `path` if given, otherwise the defaults; `seed` overrides the
    /// file's global seed. The result is validated.
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> CliResult<Self> {
        let mut cfg: ExperimentConfig = match path {
            Some(p) => {
                if !p.is_file() {
                    return Err(CliError::Usage(format!("config file {} does not exist", p.display())));
                }
                let text = std::fs::read_to_string(p)?;
                serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.apply_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Overwrites every section seed with a stream of the global seed.
    pub fn apply_seed(&mut self) {
        let s = self.seed;
        self.data.cohort.seed = derive_seed(s, stream::COHORT);
        self.train = self.train.reseeded(derive_seed(s, stream::TRAIN));
        self.decode.seed = derive_seed(s, stream::DECODE);
        self.interpret.seed = derive_seed(s, stream::LIME);
    }

    pub fn split_seed(&self) -> u64 {
        derive_seed(self.seed, stream::SPLIT)
    }

    pub fn init_seed(&self) -> u64 {
        derive_seed(self.seed, stream::INIT)
    }

    pub fn bootstrap_seed(&self) -> u64 {
        derive_seed(self.seed, stream::BOOTSTRAP)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.data.cohort.validate()?;
        let sum: f64 = self.data.splits.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.data.splits.iter().any(|&r| r < 0.0) {
            return Err(CliError::Usage(format!("split fractions sum to {sum}, expected 1")));
        }
        self.model.validate()?;
        if self.model.input_dims != self.data.cohort.volume_dims {
            return Err(CliError::Usage(format!(
                "model input dims {:?} differ from cohort volume dims {:?}",
                self.model.input_dims, self.data.cohort.volume_dims
            )));
        }
        for stage in ["lm", "1", "2a", "2b"] {
            self.train.get(stage)?.validate()?;
        }
        self.decode.validate()?;
        self.interpret.validate()?;
        if self.eval.n_boot == 0 {
            return Err(CliError::Usage("eval.n_boot must be positive".into()));
        }
        Ok(())
    }
}
