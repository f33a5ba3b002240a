//! Run configuration (`dogen-config/1`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::SplitSpec;
use crate::ensemble::DEFAULT_K;
use crate::error::{Error, Result};
use crate::features::FeaturizerConfig;
use crate::io::load_json;
use crate::schema::{ConfigSchema, SchemaTag};
use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[clap(rename_all = "snake_case")]
pub enum Balancing {
    PerDomain,
    Global,
    Unbalanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Dogen,
    EqualVote,
    WeightedVote,
    JtScratch,
    JtDomain,
    GlobalExpert,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Dogen,
        Strategy::EqualVote,
        Strategy::WeightedVote,
        Strategy::JtScratch,
        Strategy::JtDomain,
        Strategy::GlobalExpert,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Dogen => "dogen",
            Strategy::EqualVote => "equal_vote",
            Strategy::WeightedVote => "weighted_vote",
            Strategy::JtScratch => "jt_scratch",
            Strategy::JtDomain => "jt_domain",
            Strategy::GlobalExpert => "global_expert",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|x| x.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema: SchemaTag<ConfigSchema>,
    pub train_corpus: Option<PathBuf>,
    pub test_corpus: Option<PathBuf>,
    pub balancing: Balancing,
    pub split: SplitSpec,
    pub featurizer: FeaturizerConfig,
    pub expert_training: TrainConfig,
    pub router_training: TrainConfig,
    pub joint_training: TrainConfig,
    pub k: usize,
    pub out_dir: PathBuf,
    pub strategies: Vec<Strategy>,
    /// Target FPR for the TPR@FPR column; `null` disables it.
    pub target_fpr: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema: SchemaTag::new(),
            train_corpus: None,
            test_corpus: None,
            balancing: Balancing::PerDomain,
            split: SplitSpec::default(),
            featurizer: FeaturizerConfig::default(),
            expert_training: TrainConfig::default(),
            router_training: TrainConfig::default(),
            joint_training: TrainConfig::default(),
            k: DEFAULT_K,
            out_dir: PathBuf::from("dogen-out"),
            strategies: Strategy::ALL.to_vec(),
            target_fpr: Some(0.05),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: RunConfig = load_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.featurizer.validate()?;
        self.expert_training.validate()?;
        self.router_training.validate()?;
        self.joint_training.validate()?;
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if let Some(t) = self.target_fpr {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::Config(format!(
                    "target_fpr must lie in (0, 1), got {t}"
                )));
            }
        }
        Ok(())
    }

    /// Applies a global seed to the split and every training run.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.split.seed = seed;
        self.expert_training.seed = seed;
        self.router_training.seed = seed;
        self.joint_training.seed = seed;
        self
    }

    pub fn wants(&self, s: Strategy) -> bool {
        self.strategies.contains(&s)
    }

    pub fn prepared_dir(&self) -> PathBuf {
        self.out_dir.join("prepared")
    }

    pub fn models_dir(&self) -> PathBuf {
        self.out_dir.join("models")
    }

    pub fn experts_dir(&self) -> PathBuf {
        self.models_dir().join("experts")
    }
}
