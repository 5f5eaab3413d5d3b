//! Experiment configuration: one JSON document with sections for the corpus,
//! the reward engine, the optimizer, the stage plan, and the semantic scorer.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SemrlError};
use crate::grpo::{AdvantageVariant, GrpoConfig};
use crate::reward::{LengthMode, RewardConfig};
use crate::scorers::{ContrastiveConfig, RemoteConfig};

/// Synthetic corpus shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub n_concepts: usize,
    pub n_neutral: usize,
    /// Parallel (source, reference) pairs for supervised stages.
    pub n_parallel: usize,
    /// Source-only documents for the RL stage.
    pub m_source: usize,
    pub n_dev: usize,
    pub len_min: usize,
    pub len_max: usize,
    /// Probability of a filler token after each concept mention.
    pub filler_rate: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n_concepts: 40,
            n_neutral: 10,
            n_parallel: 500,
            m_source: 2000,
            n_dev: 200,
            len_min: 3,
            len_max: 8,
            filler_rate: 0.2,
        }
    }
}

/// Named safeguard presets for the RL stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Language gate plus batch-relative length penalty plus repetition
    /// penalty (the full safeguard stack).
    GateBatchlen,
    /// Language gate only; both shaping penalties disabled.
    GateOnly,
    /// Language gate with the source-proportional reference-length band
    /// instead of the batch-relative ramp.
    RefLen,
    /// Same reward as `gate_batchlen` but with the mean-centering-only
    /// advantage variant.
    GrpoControl,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::GateBatchlen => "gate_batchlen",
            Variant::GateOnly => "gate_only",
            Variant::RefLen => "ref_len",
            Variant::GrpoControl => "grpo_control",
        }
    }

    pub fn from_name(name: &str) -> Result<Variant> {
        match name {
            "gate_batchlen" => Ok(Variant::GateBatchlen),
            "gate_only" => Ok(Variant::GateOnly),
            "ref_len" => Ok(Variant::RefLen),
            "grpo_control" => Ok(Variant::GrpoControl),
            other => Err(SemrlError::Config(format!(
                "unknown variant {other:?}; expected one of gate_batchlen, gate_only, ref_len, grpo_control"
            ))),
        }
    }

    /// Overlay this preset on reward and optimizer configs. Reward variants
    /// touch only the length/shaping fields; `grpo_control` touches only the
    /// advantage variant, holding the reward config fixed.
    pub fn apply(self, reward: &mut RewardConfig, grpo: &mut GrpoConfig) {
        match self {
            Variant::GateBatchlen => {
                reward.length_mode = LengthMode::BatchRelative;
            }
            Variant::GateOnly => {
                reward.length_mode = LengthMode::None;
                reward.lambda_len = 0.0;
                reward.lambda_rep = 0.0;
            }
            Variant::RefLen => {
                reward.length_mode = LengthMode::RefLen;
            }
            Variant::GrpoControl => {
                // reward config held fixed; only the optimizer variant moves
                grpo.advantage_variant = AdvantageVariant::DrGrpo;
            }
        }
    }
}

/// Epochs, learning rates, and batch sizes for the three stages. Zero epochs
/// skip a stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StagePlan {
    pub sft_epochs: usize,
    pub sft_learning_rate: f64,
    pub sft_batch_size: usize,
    pub rl_epochs: usize,
    /// Sources per RL batch (each yields a sampled group).
    pub rl_batch_size: usize,
    pub recover_epochs: usize,
    pub recover_learning_rate: f64,
    pub recover_batch_size: usize,
    /// Safeguard preset applied to the RL stage.
    pub variant: Variant,
    /// Decode cap for the policy, in tokens.
    pub max_len: usize,
}

impl Default for StagePlan {
    fn default() -> Self {
        StagePlan {
            sft_epochs: 3,
            sft_learning_rate: 3.0,
            sft_batch_size: 2,
            rl_epochs: 2,
            rl_batch_size: 8,
            recover_epochs: 1,
            recover_learning_rate: 3.0,
            recover_batch_size: 2,
            variant: Variant::GateBatchlen,
            max_len: 64,
        }
    }
}

/// Which semantic scorer drives the RL reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    Oracle,
    Embedding,
    Remote,
}

/// Which side of the parallel data anchors the scorer's query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorSide {
    Source,
    Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScorerConfig {
    pub kind: ScorerKind,
    pub anchor: AnchorSide,
    pub embedding: ContrastiveConfig,
    pub remote: RemoteConfig,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            kind: ScorerKind::Oracle,
            anchor: AnchorSide::Source,
            embedding: ContrastiveConfig::default(),
            remote: RemoteConfig::default(),
        }
    }
}

/// Top-level experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Load the corpus from this directory instead of generating it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<String>,
    pub corpus: CorpusConfig,
    pub reward: RewardConfig,
    pub grpo: GrpoConfig,
    pub stages: StagePlan,
    pub scorer: ScorerConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 42,
            data_dir: None,
            corpus: CorpusConfig::default(),
            reward: RewardConfig::default(),
            grpo: GrpoConfig::default(),
            stages: StagePlan::default(),
            scorer: ScorerConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.corpus.n_concepts == 0 {
            return Err(SemrlError::Config("corpus.n_concepts must be >= 1".into()));
        }
        if self.corpus.len_min == 0 || self.corpus.len_min > self.corpus.len_max {
            return Err(SemrlError::Config(
                "corpus length range must satisfy 1 <= len_min <= len_max".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.corpus.filler_rate) {
            return Err(SemrlError::Config("corpus.filler_rate must be in [0,1]".into()));
        }
        if self.corpus.n_dev == 0 {
            return Err(SemrlError::Config("corpus.n_dev must be >= 1".into()));
        }
        if self.stages.max_len == 0 {
            return Err(SemrlError::Config("stages.max_len must be >= 1".into()));
        }
        if self.stages.sft_learning_rate < 0.0 || self.stages.recover_learning_rate < 0.0 {
            return Err(SemrlError::Config("learning rates must be >= 0".into()));
        }
        self.reward.validate()?;
        self.grpo.validate()?;
        self.scorer.embedding.validate()?;
        Ok(())
    }

    /// Reward and optimizer configs with the stage plan's variant applied.
    pub fn effective_rl_configs(&self) -> (RewardConfig, GrpoConfig) {
        let mut reward = self.reward.clone();
        let mut grpo = self.grpo.clone();
        self.stages.variant.apply(&mut reward, &mut grpo);
        (reward, grpo)
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path)?;
        let cfg: PipelineConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
