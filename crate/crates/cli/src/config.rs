//! Pipeline configuration: one TOML file holding every stage's settings.

use std::path::{Path, PathBuf};

use choreo_core::actor_critic::{AcSchedule, RewardConfig};
use choreo_core::gpt::{GptConfig, GptSchedule};
use choreo_core::metrics::EvalConfig;
use choreo_core::motion::SyntheticCorpusSpec;
use choreo_core::vqvae::{VqSchedule, VqVaeConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorCriticSection {
    pub critic_layers: usize,
    pub rewards: RewardConfig,
    pub schedule: AcSchedule,
    /// Held-out synthetic sequences used for the per-epoch BAS column; 0 disables it.
    pub probe_sequences: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub corpus: PathBuf,
    pub checkpoints: PathBuf,
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            corpus: "corpus".into(),
            checkpoints: "checkpoints".into(),
            output: "output".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Music feature channels per frame.
    pub feature_dim: usize,
    pub corpus: SyntheticCorpusSpec,
    pub vqvae: VqVaeConfig,
    pub vqvae_train: VqSchedule,
    pub gpt: GptConfig,
    pub gpt_train: GptSchedule,
    pub actor_critic: ActorCriticSection,
    pub eval: EvalConfig,
    pub paths: Paths,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Profile {
    /// Seconds-scale models for smoke tests.
    Smoke,
    Desk,
    Paper,
}

impl PipelineConfig {
    /// Small models that train in minutes on one CPU core.
    pub fn desk() -> Self {
        let corpus = SyntheticCorpusSpec {
            num_sequences: 16,
            frames: 64,
            joints: 24,
            ..SyntheticCorpusSpec::default()
        };
        Self {
            feature_dim: choreo_core::music::DEFAULT_FEATURE_DIM,
            corpus,
            vqvae: VqVaeConfig {
                codebook_size: 32,
                code_dim: 32,
                downsample: 8,
                hidden: 32,
                bottleneck_blocks: 2,
                ..VqVaeConfig::default()
            },
            vqvae_train: VqSchedule {
                steps: 2000,
                velocity_steps: 300,
                batch_size: 16,
                window: 64,
                lr: 1e-3,
                ..VqSchedule::default()
            },
            gpt: GptConfig {
                layers: 4,
                heads: 4,
                channels: 128,
                block_size: 8,
                codebook_size: 32,
                ..GptConfig::default()
            },
            gpt_train: GptSchedule {
                steps: 1500,
                batch_size: 8,
                lr: 1e-3,
                ..GptSchedule::default()
            },
            actor_critic: ActorCriticSection {
                critic_layers: 3,
                rewards: RewardConfig::default(),
                schedule: AcSchedule {
                    epochs: 10,
                    batch_size: 4,
                    lr: 3e-4,
                    critic_lr: 1e-3,
                    ..AcSchedule::default()
                },
                probe_sequences: 4,
            },
            eval: EvalConfig::default(),
            paths: Paths::default(),
        }
    }

    /// Full-size settings: 512-entry codebooks, a 12-layer GPT over 29-step windows.
    pub fn paper() -> Self {
        Self {
            feature_dim: choreo_core::music::DEFAULT_FEATURE_DIM,
            corpus: SyntheticCorpusSpec {
                frames: 240,
                joints: 24,
                ..SyntheticCorpusSpec::default()
            },
            vqvae: VqVaeConfig::default(),
            vqvae_train: VqSchedule::default(),
            gpt: GptConfig::default(),
            gpt_train: GptSchedule::default(),
            actor_critic: ActorCriticSection {
                critic_layers: 3,
                rewards: RewardConfig::default(),
                schedule: AcSchedule::default(),
                probe_sequences: 0,
            },
            eval: EvalConfig::default(),
            paths: Paths::default(),
        }
    }

    pub fn smoke() -> Self {
        let feature_dim = 8;
        Self {
            feature_dim,
            corpus: SyntheticCorpusSpec {
                num_sequences: 4,
                frames: 64,
                joints: 24,
                ..SyntheticCorpusSpec::default()
            },
            vqvae: VqVaeConfig {
                codebook_size: 8,
                code_dim: 8,
                downsample: 4,
                hidden: 8,
                bottleneck_blocks: 1,
                ..VqVaeConfig::default()
            },
            vqvae_train: VqSchedule {
                steps: 30,
                velocity_steps: 10,
                batch_size: 4,
                window: 32,
                lr: 1e-3,
                ..VqSchedule::default()
            },
            gpt: GptConfig {
                layers: 2,
                heads: 2,
                channels: 16,
                block_size: 4,
                codebook_size: 8,
                feature_dim,
                ..GptConfig::default()
            },
            gpt_train: GptSchedule {
                steps: 20,
                batch_size: 4,
                lr: 1e-3,
                ..GptSchedule::default()
            },
            actor_critic: ActorCriticSection {
                critic_layers: 1,
                rewards: RewardConfig::default(),
                schedule: AcSchedule {
                    epochs: 2,
                    batch_size: 8,
                    start_stride: 4,
                    lr: 1e-4,
                    critic_lr: 1e-3,
                    ..AcSchedule::default()
                },
                probe_sequences: 2,
            },
            eval: EvalConfig::default(),
            paths: Paths::default(),
        }
    }

    pub fn profile(p: Profile) -> Self {
        match p {
            Profile::Smoke => Self::smoke(),
            Profile::Desk => Self::desk(),
            Profile::Paper => Self::paper(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.vqvae.validate()?;
        self.gpt.validate()?;
        self.actor_critic.rewards.validate()?;
        if self.gpt.codebook_size != self.vqvae.codebook_size {
            return Err(CliError::Config(format!(
                "gpt.codebook_size {} differs from vqvae.codebook_size {}",
                self.gpt.codebook_size, self.vqvae.codebook_size
            )));
        }
        if self.gpt.feature_dim != self.feature_dim {
            return Err(CliError::Config(format!(
                "gpt.feature_dim {} differs from feature_dim {}",
                self.gpt.feature_dim, self.feature_dim
            )));
        }
        Ok(())
    }

    /// Applies `--seed` to every seeded stage.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.corpus.seed = seed;
        self.vqvae_train.seed = seed;
        self.gpt_train.seed = seed;
        self.actor_critic.schedule.seed = seed;
        self
    }
}
