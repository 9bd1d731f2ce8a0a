//! Training configuration: a flat TOML file covering the task, optimizer,
//! model dimensions, and the five memory ablation axes (streams, capacity,
//! timestep encoding, fusion, consolidation). Every field has a default,
//! so a config file only lists overrides.

use crate::encoder::EncoderConfig;
use crate::env::{TaskKind, TaskSpec};
use crate::error::{Error, Result};
use crate::expert::ExpertConfig;
use crate::memory::{Consolidation, Fusion, MemoryConfig};
use crate::params::ParamStore;
use crate::tensor::Precision;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub task: TaskKind,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Linear warmup from 0 to `learning_rate` over this many steps.
    pub lr_warmup_steps: usize,
    /// Cosine-decay the post-warmup rate to `learning_rate * lr_final_frac`
    /// by `total_steps`; 1.0 keeps the rate constant.
    pub lr_final_frac: f64,
    pub total_steps: usize,
    pub seed: u64,
    pub precision: Precision,

    // memory ablation axes
    pub use_perceptual: bool,
    pub use_cognitive: bool,
    pub use_timestep_pe: bool,
    pub memory_capacity: usize,
    pub fusion: Fusion,
    pub consolidation: Consolidation,

    // model dimensions
    pub n_p: usize,
    pub d_p: usize,
    pub d_c: usize,
    pub d_model: usize,
    pub n_blocks: usize,
    pub heads: usize,
    pub heads_perceptual: usize,
    pub heads_cognitive: usize,
    pub se_ratio: usize,

    // diffusion
    pub chunk_len: usize,
    pub k_train: usize,
    pub repeat_draws: usize,
    pub cond_drop_prob: f64,
    pub cfg_scale: f64,
    pub ddim_steps: usize,

    // execution / evaluation
    pub exec_horizon: usize,
    pub eval_every: usize,
    pub eval_trials: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            task: TaskKind::SeqPushButtons,
            batch_size: 16,
            learning_rate: 1e-3,
            lr_warmup_steps: 0,
            lr_final_frac: 1.0,
            total_steps: 800,
            seed: 0,
            precision: Precision::F64,
            use_perceptual: true,
            use_cognitive: true,
            use_timestep_pe: true,
            memory_capacity: 16,
            fusion: Fusion::Gate,
            consolidation: Consolidation::Merge,
            n_p: 4,
            d_p: 32,
            d_c: 32,
            d_model: 64,
            n_blocks: 2,
            heads: 4,
            heads_perceptual: 4,
            heads_cognitive: 1,
            se_ratio: 4,
            chunk_len: 16,
            k_train: 100,
            repeat_draws: 4,
            cond_drop_prob: 0.1,
            cfg_scale: 1.5,
            ddim_steps: 10,
            exec_horizon: 8,
            eval_every: 0,
            eval_trials: 20,
        }
    }
}

impl TrainConfig {
    pub fn task_spec(&self) -> TaskSpec {
        TaskSpec::new(self.task)
    }

    pub fn uses_memory(&self) -> bool {
        self.use_perceptual || self.use_cognitive
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        let task = self.task_spec();
        EncoderConfig {
            obs_dim: task.obs_dim,
            instruction_count: task.instruction_count,
            n_p: self.n_p,
            d_p: self.d_p,
            d_c: self.d_c,
            se_ratio: self.se_ratio,
        }
    }

    pub fn memory_config(&self) -> MemoryConfig {
        MemoryConfig {
            n_p: self.n_p,
            d_p: self.d_p,
            d_c: self.d_c,
            capacity: self.memory_capacity,
            heads_perceptual: self.heads_perceptual,
            heads_cognitive: self.heads_cognitive,
            use_timestep_pe: self.use_timestep_pe,
            use_perceptual: self.use_perceptual,
            use_cognitive: self.use_cognitive,
            fusion: self.fusion,
            consolidation: self.consolidation,
        }
    }

    pub fn expert_config(&self) -> ExpertConfig {
        let task = self.task_spec();
        ExpertConfig {
            chunk_len: self.chunk_len,
            action_dim: task.action_dim,
            d_model: self.d_model,
            n_blocks: self.n_blocks,
            heads: self.heads,
            n_p: self.n_p,
            d_p: self.d_p,
            d_c: self.d_c,
            k_train: self.k_train,
            repeat_draws: self.repeat_draws,
            cond_drop_prob: self.cond_drop_prob,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.total_steps == 0 {
            return Err(Error::Config("total_steps must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.lr_final_frac.is_finite() && self.lr_final_frac > 0.0 && self.lr_final_frac <= 1.0)
        {
            return Err(Error::Config("lr_final_frac must be in (0, 1]".into()));
        }
        if self.lr_warmup_steps >= self.total_steps {
            return Err(Error::Config("lr_warmup_steps must be below total_steps".into()));
        }
        if self.exec_horizon == 0 || self.exec_horizon > self.chunk_len {
            return Err(Error::Config("exec_horizon must be in 1..=chunk_len".into()));
        }
        if self.ddim_steps == 0 || self.k_train % self.ddim_steps != 0 {
            return Err(Error::Config("ddim_steps must evenly divide k_train".into()));
        }
        self.encoder_config().validate()?;
        self.memory_config().validate()?;
        self.expert_config().validate()?;
        Ok(())
    }

    /// Initialize every parameter the configured model uses. The memory
    /// block is initialized (deterministically, from the same rng stream)
    /// even when both streams are disabled so ablation variants share
    /// identical expert/encoder initializations.
    pub fn init_params<R: Rng>(&self, rng: &mut R) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        crate::encoder::init_encoder_params(&mut store, &self.encoder_config(), rng)?;
        crate::memory::init_memory_params(&mut store, &self.memory_config(), rng)?;
        crate::expert::init_expert_params(&mut store, &self.expert_config(), rng)?;
        Ok(store)
    }
}

pub fn load_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let cfg: TrainConfig = toml::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}
