//! Training loop: encode → memory step → diffusion loss → clipped Adam.
//!
//! Determinism contract: every source of randomness is derived from
//! (config seed, global step) or (config seed, epoch), never from
//! accumulated RNG state, so a reloaded checkpoint continues bit-exactly.
//! The memory bank is threaded across batches within an episode, reset
//! exactly at episode boundaries, and stored in the checkpoint. Bank
//! entries are detached at insertion: gradients flow through the current
//! step's retrieval and fusion only.

use crate::config::TrainConfig;
use crate::data::{build_batches, chunk_target, epoch_order, BatchFrame};
use crate::encoder::encode;
use crate::env::Episode;
use crate::error::{Error, Result};
use crate::expert::{make_schedule, training_loss, LossSample, NormStats};
use crate::memory::MemoryBank;
use crate::optim::Adam;
use crate::params::{Binding, ParamStore};
use crate::tape::Tape;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

pub const CHECKPOINT_FORMAT: &str = "memact-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const METRICS_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: TrainConfig,
    pub step: usize,
    pub params: ParamStore,
    pub adam: Adam,
    pub norm: NormStats,
    pub bank: MemoryBank,
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut w, ckpt)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let r = std::io::BufReader::new(std::fs::File::open(path)?);
    let ckpt: Checkpoint = serde_json::from_reader(r)
        .map_err(|e| Error::Data(format!("{}: bad checkpoint: {e}", path.display())))?;
    if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
        return Err(Error::Data(format!("{}: not a supported checkpoint", path.display())));
    }
    Ok(ckpt)
}

/// Incremental metrics CSV. Columns: schema version, global step, training
/// loss, and the mean eval score when a validation pass ran at that step.
pub struct MetricsWriter {
    w: std::io::BufWriter<std::fs::File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "schema,step,loss,eval_mean_score")?;
        Ok(MetricsWriter { w })
    }

    pub fn row(&mut self, step: usize, loss: f64, eval: Option<f64>) -> Result<()> {
        match eval {
            Some(s) => writeln!(self.w, "{METRICS_SCHEMA},{step},{loss},{s}")?,
            None => writeln!(self.w, "{METRICS_SCHEMA},{step},{loss},")?,
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.w.flush()?;
        Ok(())
    }
}

/// Learning rate at `step`: linear warmup, then cosine decay toward
/// `learning_rate * lr_final_frac`. A pure function of (config, step), so
/// resumed runs recompute the identical schedule.
pub fn scheduled_lr(cfg: &TrainConfig, step: usize) -> f64 {
    let base = cfg.learning_rate;
    let warm = cfg.lr_warmup_steps;
    if step < warm {
        return base * (step + 1) as f64 / warm as f64;
    }
    if cfg.lr_final_frac >= 1.0 {
        return base;
    }
    let span = (cfg.total_steps - warm).max(1) as f64;
    let t = ((step - warm) as f64 / span).min(1.0);
    let floor = cfg.lr_final_frac;
    base * (floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
}

fn step_rng(seed: u64, step: usize, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(
        seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ tag.wrapping_mul(0xFF51_AFD7),
    )
}

/// Resumable training state: checkpoint plus the per-epoch batch cache.
pub struct Trainer<'a> {
    pub ckpt: Checkpoint,
    demos: &'a [Episode],
    epoch_cache: Option<(usize, Vec<Vec<BatchFrame>>)>,
    batches_per_epoch: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(config: &TrainConfig, demos: &'a [Episode]) -> Result<Self> {
        config.validate()?;
        let task = config.task_spec();
        if demos.is_empty() {
            return Err(Error::Data("no demonstrations".into()));
        }
        if demos.iter().any(|ep| ep.task != config.task) {
            return Err(Error::Data("demo task does not match config task".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = config.init_params(&mut rng)?;
        let norm = crate::data::action_norm_stats(demos, task.action_dim);
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: config.clone(),
            step: 0,
            params,
            adam: Adam::new(config.learning_rate),
            norm,
            bank: MemoryBank::new(config.memory_capacity),
        };
        Self::resume(ckpt, demos)
    }

    pub fn resume(ckpt: Checkpoint, demos: &'a [Episode]) -> Result<Self> {
        ckpt.config.validate()?;
        if demos.iter().any(|ep| ep.task != ckpt.config.task) {
            return Err(Error::Data("demo task does not match checkpoint task".into()));
        }
        let total_frames: usize = demos.iter().map(|ep| ep.frames.len()).sum();
        let batches_per_epoch = total_frames.div_ceil(ckpt.config.batch_size);
        Ok(Trainer { ckpt, demos, epoch_cache: None, batches_per_epoch })
    }

    fn batch(&mut self, step: usize) -> Result<Vec<BatchFrame>> {
        let epoch = step / self.batches_per_epoch;
        let idx = step % self.batches_per_epoch;
        if self.epoch_cache.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut rng = step_rng(self.ckpt.config.seed, epoch, 0xE70C);
            let order = epoch_order(self.demos.len(), &mut rng);
            let batches = build_batches(self.demos, self.ckpt.config.batch_size, &order)?;
            self.epoch_cache = Some((epoch, batches));
        }
        Ok(self.epoch_cache.as_ref().unwrap().1[idx].clone())
    }

    /// One optimization step. Returns the training loss. The checkpoint is
    /// left untouched when the loss or updated parameters are non-finite.
    pub fn step(&mut self) -> Result<f64> {
        let cfg = self.ckpt.config.clone();
        let task = cfg.task_spec();
        let enc_cfg = cfg.encoder_config();
        let mem_cfg = cfg.memory_config();
        let exp_cfg = cfg.expert_config();
        let schedule = make_schedule(cfg.k_train)?;
        let batch = self.batch(self.ckpt.step)?;

        let mut tape = Tape::new(cfg.precision);
        let binding = Binding::bind_all(&mut tape, &self.ckpt.params)?;
        let mut bank = self.ckpt.bank.clone();
        let mut conds = Vec::with_capacity(batch.len());
        let mut cleans = Vec::with_capacity(batch.len());
        for bf in &batch {
            if bf.reset {
                bank.reset();
                debug_assert!(bank.is_empty(), "bank must be empty at episode boundaries");
            }
            let ep = &self.demos[bf.episode];
            let (p, c) = encode(&mut tape, &binding, &enc_cfg, &ep.frames[bf.frame].observation)?;
            let cond = if cfg.uses_memory() {
                crate::memory::step(&mut tape, &binding, &mem_cfg, p, c, bf.frame as u64, &mut bank)?
            } else {
                (p, c)
            };
            conds.push(cond);
            cleans.push(self.ckpt.norm.normalize(&chunk_target(
                ep,
                bf.frame,
                cfg.chunk_len,
                task.action_dim,
            )));
        }
        let samples: Vec<LossSample<'_>> = conds
            .iter()
            .zip(&cleans)
            .map(|(cond, clean)| LossSample { cond: Some(*cond), clean })
            .collect();
        let mut rng = step_rng(cfg.seed, self.ckpt.step, 0x10_55);
        let loss = training_loss(&mut tape, &binding, &exp_cfg, &schedule, &samples, &mut rng)?;
        let loss_val = tape.value(loss).data[0];
        if !loss_val.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss at step {}",
                self.ckpt.step
            )));
        }
        let grads = tape.backward(loss);
        let gmap = binding.collect_grads(&self.ckpt.params, &grads);
        if gmap.values().any(|g| g.data.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numeric(format!(
                "non-finite gradient at step {}",
                self.ckpt.step
            )));
        }
        self.ckpt.adam.lr = scheduled_lr(&cfg, self.ckpt.step);
        self.ckpt.adam.step(&mut self.ckpt.params, &gmap)?;
        self.ckpt.bank = bank;
        self.ckpt.step += 1;
        Ok(loss_val)
    }
}

/// Run training to `total_steps`, writing `metrics.csv` and
/// `checkpoint.json` into `out_dir`. On a numeric failure the last good
/// checkpoint is still written before the error propagates.
pub fn train(config: &TrainConfig, demos: &[Episode], out_dir: &Path) -> Result<Checkpoint> {
    std::fs::create_dir_all(out_dir)?;
    let mut trainer = Trainer::new(config, demos)?;
    let mut metrics = MetricsWriter::create(&out_dir.join("metrics.csv"))?;
    let ckpt_path = out_dir.join("checkpoint.json");
    while trainer.ckpt.step < config.total_steps {
        let loss = match trainer.step() {
            Ok(l) => l,
            Err(e) => {
                // the failed update was not applied; persist the last good state
                save_checkpoint(&ckpt_path, &trainer.ckpt)?;
                metrics.flush()?;
                return Err(e);
            }
        };
        let step = trainer.ckpt.step;
        let eval_score = if config.eval_every > 0 && step % config.eval_every == 0 {
            let report = crate::eval::evaluate_checkpoint(
                &trainer.ckpt,
                config.eval_trials,
                &crate::eval::Ensemble::Off,
                10_000 + config.seed,
            )?;
            Some(report.mean_score)
        } else {
            None
        };
        metrics.row(step - 1, loss, eval_score)?;
    }
    metrics.flush()?;
    save_checkpoint(&ckpt_path, &trainer.ckpt)?;
    Ok(trainer.ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_demos, TaskKind, TaskSpec};

    fn small_config(task: TaskKind) -> TrainConfig {
        TrainConfig {
            task,
            batch_size: 8,
            total_steps: 4,
            n_p: 2,
            d_p: 8,
            d_c: 8,
            d_model: 16,
            n_blocks: 1,
            heads: 2,
            heads_perceptual: 2,
            chunk_len: 4,
            exec_horizon: 2,
            repeat_draws: 1,
            se_ratio: 4,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn resume_reproduces_next_step_loss() {
        let cfg = small_config(TaskKind::MarkovReach);
        let demos = generate_demos(&cfg.task_spec(), 4, 3).unwrap();
        let mut t1 = Trainer::new(&cfg, &demos).unwrap();
        for _ in 0..3 {
            t1.step().unwrap();
        }
        let saved = t1.ckpt.clone();
        let continued = t1.step().unwrap();

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck.json");
        save_checkpoint(&p, &saved).unwrap();
        let mut t2 = Trainer::resume(load_checkpoint(&p).unwrap(), &demos).unwrap();
        let resumed = t2.step().unwrap();
        assert!(
            (continued - resumed).abs() < 1e-6,
            "continued {continued} vs resumed {resumed}"
        );
    }

    #[test]
    fn memoryless_config_never_touches_bank() {
        let mut cfg = small_config(TaskKind::MarkovReach);
        cfg.use_perceptual = false;
        cfg.use_cognitive = false;
        let demos = generate_demos(&cfg.task_spec(), 3, 1).unwrap();
        let mut t = Trainer::new(&cfg, &demos).unwrap();
        for _ in 0..3 {
            t.step().unwrap();
        }
        assert!(t.ckpt.bank.is_empty());
    }

    #[test]
    fn poisoned_params_give_numeric_error_without_update() {
        let cfg = small_config(TaskKind::MarkovReach);
        let demos = generate_demos(&cfg.task_spec(), 2, 5).unwrap();
        let mut t = Trainer::new(&cfg, &demos).unwrap();
        // the output head sits past every layer norm, so a huge weight
        // there reaches the loss unnormalized and overflows it
        for v in &mut t.ckpt.params.get_mut("ae.head.w").unwrap().data {
            *v = 1e200;
        }
        let step_before = t.ckpt.step;
        assert!(matches!(t.step(), Err(Error::Numeric(_))));
        assert_eq!(t.ckpt.step, step_before);
    }

    #[test]
    fn mismatched_demos_rejected() {
        let cfg = small_config(TaskKind::MarkovReach);
        let other = generate_demos(&TaskSpec::new(TaskKind::GuessWhere), 1, 0).unwrap();
        assert!(matches!(Trainer::new(&cfg, &other), Err(Error::Data(_))));
    }

    #[test]
    fn training_writes_metrics_and_checkpoint() {
        let cfg = small_config(TaskKind::MarkovReach);
        let demos = generate_demos(&cfg.task_spec(), 3, 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let ckpt = train(&cfg, &demos, dir.path()).unwrap();
        assert_eq!(ckpt.step, cfg.total_steps);
        let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "schema,step,loss,eval_mean_score");
        assert_eq!(lines.len(), 1 + cfg.total_steps);
        assert!(dir.path().join("checkpoint.json").exists());
    }
}
