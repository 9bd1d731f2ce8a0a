//! Rollout evaluation: per-trial environments with threaded memory, chunked
//! execution or adaptive action ensembling, and an immutable-parameters
//! guarantee (fingerprint checked before and after).

use crate::encoder::{encode, Observation};
use crate::env::{env_reset, env_step, scripted_expert, EnvState, TaskKind, TaskSpec};
use crate::error::{Error, Result};
use crate::expert::{ddim_sample, make_schedule};
use crate::memory::MemoryBank;
use crate::params::Binding;
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::train::Checkpoint;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

#[derive(Debug, Clone, PartialEq)]
pub enum Ensemble {
    Off,
    /// Combine overlapping chunk predictions for the current step with
    /// weights exp(-alpha * age), age counted in re-predictions, keeping
    /// the most recent `horizon` predictions.
    Adaptive { alpha: f64, horizon: usize },
}

impl std::str::FromStr for Ensemble {
    type Err = Error;

    /// `off`, `adaptive`, or `adaptive:ALPHA:HORIZON`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "off" {
            return Ok(Ensemble::Off);
        }
        let mut parts = s.split(':');
        if parts.next() != Some("adaptive") {
            return Err(Error::Config(format!("unknown ensemble mode {s:?}")));
        }
        let alpha = match parts.next() {
            None => 0.1,
            Some(a) => a
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad ensemble alpha in {s:?}")))?,
        };
        let horizon = match parts.next() {
            None => 7,
            Some(h) => h
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad ensemble horizon in {s:?}")))?,
        };
        if alpha < 0.0 || horizon == 0 {
            return Err(Error::Config("ensemble needs alpha >= 0 and horizon >= 1".into()));
        }
        Ok(Ensemble::Adaptive { alpha, horizon })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: TaskKind,
    pub trials: usize,
    pub mean_score: f64,
    pub success_rate: f64,
    pub per_trial: Vec<f64>,
    pub config_fingerprint: u64,
    pub wall_clock_secs: f64,
}

/// Anything that can drive a rollout: predicts a (T x A) action chunk in
/// raw (denormalized) action space from the current environment state.
pub trait RolloutPolicy {
    fn begin_episode(&mut self, trial_seed: u64) -> Result<()>;
    fn predict(&mut self, state: &EnvState, obs: &Observation) -> Result<Tensor>;
    /// Actions of each chunk to execute when ensembling is off.
    fn exec_horizon(&self) -> usize;
    fn fingerprint(&self) -> u64 {
        0
    }
}

/// The trained model as a rollout policy: encode, thread the memory bank
/// (reset per episode), and DDIM-sample an action chunk with CFG.
pub struct ModelPolicy<'a> {
    ckpt: &'a Checkpoint,
    bank: MemoryBank,
    trial_seed: u64,
}

impl<'a> ModelPolicy<'a> {
    pub fn new(ckpt: &'a Checkpoint) -> Result<Self> {
        ckpt.config.validate()?;
        Ok(ModelPolicy {
            ckpt,
            bank: MemoryBank::new(ckpt.config.memory_capacity),
            trial_seed: 0,
        })
    }
}

impl RolloutPolicy for ModelPolicy<'_> {
    fn begin_episode(&mut self, trial_seed: u64) -> Result<()> {
        self.bank.reset();
        self.trial_seed = trial_seed;
        Ok(())
    }

    fn predict(&mut self, state: &EnvState, obs: &Observation) -> Result<Tensor> {
        let cfg = &self.ckpt.config;
        let mut tape = Tape::new(cfg.precision);
        let binding = Binding::bind_all(&mut tape, &self.ckpt.params)?;
        let (p, c) = encode(&mut tape, &binding, &cfg.encoder_config(), obs)?;
        let (p, c) = if cfg.uses_memory() {
            crate::memory::step(
                &mut tape,
                &binding,
                &cfg.memory_config(),
                p,
                c,
                state.step_count as u64,
                &mut self.bank,
            )?
        } else {
            (p, c)
        };
        let p_t = tape.value(p).clone();
        let c_t = tape.value(c).clone();
        let seed = self
            .trial_seed
            .wrapping_mul(0x0000_0100_0000_01B3)
            .wrapping_add(state.step_count as u64);
        let chunk = ddim_sample(
            &self.ckpt.params,
            &cfg.expert_config(),
            &make_schedule(cfg.k_train)?,
            Some((&p_t, &c_t)),
            cfg.ddim_steps,
            cfg.cfg_scale,
            seed,
            &self.ckpt.norm,
        )?;
        Ok(chunk.actions)
    }

    fn exec_horizon(&self) -> usize {
        self.ckpt.config.exec_horizon
    }

    fn fingerprint(&self) -> u64 {
        self.ckpt.params.fingerprint()
    }
}

/// Privileged scripted expert wrapped as a policy (harness self-test).
pub struct ExpertOracle;

impl RolloutPolicy for ExpertOracle {
    fn begin_episode(&mut self, _trial_seed: u64) -> Result<()> {
        Ok(())
    }

    fn predict(&mut self, state: &EnvState, _obs: &Observation) -> Result<Tensor> {
        let a = scripted_expert(state)?;
        Tensor::new(vec![1, a.len()], a)
    }

    fn exec_horizon(&self) -> usize {
        1
    }
}

/// Ensemble combination for the current step over stored chunks. Returns
/// the weighted action; weights are normalized and must sum to 1.
fn ensemble_action(
    history: &VecDeque<(usize, Tensor)>,
    step: usize,
    alpha: f64,
) -> Option<Vec<f64>> {
    let newest = history.len().checked_sub(1)?;
    let mut weights = Vec::new();
    let mut rows = Vec::new();
    for (idx, (start, chunk)) in history.iter().enumerate() {
        let offset = step - start;
        if offset >= chunk.rows() {
            continue;
        }
        let age = (newest - idx) as f64;
        weights.push((-alpha * age).exp());
        let a = chunk.cols();
        rows.push(&chunk.data[offset * a..(offset + 1) * a]);
    }
    if rows.is_empty() {
        return None;
    }
    let total: f64 = weights.iter().sum();
    let mut out = vec![0.0; rows[0].len()];
    let mut check = 0.0;
    for (w, row) in weights.iter().zip(&rows) {
        let wn = w / total;
        check += wn;
        for (o, v) in out.iter_mut().zip(*row) {
            *o += wn * v;
        }
    }
    debug_assert!((check - 1.0).abs() < 1e-12, "ensemble weights must sum to 1");
    Some(out)
}

fn run_trial<P: RolloutPolicy + ?Sized>(
    policy: &mut P,
    task: &TaskSpec,
    seed: u64,
    ensemble: &Ensemble,
) -> Result<f64> {
    let (mut state, mut obs) = env_reset(task, seed)?;
    policy.begin_episode(seed)?;
    match ensemble {
        Ensemble::Off => {
            while !state.done {
                let chunk = policy.predict(&state, &obs)?;
                let e = policy.exec_horizon().min(chunk.rows());
                for i in 0..e {
                    let a = chunk.cols();
                    let action = chunk.data[i * a..(i + 1) * a].to_vec();
                    let r = env_step(&mut state, &action)?;
                    obs = r.observation;
                    if r.done {
                        break;
                    }
                }
            }
        }
        Ensemble::Adaptive { alpha, horizon } => {
            let mut history: VecDeque<(usize, Tensor)> = VecDeque::new();
            while !state.done {
                let chunk = policy.predict(&state, &obs)?;
                history.push_back((state.step_count, chunk));
                while history.len() > *horizon {
                    history.pop_front();
                }
                let action = ensemble_action(&history, state.step_count, *alpha)
                    .expect("just pushed a prediction for this step");
                let r = env_step(&mut state, &action)?;
                obs = r.observation;
            }
        }
    }
    Ok(state.score)
}

pub fn evaluate<P: RolloutPolicy + ?Sized>(
    policy: &mut P,
    task: &TaskSpec,
    trials: usize,
    ensemble: &Ensemble,
    base_seed: u64,
) -> Result<EvalReport> {
    if trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    let started = std::time::Instant::now();
    let fp_before = policy.fingerprint();
    let mut per_trial = Vec::with_capacity(trials);
    for trial in 0..trials {
        per_trial.push(run_trial(policy, task, base_seed + trial as u64, ensemble)?);
    }
    let fp_after = policy.fingerprint();
    if fp_before != fp_after {
        return Err(Error::Determinism("evaluation mutated policy parameters".into()));
    }
    let mean_score = per_trial.iter().sum::<f64>() / trials as f64;
    let success_rate =
        per_trial.iter().filter(|s| (**s - 1.0).abs() < 1e-9).count() as f64 / trials as f64;
    Ok(EvalReport {
        task: task.name,
        trials,
        mean_score,
        success_rate,
        per_trial,
        config_fingerprint: fp_before,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}

pub fn evaluate_checkpoint(
    ckpt: &Checkpoint,
    trials: usize,
    ensemble: &Ensemble,
    base_seed: u64,
) -> Result<EvalReport> {
    let task = ckpt.config.task_spec();
    let mut policy = ModelPolicy::new(ckpt)?;
    evaluate(&mut policy, &task, trials, ensemble, base_seed)
}

/// Evaluate against an explicitly named task; the checkpoint must have
/// been trained for it.
pub fn evaluate_checkpoint_on(
    ckpt: &Checkpoint,
    task: &TaskSpec,
    trials: usize,
    ensemble: &Ensemble,
    base_seed: u64,
) -> Result<EvalReport> {
    if *task != ckpt.config.task_spec() {
        return Err(Error::Config(format!(
            "checkpoint was trained for {}, not {}",
            ckpt.config.task.name(),
            task.name.name()
        )));
    }
    evaluate_checkpoint(ckpt, trials, ensemble, base_seed)
}
