//! Ablation runner over the five memory axes: stream selection, bank
//! capacity, timestep encoding, fusion rule, and consolidation policy.
//! Every variant trains on the same demos with the same seed and is
//! evaluated on the same trial seeds, so rows differ only by the axis
//! under test.

use crate::config::TrainConfig;
use crate::env::{Episode, TaskKind};
use crate::error::{Error, Result};
use crate::eval::{evaluate_checkpoint, Ensemble};
use crate::memory::{Consolidation, Fusion};
use crate::train::{train, METRICS_SCHEMA};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    MemoryType,
    Length,
    Retrieval,
    Fusion,
    Consolidation,
}

pub const ALL_AXES: [Axis; 5] =
    [Axis::MemoryType, Axis::Length, Axis::Retrieval, Axis::Fusion, Axis::Consolidation];

impl Axis {
    pub fn name(&self) -> &'static str {
        match self {
            Axis::MemoryType => "memory_type",
            Axis::Length => "length",
            Axis::Retrieval => "retrieval",
            Axis::Fusion => "fusion",
            Axis::Consolidation => "consolidation",
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "memory_type" => Ok(Axis::MemoryType),
            "length" => Ok(Axis::Length),
            "retrieval" => Ok(Axis::Retrieval),
            "fusion" => Ok(Axis::Fusion),
            "consolidation" => Ok(Axis::Consolidation),
            other => Err(Error::Config(format!("unknown ablation axis {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub axis: String,
    pub variant: String,
    pub task: TaskKind,
    pub mean_score: f64,
    pub success_rate: f64,
    pub seed: u64,
}

/// The (variant name, config) list for one axis.
pub fn axis_variants(base: &TrainConfig, axis: Axis) -> Vec<(String, TrainConfig)> {
    let mut out = Vec::new();
    let mut push = |name: &str, f: &dyn Fn(&mut TrainConfig)| {
        let mut cfg = base.clone();
        f(&mut cfg);
        out.push((name.to_string(), cfg));
    };
    match axis {
        Axis::MemoryType => {
            push("cog_only", &|c| c.use_perceptual = false);
            push("per_only", &|c| c.use_cognitive = false);
            push("both", &|_| {});
        }
        Axis::Length => {
            for cap in [4usize, 16, 64] {
                push(&format!("len_{cap}"), &move |c| c.memory_capacity = cap);
            }
        }
        Axis::Retrieval => {
            push("with_te", &|c| c.use_timestep_pe = true);
            push("without_te", &|c| c.use_timestep_pe = false);
        }
        Axis::Fusion => {
            push("gate", &|c| c.fusion = Fusion::Gate);
            push("add", &|c| c.fusion = Fusion::Add);
        }
        Axis::Consolidation => {
            push("merge", &|c| c.consolidation = Consolidation::Merge);
            push("fifo", &|c| c.consolidation = Consolidation::Fifo);
        }
    }
    out
}

/// Train and evaluate every variant along the requested axes. `out_dir`
/// receives one training subdirectory per variant plus `ablation.csv`.
pub fn run_ablation(
    base: &TrainConfig,
    axes: &[Axis],
    demos: &[Episode],
    trials: usize,
    eval_seed: u64,
    out_dir: &Path,
) -> Result<Vec<AblationRow>> {
    base.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let mut rows = Vec::new();
    for axis in axes {
        for (variant, cfg) in axis_variants(base, *axis) {
            let sub = out_dir.join(format!("{}_{variant}", axis.name()));
            let ckpt = train(&cfg, demos, &sub)?;
            let report = evaluate_checkpoint(&ckpt, trials, &Ensemble::Off, eval_seed)?;
            rows.push(AblationRow {
                axis: axis.name().into(),
                variant,
                task: cfg.task,
                mean_score: report.mean_score,
                success_rate: report.success_rate,
                seed: cfg.seed,
            });
        }
    }
    write_rows(&out_dir.join("ablation.csv"), &rows)?;
    Ok(rows)
}

pub fn write_rows(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "schema,axis,variant,task,mean_score,success_rate,seed")?;
    for r in rows {
        writeln!(
            w,
            "{METRICS_SCHEMA},{},{},{},{},{},{}",
            r.axis,
            r.variant,
            r.task.name(),
            r.mean_score,
            r.success_rate,
            r.seed
        )?;
    }
    w.flush()?;
    Ok(())
}
