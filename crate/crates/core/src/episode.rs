//! Line-delimited episode files: one JSON header line followed by one
//! JSON record per frame. Floats are serialized shortest-round-trip, so
//! files round-trip exactly and identical data produces identical bytes.
//! One file per episode, one directory per dataset.

use crate::encoder::Observation;
use crate::env::{Episode, Frame, TaskKind, TaskSpec};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub const EPISODE_FORMAT: &str = "memact-episode";
pub const EPISODE_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    task: TaskKind,
    obs_dim: usize,
    action_dim: usize,
    instruction_count: usize,
    seed: u64,
    score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Record {
    t: usize,
    obs: Vec<f64>,
    instruction: usize,
    action: Vec<f64>,
}

pub fn write_episode(path: &Path, ep: &Episode) -> Result<()> {
    let task = TaskSpec::new(ep.task);
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    let header = Header {
        format: EPISODE_FORMAT.into(),
        version: EPISODE_VERSION,
        task: ep.task,
        obs_dim: task.obs_dim,
        action_dim: task.action_dim,
        instruction_count: task.instruction_count,
        seed: ep.seed,
        score: ep.score,
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for fr in &ep.frames {
        let rec = Record {
            t: fr.t,
            obs: fr.observation.features.clone(),
            instruction: fr.observation.instruction_id,
            action: fr.action.clone(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_episode(path: &Path) -> Result<Episode> {
    let mut lines = BufReader::new(std::fs::File::open(path)?).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::Data(format!("{}: empty episode file", path.display())))??;
    let header: Header = serde_json::from_str(&header_line)
        .map_err(|e| Error::Data(format!("{}: bad header: {e}", path.display())))?;
    if header.format != EPISODE_FORMAT {
        return Err(Error::Data(format!("{}: not an episode file", path.display())));
    }
    if header.version != EPISODE_VERSION {
        return Err(Error::Data(format!(
            "{}: unsupported episode version {}",
            path.display(),
            header.version
        )));
    }
    let task = TaskSpec::new(header.task);
    if header.obs_dim != task.obs_dim || header.action_dim != task.action_dim {
        return Err(Error::Data(format!(
            "{}: dims {}x{} do not match task {}",
            path.display(),
            header.obs_dim,
            header.action_dim,
            header.task.name()
        )));
    }
    let mut frames = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("{}: record {i}: {e}", path.display())))?;
        if rec.obs.len() != task.obs_dim || rec.action.len() != task.action_dim {
            return Err(Error::Data(format!(
                "{}: record {i} has wrong dims",
                path.display()
            )));
        }
        if rec.t != frames.len() {
            return Err(Error::Data(format!(
                "{}: record {i}: timestep {} out of order",
                path.display(),
                rec.t
            )));
        }
        frames.push(Frame {
            t: rec.t,
            observation: Observation { features: rec.obs, instruction_id: rec.instruction },
            action: rec.action,
        });
    }
    Ok(Episode { task: header.task, seed: header.seed, score: header.score, frames })
}

pub fn write_dataset(dir: &Path, episodes: &[Episode]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, ep) in episodes.iter().enumerate() {
        write_episode(&dir.join(format!("ep_{i:05}.jsonl")), ep)?;
    }
    Ok(())
}

/// Load every `ep_*.jsonl` in `dir`, ordered by filename.
pub fn read_dataset(dir: &Path) -> Result<Vec<Episode>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("ep_") && n.ends_with(".jsonl"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Data(format!("{}: no episode files found", dir.display())));
    }
    paths.iter().map(|p| read_episode(p)).collect()
}
