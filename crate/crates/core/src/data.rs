//! Episode-grouped batching. Batches are filled with consecutive frames
//! of a single episode; when an episode ends mid-batch the remaining
//! slots continue with frames from the start of the next episode
//! (streaming queue). A batch item carries a `reset` flag on the first
//! frame of every episode so the consumer clears its memory bank exactly
//! at episode boundaries.

use crate::env::Episode;
use crate::error::{Error, Result};
use crate::expert::NormStats;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;

/// One slot of a batch: episode and frame indices into the dataset, plus
/// whether a new episode starts here.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchFrame {
    pub episode: usize,
    pub frame: usize,
    pub reset: bool,
}

/// Split the dataset (episodes visited in `order`) into batches of
/// `batch_size` frames following the streaming-queue rule. The final
/// batch may be short.
pub fn build_batches(
    dataset: &[Episode],
    batch_size: usize,
    order: &[usize],
) -> Result<Vec<Vec<BatchFrame>>> {
    if dataset.is_empty() || order.is_empty() {
        return Err(Error::Data("empty dataset".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    for &e in order {
        if dataset[e].frames.is_empty() {
            return Err(Error::Data(format!("episode {e} has no frames")));
        }
    }
    let mut batches = Vec::new();
    let mut current = Vec::with_capacity(batch_size);
    for &e in order {
        for f in 0..dataset[e].frames.len() {
            current.push(BatchFrame { episode: e, frame: f, reset: f == 0 });
            if current.len() == batch_size {
                batches.push(std::mem::replace(&mut current, Vec::with_capacity(batch_size)));
            }
        }
    }
    if !current.is_empty() {
        batches.push(current);
    }
    Ok(batches)
}

/// Shuffled episode order for one training epoch.
pub fn epoch_order<R: Rng>(n_episodes: usize, rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n_episodes).collect();
    order.shuffle(rng);
    order
}

/// Normalization statistics over every demo action.
pub fn action_norm_stats(dataset: &[Episode], action_dim: usize) -> NormStats {
    NormStats::from_actions(
        action_dim,
        dataset.iter().flat_map(|ep| ep.frames.iter().map(|fr| fr.action.as_slice())),
    )
}

/// The supervised target for a frame: the next `chunk_len` expert actions,
/// padded by repeating the episode's last action.
pub fn chunk_target(ep: &Episode, frame: usize, chunk_len: usize, action_dim: usize) -> Tensor {
    let mut data = Vec::with_capacity(chunk_len * action_dim);
    for i in 0..chunk_len {
        let idx = (frame + i).min(ep.frames.len() - 1);
        data.extend_from_slice(&ep.frames[idx].action);
    }
    Tensor { shape: vec![chunk_len, action_dim], data }
}
