//! Two-stream bounded memory bank with attention retrieval, gated fusion
//! and similarity-merge consolidation.
//!
//! Each environment step stores one perceptual entry (N_p x d_p) and one
//! cognitive entry (1 x d_c), both timestamped. Retrieval cross-attends
//! from the current working-memory tokens to the stacked bank entries:
//! keys carry a sinusoidal timestep encoding, and values carry a learned
//! (zero-initialized) projection of the same encoding, so retrieved
//! history can expose *when* entries were stored even when their contents
//! are identical — the defining situation in aliased tasks. When a stream
//! exceeds its capacity, the most cosine-similar adjacent pair is merged
//! by averaging (values and timesteps).

use crate::attn::attention;
use crate::error::{Error, Result};
use crate::params::{Binding, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::{cosine, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    Perceptual,
    Cognitive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    #[default]
    Gate,
    Add,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Consolidation {
    #[default]
    Merge,
    Fifo,
}

/// One stored entry. Timestep is real-valued so merged entries can carry
/// the mean of their parents' timesteps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub value: Tensor,
    pub timestep: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemoryBank {
    pub perceptual: Vec<MemoryEntry>,
    pub cognitive: Vec<MemoryEntry>,
    pub capacity: usize,
}

impl MemoryBank {
    pub fn new(capacity: usize) -> Self {
        MemoryBank { perceptual: Vec::new(), cognitive: Vec::new(), capacity }
    }

    pub fn reset(&mut self) {
        self.perceptual.clear();
        self.cognitive.clear();
    }

    pub fn is_empty(&self) -> bool {
        self.perceptual.is_empty() && self.cognitive.is_empty()
    }

    pub fn last_timestep(&self) -> Option<f64> {
        let p = self.perceptual.last().map(|e| e.timestep);
        let c = self.cognitive.last().map(|e| e.timestep);
        match (p, c) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (Some(a), None) => Some(a),
            (None, Some(b)) => Some(b),
            (None, None) => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemoryConfig {
    pub n_p: usize,
    pub d_p: usize,
    pub d_c: usize,
    pub capacity: usize,
    pub heads_perceptual: usize,
    pub heads_cognitive: usize,
    pub use_timestep_pe: bool,
    pub use_perceptual: bool,
    pub use_cognitive: bool,
    pub fusion: Fusion,
    pub consolidation: Consolidation,
}

impl MemoryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 {
            return Err(Error::Config("memory capacity must be positive".into()));
        }
        if self.d_p % 2 != 0 || self.d_c % 2 != 0 {
            return Err(Error::Config("d_p and d_c must be even for timestep encodings".into()));
        }
        if self.heads_perceptual == 0 || self.d_p % self.heads_perceptual != 0 {
            return Err(Error::Config("heads_perceptual must divide d_p".into()));
        }
        if self.heads_cognitive == 0 || self.d_c % self.heads_cognitive != 0 {
            return Err(Error::Config("heads_cognitive must divide d_c".into()));
        }
        Ok(())
    }
}

/// Sinusoidal timestep encoding:
/// TE(t)[2k] = sin(t / 10000^(2k/d)), TE(t)[2k+1] = cos(t / 10000^(2k/d)).
pub fn timestep_encoding(t: f64, d: usize) -> Result<Tensor> {
    if d == 0 || d % 2 != 0 {
        return Err(Error::Config(format!("timestep encoding dim {d} must be even")));
    }
    if t < 0.0 {
        return Err(Error::Precondition("timestep must be nonnegative".into()));
    }
    let mut data = vec![0.0; d];
    for k in 0..d / 2 {
        let freq = 10000f64.powf(-(2.0 * k as f64) / d as f64);
        data[2 * k] = (t * freq).sin();
        data[2 * k + 1] = (t * freq).cos();
    }
    Tensor::new(vec![1, d], data)
}

const RETRIEVAL_LAYERS: usize = 2;
const FFN_MULT: usize = 4;

fn stream_prefix(stream: Stream) -> &'static str {
    match stream {
        Stream::Perceptual => "mem.per",
        Stream::Cognitive => "mem.cog",
    }
}

pub fn init_memory_params<R: Rng>(
    store: &mut ParamStore,
    cfg: &MemoryConfig,
    rng: &mut R,
) -> Result<()> {
    cfg.validate()?;
    for (stream, d) in [(Stream::Perceptual, cfg.d_p), (Stream::Cognitive, cfg.d_c)] {
        let p = stream_prefix(stream);
        for l in 0..RETRIEVAL_LAYERS {
            store.init_norm(&format!("{p}.l{l}.qnorm"), d)?;
            for proj in ["q", "k", "v", "o"] {
                store.init_linear(&format!("{p}.l{l}.attn.{proj}"), d, d, rng)?;
            }
            store.init_norm(&format!("{p}.l{l}.ffn.norm"), d)?;
            store.init_linear(&format!("{p}.l{l}.ffn.fc1"), d, FFN_MULT * d, rng)?;
            store.init_linear(&format!("{p}.l{l}.ffn.fc2"), FFN_MULT * d, d, rng)?;
        }
        store.init_linear(&format!("{p}.gate.fc1"), 2 * d, d, rng)?;
        // zero-init final gate layer: training starts at the (x+H)/2 midpoint
        store.init_linear_zero(&format!("{p}.gate.fc2"), d, d)?;
        // zero-init value-side timestep projection: retrieval starts as
        // pure content readout and can open the time channel by gradient
        store.init_linear_zero(&format!("{p}.vte"), d, d)?;
    }
    Ok(())
}

/// Identity-flavored retrieval parameters for tests: q/k/v/o projections
/// are identity, FFN output layers are zero, norms are default. A
/// single-entry bank then retrieves exactly the stored entry.
pub fn passthrough_memory_params(cfg: &MemoryConfig) -> Result<ParamStore> {
    let mut store = ParamStore::new();
    for (stream, d) in [(Stream::Perceptual, cfg.d_p), (Stream::Cognitive, cfg.d_c)] {
        let p = stream_prefix(stream);
        for l in 0..RETRIEVAL_LAYERS {
            store.init_norm(&format!("{p}.l{l}.qnorm"), d)?;
            for proj in ["q", "k", "v", "o"] {
                store.insert(&format!("{p}.l{l}.attn.{proj}.w"), Tensor::eye(d))?;
                store.insert(&format!("{p}.l{l}.attn.{proj}.b"), Tensor::zeros(&[1, d]))?;
            }
            store.init_norm(&format!("{p}.l{l}.ffn.norm"), d)?;
            store.init_linear_zero(&format!("{p}.l{l}.ffn.fc1"), d, FFN_MULT * d)?;
            store.init_linear_zero(&format!("{p}.l{l}.ffn.fc2"), FFN_MULT * d, d)?;
        }
        store.init_linear_zero(&format!("{p}.gate.fc1"), 2 * d, d)?;
        store.init_linear_zero(&format!("{p}.gate.fc2"), d, d)?;
        store.init_linear_zero(&format!("{p}.vte"), d, d)?;
    }
    Ok(store)
}

/// One stream's two-layer retrieval. Keys are bank entries plus (optional)
/// timestep encodings; values are the entries plus a learned projection
/// of the same encoding (zero at init).
fn stream_retrieve(
    tape: &mut Tape,
    binding: &Binding,
    stream: Stream,
    heads: usize,
    use_te: bool,
    query: Var,
    entries: &[MemoryEntry],
) -> Result<Var> {
    if entries.is_empty() {
        return Err(Error::Precondition("retrieve on an empty memory stream".into()));
    }
    let d = tape.value(query).cols();
    let p = stream_prefix(stream);
    let mut key_parts = Vec::with_capacity(entries.len());
    let mut val_parts = Vec::with_capacity(entries.len());
    for e in entries {
        let v = tape.leaf(e.value.clone())?;
        if use_te {
            let te = tape.leaf(timestep_encoding(e.timestep, d)?)?;
            key_parts.push(tape.add_row(v, te)?);
            let te_val = binding.linear(tape, &format!("{p}.vte"), te)?;
            val_parts.push(tape.add_row(v, te_val)?);
        } else {
            key_parts.push(v);
            val_parts.push(v);
        }
    }
    let keys = tape.concat_rows(&key_parts)?;
    let values = tape.concat_rows(&val_parts)?;

    let mut h = query;
    for l in 0..RETRIEVAL_LAYERS {
        let ln_q = binding.layer_norm(tape, &format!("{p}.l{l}.qnorm"), h)?;
        let attended = attention(tape, binding, &format!("{p}.l{l}.attn"), heads, ln_q, keys, values)?;
        let ln_a = binding.layer_norm(tape, &format!("{p}.l{l}.ffn.norm"), attended)?;
        let f1 = binding.linear(tape, &format!("{p}.l{l}.ffn.fc1"), ln_a)?;
        let f1 = tape.relu(f1)?;
        let f2 = binding.linear(tape, &format!("{p}.l{l}.ffn.fc2"), f1)?;
        h = tape.add(attended, f2)?;
    }
    Ok(h)
}

/// Retrieve context for both streams. Both bank streams must be nonempty.
pub fn retrieve(
    tape: &mut Tape,
    binding: &Binding,
    cfg: &MemoryConfig,
    wm_perceptual: Var,
    wm_cognitive: Var,
    bank: &MemoryBank,
) -> Result<(Var, Var)> {
    let h_per = stream_retrieve(
        tape,
        binding,
        Stream::Perceptual,
        cfg.heads_perceptual,
        cfg.use_timestep_pe,
        wm_perceptual,
        &bank.perceptual,
    )?;
    let h_cog = stream_retrieve(
        tape,
        binding,
        Stream::Cognitive,
        cfg.heads_cognitive,
        cfg.use_timestep_pe,
        wm_cognitive,
        &bank.cognitive,
    )?;
    Ok((h_per, h_cog))
}

/// Per-channel convex blend of current (`x`) and retrieved (`h`) tokens:
/// g = sigmoid(MLP(concat[x, h])), out = g ⊙ h + (1 - g) ⊙ x.
pub fn gate_fuse(
    tape: &mut Tape,
    binding: &Binding,
    stream: Stream,
    x: Var,
    h: Var,
) -> Result<Var> {
    if tape.value(x).shape != tape.value(h).shape {
        return Err(Error::Dimension(format!(
            "gate_fuse shapes differ: {:?} vs {:?}",
            tape.value(x).shape,
            tape.value(h).shape
        )));
    }
    let p = stream_prefix(stream);
    let cat = tape.concat_cols(&[x, h])?;
    let hidden = binding.linear(tape, &format!("{p}.gate.fc1"), cat)?;
    let hidden = tape.tanh(hidden)?;
    let logits = binding.linear(tape, &format!("{p}.gate.fc2"), hidden)?;
    let g = tape.sigmoid(logits)?;
    let gated_h = tape.mul(g, h)?;
    let neg_g = tape.scale(g, -1.0)?;
    let one_minus_g = tape.offset(neg_g, 1.0)?;
    let gated_x = tape.mul(one_minus_g, x)?;
    tape.add(gated_h, gated_x)
}

fn fuse(
    tape: &mut Tape,
    binding: &Binding,
    cfg: &MemoryConfig,
    stream: Stream,
    x: Var,
    h: Var,
) -> Result<Var> {
    match cfg.fusion {
        Fusion::Gate => gate_fuse(tape, binding, stream, x, h),
        Fusion::Add => tape.add(x, h),
    }
}

/// Adjacent pair with the highest cosine similarity (flattened values),
/// smallest index on ties.
pub fn merge_candidate(entries: &[MemoryEntry]) -> Option<usize> {
    if entries.len() < 2 {
        return None;
    }
    let mut best = 0;
    let mut best_sim = f64::NEG_INFINITY;
    for i in 0..entries.len() - 1 {
        let sim = cosine(&entries[i].value.data, &entries[i + 1].value.data);
        if sim > best_sim {
            best_sim = sim;
            best = i;
        }
    }
    Some(best)
}

fn consolidate_stream(entries: &mut Vec<MemoryEntry>, capacity: usize, policy: Consolidation) {
    while entries.len() > capacity {
        match policy {
            Consolidation::Fifo => {
                entries.remove(0);
            }
            Consolidation::Merge => {
                let i = merge_candidate(entries).expect("stream over capacity has >= 2 entries");
                let (a, b) = (&entries[i], &entries[i + 1]);
                let value = Tensor {
                    shape: a.value.shape.clone(),
                    data: a
                        .value
                        .data
                        .iter()
                        .zip(&b.value.data)
                        .map(|(x, y)| 0.5 * (x + y))
                        .collect(),
                };
                let timestep = 0.5 * (a.timestep + b.timestep);
                entries[i] = MemoryEntry { value, timestep };
                entries.remove(i + 1);
            }
        }
    }
}

/// Shrink overfull streams back to capacity.
pub fn consolidate(bank: &mut MemoryBank, policy: Consolidation) {
    let cap = bank.capacity;
    consolidate_stream(&mut bank.perceptual, cap, policy);
    consolidate_stream(&mut bank.cognitive, cap, policy);
}

/// One memory interaction: retrieve, fuse, store the fused tokens
/// (detached), consolidate. A cold (empty) stream bypasses retrieval and
/// stores the raw tokens. Disabled streams pass through untouched and are
/// never stored.
pub fn step(
    tape: &mut Tape,
    binding: &Binding,
    cfg: &MemoryConfig,
    wm_perceptual: Var,
    wm_cognitive: Var,
    timestep: u64,
    bank: &mut MemoryBank,
) -> Result<(Var, Var)> {
    let t = timestep as f64;
    if let Some(last) = bank.last_timestep() {
        if t <= last {
            return Err(Error::Ordering(format!(
                "timestep {t} not greater than stored {last}"
            )));
        }
    }

    let mut handle_stream = |tape: &mut Tape,
                             stream: Stream,
                             enabled: bool,
                             heads: usize,
                             x: Var|
     -> Result<Var> {
        if !enabled {
            return Ok(x);
        }
        let entries = match stream {
            Stream::Perceptual => &bank.perceptual,
            Stream::Cognitive => &bank.cognitive,
        };
        let fused = if entries.is_empty() {
            x
        } else {
            let h = stream_retrieve(tape, binding, stream, heads, cfg.use_timestep_pe, x, entries)?;
            fuse(tape, binding, cfg, stream, x, h)?
        };
        let entry = MemoryEntry { value: tape.value(fused).clone(), timestep: t };
        match stream {
            Stream::Perceptual => bank.perceptual.push(entry),
            Stream::Cognitive => bank.cognitive.push(entry),
        }
        Ok(fused)
    };

    let p_out = handle_stream(tape, Stream::Perceptual, cfg.use_perceptual, cfg.heads_perceptual, wm_perceptual)?;
    let c_out = handle_stream(tape, Stream::Cognitive, cfg.use_cognitive, cfg.heads_cognitive, wm_cognitive)?;
    consolidate(bank, cfg.consolidation);
    Ok((p_out, c_out))
}

/// Debug snapshot: header line plus one JSON line per entry,
/// `(stream, timestep, flat values)`.
pub fn write_snapshot<W: Write>(bank: &MemoryBank, mut w: W) -> Result<()> {
    #[derive(Serialize)]
    struct Header<'a> {
        format: &'a str,
        version: u32,
        capacity: usize,
    }
    #[derive(Serialize)]
    struct Line<'a> {
        stream: Stream,
        timestep: f64,
        shape: &'a [usize],
        values: &'a [f64],
    }
    let header = Header { format: "memact-bank", version: 1, capacity: bank.capacity };
    writeln!(w, "{}", serde_json::to_string(&header).map_err(io_err)?)?;
    for (stream, entries) in
        [(Stream::Perceptual, &bank.perceptual), (Stream::Cognitive, &bank.cognitive)]
    {
        for e in entries {
            let line = Line { stream, timestep: e.timestep, shape: &e.value.shape, values: &e.value.data };
            writeln!(w, "{}", serde_json::to_string(&line).map_err(io_err)?)?;
        }
    }
    Ok(())
}

pub fn read_snapshot<R: BufRead>(r: R) -> Result<MemoryBank> {
    #[derive(Deserialize)]
    struct Header {
        format: String,
        #[allow(dead_code)]
        version: u32,
        capacity: usize,
    }
    #[derive(Deserialize)]
    struct Line {
        stream: Stream,
        timestep: f64,
        shape: Vec<usize>,
        values: Vec<f64>,
    }
    let mut lines = r.lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Data("empty bank snapshot".into()))??;
    let header: Header =
        serde_json::from_str(&first).map_err(|e| Error::Data(format!("bad snapshot header: {e}")))?;
    if header.format != "memact-bank" {
        return Err(Error::Data(format!("unexpected snapshot format {}", header.format)));
    }
    let mut bank = MemoryBank::new(header.capacity);
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line =
            serde_json::from_str(&line).map_err(|e| Error::Data(format!("bad snapshot line: {e}")))?;
        let entry = MemoryEntry { value: Tensor::new(parsed.shape, parsed.values)?, timestep: parsed.timestep };
        match parsed.stream {
            Stream::Perceptual => bank.perceptual.push(entry),
            Stream::Cognitive => bank.cognitive.push(entry),
        }
    }
    Ok(bank)
}

fn io_err(e: serde_json::Error) -> Error {
    Error::Data(format!("serialization failed: {e}"))
}
