//! Multi-head scaled dot-product attention on tape vars.

use crate::error::Result;
use crate::params::Binding;
use crate::tape::{Tape, Var};

/// Attention with learned q/k/v/o projections under `<prefix>.{q,k,v,o}`.
/// `query` rows attend over `keys`/`values` rows; per-head scaling is
/// 1/sqrt(d/heads).
pub(crate) fn attention(
    tape: &mut Tape,
    binding: &Binding,
    prefix: &str,
    heads: usize,
    query: Var,
    keys: Var,
    values: Var,
) -> Result<Var> {
    let d = tape.value(query).cols();
    let dh = d / heads;
    let q = binding.linear(tape, &format!("{prefix}.q"), query)?;
    let k = binding.linear(tape, &format!("{prefix}.k"), keys)?;
    let v = binding.linear(tape, &format!("{prefix}.v"), values)?;
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * dh, (h + 1) * dh)?;
        let kh = tape.slice_cols(k, h * dh, (h + 1) * dh)?;
        let vh = tape.slice_cols(v, h * dh, (h + 1) * dh)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scaled = tape.scale(scores, 1.0 / (dh as f64).sqrt())?;
        let weights = tape.softmax_rows(scaled)?;
        outs.push(tape.matmul(weights, vh)?);
    }
    let merged = if heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
    binding.linear(tape, &format!("{prefix}.o"), merged)
}
