//! Naive scalar-loop reference implementations used by the acceptance
//! tests. Everything here is written with plain nested loops over
//! `Vec<Vec<f64>>` matrices so the production tensor/tape code can be
//! checked against an independent oracle.

#![allow(dead_code)]

use memact::memory::{timestep_encoding, MemoryEntry};
use memact::params::ParamStore;
use memact::Tensor;

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(t: &Tensor) -> Mat {
    let (r, c) = (t.rows(), t.cols());
    (0..r).map(|i| (0..c).map(|j| t.at(i, j)).collect()).collect()
}

pub fn max_abs_diff(a: &Mat, t: &Tensor) -> f64 {
    let mut worst = 0.0f64;
    assert_eq!(a.len(), t.rows(), "row count mismatch");
    for (i, row) in a.iter().enumerate() {
        assert_eq!(row.len(), t.cols(), "col count mismatch");
        for (j, v) in row.iter().enumerate() {
            worst = worst.max((v - t.at(i, j)).abs());
        }
    }
    worst
}

/// y = x W + b with `W` stored fan_in x fan_out and `b` broadcast per row.
pub fn linear(store: &ParamStore, name: &str, x: &Mat) -> Mat {
    let w = store.get(&format!("{name}.w")).unwrap();
    let b = store.get(&format!("{name}.b")).unwrap();
    let mut out = vec![vec![0.0; w.cols()]; x.len()];
    for (i, row) in x.iter().enumerate() {
        for j in 0..w.cols() {
            let mut acc = b.data[j];
            for (k, v) in row.iter().enumerate() {
                acc += v * w.at(k, j);
            }
            out[i][j] = acc;
        }
    }
    out
}

/// Row-wise layer norm with learned gain/bias, population variance,
/// epsilon 1e-5 (matching the tape op).
pub fn layer_norm(store: &ParamStore, name: &str, x: &Mat) -> Mat {
    let gain = store.get(&format!("{name}.g")).unwrap();
    let bias = store.get(&format!("{name}.b")).unwrap();
    let eps = 1e-5;
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let denom = (var + eps).sqrt();
            row.iter()
                .enumerate()
                .map(|(j, v)| (v - mean) / denom * gain.data[j] + bias.data[j])
                .collect()
        })
        .collect()
}

pub fn softmax_row(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|e| e / z).collect()
}

/// Multi-head scaled dot-product attention with q/k/v/o projections under
/// `<prefix>.{q,k,v,o}`; heads split the feature axis, per-head scale
/// 1/sqrt(d/heads).
pub fn attention(
    store: &ParamStore,
    prefix: &str,
    heads: usize,
    query: &Mat,
    keys: &Mat,
    values: &Mat,
) -> Mat {
    let d = query[0].len();
    let dh = d / heads;
    let q = linear(store, &format!("{prefix}.q"), query);
    let k = linear(store, &format!("{prefix}.k"), keys);
    let v = linear(store, &format!("{prefix}.v"), values);
    let mut merged = vec![vec![0.0; d]; query.len()];
    for h in 0..heads {
        let c0 = h * dh;
        for i in 0..q.len() {
            let mut scores = vec![0.0; k.len()];
            for (s, krow) in k.iter().enumerate() {
                let mut dot = 0.0;
                for t in 0..dh {
                    dot += q[i][c0 + t] * krow[c0 + t];
                }
                scores[s] = dot / (dh as f64).sqrt();
            }
            let weights = softmax_row(&scores);
            for t in 0..dh {
                let mut acc = 0.0;
                for (s, w) in weights.iter().enumerate() {
                    acc += w * v[s][c0 + t];
                }
                merged[i][c0 + t] = acc;
            }
        }
    }
    linear(store, &format!("{prefix}.o"), &merged)
}

pub fn relu_mat(x: &Mat) -> Mat {
    x.iter().map(|r| r.iter().map(|v| v.max(0.0)).collect()).collect()
}

pub fn add_mat(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x + y).collect())
        .collect()
}

/// Reference for one retrieval stream: keys are entries plus (optionally)
/// sinusoidal timestep encodings, values are the raw entries; each of the
/// two layers runs LN(query) -> attention -> attended + FFN(LN(attended)).
pub fn stream_retrieve(
    store: &ParamStore,
    prefix: &str,
    heads: usize,
    use_te: bool,
    query: &Mat,
    entries: &[MemoryEntry],
) -> Mat {
    let d = query[0].len();
    let mut keys: Mat = Vec::new();
    let mut values: Mat = Vec::new();
    for e in entries {
        let rows = to_mat(&e.value);
        let te = timestep_encoding(e.timestep, d).unwrap();
        let te_val = if use_te {
            linear(store, &format!("{prefix}.vte"), &vec![te.data.clone()])
        } else {
            vec![vec![0.0; d]]
        };
        for row in rows {
            if use_te {
                keys.push(row.iter().enumerate().map(|(j, v)| v + te.data[j]).collect());
                values.push(row.iter().enumerate().map(|(j, v)| v + te_val[0][j]).collect());
            } else {
                keys.push(row.clone());
                values.push(row);
            }
        }
    }
    let mut h = query.clone();
    for l in 0..2 {
        let ln_q = layer_norm(store, &format!("{prefix}.l{l}.qnorm"), &h);
        let attended = attention(store, &format!("{prefix}.l{l}.attn"), heads, &ln_q, &keys, &values);
        let ln_a = layer_norm(store, &format!("{prefix}.l{l}.ffn.norm"), &attended);
        let f1 = relu_mat(&linear(store, &format!("{prefix}.l{l}.ffn.fc1"), &ln_a));
        let f2 = linear(store, &format!("{prefix}.l{l}.ffn.fc2"), &f1);
        h = add_mat(&attended, &f2);
    }
    h
}
