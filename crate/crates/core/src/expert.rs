//! Memory-conditioned diffusion action expert.
//!
//! A DiT-style denoiser predicts the noise added to an action chunk.
//! Noisy action tokens carry a sinusoidal denoising-timestep embedding
//! and run through blocks of self-attention over (action tokens ⊕
//! cognitive token), cross-attention to the perceptual tokens, and a
//! feed-forward sublayer. Training is MSE on the noise with repeated
//! diffusion draws and condition dropout for classifier-free guidance;
//! sampling is deterministic DDIM (eta = 0) with guided noise.

use crate::attn::attention;
use crate::error::{Error, Result};
use crate::memory::timestep_encoding;
use crate::params::{Binding, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::{Precision, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// T consecutive low-dimensional actions. The gripper channel is trained
/// continuous and thresholded only at execution time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActionChunk {
    pub actions: Tensor,
}

impl ActionChunk {
    pub fn chunk_len(&self) -> usize {
        self.actions.rows()
    }

    pub fn action_dim(&self) -> usize {
        self.actions.cols()
    }

    pub fn action(&self, t: usize) -> Vec<f64> {
        let a = self.action_dim();
        self.actions.data[t * a..(t + 1) * a].to_vec()
    }
}

/// Strictly decreasing cumulative-alpha schedule.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub steps: usize,
    pub alphas_bar: Vec<f64>,
}

/// Cosine alpha-bar schedule with s = 0.008, clipped to stay strictly
/// monotone inside (0, 1].
pub fn make_schedule(k_train: usize) -> Result<NoiseSchedule> {
    if k_train < 10 {
        return Err(Error::Config(format!("k_train {k_train} < 10")));
    }
    let s = 0.008;
    let f = |u: f64| ((u + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2).cos().powi(2);
    let f0 = f(0.0);
    let mut alphas_bar = Vec::with_capacity(k_train);
    let mut prev = 1.0 + 1e-12;
    for k in 0..k_train {
        let mut a = (f(k as f64 / k_train as f64) / f0).clamp(1e-6, 1.0);
        if a >= prev {
            a = prev - 1e-9;
        }
        prev = a;
        alphas_bar.push(a);
    }
    Ok(NoiseSchedule { steps: k_train, alphas_bar })
}

/// Per-dimension action normalization statistics from a demo set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(action_dim: usize) -> Self {
        NormStats { mean: vec![0.0; action_dim], std: vec![1.0; action_dim] }
    }

    pub fn from_actions<'a, I: Iterator<Item = &'a [f64]>>(action_dim: usize, rows: I) -> Self {
        let mut sum = vec![0.0; action_dim];
        let mut sumsq = vec![0.0; action_dim];
        let mut n = 0usize;
        for row in rows {
            for (j, v) in row.iter().enumerate() {
                sum[j] += v;
                sumsq[j] += v * v;
            }
            n += 1;
        }
        let n = n.max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sumsq
            .iter()
            .zip(&mean)
            .map(|(sq, m)| ((sq / n - m * m).max(0.0)).sqrt().max(1e-6))
            .collect();
        NormStats { mean, std }
    }

    pub fn normalize(&self, chunk: &Tensor) -> Tensor {
        self.map(chunk, |v, m, s| (v - m) / s)
    }

    pub fn denormalize(&self, chunk: &Tensor) -> Tensor {
        self.map(chunk, |v, m, s| v * s + m)
    }

    fn map(&self, chunk: &Tensor, f: impl Fn(f64, f64, f64) -> f64) -> Tensor {
        let a = chunk.cols();
        let mut out = chunk.clone();
        for i in 0..chunk.rows() {
            for j in 0..a {
                out.data[i * a + j] = f(chunk.data[i * a + j], self.mean[j], self.std[j]);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExpertConfig {
    pub chunk_len: usize,
    pub action_dim: usize,
    pub d_model: usize,
    pub n_blocks: usize,
    pub heads: usize,
    pub n_p: usize,
    pub d_p: usize,
    pub d_c: usize,
    pub k_train: usize,
    /// Independent (k, eps) draws per sample per loss evaluation.
    pub repeat_draws: usize,
    /// Probability of replacing the condition with the null embedding.
    pub cond_drop_prob: f64,
}

impl ExpertConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model % self.heads != 0 {
            return Err(Error::Config("heads must divide d_model".into()));
        }
        if self.d_model % 2 != 0 {
            return Err(Error::Config("d_model must be even".into()));
        }
        if !(0.0..=1.0).contains(&self.cond_drop_prob) {
            return Err(Error::Config("cond_drop_prob outside [0,1]".into()));
        }
        Ok(())
    }
}

const FFN_MULT: usize = 4;

pub fn init_expert_params<R: Rng>(
    store: &mut ParamStore,
    cfg: &ExpertConfig,
    rng: &mut R,
) -> Result<()> {
    cfg.validate()?;
    let d = cfg.d_model;
    store.init_linear("ae.in", cfg.action_dim, d, rng)?;
    // row positional embedding: self-attention alone is permutation
    // equivariant over chunk rows, so without it the denoiser cannot bind
    // "first action" vs "second action" to specific rows
    store.insert("ae.pos", Tensor::randn(&[cfg.chunk_len, d], 1.0, rng))?;
    store.init_linear("ae.ts.fc1", d, d, rng)?;
    store.init_linear("ae.ts.fc2", d, d, rng)?;
    // conditioning norms: memory fusion is recursive and can change the
    // scale of fused tokens over an episode, so the denoiser normalizes
    // conditioning tokens before projecting them
    store.init_norm("ae.cond_cnorm", cfg.d_c)?;
    store.init_norm("ae.cond_pnorm", cfg.d_p)?;
    store.init_linear("ae.cproj", cfg.d_c, d, rng)?;
    store.init_linear("ae.pproj", cfg.d_p, d, rng)?;
    store.insert("ae.null_c", Tensor::randn(&[1, cfg.d_c], 0.5, rng))?;
    store.insert("ae.null_p", Tensor::randn(&[cfg.n_p, cfg.d_p], 0.5, rng))?;
    for b in 0..cfg.n_blocks {
        store.init_norm(&format!("ae.b{b}.sa.norm"), d)?;
        for proj in ["q", "k", "v", "o"] {
            store.init_linear(&format!("ae.b{b}.sa.{proj}"), d, d, rng)?;
        }
        store.init_norm(&format!("ae.b{b}.ca.norm"), d)?;
        for proj in ["q", "k", "v", "o"] {
            store.init_linear(&format!("ae.b{b}.ca.{proj}"), d, d, rng)?;
        }
        store.init_norm(&format!("ae.b{b}.ffn.norm"), d)?;
        store.init_linear(&format!("ae.b{b}.ffn.fc1"), d, FFN_MULT * d, rng)?;
        store.init_linear(&format!("ae.b{b}.ffn.fc2"), FFN_MULT * d, d, rng)?;
    }
    store.init_norm("ae.out_norm", d)?;
    // zero-initialized output head: eps-hat starts at exactly zero
    store.init_linear_zero("ae.head", d, cfg.action_dim)?;
    Ok(())
}

/// Predict the noise in `noisy` (a T x A chunk in normalized action
/// space) at diffusion step `k`. `cond = None` substitutes the learned
/// null embeddings for both streams.
pub fn denoise_eps(
    tape: &mut Tape,
    binding: &Binding,
    cfg: &ExpertConfig,
    noisy: Var,
    k: usize,
    cond: Option<(Var, Var)>,
) -> Result<Var> {
    if k >= cfg.k_train {
        return Err(Error::Precondition(format!("diffusion step {k} >= {}", cfg.k_train)));
    }
    let nv = tape.value(noisy);
    if nv.shape != vec![cfg.chunk_len, cfg.action_dim] {
        return Err(Error::Dimension(format!(
            "noisy chunk shape {:?}, expected {}x{}",
            nv.shape, cfg.chunk_len, cfg.action_dim
        )));
    }
    let (p_cond, c_cond) = match cond {
        Some((p, c)) => (p, c),
        None => (binding.var("ae.null_p")?, binding.var("ae.null_c")?),
    };

    let mut x = binding.linear(tape, "ae.in", noisy)?;
    let pos = binding.var("ae.pos")?;
    x = tape.add(x, pos)?;
    let ts = tape.leaf(timestep_encoding(k as f64, cfg.d_model)?)?;
    let ts = binding.linear(tape, "ae.ts.fc1", ts)?;
    let ts = tape.tanh(ts)?;
    let ts = binding.linear(tape, "ae.ts.fc2", ts)?;
    x = tape.add_row(x, ts)?;

    let c_cond = binding.layer_norm(tape, "ae.cond_cnorm", c_cond)?;
    let p_cond = binding.layer_norm(tape, "ae.cond_pnorm", p_cond)?;
    let c_tok = binding.linear(tape, "ae.cproj", c_cond)?;
    let mut h = tape.concat_rows(&[x, c_tok])?;
    let p_ctx = binding.linear(tape, "ae.pproj", p_cond)?;

    for b in 0..cfg.n_blocks {
        let ln = binding.layer_norm(tape, &format!("ae.b{b}.sa.norm"), h)?;
        let sa = attention(tape, binding, &format!("ae.b{b}.sa"), cfg.heads, ln, ln, ln)?;
        h = tape.add(h, sa)?;
        let ln = binding.layer_norm(tape, &format!("ae.b{b}.ca.norm"), h)?;
        let ca = attention(tape, binding, &format!("ae.b{b}.ca"), cfg.heads, ln, p_ctx, p_ctx)?;
        h = tape.add(h, ca)?;
        let ln = binding.layer_norm(tape, &format!("ae.b{b}.ffn.norm"), h)?;
        let f = binding.linear(tape, &format!("ae.b{b}.ffn.fc1"), ln)?;
        let f = tape.relu(f)?;
        let f = binding.linear(tape, &format!("ae.b{b}.ffn.fc2"), f)?;
        h = tape.add(h, f)?;
    }

    let action_tokens = tape.slice_rows(h, 0, cfg.chunk_len)?;
    let normed = binding.layer_norm(tape, "ae.out_norm", action_tokens)?;
    binding.linear(tape, "ae.head", normed)
}

/// ‖eps_hat − eps‖² as a 1x1 var.
pub fn noise_sq_error(tape: &mut Tape, eps_hat: Var, eps: Var) -> Result<Var> {
    let diff = tape.sub(eps_hat, eps)?;
    let sq = tape.mul(diff, diff)?;
    tape.sum(sq)
}

/// One training sample: optional condition vars plus the clean chunk in
/// normalized action space.
pub struct LossSample<'a> {
    pub cond: Option<(Var, Var)>,
    pub clean: &'a Tensor,
}

/// Diffusion MSE over a batch: for every sample draw `repeat_draws`
/// independent (k, eps) pairs, noise the clean chunk, and average
/// ‖eps_hat − eps‖² over all draws. Conditions are dropped with
/// `cond_drop_prob` per draw.
pub fn training_loss<R: Rng>(
    tape: &mut Tape,
    binding: &Binding,
    cfg: &ExpertConfig,
    schedule: &NoiseSchedule,
    batch: &[LossSample<'_>],
    rng: &mut R,
) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::Precondition("empty training batch".into()));
    }
    let mut total: Option<Var> = None;
    let mut draws = 0usize;
    for sample in batch {
        if sample.clean.shape != vec![cfg.chunk_len, cfg.action_dim] {
            return Err(Error::Dimension(format!(
                "clean chunk shape {:?}, expected {}x{}",
                sample.clean.shape, cfg.chunk_len, cfg.action_dim
            )));
        }
        if sample.clean.data.iter().any(|v| v.abs() > 5.0) {
            return Err(Error::Data(
                "normalized action outside [-5, 5]; actions must be normalized".into(),
            ));
        }
        for _ in 0..cfg.repeat_draws {
            let k = rng.random_range(0..schedule.steps);
            let ab = schedule.alphas_bar[k];
            let eps = Tensor::randn(&[cfg.chunk_len, cfg.action_dim], 1.0, rng);
            let noisy = Tensor {
                shape: eps.shape.clone(),
                data: sample
                    .clean
                    .data
                    .iter()
                    .zip(&eps.data)
                    .map(|(c, e)| ab.sqrt() * c + (1.0 - ab).sqrt() * e)
                    .collect(),
            };
            let dropped = rng.random::<f64>() < cfg.cond_drop_prob;
            let cond = if dropped { None } else { sample.cond };
            let noisy = tape.leaf(noisy)?;
            let eps = tape.leaf(eps)?;
            let eps_hat = denoise_eps(tape, binding, cfg, noisy, k, cond)?;
            let term = noise_sq_error(tape, eps_hat, eps)?;
            total = Some(match total {
                Some(acc) => tape.add(acc, term)?,
                None => term,
            });
            draws += 1;
        }
    }
    tape.scale(total.expect("nonempty batch"), 1.0 / draws as f64)
}

/// eps_uncond + scale * (eps_cond − eps_uncond).
pub fn cfg_combine(eps_cond: &Tensor, eps_uncond: &Tensor, scale: f64) -> Result<Tensor> {
    if eps_cond.shape != eps_uncond.shape {
        return Err(Error::Dimension("cfg_combine shape mismatch".into()));
    }
    Ok(Tensor {
        shape: eps_cond.shape.clone(),
        data: eps_cond
            .data
            .iter()
            .zip(&eps_uncond.data)
            .map(|(c, u)| u + scale * (c - u))
            .collect(),
    })
}

/// Deterministic DDIM (eta = 0) driven by an arbitrary noise predictor.
/// `n_steps` must divide the training schedule evenly; the visited steps
/// are the evenly spaced descending subsequence. The x0 prediction is
/// clipped to [-4, 4] in normalized space.
pub fn ddim_sample_with<F>(
    schedule: &NoiseSchedule,
    chunk_len: usize,
    action_dim: usize,
    n_steps: usize,
    seed: u64,
    mut predict: F,
) -> Result<Tensor>
where
    F: FnMut(&Tensor, usize) -> Result<Tensor>,
{
    if n_steps == 0 || schedule.steps % n_steps != 0 {
        return Err(Error::Precondition(format!(
            "n_steps {n_steps} must evenly divide schedule steps {}",
            schedule.steps
        )));
    }
    let stride = schedule.steps / n_steps;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Tensor::randn(&[chunk_len, action_dim], 1.0, &mut rng);
    for i in (0..n_steps).rev() {
        let k = i * stride;
        let ab = schedule.alphas_bar[k];
        let ab_prev = if i == 0 { 1.0 } else { schedule.alphas_bar[(i - 1) * stride] };
        let eps = predict(&x, k)?;
        let mut x0 = Tensor::zeros(&x.shape);
        for j in 0..x.data.len() {
            let v = (x.data[j] - (1.0 - ab).sqrt() * eps.data[j]) / ab.sqrt();
            x0.data[j] = v.clamp(-4.0, 4.0);
        }
        for j in 0..x.data.len() {
            x.data[j] = ab_prev.sqrt() * x0.data[j] + (1.0 - ab_prev).sqrt() * eps.data[j];
        }
    }
    Ok(x)
}

/// Sample an action chunk with the trained denoiser and classifier-free
/// guidance, then denormalize. Pure function of (cond, params, seed).
#[allow(clippy::too_many_arguments)]
pub fn ddim_sample(
    store: &ParamStore,
    cfg: &ExpertConfig,
    schedule: &NoiseSchedule,
    cond: Option<(&Tensor, &Tensor)>,
    n_steps: usize,
    cfg_scale: f64,
    seed: u64,
    norm: &NormStats,
) -> Result<ActionChunk> {
    if cfg_scale < 0.0 {
        return Err(Error::Config(format!("cfg_scale {cfg_scale} < 0")));
    }
    let mut tape = Tape::new(Precision::F64);
    let binding = Binding::bind_all(&mut tape, store)?;
    let cond_vars = match cond {
        Some((p, c)) => Some((tape.leaf(p.clone())?, tape.leaf(c.clone())?)),
        None => None,
    };
    let normalized = ddim_sample_with(
        schedule,
        cfg.chunk_len,
        cfg.action_dim,
        n_steps,
        seed,
        |x, k| {
            let noisy = tape.leaf(x.clone())?;
            match cond_vars {
                Some(cv) => {
                    let e_c = denoise_eps(&mut tape, &binding, cfg, noisy, k, Some(cv))?;
                    let e_c = tape.value(e_c).clone();
                    if cfg_scale == 1.0 {
                        // guidance identity: eps_g = eps_cond exactly
                        Ok(e_c)
                    } else {
                        let e_u = denoise_eps(&mut tape, &binding, cfg, noisy, k, None)?;
                        cfg_combine(&e_c, tape.value(e_u), cfg_scale)
                    }
                }
                None => {
                    let e = denoise_eps(&mut tape, &binding, cfg, noisy, k, None)?;
                    Ok(tape.value(e).clone())
                }
            }
        },
    )?;
    Ok(ActionChunk { actions: norm.denormalize(&normalized) })
}
