use crate::error::{Error, Result};
use crate::params::{Binding, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::{Precision, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Adam with global-norm gradient clipping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
    pub t: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 1.0,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        let sq: f64 = grads.values().flat_map(|g| g.data.iter()).map(|x| x * x).sum();
        let norm = sq.sqrt();
        if !norm.is_finite() {
            return Err(Error::Numeric("non-finite gradient norm".into()));
        }
        let clip = if norm > self.clip_norm { self.clip_norm / norm } else { 1.0 };
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, param) in store.iter_mut() {
            let g = match grads.get(name) {
                Some(g) => g,
                None => continue,
            };
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(&param.shape));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(&param.shape));
            for i in 0..param.data.len() {
                let gi = g.data[i] * clip;
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * gi;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m.data[i] / bc1;
                let vh = v.data[i] / bc2;
                param.data[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Central-finite-difference check of analytic gradients.
///
/// `f` rebuilds the scalar loss from a fresh tape + binding on every call;
/// it must be deterministic (any randomness fixed by the caller). Up to
/// `coords_per_param` coordinates of each parameter are sampled. Returns
/// the max of |analytic - central difference| / max(1, |central difference|).
pub fn grad_check<F>(
    store: &ParamStore,
    eps: f64,
    coords_per_param: usize,
    seed: u64,
    f: F,
) -> Result<f64>
where
    F: Fn(&mut Tape, &Binding) -> Result<Var>,
{
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::Precondition(format!("grad_check eps {eps} outside [1e-6, 1e-3]")));
    }
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new(Precision::F64);
        let binding = Binding::bind_all(&mut tape, s)?;
        let loss = f(&mut tape, &binding)?;
        let v = tape.value(loss);
        if v.numel() != 1 {
            return Err(Error::Dimension("grad_check loss must be scalar".into()));
        }
        Ok(v.data[0])
    };

    let v1 = eval(store)?;
    let v2 = eval(store)?;
    if v1 != v2 {
        return Err(Error::Determinism(format!("two evaluations differ: {v1} vs {v2}")));
    }

    // analytic gradients
    let mut tape = Tape::new(Precision::F64);
    let binding = Binding::bind_all(&mut tape, store)?;
    let loss = f(&mut tape, &binding)?;
    let grads = tape.backward(loss);
    let analytic = binding.collect_grads(store, &grads);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel = 0.0f64;
    for (name, param) in store.iter() {
        let n = param.numel();
        let coords: Vec<usize> = if n <= coords_per_param {
            (0..n).collect()
        } else {
            (0..coords_per_param).map(|_| rng.random_range(0..n)).collect()
        };
        for idx in coords {
            let mut plus = store.clone();
            plus.get_mut(name)?.data[idx] += eps;
            let mut minus = store.clone();
            minus.get_mut(name)?.data[idx] -= eps;
            let fd = (eval(&plus)? - eval(&minus)?) / (2.0 * eps);
            let ana = analytic[name].data[idx];
            let rel = (ana - fd).abs() / fd.abs().max(1.0);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
