use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

/// Named parameter registry. BTreeMap keeps iteration order deterministic,
/// which the optimizer and checkpoint format rely on.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ParamStore {
    entries: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        self.entries.insert(name.to_string(), tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.entries.iter_mut()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|t| t.numel()).sum()
    }

    /// Linear layer init: `<name>.w` (fan_in x fan_out, std 1/sqrt(fan_in))
    /// plus `<name>.b` (1 x fan_out, zeros).
    pub fn init_linear<R: Rng>(
        &mut self,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<()> {
        let std = 1.0 / (fan_in as f64).sqrt();
        self.insert(&format!("{name}.w"), Tensor::randn(&[fan_in, fan_out], std, rng))?;
        self.insert(&format!("{name}.b"), Tensor::zeros(&[1, fan_out]))
    }

    /// Same layer shape but all-zero weights, for gates/heads that must
    /// start neutral.
    pub fn init_linear_zero(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<()> {
        self.insert(&format!("{name}.w"), Tensor::zeros(&[fan_in, fan_out]))?;
        self.insert(&format!("{name}.b"), Tensor::zeros(&[1, fan_out]))
    }

    /// Layer-norm affine params: gain ones, bias zeros.
    pub fn init_norm(&mut self, name: &str, d: usize) -> Result<()> {
        self.insert(&format!("{name}.g"), Tensor::full(&[1, d], 1.0))?;
        self.insert(&format!("{name}.b"), Tensor::zeros(&[1, d]))
    }

    /// FNV-1a over names and value bits; used as a cheap content fingerprint.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |byte: u8| {
            h ^= byte as u64;
            h = h.wrapping_mul(0x100000001b3);
        };
        for (name, t) in &self.entries {
            for b in name.as_bytes() {
                eat(*b);
            }
            for v in &t.data {
                for b in v.to_bits().to_le_bytes() {
                    eat(b);
                }
            }
        }
        h
    }
}

/// Tape-bound view of a ParamStore: every parameter inserted as a leaf var
/// at the start of a forward pass.
pub struct Binding {
    vars: HashMap<String, Var>,
}

impl Binding {
    pub fn bind_all(tape: &mut Tape, store: &ParamStore) -> Result<Binding> {
        let mut vars = HashMap::new();
        for (name, tensor) in store.iter() {
            vars.insert(name.clone(), tape.leaf(tensor.clone())?);
        }
        Ok(Binding { vars })
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("unbound parameter {name}")))
    }

    /// Apply `<name>.w`/`<name>.b` as x @ w + b.
    pub fn linear(&self, tape: &mut Tape, name: &str, x: Var) -> Result<Var> {
        let w = self.var(&format!("{name}.w"))?;
        let b = self.var(&format!("{name}.b"))?;
        let xw = tape.matmul(x, w)?;
        tape.add_row(xw, b)
    }

    pub fn layer_norm(&self, tape: &mut Tape, name: &str, x: Var) -> Result<Var> {
        let g = self.var(&format!("{name}.g"))?;
        let b = self.var(&format!("{name}.b"))?;
        tape.layer_norm(x, g, b)
    }

    /// Pull per-parameter gradients out of a finished backward pass.
    /// Parameters the loss never touched get zero gradients.
    pub fn collect_grads(
        &self,
        store: &ParamStore,
        grads: &crate::tape::Grads,
    ) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (name, tensor) in store.iter() {
            let g = self
                .vars
                .get(name)
                .and_then(|v| grads.get(*v).cloned())
                .unwrap_or_else(|| Tensor::zeros(&tensor.shape));
            out.insert(name.clone(), g);
        }
        out
    }
}
