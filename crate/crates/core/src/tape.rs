//! Reverse-mode autodiff over [`Tensor`] values.
//!
//! A `Tape` records every op as a node holding the forward value plus a
//! backward closure that scatters the output gradient onto the node's
//! parents. Parents always have smaller indices, so a single reverse sweep
//! computes all gradients. Tapes are single-threaded and short-lived: one
//! per forward/backward pass.

use crate::error::{Error, Result};
use crate::tensor::{matmul_raw, Precision, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

type BackFn = Box<dyn Fn(&Tensor, &mut [Tensor])>;

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    back: Option<BackFn>,
}

pub struct Tape {
    nodes: Vec<Node>,
    precision: Precision,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

impl Tape {
    pub fn new(precision: Precision) -> Self {
        Tape { nodes: Vec::new(), precision }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, mut value: Tensor, parents: Vec<usize>, back: Option<BackFn>) -> Result<Var> {
        value.quantize(self.precision);
        value.check_finite()?;
        self.nodes.push(Node { value, parents, back });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Insert a value with no history. Gradients stop here.
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        value.check_finite()?;
        self.push(value, vec![], None)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = matmul_raw(self.value(a), self.value(b))?;
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        self.push(
            out,
            vec![a.0, b.0],
            Some(Box::new(move |g, parents| {
                parents[0] = matmul_raw(g, &bv.transposed()).expect("matmul back");
                parents[1] = matmul_raw(&av.transposed(), g).expect("matmul back");
            })),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape != bv.shape {
            return Err(Error::Dimension(format!("add: {:?} vs {:?}", av.shape, bv.shape)));
        }
        let out = Tensor {
            shape: av.shape.clone(),
            data: av.data.iter().zip(&bv.data).map(|(x, y)| x + y).collect(),
        };
        self.push(
            out,
            vec![a.0, b.0],
            Some(Box::new(move |g, parents| {
                parents[0] = g.clone();
                parents[1] = g.clone();
            })),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape != bv.shape {
            return Err(Error::Dimension(format!("sub: {:?} vs {:?}", av.shape, bv.shape)));
        }
        let out = Tensor {
            shape: av.shape.clone(),
            data: av.data.iter().zip(&bv.data).map(|(x, y)| x - y).collect(),
        };
        self.push(
            out,
            vec![a.0, b.0],
            Some(Box::new(move |g, parents| {
                parents[0] = g.clone();
                let mut neg = g.clone();
                for v in &mut neg.data {
                    *v = -*v;
                }
                parents[1] = neg;
            })),
        )
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape != bv.shape {
            return Err(Error::Dimension(format!("mul: {:?} vs {:?}", av.shape, bv.shape)));
        }
        let out = Tensor {
            shape: av.shape.clone(),
            data: av.data.iter().zip(&bv.data).map(|(x, y)| x * y).collect(),
        };
        let av = av.clone();
        let bv = bv.clone();
        self.push(
            out,
            vec![a.0, b.0],
            Some(Box::new(move |g, parents| {
                let da = g.data.iter().zip(&bv.data).map(|(g, y)| g * y).collect();
                let db = g.data.iter().zip(&av.data).map(|(g, x)| g * x).collect();
                parents[0] = Tensor { shape: g.shape.clone(), data: da };
                parents[1] = Tensor { shape: g.shape.clone(), data: db };
            })),
        )
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let av = self.value(a);
        let out = Tensor { shape: av.shape.clone(), data: av.data.iter().map(|x| x * s).collect() };
        self.push(
            out,
            vec![a.0],
            Some(Box::new(move |g, parents| {
                parents[0] =
                    Tensor { shape: g.shape.clone(), data: g.data.iter().map(|v| v * s).collect() };
            })),
        )
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Result<Var> {
        let av = self.value(a);
        let out = Tensor { shape: av.shape.clone(), data: av.data.iter().map(|x| x + c).collect() };
        self.push(out, vec![a.0], Some(Box::new(move |g, parents| parents[0] = g.clone())))
    }

    /// Broadcast-add a 1 x n row to every row of an m x n tensor.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        let (m, n) = (av.rows(), av.cols());
        if rv.shape != vec![1, n] {
            return Err(Error::Dimension(format!("add_row: {:?} vs {:?}", av.shape, rv.shape)));
        }
        let mut out = av.clone();
        for i in 0..m {
            for j in 0..n {
                out.data[i * n + j] += rv.data[j];
            }
        }
        self.push(
            out,
            vec![a.0, row.0],
            Some(Box::new(move |g, parents| {
                parents[0] = g.clone();
                let mut row_g = Tensor::zeros(&[1, n]);
                for i in 0..m {
                    for j in 0..n {
                        row_g.data[j] += g.data[i * n + j];
                    }
                }
                parents[1] = row_g;
            })),
        )
    }

    /// Broadcast-multiply every row of an m x n tensor by a 1 x n row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        let (m, n) = (av.rows(), av.cols());
        if rv.shape != vec![1, n] {
            return Err(Error::Dimension(format!("mul_row: {:?} vs {:?}", av.shape, rv.shape)));
        }
        let mut out = av.clone();
        for i in 0..m {
            for j in 0..n {
                out.data[i * n + j] *= rv.data[j];
            }
        }
        let av = av.clone();
        let rv = rv.clone();
        self.push(
            out,
            vec![a.0, row.0],
            Some(Box::new(move |g, parents| {
                let mut da = g.clone();
                let mut drow = Tensor::zeros(&[1, n]);
                for i in 0..m {
                    for j in 0..n {
                        da.data[i * n + j] *= rv.data[j];
                        drow.data[j] += g.data[i * n + j] * av.data[i * n + j];
                    }
                }
                parents[0] = da;
                parents[1] = drow;
            })),
        )
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a).clone();
        let out = Tensor {
            shape: av.shape.clone(),
            data: av.data.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect(),
        };
        self.push(
            out,
            vec![a.0],
            Some(Box::new(move |g, parents| {
                let data = g
                    .data
                    .iter()
                    .zip(&av.data)
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                parents[0] = Tensor { shape: g.shape.clone(), data };
            })),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let out = Tensor {
            shape: av.shape.clone(),
            data: av.data.iter().map(|&x| 1.0 / (1.0 + (-x).exp())).collect(),
        };
        let ov = out.clone();
        self.push(
            out,
            vec![a.0],
            Some(Box::new(move |g, parents| {
                let data = g.data.iter().zip(&ov.data).map(|(g, s)| g * s * (1.0 - s)).collect();
                parents[0] = Tensor { shape: g.shape.clone(), data };
            })),
        )
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let out =
            Tensor { shape: av.shape.clone(), data: av.data.iter().map(|x| x.tanh()).collect() };
        let ov = out.clone();
        self.push(
            out,
            vec![a.0],
            Some(Box::new(move |g, parents| {
                let data = g.data.iter().zip(&ov.data).map(|(g, t)| g * (1.0 - t * t)).collect();
                parents[0] = Tensor { shape: g.shape.clone(), data };
            })),
        )
    }

    /// Row-wise softmax with max-subtraction for overflow safety.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if !av.is_matrix() {
            return Err(Error::Dimension("softmax_rows expects a matrix".into()));
        }
        let (m, n) = (av.rows(), av.cols());
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            let row = &av.data[i * n..(i + 1) * n];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for j in 0..n {
                let e = (row[j] - mx).exp();
                out.data[i * n + j] = e;
                denom += e;
            }
            for j in 0..n {
                out.data[i * n + j] /= denom;
            }
        }
        let ov = out.clone();
        self.push(
            out,
            vec![a.0],
            Some(Box::new(move |g, parents| {
                let mut dx = Tensor::zeros(&[m, n]);
                for i in 0..m {
                    let mut dot = 0.0;
                    for j in 0..n {
                        dot += g.data[i * n + j] * ov.data[i * n + j];
                    }
                    for j in 0..n {
                        dx.data[i * n + j] = ov.data[i * n + j] * (g.data[i * n + j] - dot);
                    }
                }
                parents[0] = dx;
            })),
        )
    }

    /// Per-row normalization to mean 0 / variance 1 followed by the affine
    /// `gain`/`bias` transform. Population variance with eps 1e-5.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let (m, n) = (xv.rows(), xv.cols());
        let gv = self.value(gain);
        let bv = self.value(bias);
        if gv.shape != vec![1, n] || bv.shape != vec![1, n] {
            return Err(Error::Dimension(format!(
                "layer_norm: gain/bias must be 1x{n}, got {:?}/{:?}",
                gv.shape, bv.shape
            )));
        }
        let mut norm = Tensor::zeros(&[m, n]);
        let mut inv_std = vec![0.0; m];
        for i in 0..m {
            let row = &xv.data[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[i] = s;
            for j in 0..n {
                norm.data[i * n + j] = (row[j] - mean) * s;
            }
        }
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            for j in 0..n {
                out.data[i * n + j] = norm.data[i * n + j] * gv.data[j] + bv.data[j];
            }
        }
        let gv = gv.clone();
        self.push(
            out,
            vec![x.0, gain.0, bias.0],
            Some(Box::new(move |g, parents| {
                let mut dgain = Tensor::zeros(&[1, n]);
                let mut dbias = Tensor::zeros(&[1, n]);
                let mut dx = Tensor::zeros(&[m, n]);
                for i in 0..m {
                    // h = upstream grad routed through the affine gain
                    let mut mean_h = 0.0;
                    let mut mean_hy = 0.0;
                    for j in 0..n {
                        let gij = g.data[i * n + j];
                        let y = norm.data[i * n + j];
                        dgain.data[j] += gij * y;
                        dbias.data[j] += gij;
                        let h = gij * gv.data[j];
                        mean_h += h;
                        mean_hy += h * y;
                    }
                    mean_h /= n as f64;
                    mean_hy /= n as f64;
                    for j in 0..n {
                        let h = g.data[i * n + j] * gv.data[j];
                        let y = norm.data[i * n + j];
                        dx.data[i * n + j] = (h - mean_h - y * mean_hy) * inv_std[i];
                    }
                }
                parents[0] = dx;
                parents[1] = dgain;
                parents[2] = dbias;
            })),
        )
    }

    /// Sum of all entries, as a 1x1 tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let shape = av.shape.clone();
        let out = Tensor::scalar(av.data.iter().sum());
        self.push(
            out,
            vec![a.0],
            Some(Box::new(move |g, parents| {
                parents[0] = Tensor::full(&shape, g.data[0]);
            })),
        )
    }

    /// Column means: m x n -> 1 x n.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (m, n) = (av.rows(), av.cols());
        let mut out = Tensor::zeros(&[1, n]);
        for i in 0..m {
            for j in 0..n {
                out.data[j] += av.data[i * n + j];
            }
        }
        for v in &mut out.data {
            *v /= m as f64;
        }
        self.push(
            out,
            vec![a.0],
            Some(Box::new(move |g, parents| {
                let mut dx = Tensor::zeros(&[m, n]);
                for i in 0..m {
                    for j in 0..n {
                        dx.data[i * n + j] = g.data[j] / m as f64;
                    }
                }
                parents[0] = dx;
            })),
        )
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transposed();
        self.push(
            out,
            vec![a.0],
            Some(Box::new(move |g, parents| {
                parents[0] = g.transposed();
            })),
        )
    }

    /// Vertically stack matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Dimension("concat_rows of zero parts".into()));
        }
        let n = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut row_counts = Vec::new();
        for &p in parts {
            let pv = self.value(p);
            if pv.cols() != n {
                return Err(Error::Dimension("concat_rows: column mismatch".into()));
            }
            row_counts.push(pv.rows());
            data.extend_from_slice(&pv.data);
        }
        let m: usize = row_counts.iter().sum();
        let out = Tensor { shape: vec![m, n], data };
        self.push(
            out,
            parts.iter().map(|v| v.0).collect(),
            Some(Box::new(move |g, parents| {
                let mut r0 = 0;
                for (idx, &rc) in row_counts.iter().enumerate() {
                    let slice = &g.data[r0 * n..(r0 + rc) * n];
                    parents[idx] = Tensor { shape: vec![rc, n], data: slice.to_vec() };
                    r0 += rc;
                }
            })),
        )
    }

    /// Horizontally stack matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Dimension("concat_cols of zero parts".into()));
        }
        let m = self.value(parts[0]).rows();
        let mut col_counts = Vec::new();
        for &p in parts {
            let pv = self.value(p);
            if pv.rows() != m {
                return Err(Error::Dimension("concat_cols: row mismatch".into()));
            }
            col_counts.push(pv.cols());
        }
        let n: usize = col_counts.iter().sum();
        let mut out = Tensor::zeros(&[m, n]);
        let mut c0 = 0;
        for (&p, &cc) in parts.iter().zip(&col_counts) {
            let pv = self.value(p);
            for i in 0..m {
                for j in 0..cc {
                    out.data[i * n + c0 + j] = pv.data[i * cc + j];
                }
            }
            c0 += cc;
        }
        self.push(
            out,
            parts.iter().map(|v| v.0).collect(),
            Some(Box::new(move |g, parents| {
                let mut c0 = 0;
                for (idx, &cc) in col_counts.iter().enumerate() {
                    let mut dp = Tensor::zeros(&[m, cc]);
                    for i in 0..m {
                        for j in 0..cc {
                            dp.data[i * cc + j] = g.data[i * n + c0 + j];
                        }
                    }
                    parents[idx] = dp;
                    c0 += cc;
                }
            })),
        )
    }

    /// Rows r0..r1 (half-open).
    pub fn slice_rows(&mut self, a: Var, r0: usize, r1: usize) -> Result<Var> {
        let av = self.value(a);
        let (m, n) = (av.rows(), av.cols());
        if r0 >= r1 || r1 > m {
            return Err(Error::Dimension(format!("slice_rows {r0}..{r1} of {m} rows")));
        }
        let out = Tensor { shape: vec![r1 - r0, n], data: av.data[r0 * n..r1 * n].to_vec() };
        self.push(
            out,
            vec![a.0],
            Some(Box::new(move |g, parents| {
                let mut dx = Tensor::zeros(&[m, n]);
                dx.data[r0 * n..r1 * n].copy_from_slice(&g.data);
                parents[0] = dx;
            })),
        )
    }

    /// Columns c0..c1 (half-open).
    pub fn slice_cols(&mut self, a: Var, c0: usize, c1: usize) -> Result<Var> {
        let av = self.value(a);
        let (m, n) = (av.rows(), av.cols());
        if c0 >= c1 || c1 > n {
            return Err(Error::Dimension(format!("slice_cols {c0}..{c1} of {n} cols")));
        }
        let w = c1 - c0;
        let mut out = Tensor::zeros(&[m, w]);
        for i in 0..m {
            for j in 0..w {
                out.data[i * w + j] = av.data[i * n + c0 + j];
            }
        }
        self.push(
            out,
            vec![a.0],
            Some(Box::new(move |g, parents| {
                let mut dx = Tensor::zeros(&[m, n]);
                for i in 0..m {
                    for j in 0..w {
                        dx.data[i * n + c0 + j] = g.data[i * w + j];
                    }
                }
                parents[0] = dx;
            })),
        )
    }

    /// Reverse sweep from `root`, seeding with ones of the root's shape
    /// (i.e. gradients of `sum(root)`).
    pub fn backward(&self, root: Var) -> Grads {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(&self.nodes[root.0].value.shape, 1.0));
        for id in (0..=root.0).rev() {
            let g = match &grads[id] {
                Some(g) => g.clone(),
                None => continue,
            };
            let node = &self.nodes[id];
            if let Some(back) = &node.back {
                let mut bufs: Vec<Tensor> = node
                    .parents
                    .iter()
                    .map(|&p| Tensor::zeros(&self.nodes[p].value.shape))
                    .collect();
                back(&g, &mut bufs);
                for (&p, buf) in node.parents.iter().zip(bufs) {
                    match &mut grads[p] {
                        Some(acc) => {
                            for (a, b) in acc.data.iter_mut().zip(&buf.data) {
                                *a += b;
                            }
                        }
                        None => grads[p] = Some(buf),
                    }
                }
            }
        }
        Grads { grads }
    }
}
