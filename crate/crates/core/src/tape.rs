//! Reverse-mode gradient tape.
//!
//! Every operation appends a node holding its forward value and the indices
//! of its parents. Parents are always recorded before children, so a single
//! reverse sweep from the root visits each node exactly once.

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

/// Handle to a node on a [`GradTape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    AddBias(usize, usize),
    Relu(usize),
    Add(usize, usize),
    Scale(usize, f64),
    Sum(usize),
    SumSquares(usize),
    /// Mean softmax cross-entropy; keeps the softmax probabilities as the local partial.
    CrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    /// Sum over rows of `input[i, index[i]]`.
    GatherSum {
        input: usize,
        index: Vec<usize>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients produced by [`GradTape::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the root with respect to `var`; `None` when `var` does not
    /// influence the root.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Like [`Gradients::get`] but materialises zeros for unreachable nodes.
    pub fn get_or_zeros(&self, var: Var, shape: &[usize]) -> Tensor {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(shape.to_vec()))
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradTape {
    nodes: Vec<Node>,
    params: Vec<(Var, Var)>,
}

impl GradTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// Parent indices of a node, in recording order.
    pub fn parents(&self, var: Var) -> Vec<usize> {
        match &self.nodes[var.0].op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::AddBias(a, b) | Op::Add(a, b) => vec![*a, *b],
            Op::Relu(a) | Op::Scale(a, _) | Op::Sum(a) | Op::SumSquares(a) => vec![*a],
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::GatherSum { input, .. } => vec![*input],
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, var: Var) -> Result<()> {
        if var.0 >= self.nodes.len() {
            return Err(Error::State(format!("variable {} is not on this tape", var.0)));
        }
        Ok(())
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// `[n,k] x [k,m] -> [n,m]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.cols() != bv.rows() {
            return Err(Error::Input(format!("matmul of {:?} and {:?}", av.shape(), bv.shape())));
        }
        let (n, k, m) = (av.rows(), av.cols(), bv.cols());
        let out = tensor::matmul(av.data(), bv.data(), n, k, m);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::MatMul(a.0, b.0)))
    }

    /// Adds a length-`m` bias to every row of an `[n,m]` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        self.check(x)?;
        self.check(bias)?;
        let (xv, bv) = (&self.nodes[x.0].value, &self.nodes[bias.0].value);
        let m = xv.cols();
        if bv.len() != m {
            return Err(Error::Input(format!("bias of length {} for {} columns", bv.len(), m)));
        }
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(m.max(1)) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let shape = xv.shape().to_vec();
        Ok(self.push(Tensor::new(shape, out)?, Op::AddBias(x.0, bias.0)))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let xv = &self.nodes[x.0].value;
        let out: Vec<f64> = xv.data().iter().map(|&v| v.max(0.0)).collect();
        let shape = xv.shape().to_vec();
        Ok(self.push(Tensor::new(shape, out)?, Op::Relu(x.0)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.shape() != bv.shape() {
            return Err(Error::Input(format!("add of {:?} and {:?}", av.shape(), bv.shape())));
        }
        let out: Vec<f64> = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let shape = av.shape().to_vec();
        Ok(self.push(Tensor::new(shape, out)?, Op::Add(a.0, b.0)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.check(x)?;
        let xv = &self.nodes[x.0].value;
        let out: Vec<f64> = xv.data().iter().map(|v| v * factor).collect();
        let shape = xv.shape().to_vec();
        Ok(self.push(Tensor::new(shape, out)?, Op::Scale(x.0, factor)))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let s = self.nodes[x.0].value.data().iter().sum();
        Ok(self.push(Tensor::scalar(s), Op::Sum(x.0)))
    }

    pub fn sum_squares(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let s = self.nodes[x.0].value.data().iter().map(|v| v * v).sum();
        Ok(self.push(Tensor::scalar(s), Op::SumSquares(x.0)))
    }

    /// Mean negative log-softmax of the labelled class, stabilised by log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        self.check(logits)?;
        let lv = &self.nodes[logits.0].value;
        let (n, k) = (lv.rows(), lv.cols());
        if labels.len() != n {
            return Err(Error::Input(format!("{} labels for {n} rows", labels.len())));
        }
        if n == 0 {
            return Err(Error::Input("cross-entropy of an empty batch".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::Input(format!("label {bad} out of range for {k} classes")));
        }
        let mut probs = vec![0.0; n * k];
        let mut total = 0.0;
        for i in 0..n {
            let row = lv.row(i);
            let lse = log_sum_exp(row);
            total += lse - row[labels[i]];
            for j in 0..k {
                probs[i * k + j] = (row[j] - lse).exp();
            }
        }
        let loss = total / n as f64;
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits: logits.0, labels: labels.to_vec(), probs }))
    }

    /// `sum_i input[i, index[i]]`
    pub fn gather_sum(&mut self, input: Var, index: &[usize]) -> Result<Var> {
        self.check(input)?;
        let iv = &self.nodes[input.0].value;
        if index.len() != iv.rows() {
            return Err(Error::Input(format!("{} indices for {} rows", index.len(), iv.rows())));
        }
        if let Some(&bad) = index.iter().find(|&&j| j >= iv.cols()) {
            return Err(Error::Input(format!("column {bad} out of range")));
        }
        let s = index.iter().enumerate().map(|(i, &j)| iv.get(i, j)).sum();
        Ok(self.push(Tensor::scalar(s), Op::GatherSum { input: input.0, index: index.to_vec() }))
    }

    /// Registers `(weight, bias)` leaves of a model so [`GradTape::param_gradient`]
    /// can flatten their gradients.
    pub(crate) fn register_params(&mut self, params: Vec<(Var, Var)>) {
        self.params = params;
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        self.check(root)?;
        if self.nodes[root.0].value.len() != 1 {
            return Err(Error::State(format!(
                "backward needs a scalar root, got shape {:?}",
                self.nodes[root.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=root.0).rev() {
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            let g = upstream.data();
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                    let da = tensor::matmul_nt(g, bv.data(), n, k, m);
                    let db = tensor::matmul_tn(av.data(), g, n, k, m);
                    accumulate(&mut grads, *a, av.shape(), &da);
                    accumulate(&mut grads, *b, bv.shape(), &db);
                }
                Op::AddBias(x, b) => {
                    let xv = &self.nodes[*x].value;
                    let m = xv.cols();
                    let mut db = vec![0.0; m];
                    for row in g.chunks(m.max(1)) {
                        for (d, r) in db.iter_mut().zip(row) {
                            *d += r;
                        }
                    }
                    accumulate(&mut grads, *x, xv.shape(), g);
                    let bshape = self.nodes[*b].value.shape().to_vec();
                    accumulate(&mut grads, *b, &bshape, &db);
                }
                Op::Relu(x) => {
                    let xv = &self.nodes[*x].value;
                    let d: Vec<f64> = xv.data().iter().zip(g).map(|(&v, &gi)| if v > 0.0 { gi } else { 0.0 }).collect();
                    accumulate(&mut grads, *x, xv.shape(), &d);
                }
                Op::Add(a, b) => {
                    let shape = node.value.shape().to_vec();
                    accumulate(&mut grads, *a, &shape, g);
                    accumulate(&mut grads, *b, &shape, g);
                }
                Op::Scale(x, f) => {
                    let d: Vec<f64> = g.iter().map(|v| v * f).collect();
                    let shape = node.value.shape().to_vec();
                    accumulate(&mut grads, *x, &shape, &d);
                }
                Op::Sum(x) => {
                    let xv = &self.nodes[*x].value;
                    let d = vec![g[0]; xv.len()];
                    accumulate(&mut grads, *x, xv.shape(), &d);
                }
                Op::SumSquares(x) => {
                    let xv = &self.nodes[*x].value;
                    let d: Vec<f64> = xv.data().iter().map(|v| 2.0 * v * g[0]).collect();
                    accumulate(&mut grads, *x, xv.shape(), &d);
                }
                Op::CrossEntropy { logits, labels, probs } => {
                    let lv = &self.nodes[*logits].value;
                    let (n, k) = (lv.rows(), lv.cols());
                    let scale = g[0] / n as f64;
                    let mut d: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                    for (i, &y) in labels.iter().enumerate() {
                        d[i * k + y] -= scale;
                    }
                    accumulate(&mut grads, *logits, lv.shape(), &d);
                }
                Op::GatherSum { input, index } => {
                    let iv = &self.nodes[*input].value;
                    let k = iv.cols();
                    let mut d = vec![0.0; iv.len()];
                    for (i, &j) in index.iter().enumerate() {
                        d[i * k + j] = g[0];
                    }
                    accumulate(&mut grads, *input, iv.shape(), &d);
                }
            }
            grads[idx] = Some(upstream);
        }
        Ok(Gradients { grads })
    }

    /// Gradient of `root` with respect to the registered model parameters,
    /// flattened in [`crate::model::ModelParams`] layout.
    pub fn param_gradient(&self, root: Var) -> Result<Vec<f64>> {
        if self.params.is_empty() {
            return Err(Error::State("backward called before any forward pass".into()));
        }
        let grads = self.backward(root)?;
        let mut flat = Vec::new();
        for &(w, b) in &self.params {
            let wg = grads.get_or_zeros(w, self.value(w).shape());
            let bg = grads.get_or_zeros(b, self.value(b).shape());
            flat.extend_from_slice(wg.data());
            flat.extend_from_slice(bg.data());
        }
        Ok(flat)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], idx: usize, shape: &[usize], delta: &[f64]) {
    match &mut grads[idx] {
        Some(existing) => tensor::axpy(1.0, delta, existing.data_mut()),
        slot @ None => {
            *slot = Some(Tensor::new(shape.to_vec(), delta.to_vec()).expect("gradient shape"));
        }
    }
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}
