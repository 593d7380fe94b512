//! Reverse-mode differentiation over a fixed operation vocabulary.
//!
//! A [`Tape`] borrows the parameter matrices, records each operation with its
//! computed value, and walks the records backwards to produce gradients for
//! every parameter. All values are `rows × cols` matrices; per-row loss terms
//! are `rows × 1` columns reduced to a `1 × 1` scalar at the end.

use super::matrix::{affine_backward, affine_forward, Matrix};
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param(usize),
    Affine { x: NodeId, w: NodeId, b: NodeId },
    Relu(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    Scale(NodeId, f64),
    Add(NodeId, NodeId),
    /// Elementwise product with a constant matrix.
    MulConst(NodeId, Matrix),
    Concat(NodeId, NodeId),
    SelectCols(NodeId, Vec<usize>),
    /// Per-row softmax cross-entropy against class indices; `rows × 1`.
    SoftmaxCrossEntropy { logits: NodeId, targets: Vec<usize> },
    /// Elementwise Gaussian negative log-density of `targets` under
    /// N(mean, exp(log_std)²); `log_std` is `1 × cols`, broadcast over rows.
    GaussianNll { mean: NodeId, log_std: NodeId, targets: Matrix },
    /// Per-row KL(N(μ, exp(logvar)) ‖ N(0, I)); `rows × 1`.
    KlStandardNormal { mu: NodeId, logvar: NodeId },
    /// Row sums; `rows × 1`.
    SumCols(NodeId),
    /// Sum of every entry; `1 × 1`.
    SumAll(NodeId),
}

struct Node {
    op: Op,
    /// `None` for parameters, whose value lives in the borrowed slice.
    value: Option<Matrix>,
    needs_grad: bool,
}

pub struct Tape<'p> {
    params: &'p [Matrix],
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [Matrix]) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        match &self.nodes[id.0].value {
            Some(v) => v,
            None => match self.nodes[id.0].op {
                Op::Param(i) => &self.params[i],
                _ => unreachable!("non-parameter node without value"),
            },
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Matrix) -> NodeId {
        let needs_grad = self.op_needs_grad(&op);
        self.nodes.push(Node {
            op,
            value: Some(value),
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn op_needs_grad(&self, op: &Op) -> bool {
        let ng = |id: &NodeId| self.nodes[id.0].needs_grad;
        match op {
            Op::Input => false,
            Op::Param(_) => true,
            Op::Affine { x, w, b } => ng(x) || ng(w) || ng(b),
            Op::Relu(x) | Op::Tanh(x) | Op::Exp(x) | Op::Scale(x, _) | Op::MulConst(x, _) => ng(x),
            Op::SelectCols(x, _) | Op::SumCols(x) | Op::SumAll(x) => ng(x),
            Op::Add(a, b) | Op::Concat(a, b) => ng(a) || ng(b),
            Op::SoftmaxCrossEntropy { logits, .. } => ng(logits),
            Op::GaussianNll { mean, log_std, .. } => ng(mean) || ng(log_std),
            Op::KlStandardNormal { mu, logvar } => ng(mu) || ng(logvar),
        }
    }

    fn record(&mut self, op: Op) -> Result<NodeId> {
        let value = compute(&op, |id| self.value(id))?;
        Ok(self.push(op, value))
    }

    pub fn input(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Input, value)
    }

    pub fn param(&mut self, index: usize) -> Result<NodeId> {
        if index >= self.params.len() {
            return Err(Error::Contract(format!("parameter index {index} out of range")));
        }
        self.nodes.push(Node {
            op: Op::Param(index),
            value: None,
            needs_grad: true,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Affine { x, w, b })
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.record(Op::Relu(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        self.record(Op::Tanh(x))
    }

    pub fn exp(&mut self, x: NodeId) -> Result<NodeId> {
        self.record(Op::Exp(x))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId> {
        self.record(Op::Scale(x, factor))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Add(a, b))
    }

    pub fn mul_const(&mut self, x: NodeId, c: Matrix) -> Result<NodeId> {
        self.record(Op::MulConst(x, c))
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Concat(a, b))
    }

    pub fn slice(&mut self, x: NodeId, start: usize, width: usize) -> Result<NodeId> {
        self.record(Op::SelectCols(x, (start..start + width).collect()))
    }

    pub fn select_cols(&mut self, x: NodeId, cols: Vec<usize>) -> Result<NodeId> {
        self.record(Op::SelectCols(x, cols))
    }

    pub fn softmax_cross_entropy(&mut self, logits: NodeId, targets: Vec<usize>) -> Result<NodeId> {
        self.record(Op::SoftmaxCrossEntropy { logits, targets })
    }

    pub fn gaussian_nll(&mut self, mean: NodeId, log_std: NodeId, targets: Matrix) -> Result<NodeId> {
        self.record(Op::GaussianNll { mean, log_std, targets })
    }

    pub fn kl_standard_normal(&mut self, mu: NodeId, logvar: NodeId) -> Result<NodeId> {
        self.record(Op::KlStandardNormal { mu, logvar })
    }

    pub fn sum_cols(&mut self, x: NodeId) -> Result<NodeId> {
        self.record(Op::SumCols(x))
    }

    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId> {
        self.record(Op::SumAll(x))
    }

    /// Recomputes every recorded value from the recorded operations.
    pub fn replay(&self) -> Result<Vec<Matrix>> {
        let mut values: Vec<Matrix> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match &node.op {
                Op::Input => node.value.clone().expect("input value"),
                Op::Param(i) => self.params[*i].clone(),
                op => compute(op, |id| &values[id.0])?,
            };
            values.push(v);
        }
        Ok(values)
    }

    /// Gradients of the scalar `loss` with respect to every parameter in the
    /// borrowed slice (zeros for parameters the loss does not reach).
    pub fn backward(&self, loss: NodeId) -> Result<Vec<Matrix>> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a 1x1 loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));
        let mut param_grads: Vec<Matrix> = self
            .params
            .iter()
            .map(|p| Matrix::zeros(p.rows(), p.cols()))
            .collect();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let out = node.value.as_ref();
            let acc = |grads: &mut Vec<Option<Matrix>>, id: NodeId, delta: Matrix| {
                if !self.nodes[id.0].needs_grad {
                    return;
                }
                match &mut grads[id.0] {
                    Some(existing) => existing.add_assign(&delta),
                    slot => *slot = Some(delta),
                }
            };
            match &node.op {
                Op::Input => {}
                Op::Param(p) => param_grads[*p].add_assign(&g),
                Op::Affine { x, w, b } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let mut dw = self.nodes[w.0].needs_grad.then(|| Matrix::zeros(wv.rows(), wv.cols()));
                    let mut db = self.nodes[b.0].needs_grad.then(|| Matrix::zeros(1, wv.rows()));
                    let dx = affine_backward(xv, wv, &g, dw.as_mut(), db.as_mut(), self.nodes[x.0].needs_grad);
                    if let Some(dx) = dx {
                        acc(&mut grads, *x, dx);
                    }
                    if let Some(dw) = dw {
                        acc(&mut grads, *w, dw);
                    }
                    if let Some(db) = db {
                        acc(&mut grads, *b, db);
                    }
                }
                Op::Relu(x) => {
                    let d = g.zip_map(self.value(*x), |gi, xi| if xi > 0.0 { gi } else { 0.0 });
                    acc(&mut grads, *x, d);
                }
                Op::Tanh(x) => {
                    let d = g.zip_map(out.unwrap(), |gi, yi| gi * (1.0 - yi * yi));
                    acc(&mut grads, *x, d);
                }
                Op::Exp(x) => {
                    let d = g.zip_map(out.unwrap(), |gi, yi| gi * yi);
                    acc(&mut grads, *x, d);
                }
                Op::Scale(x, f) => acc(&mut grads, *x, g.map(|gi| gi * f)),
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::MulConst(x, c) => acc(&mut grads, *x, g.zip_map(c, |gi, ci| gi * ci)),
                Op::Concat(a, b) => {
                    let wa = self.value(*a).cols();
                    let wb = self.value(*b).cols();
                    acc(&mut grads, *a, g.select_cols(&(0..wa).collect::<Vec<_>>()));
                    acc(&mut grads, *b, g.select_cols(&(wa..wa + wb).collect::<Vec<_>>()));
                }
                Op::SelectCols(x, cols) => {
                    let xv = self.value(*x);
                    let mut d = Matrix::zeros(xv.rows(), xv.cols());
                    for r in 0..g.rows() {
                        let gr = g.row(r);
                        let dr = d.row_mut(r);
                        for (j, &c) in cols.iter().enumerate() {
                            dr[c] += gr[j];
                        }
                    }
                    acc(&mut grads, *x, d);
                }
                Op::SoftmaxCrossEntropy { logits, targets } => {
                    let lv = self.value(*logits);
                    let mut d = Matrix::zeros(lv.rows(), lv.cols());
                    for r in 0..lv.rows() {
                        let row = lv.row(r);
                        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let s: f64 = row.iter().map(|l| (l - m).exp()).sum();
                        let gr = g.get(r, 0);
                        let dr = d.row_mut(r);
                        for (c, l) in row.iter().enumerate() {
                            dr[c] = gr * (l - m).exp() / s;
                        }
                        dr[targets[r]] -= gr;
                    }
                    acc(&mut grads, *logits, d);
                }
                Op::GaussianNll { mean, log_std, targets } => {
                    let mv = self.value(*mean);
                    let ls = self.value(*log_std);
                    let mut dm = Matrix::zeros(mv.rows(), mv.cols());
                    let mut dls = Matrix::zeros(1, ls.cols());
                    for r in 0..mv.rows() {
                        for c in 0..mv.cols() {
                            let s = ls.get(0, c).exp();
                            let z = (targets.get(r, c) - mv.get(r, c)) / s;
                            let gi = g.get(r, c);
                            dm.set(r, c, -gi * z / s);
                            dls.as_mut_slice()[c] += gi * (1.0 - z * z);
                        }
                    }
                    acc(&mut grads, *mean, dm);
                    acc(&mut grads, *log_std, dls);
                }
                Op::KlStandardNormal { mu, logvar } => {
                    let muv = self.value(*mu);
                    let lv = self.value(*logvar);
                    let mut dmu = Matrix::zeros(muv.rows(), muv.cols());
                    let mut dlv = Matrix::zeros(lv.rows(), lv.cols());
                    for r in 0..muv.rows() {
                        let gr = g.get(r, 0);
                        for c in 0..muv.cols() {
                            dmu.set(r, c, gr * muv.get(r, c));
                            dlv.set(r, c, gr * 0.5 * (lv.get(r, c).exp() - 1.0));
                        }
                    }
                    acc(&mut grads, *mu, dmu);
                    acc(&mut grads, *logvar, dlv);
                }
                Op::SumCols(x) => {
                    let xv = self.value(*x);
                    let mut d = Matrix::zeros(xv.rows(), xv.cols());
                    for r in 0..xv.rows() {
                        let gr = g.get(r, 0);
                        d.row_mut(r).iter_mut().for_each(|v| *v = gr);
                    }
                    acc(&mut grads, *x, d);
                }
                Op::SumAll(x) => {
                    let xv = self.value(*x);
                    acc(&mut grads, *x, Matrix::filled(xv.rows(), xv.cols(), g.get(0, 0)));
                }
            }
        }
        Ok(param_grads)
    }
}

fn shape_err(op: &str, detail: String) -> Error {
    Error::Contract(format!("{op}: {detail}"))
}

fn compute<'a>(op: &Op, value: impl Fn(NodeId) -> &'a Matrix) -> Result<Matrix> {
    Ok(match op {
        Op::Input | Op::Param(_) => unreachable!("leaves are not computed"),
        Op::Affine { x, w, b } => affine_forward(value(*x), value(*w), value(*b))?,
        Op::Relu(x) => value(*x).map(|v| v.max(0.0)),
        Op::Tanh(x) => value(*x).map(f64::tanh),
        Op::Exp(x) => value(*x).map(f64::exp),
        Op::Scale(x, f) => value(*x).map(|v| v * f),
        Op::Add(a, b) => {
            let (a, b) = (value(*a), value(*b));
            if a.shape() != b.shape() {
                return Err(shape_err("add", format!("{:?} vs {:?}", a.shape(), b.shape())));
            }
            a.zip_map(b, |x, y| x + y)
        }
        Op::MulConst(x, c) => {
            let x = value(*x);
            if x.shape() != c.shape() {
                return Err(shape_err("mul", format!("{:?} vs {:?}", x.shape(), c.shape())));
            }
            x.zip_map(c, |a, b| a * b)
        }
        Op::Concat(a, b) => value(*a).hcat(value(*b))?,
        Op::SelectCols(x, cols) => {
            let x = value(*x);
            if cols.iter().any(|&c| c >= x.cols()) {
                return Err(shape_err("select", format!("column out of range for width {}", x.cols())));
            }
            x.select_cols(cols)
        }
        Op::SoftmaxCrossEntropy { logits, targets } => {
            let l = value(*logits);
            if targets.len() != l.rows() || targets.iter().any(|&t| t >= l.cols()) {
                return Err(shape_err("cross-entropy", "targets do not match logits".into()));
            }
            let mut out = Matrix::zeros(l.rows(), 1);
            for r in 0..l.rows() {
                let row = l.row(r);
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                out.set(r, 0, lse - row[targets[r]]);
            }
            out
        }
        Op::GaussianNll { mean, log_std, targets } => {
            let (m, ls) = (value(*mean), value(*log_std));
            if m.shape() != targets.shape() || ls.shape() != (1, m.cols()) {
                return Err(shape_err("gaussian", "mean/log_std/targets shapes disagree".into()));
            }
            let mut out = Matrix::zeros(m.rows(), m.cols());
            for r in 0..m.rows() {
                for c in 0..m.cols() {
                    let l = ls.get(0, c);
                    let z = (targets.get(r, c) - m.get(r, c)) / l.exp();
                    out.set(r, c, 0.5 * z * z + l + 0.5 * LN_2PI);
                }
            }
            out
        }
        Op::KlStandardNormal { mu, logvar } => {
            let (mu, lv) = (value(*mu), value(*logvar));
            if mu.shape() != lv.shape() {
                return Err(shape_err("kl", "mu/logvar shapes disagree".into()));
            }
            let mut out = Matrix::zeros(mu.rows(), 1);
            for r in 0..mu.rows() {
                let s: f64 = mu
                    .row(r)
                    .iter()
                    .zip(lv.row(r))
                    .map(|(m, l)| m * m + l.exp() - 1.0 - l)
                    .sum();
                out.set(r, 0, 0.5 * s);
            }
            out
        }
        Op::SumCols(x) => {
            let x = value(*x);
            let mut out = Matrix::zeros(x.rows(), 1);
            for r in 0..x.rows() {
                out.set(r, 0, x.row(r).iter().sum());
            }
            out
        }
        Op::SumAll(x) => Matrix::filled(1, 1, value(*x).as_slice().iter().sum()),
    })
}
