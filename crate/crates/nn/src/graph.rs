//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] borrows a [`ParamSet`] immutably, records operations as they
//! run, and produces a [`Gradients`] value on [`Graph::backward`]. Graphs are
//! cheap to build, so independent replicas can run on separate threads
//! against the same parameters and have their gradients merged afterwards.

use crate::param::{Gradients, ParamId, ParamSet};
use crate::tensor::{gemm, Tensor};
use crate::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Linear { x: NodeId, w: ParamId, b: Option<ParamId> },
    Relu(NodeId),
    Sigmoid(NodeId),
    Gather { x: NodeId, idx: Vec<usize> },
    Concat(Vec<NodeId>),
    /// `argmax[g * cols + c]` is the source row of output `(g, c)`.
    GroupMax { x: NodeId, argmax: Vec<usize> },
    Interp { x: NodeId, idx: Vec<[usize; 3]>, w: Vec<[f64; 3]> },
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug)]
pub struct Graph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Tensor>>,
    done: bool,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            leaf_grads: Vec::new(),
            done: false,
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    /// Drop the tape so the graph can be rebuilt and differentiated again.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.leaf_grads.clear();
        self.done = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// A constant: receives no gradient.
    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf whose gradient is kept and readable via [`Graph::leaf_grad`].
    pub fn input_with_grad(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf, true)
    }

    /// Copy of `x` cut off from the tape.
    pub fn detach(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).clone();
        self.input(v)
    }

    /// `x · W + b` with `W` of shape `[in, out]`.
    pub fn linear(&mut self, x: NodeId, w: ParamId, b: Option<ParamId>) -> Result<NodeId, NnError> {
        let wt = self.params.get(w);
        let xv = self.value(x);
        if wt.shape.len() != 2 || wt.shape[0] != xv.cols {
            return Err(NnError::Shape(format!(
                "linear `{}` expects {} input columns, got {}",
                wt.name,
                wt.shape.first().copied().unwrap_or(0),
                xv.cols
            )));
        }
        let (n, i, o) = (xv.rows, xv.cols, wt.shape[1]);
        let mut y = Tensor::zeros(n, o);
        if let Some(b) = b {
            let bt = &self.params.get(b).values;
            if bt.len() != o {
                return Err(NnError::Shape(format!("bias `{}` has {} entries, expected {o}", self.params.get(b).name, bt.len())));
            }
            for r in 0..n {
                y.row_mut(r).copy_from_slice(bt);
            }
        }
        let beta = if b.is_some() { 1.0 } else { 0.0 };
        gemm(n, i, o, &xv.data, (i as isize, 1), &wt.values, (o as isize, 1), beta, &mut y.data, o as isize);
        let needs = self.needs(x) || wt.requires_grad || b.is_some_and(|b| self.params.get(b).requires_grad);
        Ok(self.push(y, Op::Linear { x, w, b }, needs))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let mut y = self.value(x).clone();
        y.data.iter_mut().for_each(|v| *v = v.max(0.0));
        let needs = self.needs(x);
        self.push(y, Op::Relu(x), needs)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let mut y = self.value(x).clone();
        y.data.iter_mut().for_each(|v| *v = sigmoid(*v));
        let needs = self.needs(x);
        self.push(y, Op::Sigmoid(x), needs)
    }

    /// Rows of `x` selected by `idx` (repeats allowed).
    pub fn gather(&mut self, x: NodeId, idx: Vec<usize>) -> Result<NodeId, NnError> {
        let xv = self.value(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= xv.rows) {
            return Err(NnError::Shape(format!("gather index {bad} out of {} rows", xv.rows)));
        }
        let c = xv.cols;
        let mut y = Tensor::zeros(idx.len(), c);
        for (r, &i) in idx.iter().enumerate() {
            y.row_mut(r).copy_from_slice(xv.row(i));
        }
        let needs = self.needs(x);
        Ok(self.push(y, Op::Gather { x, idx }, needs))
    }

    /// Column-wise concatenation of equally tall tensors.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId, NnError> {
        let rows = parts.first().map_or(0, |p| self.value(*p).rows);
        if parts.iter().any(|p| self.value(*p).rows != rows) {
            return Err(NnError::Shape("concat of tensors with different row counts".into()));
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols).sum();
        let mut y = Tensor::zeros(rows, cols);
        let mut off = 0;
        for p in parts {
            let v = self.value(*p);
            for r in 0..rows {
                y.data[r * cols + off..r * cols + off + v.cols].copy_from_slice(v.row(r));
            }
            off += v.cols;
        }
        let needs = parts.iter().any(|p| self.needs(*p));
        Ok(self.push(y, Op::Concat(parts.to_vec()), needs))
    }

    /// Channel-wise max over consecutive groups of `group` rows.
    pub fn group_max(&mut self, x: NodeId, group: usize) -> Result<NodeId, NnError> {
        let xv = self.value(x);
        if group == 0 || xv.rows % group != 0 {
            return Err(NnError::Shape(format!("{} rows do not split into groups of {group}", xv.rows)));
        }
        let (g, c) = (xv.rows / group, xv.cols);
        let mut y = Tensor::zeros(g, c);
        let mut argmax = vec![0usize; g * c];
        for gi in 0..g {
            let base = gi * group;
            y.row_mut(gi).copy_from_slice(xv.row(base));
            argmax[gi * c..(gi + 1) * c].iter_mut().for_each(|a| *a = base);
            for r in base + 1..base + group {
                let row = xv.row(r);
                for ch in 0..c {
                    if row[ch] > y.data[gi * c + ch] {
                        y.data[gi * c + ch] = row[ch];
                        argmax[gi * c + ch] = r;
                    }
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(y, Op::GroupMax { x, argmax }, needs))
    }

    /// Row `r` of the output is `Σ_k w[r][k] · x[idx[r][k]]`.
    pub fn interpolate(&mut self, x: NodeId, idx: Vec<[usize; 3]>, w: Vec<[f64; 3]>) -> Result<NodeId, NnError> {
        let xv = self.value(x);
        if idx.len() != w.len() || idx.iter().flatten().any(|&i| i >= xv.rows) {
            return Err(NnError::Shape("interpolation indices out of range".into()));
        }
        let c = xv.cols;
        let mut y = Tensor::zeros(idx.len(), c);
        for (r, (ii, ww)) in idx.iter().zip(&w).enumerate() {
            let out = &mut y.data[r * c..(r + 1) * c];
            for k in 0..3 {
                let src = xv.row(ii[k]);
                for (o, s) in out.iter_mut().zip(src) {
                    *o += ww[k] * s;
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(y, Op::Interp { x, idx, w }, needs))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(NnError::Shape("add of differently shaped tensors".into()));
        }
        let mut y = self.value(a).clone();
        y.add_assign(self.value(b));
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(y, Op::Add(a, b), needs))
    }

    pub fn scale(&mut self, x: NodeId, s: f64) -> NodeId {
        let mut y = self.value(x).clone();
        y.data.iter_mut().for_each(|v| *v *= s);
        let needs = self.needs(x);
        self.push(y, Op::Scale(x, s), needs)
    }

    /// Gradient of a leaf created with [`Graph::input_with_grad`], available
    /// after [`Graph::backward`].
    pub fn leaf_grad(&self, id: NodeId) -> Option<&Tensor> {
        self.leaf_grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Propagate `d loss / d node` seeds back to the parameters. Each seed
    /// must match its node's shape. Fails if called twice without
    /// [`Graph::reset`].
    pub fn backward(&mut self, seeds: &[(NodeId, &Tensor)]) -> Result<Gradients, NnError> {
        if self.done {
            return Err(NnError::BackwardTwice);
        }
        self.done = true;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        for (id, g) in seeds {
            let v = self.value(*id);
            if v.shape() != g.shape() {
                return Err(NnError::Shape(format!("seed {:?} for node of shape {:?}", g.shape(), v.shape())));
            }
            accumulate(&mut grads, *id, g.rows, g.cols).add_assign(g);
        }
        let mut out = Gradients::zeros_like(self.params);
        for i in (0..self.nodes.len()).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    if self.leaf_grads.len() <= i {
                        self.leaf_grads.resize(i + 1, None);
                    }
                    self.leaf_grads[i] = Some(g);
                }
                Op::Linear { x, w, b } => {
                    let xv = &self.nodes[x.0].value;
                    let wt = self.params.get(*w);
                    let (n, inp, o) = (xv.rows, xv.cols, wt.shape[1]);
                    if wt.requires_grad {
                        let dw = out.params[w.0].get_or_insert_with(|| vec![0.0; inp * o]);
                        gemm(inp, n, o, &xv.data, (1, inp as isize), &g.data, (o as isize, 1), 1.0, dw, o as isize);
                    }
                    if let Some(b) = b {
                        if self.params.get(*b).requires_grad {
                            let db = out.params[b.0].get_or_insert_with(|| vec![0.0; o]);
                            for r in 0..n {
                                for (d, v) in db.iter_mut().zip(g.row(r)) {
                                    *d += v;
                                }
                            }
                        }
                    }
                    if self.nodes[x.0].needs_grad {
                        let dx = accumulate(&mut grads, *x, n, inp);
                        gemm(n, o, inp, &g.data, (o as isize, 1), &wt.values, (1, o as isize), 1.0, &mut dx.data, inp as isize);
                    }
                }
                Op::Relu(x) => {
                    let y = &node.value;
                    let dx = accumulate(&mut grads, *x, g.rows, g.cols);
                    for ((d, gv), yv) in dx.data.iter_mut().zip(&g.data).zip(&y.data) {
                        if *yv > 0.0 {
                            *d += gv;
                        }
                    }
                }
                Op::Sigmoid(x) => {
                    let y = &node.value;
                    let dx = accumulate(&mut grads, *x, g.rows, g.cols);
                    for ((d, gv), yv) in dx.data.iter_mut().zip(&g.data).zip(&y.data) {
                        *d += gv * yv * (1.0 - yv);
                    }
                }
                Op::Gather { x, idx } => {
                    let xv = &self.nodes[x.0].value;
                    let dx = accumulate(&mut grads, *x, xv.rows, xv.cols);
                    for (r, &src) in idx.iter().enumerate() {
                        for (d, v) in dx.row_mut(src).iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let (rows, cols) = self.nodes[p.0].value.shape();
                        if self.nodes[p.0].needs_grad {
                            let dp = accumulate(&mut grads, *p, rows, cols);
                            for r in 0..rows {
                                let src = &g.data[r * g.cols + off..r * g.cols + off + cols];
                                for (d, v) in dp.row_mut(r).iter_mut().zip(src) {
                                    *d += v;
                                }
                            }
                        }
                        off += cols;
                    }
                }
                Op::GroupMax { x, argmax } => {
                    let xv = &self.nodes[x.0].value;
                    let c = xv.cols;
                    let dx = accumulate(&mut grads, *x, xv.rows, c);
                    for (j, &src) in argmax.iter().enumerate() {
                        dx.data[src * c + j % c] += g.data[j];
                    }
                }
                Op::Interp { x, idx, w } => {
                    let xv = &self.nodes[x.0].value;
                    let c = xv.cols;
                    let dx = accumulate(&mut grads, *x, xv.rows, c);
                    for (r, (ii, ww)) in idx.iter().zip(w).enumerate() {
                        for k in 0..3 {
                            let gr = &g.data[r * c..(r + 1) * c];
                            for (d, v) in dx.row_mut(ii[k]).iter_mut().zip(gr) {
                                *d += ww[k] * v;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for p in [a, b] {
                        if self.nodes[p.0].needs_grad {
                            accumulate(&mut grads, *p, g.rows, g.cols).add_assign(&g);
                        }
                    }
                }
                Op::Scale(x, s) => {
                    let dx = accumulate(&mut grads, *x, g.rows, g.cols);
                    for (d, v) in dx.data.iter_mut().zip(&g.data) {
                        *d += s * v;
                    }
                }
            }
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, rows: usize, cols: usize) -> &mut Tensor {
    grads[id.0].get_or_insert_with(|| Tensor::zeros(rows, cols))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::ParamTensor;

    #[test]
    fn linear_sum_gradient_is_outer_of_input() {
        let mut ps = ParamSet::new(0);
        let w = ps.push(ParamTensor::new("w", vec![2, 3], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap());
        let mut g = Graph::new(&ps);
        let x = g.input(Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]));
        let y = g.linear(x, w, None).unwrap();
        let ones = Tensor::from_vec(2, 3, vec![1.0; 6]);
        let grads = g.backward(&[(y, &ones)]).unwrap();
        // d/dW sum(xW) = column sums of x broadcast over outputs.
        assert_eq!(grads.get(w).unwrap(), &[4.0, 4.0, 4.0, 6.0, 6.0, 6.0]);
    }

    #[test]
    fn backward_twice_errors_until_reset() {
        let ps = ParamSet::new(0);
        let mut g = Graph::new(&ps);
        let x = g.input_with_grad(Tensor::from_rows(&[[1.0]]));
        let y = g.scale(x, 3.0);
        let seed = Tensor::from_rows(&[[1.0]]);
        g.backward(&[(y, &seed)]).unwrap();
        assert_eq!(g.leaf_grad(x).unwrap().data, vec![3.0]);
        assert!(matches!(g.backward(&[(y, &seed)]), Err(NnError::BackwardTwice)));
        g.reset();
        let x = g.input(Tensor::from_rows(&[[1.0]]));
        let y = g.scale(x, 2.0);
        assert!(g.backward(&[(y, &seed)]).is_ok());
    }

    #[test]
    fn detached_branch_gets_no_gradient() {
        let mut ps = ParamSet::new(1);
        let w = ps.add_weight("w", 2, 2);
        let mut g = Graph::new(&ps);
        let x = g.input_with_grad(Tensor::from_rows(&[[1.0, -1.0]]));
        let h = g.linear(x, w, None).unwrap();
        let d = g.detach(h);
        let out = g.scale(d, 2.0);
        let seed = Tensor::from_rows(&[[1.0, 1.0]]);
        let grads = g.backward(&[(out, &seed)]).unwrap();
        assert!(grads.get(w).is_none());
        assert!(g.leaf_grad(x).is_none());
    }

    #[test]
    fn group_max_routes_to_argmax() {
        let ps = ParamSet::new(0);
        let mut g = Graph::new(&ps);
        let x = g.input_with_grad(Tensor::from_rows(&[[1.0, 5.0], [3.0, 2.0], [0.0, 0.0], [-1.0, 4.0]]));
        let y = g.group_max(x, 2).unwrap();
        assert_eq!(g.value(y).data, vec![3.0, 5.0, 0.0, 4.0]);
        let seed = Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        g.backward(&[(y, &seed)]).unwrap();
        assert_eq!(g.leaf_grad(x).unwrap().data, vec![0.0, 2.0, 1.0, 0.0, 3.0, 0.0, 0.0, 4.0]);
    }
}
