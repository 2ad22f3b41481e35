//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] is recorded afresh for every forward pass. Nodes are appended
//! in evaluation order, so a single reverse sweep over the tape visits every
//! node after all of its consumers.

use super::params::ParamVector;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Minimum(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Clamp(Var, f64, f64),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Sum(Var),
    SumCols(Var),
    SliceCols(Var, usize, usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Parameter segments loaded onto a graph as leaves.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: Vec<(String, Var, std::ops::Range<usize>)>,
    len: usize,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, v, _)| *v)
            .ok_or_else(|| Error::config(format!("no parameter segment named {name}")))
    }
}

/// Recorded computation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Per-node gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient with respect to `v`; `None` when `v` does not reach the loss.
    pub fn of(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradients of bound leaves into `params.grad`.
    pub fn accumulate(&self, bound: &BoundParams, params: &mut ParamVector) -> Result<()> {
        if bound.len != params.len() {
            return Err(Error::shape("accumulate", "binding does not match parameter vector"));
        }
        let grad = params.grad_mut();
        for (_, var, range) in &bound.vars {
            if let Some(g) = self.of(*var) {
                for (dst, src) in grad[range.clone()].iter_mut().zip(g) {
                    *dst += src;
                }
            }
        }
        Ok(())
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn as_matrix(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.last_dim())
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * m..(i + 1) * m];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        let value = value.check_finite(name)?;
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
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

    /// Records a leaf holding `t`.
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Leaf, "constant")
    }

    /// Loads every segment of `params` as a leaf.
    pub fn bind(&mut self, params: &ParamVector) -> Result<BoundParams> {
        let mut vars = Vec::with_capacity(params.segments().len());
        for seg in params.segments() {
            let t = Tensor::new(seg.shape.clone(), params.values()[seg.range()].to_vec())?;
            let v = self.push(t, Op::Leaf, "parameter")?;
            vars.push((seg.name.clone(), v, seg.range()));
        }
        Ok(BoundParams {
            vars,
            len: params.len(),
        })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (n, k) = as_matrix(ta);
        if tb.shape().len() != 2 || tb.shape()[0] != k {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", ta.shape(), tb.shape()),
            ));
        }
        let m = tb.shape()[1];
        let out = matmul_raw(ta.values(), tb.values(), n, k, m);
        self.push(Tensor::new(vec![n, m], out)?, Op::MatMul(a, b), "matmul")
    }

    /// Adds the vector `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let w = ta.last_dim();
        if tb.len() != w {
            return Err(Error::shape(
                "add_row",
                format!("{:?} + row {:?}", ta.shape(), tb.shape()),
            ));
        }
        let mut out = ta.clone();
        for row in out.values_mut().chunks_mut(w) {
            for (o, bv) in row.iter_mut().zip(tb.values()) {
                *o += bv;
            }
        }
        self.push(out, Op::AddRow(a, b), "add_row")
    }

    fn zip_with(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(name, ta, tb)?;
        let vals = ta.values().iter().zip(tb.values()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.shape().to_vec(), vals)?;
        self.push(out, op, name)
    }

    fn map(&mut self, a: Var, name: &'static str, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let ta = self.value(a);
        let vals = ta.values().iter().map(|&x| f(x)).collect();
        let out = Tensor::new(ta.shape().to_vec(), vals)?;
        self.push(out, op, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "add", Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "sub", Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "mul", Op::Mul(a, b), |x, y| x * y)
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "minimum", Op::Minimum(a, b), f64::min)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map(a, "scale", Op::Scale(a, c), |x| c * x)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map(a, "add_scalar", Op::AddScalar(a), |x| x + c)
    }

    /// Clamps into `[lo, hi]`; gradient is zero where the clamp is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.map(a, "clamp", Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map(a, "tanh", Op::Tanh(a), f64::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map(a, "relu", Op::Relu(a), |x| x.max(0.0))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.map(a, "exp", Op::Exp(a), f64::exp)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.mul(a, a)
    }

    /// Sum of all entries, as a `[1]` tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).values().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    /// Row sums of a matrix, as a `[rows, 1]` tensor.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let vals: Vec<f64> = ta
            .values()
            .chunks(ta.last_dim())
            .map(|r| r.iter().sum())
            .collect();
        let n = vals.len();
        self.push(Tensor::new(vec![n, 1], vals)?, Op::SumCols(a), "sum_cols")
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let ta = self.value(a);
        let w = ta.last_dim();
        if start >= end || end > w {
            return Err(Error::shape(
                "slice_cols",
                format!("columns {start}..{end} of width {w}"),
            ));
        }
        let vals: Vec<f64> = ta
            .values()
            .chunks(w)
            .flat_map(|r| r[start..end].iter().copied())
            .collect();
        let out = Tensor::new(vec![ta.rows(), end - start], vals)?;
        self.push(out, Op::SliceCols(a, start, end), "slice_cols")
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::BackwardConsumed);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.value(loss).shape()),
            ));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(&g).for_each(|(e, x)| *e += x),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match node.op {
                Op::Leaf => {
                    grads[idx] = Some(gout);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(a), self.value(b));
                    let (n, k) = as_matrix(ta);
                    let m = tb.shape()[1];
                    let mut ga = vec![0.0; n * k];
                    let mut gb = vec![0.0; k * m];
                    for i in 0..n {
                        let grow = &gout[i * m..(i + 1) * m];
                        let arow = &ta.values()[i * k..(i + 1) * k];
                        for p in 0..k {
                            let brow = &tb.values()[p * m..(p + 1) * m];
                            let mut s = 0.0;
                            for (gv, bv) in grow.iter().zip(brow) {
                                s += gv * bv;
                            }
                            ga[i * k + p] = s;
                            let av = arow[p];
                            if av != 0.0 {
                                for (gbv, gv) in gb[p * m..(p + 1) * m].iter_mut().zip(grow) {
                                    *gbv += av * gv;
                                }
                            }
                        }
                    }
                    acc(&mut grads, a, ga);
                    acc(&mut grads, b, gb);
                }
                Op::AddRow(a, b) => {
                    let w = self.value(b).len();
                    let mut gb = vec![0.0; w];
                    for row in gout.chunks(w) {
                        gb.iter_mut().zip(row).for_each(|(s, g)| *s += g);
                    }
                    acc(&mut grads, a, gout);
                    acc(&mut grads, b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, b, gout.clone());
                    acc(&mut grads, a, gout);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, b, gout.iter().map(|g| -g).collect());
                    acc(&mut grads, a, gout);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(a).values(), self.value(b).values());
                    let ga = gout.iter().zip(tb).map(|(g, y)| g * y).collect();
                    let gb = gout.iter().zip(ta).map(|(g, x)| g * x).collect();
                    acc(&mut grads, a, ga);
                    acc(&mut grads, b, gb);
                }
                Op::Minimum(a, b) => {
                    let (ta, tb) = (self.value(a).values(), self.value(b).values());
                    let mut ga = vec![0.0; gout.len()];
                    let mut gb = vec![0.0; gout.len()];
                    for i in 0..gout.len() {
                        if ta[i] <= tb[i] {
                            ga[i] = gout[i];
                        } else {
                            gb[i] = gout[i];
                        }
                    }
                    acc(&mut grads, a, ga);
                    acc(&mut grads, b, gb);
                }
                Op::Scale(a, c) => acc(&mut grads, a, gout.iter().map(|g| c * g).collect()),
                Op::AddScalar(a) => acc(&mut grads, a, gout),
                Op::Clamp(a, lo, hi) => {
                    let ta = self.value(a).values();
                    let ga = gout
                        .iter()
                        .zip(ta)
                        .map(|(g, &x)| if x > lo && x < hi { *g } else { 0.0 })
                        .collect();
                    acc(&mut grads, a, ga);
                }
                Op::Tanh(a) => {
                    let y = node.value.values();
                    let ga = gout.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect();
                    acc(&mut grads, a, ga);
                }
                Op::Relu(a) => {
                    let ta = self.value(a).values();
                    let ga = gout
                        .iter()
                        .zip(ta)
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect();
                    acc(&mut grads, a, ga);
                }
                Op::Exp(a) => {
                    let y = node.value.values();
                    let ga = gout.iter().zip(y).map(|(g, y)| g * y).collect();
                    acc(&mut grads, a, ga);
                }
                Op::Sum(a) => {
                    let n = self.value(a).len();
                    acc(&mut grads, a, vec![gout[0]; n]);
                }
                Op::SumCols(a) => {
                    let w = self.value(a).last_dim();
                    let ga = gout.iter().flat_map(|&g| std::iter::repeat_n(g, w)).collect();
                    acc(&mut grads, a, ga);
                }
                Op::SliceCols(a, start, end) => {
                    let ta = self.value(a);
                    let w = ta.last_dim();
                    let sw = end - start;
                    let mut ga = vec![0.0; ta.len()];
                    for (r, grow) in gout.chunks(sw).enumerate() {
                        ga[r * w + start..r * w + end].copy_from_slice(grow);
                    }
                    acc(&mut grads, a, ga);
                }
            }
        }
        Ok(Gradients { grads })
    }
}
