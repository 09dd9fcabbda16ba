//! Reverse-mode differentiation over a linear tape.
//!
//! Every op evaluates eagerly, records its inputs, and checks its output for
//! NaN/Inf. [`Tape::backward`] walks the tape in reverse and accumulates
//! gradients into the [`ParamStore`] the parameters were read from.

use std::sync::Arc;

use super::{NnError, ParamId, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Op identity without operands; [`OpKind::ALL`] enumerates every
/// differentiable op so tests can require a gradient check for each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    MatMul,
    AddBias,
    Add,
    Sub,
    Mul,
    Scale,
    AddScalar,
    Relu,
    Sigmoid,
    Softplus,
    SoftmaxRows,
    ConcatCols,
    SliceCols,
    RowScale,
    ScalarScale,
    GatherRows,
    ScatterAddRows,
    SumAll,
    MeanAll,
    BceWithLogits,
    L1,
}

impl OpKind {
    pub const ALL: [OpKind; 21] = [
        OpKind::MatMul,
        OpKind::AddBias,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Scale,
        OpKind::AddScalar,
        OpKind::Relu,
        OpKind::Sigmoid,
        OpKind::Softplus,
        OpKind::SoftmaxRows,
        OpKind::ConcatCols,
        OpKind::SliceCols,
        OpKind::RowScale,
        OpKind::ScalarScale,
        OpKind::GatherRows,
        OpKind::ScatterAddRows,
        OpKind::SumAll,
        OpKind::MeanAll,
        OpKind::BceWithLogits,
        OpKind::L1,
    ];
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    SoftmaxRows(Var),
    ConcatCols(Var, Var),
    SliceCols(Var, usize),
    RowScale(Var, Var),
    ScalarScale(Var, Var),
    GatherRows(Var, Arc<[usize]>),
    ScatterAddRows(Var, Arc<[usize]>),
    SumAll(Var),
    MeanAll(Var),
    BceWithLogits(Var, Arc<[f64]>),
    L1(Var, Arc<[f64]>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op) -> Result<Var, NnError> {
        if !value.is_finite() {
            return Err(NnError::NonFinite { op: name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), NnError> {
        if self.shape(a) != self.shape(b) {
            return Err(NnError::Shape { op, left: self.shape(a), right: self.shape(b) });
        }
        Ok(())
    }

    /// A constant with no gradient.
    pub fn input(&mut self, t: Tensor) -> Result<Var, NnError> {
        self.push("input", t, Op::Input)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var, NnError> {
        self.push("param", store.value(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push("matmul", v, Op::MatMul(a, b))
    }

    /// Adds a `1 x c` row to every row of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var, NnError> {
        let (xs, bs) = (self.shape(x), self.shape(b));
        if bs != (1, xs.1) {
            return Err(NnError::Shape { op: "add_bias", left: xs, right: bs });
        }
        let mut v = self.value(x).clone();
        let bias = self.value(b).data().to_vec();
        for r in 0..xs.0 {
            for (o, bb) in v.row_mut(r).iter_mut().zip(&bias) {
                *o += bb;
            }
        }
        self.push("add_bias", v, Op::AddBias(x, b))
    }

    /// Affine map `x W + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NnError> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    fn zip_with(&mut self, name: &'static str, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var, NnError> {
        self.same_shape(name, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let v = Tensor::from_vec(ta.rows(), ta.cols(), data)?;
        self.push(name, v, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.zip_with("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.zip_with("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.zip_with("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var, NnError> {
        let v = self.value(x).map(|v| v * c);
        self.push("scale", v, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var, NnError> {
        let v = self.value(x).map(|v| v + c);
        self.push("add_scalar", v, Op::AddScalar(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, NnError> {
        let v = self.value(x).map(|v| v.max(0.0));
        self.push("relu", v, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, NnError> {
        let v = self.value(x).map(sigmoid);
        self.push("sigmoid", v, Op::Sigmoid(x))
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var, NnError> {
        let v = self.value(x).map(softplus);
        self.push("softplus", v, Op::Softplus(x))
    }

    /// Row-wise softmax, stabilized by subtracting the row maximum.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var, NnError> {
        let v = softmax_rows(self.value(x));
        self.push("softmax_rows", v, Op::SoftmaxRows(x))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let v = self.value(a).hcat(self.value(b))?;
        self.push("concat_cols", v, Op::ConcatCols(a, b))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NnError> {
        let t = self.value(x);
        if start + len > t.cols() {
            return Err(NnError::Shape { op: "slice_cols", left: t.shape(), right: (start, len) });
        }
        let mut v = Tensor::zeros(t.rows(), len);
        for r in 0..t.rows() {
            v.row_mut(r).copy_from_slice(&t.row(r)[start..start + len]);
        }
        self.push("slice_cols", v, Op::SliceCols(x, start))
    }

    /// Scales row `r` of `x` by `s[r]`, where `s` is `n x 1`.
    pub fn row_scale(&mut self, x: Var, s: Var) -> Result<Var, NnError> {
        let (xs, ss) = (self.shape(x), self.shape(s));
        if ss != (xs.0, 1) {
            return Err(NnError::Shape { op: "row_scale", left: xs, right: ss });
        }
        let mut v = self.value(x).clone();
        let sv = self.value(s).data().to_vec();
        for (r, k) in sv.iter().enumerate() {
            v.row_mut(r).iter_mut().for_each(|o| *o *= k);
        }
        self.push("row_scale", v, Op::RowScale(x, s))
    }

    /// Scales all of `x` by the `1 x 1` value `s`.
    pub fn scalar_scale(&mut self, x: Var, s: Var) -> Result<Var, NnError> {
        if self.shape(s) != (1, 1) {
            return Err(NnError::Shape { op: "scalar_scale", left: self.shape(x), right: self.shape(s) });
        }
        let k = self.value(s).data()[0];
        let v = self.value(x).map(|v| v * k);
        self.push("scalar_scale", v, Op::ScalarScale(x, s))
    }

    pub fn gather_rows(&mut self, x: Var, idx: Arc<[usize]>) -> Result<Var, NnError> {
        let t = self.value(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= t.rows()) {
            return Err(NnError::Shape { op: "gather_rows", left: t.shape(), right: (bad, 0) });
        }
        let v = t.select_rows(&idx);
        self.push("gather_rows", v, Op::GatherRows(x, idx))
    }

    /// Sums row `r` of `x` into row `idx[r]` of an `n`-row output.
    pub fn scatter_add_rows(&mut self, x: Var, idx: Arc<[usize]>, n: usize) -> Result<Var, NnError> {
        let t = self.value(x);
        if idx.len() != t.rows() || idx.iter().any(|&i| i >= n) {
            return Err(NnError::Shape { op: "scatter_add_rows", left: t.shape(), right: (idx.len(), n) });
        }
        let mut v = Tensor::zeros(n, t.cols());
        for (r, &i) in idx.iter().enumerate() {
            for (o, x) in v.row_mut(i).iter_mut().zip(t.row(r)) {
                *o += x;
            }
        }
        self.push("scatter_add_rows", v, Op::ScatterAddRows(x, idx))
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var, NnError> {
        let s = self.value(x).data().iter().sum();
        self.push("sum_all", Tensor::scalar(s), Op::SumAll(x))
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var, NnError> {
        let t = self.value(x);
        if t.data().is_empty() {
            return Err(NnError::Shape { op: "mean_all", left: t.shape(), right: (1, 1) });
        }
        let s = t.data().iter().sum::<f64>() / t.data().len() as f64;
        self.push("mean_all", Tensor::scalar(s), Op::MeanAll(x))
    }

    /// Mean binary cross-entropy of `n x 1` logits against 0/1 targets.
    pub fn bce_with_logits(&mut self, z: Var, targets: Arc<[f64]>) -> Result<Var, NnError> {
        let t = self.value(z);
        if t.shape() != (targets.len(), 1) || targets.is_empty() {
            return Err(NnError::Shape { op: "bce_with_logits", left: t.shape(), right: (targets.len(), 1) });
        }
        let s: f64 = t
            .data()
            .iter()
            .zip(targets.iter())
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum();
        let v = Tensor::scalar(s / targets.len() as f64);
        self.push("bce_with_logits", v, Op::BceWithLogits(z, targets))
    }

    /// Mean absolute error of `n x 1` predictions.
    pub fn l1(&mut self, p: Var, targets: Arc<[f64]>) -> Result<Var, NnError> {
        let t = self.value(p);
        if t.shape() != (targets.len(), 1) || targets.is_empty() {
            return Err(NnError::Shape { op: "l1", left: t.shape(), right: (targets.len(), 1) });
        }
        let s: f64 = t.data().iter().zip(targets.iter()).map(|(p, y)| (p - y).abs()).sum();
        let v = Tensor::scalar(s / targets.len() as f64);
        self.push("l1", v, Op::L1(p, targets))
    }

    /// Accumulates `d loss / d param` into `store` for every parameter read
    /// onto this tape.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<(), NnError> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(NnError::NoForward);
        }
        if self.shape(loss) != (1, 1) {
            return Err(NnError::NotScalar(self.shape(loss)));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => store.accumulate_grad(*id, &g),
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let mut da = Tensor::zeros(ta.rows(), ta.cols());
                    super::tensor::gemm(&g, false, tb, true, &mut da, false);
                    let mut db = Tensor::zeros(tb.rows(), tb.cols());
                    super::tensor::gemm(ta, true, &g, false, &mut db, false);
                    add_grad(&mut grads, *a, da);
                    add_grad(&mut grads, *b, db);
                }
                Op::AddBias(x, b) => {
                    let mut db = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, v) in db.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    add_grad(&mut grads, *b, db);
                    add_grad(&mut grads, *x, g);
                }
                Op::Add(a, b) => {
                    add_grad(&mut grads, *a, g.clone());
                    add_grad(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    add_grad(&mut grads, *b, g.map(|v| -v));
                    add_grad(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let da = zip(&g, self.value(*b), |g, y| g * y);
                    let db = zip(&g, self.value(*a), |g, x| g * x);
                    add_grad(&mut grads, *a, da);
                    add_grad(&mut grads, *b, db);
                }
                Op::Scale(x, c) => add_grad(&mut grads, *x, g.map(|v| v * c)),
                Op::AddScalar(x) => add_grad(&mut grads, *x, g),
                Op::Relu(x) => {
                    let dx = zip(&g, self.value(*x), |g, x| if x > 0.0 { g } else { 0.0 });
                    add_grad(&mut grads, *x, dx);
                }
                Op::Sigmoid(x) => {
                    let dx = zip(&g, &node.value, |g, y| g * y * (1.0 - y));
                    add_grad(&mut grads, *x, dx);
                }
                Op::Softplus(x) => {
                    let dx = zip(&g, self.value(*x), |g, x| g * sigmoid(x));
                    add_grad(&mut grads, *x, dx);
                }
                Op::SoftmaxRows(x) => {
                    let y = &node.value;
                    let mut dx = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                        for ((o, gv), yv) in dx.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                            *o = yv * (gv - dot);
                        }
                    }
                    add_grad(&mut grads, *x, dx);
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.value(*a).cols();
                    let mut da = Tensor::zeros(g.rows(), ca);
                    let mut db = Tensor::zeros(g.rows(), g.cols() - ca);
                    for r in 0..g.rows() {
                        da.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                        db.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                    }
                    add_grad(&mut grads, *a, da);
                    add_grad(&mut grads, *b, db);
                }
                Op::SliceCols(x, start) => {
                    let t = self.value(*x);
                    let mut dx = Tensor::zeros(t.rows(), t.cols());
                    for r in 0..g.rows() {
                        dx.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    add_grad(&mut grads, *x, dx);
                }
                Op::RowScale(x, s) => {
                    let (tx, ts) = (self.value(*x), self.value(*s));
                    let mut dx = g.clone();
                    let mut ds = Tensor::zeros(ts.rows(), 1);
                    for r in 0..g.rows() {
                        let k = ts.data()[r];
                        dx.row_mut(r).iter_mut().for_each(|v| *v *= k);
                        ds.data_mut()[r] = g.row(r).iter().zip(tx.row(r)).map(|(a, b)| a * b).sum();
                    }
                    add_grad(&mut grads, *x, dx);
                    add_grad(&mut grads, *s, ds);
                }
                Op::ScalarScale(x, s) => {
                    let k = self.value(*s).data()[0];
                    let ds: f64 = g.data().iter().zip(self.value(*x).data()).map(|(a, b)| a * b).sum();
                    add_grad(&mut grads, *x, g.map(|v| v * k));
                    add_grad(&mut grads, *s, Tensor::scalar(ds));
                }
                Op::GatherRows(x, idx) => {
                    let t = self.value(*x);
                    let mut dx = Tensor::zeros(t.rows(), t.cols());
                    for (r, &i) in idx.iter().enumerate() {
                        for (o, v) in dx.row_mut(i).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    add_grad(&mut grads, *x, dx);
                }
                Op::ScatterAddRows(x, idx) => {
                    let dx = g.select_rows(idx);
                    add_grad(&mut grads, *x, dx);
                }
                Op::SumAll(x) => {
                    let t = self.value(*x);
                    add_grad(&mut grads, *x, Tensor::filled(t.rows(), t.cols(), g.data()[0]));
                }
                Op::MeanAll(x) => {
                    let t = self.value(*x);
                    let k = g.data()[0] / t.data().len() as f64;
                    add_grad(&mut grads, *x, Tensor::filled(t.rows(), t.cols(), k));
                }
                Op::BceWithLogits(z, targets) => {
                    let k = g.data()[0] / targets.len() as f64;
                    let data = self.value(*z).data().iter().zip(targets.iter()).map(|(&z, &y)| k * (sigmoid(z) - y)).collect();
                    add_grad(&mut grads, *z, Tensor::from_vec(targets.len(), 1, data)?);
                }
                Op::L1(p, targets) => {
                    let k = g.data()[0] / targets.len() as f64;
                    let data = self
                        .value(*p)
                        .data()
                        .iter()
                        .zip(targets.iter())
                        .map(|(&p, &y)| k * sign(p - y))
                        .collect();
                    add_grad(&mut grads, *p, Tensor::from_vec(targets.len(), 1, data)?);
                }
            }
        }
        Ok(())
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

fn add_grad(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    for r in 0..t.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}
