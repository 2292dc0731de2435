//! Reverse-mode automatic differentiation over [`Mat`] values.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its value
//! and how it was produced. [`Graph::backward`] walks the tape once in reverse
//! and returns per-node gradients. Parameters enter through
//! [`Graph::param`] under their store path, so gradients can be collected by
//! name after the backward pass.
//!
//! Nodes that do not depend on any parameter (or on a leaf created with
//! [`Graph::input`]) never receive gradients, which keeps pure inference and
//! constant preprocessing cheap.

use std::collections::{BTreeMap, HashMap};

use crate::tensor::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    AddCol(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulScalarVar(Var, Var),
    Tanh(Var),
    Exp(Var),
    Ln(Var),
    Gelu(Var),
    Powf(Var, f64),
    Abs(Var),
    ClampMin(Var, f64),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    RowSum(Var),
    RowMean(Var),
    ColSum(Var),
    SumAll(Var),
    MaxAll(Var, usize),
    Transpose(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Unfold {
        src: Var,
        kernel: usize,
        pad_left: usize,
    },
    MaxPoolRows(Var, Vec<usize>),
    /// Forward value supplied directly; gradient passes unchanged to the source.
    StraightThrough(Var),
    /// Scalar-valued node with precomputed partial derivatives.
    Custom(Vec<(Var, Mat)>),
}

struct Node {
    value: Mat,
    op: Op,
    tracked: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
    param_lookup: HashMap<String, Var>,
}

/// Gradients for every node of a graph, produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, or zeros of `shape` if it received none.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Mat {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Mat::zeros(shape.0, shape.1))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn any_tracked(&self, vs: &[Var]) -> bool {
        vs.iter().any(|&v| self.tracked(v))
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Constant leaf; receives no gradient.
    pub fn constant(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf, false)
    }

    /// Differentiable leaf that is not a named parameter.
    pub fn input(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf, true)
    }

    /// Named parameter leaf. Repeated calls with the same name share a node.
    pub fn param(&mut self, name: &str, m: &Mat) -> Var {
        if let Some(&v) = self.param_lookup.get(name) {
            return v;
        }
        let v = self.push(m.clone(), Op::Leaf, true);
        self.params.push((name.to_string(), v));
        self.param_lookup.insert(name.to_string(), v);
        v
    }

    pub fn params(&self) -> &[(String, Var)] {
        &self.params
    }

    /// Copy of `v`'s value with no gradient path.
    pub fn stop_grad(&mut self, v: Var) -> Var {
        let m = self.value(v).clone();
        self.constant(m)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let m = self.value(a).matmul(self.value(b));
        let t = self.any_tracked(&[a, b]);
        self.push(m, Op::MatMul(a, b), t)
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let m = self.value(a).matmul_t(self.value(b));
        let t = self.any_tracked(&[a, b]);
        self.push(m, Op::MatMulT(a, b), t)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let m = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let t = self.any_tracked(&[a, b]);
        self.push(m, Op::Add(a, b), t)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let m = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let t = self.any_tracked(&[a, b]);
        self.push(m, Op::Sub(a, b), t)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let m = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let t = self.any_tracked(&[a, b]);
        self.push(m, Op::Mul(a, b), t)
    }

    /// `a + row` with `row` (1×C) broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(row));
        assert_eq!(rv.shape(), (1, av.cols()), "add_row: shape mismatch");
        let r = rv.row(0).to_vec();
        let m = Mat::from_fn(av.rows(), av.cols(), |i, j| av.get(i, j) + r[j]);
        let t = self.any_tracked(&[a, row]);
        self.push(m, Op::AddRow(a, row), t)
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(row));
        assert_eq!(rv.shape(), (1, av.cols()), "mul_row: shape mismatch");
        let r = rv.row(0).to_vec();
        let m = Mat::from_fn(av.rows(), av.cols(), |i, j| av.get(i, j) * r[j]);
        let t = self.any_tracked(&[a, row]);
        self.push(m, Op::MulRow(a, row), t)
    }

    /// `a + col` with `col` (R×1) broadcast over the columns of `a`.
    pub fn add_col(&mut self, a: Var, col: Var) -> Var {
        let (av, cv) = (self.value(a), self.value(col));
        assert_eq!(cv.shape(), (av.rows(), 1), "add_col: shape mismatch");
        let m = Mat::from_fn(av.rows(), av.cols(), |i, j| av.get(i, j) + cv.get(i, 0));
        let t = self.any_tracked(&[a, col]);
        self.push(m, Op::AddCol(a, col), t)
    }

    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (av, cv) = (self.value(a), self.value(col));
        assert_eq!(cv.shape(), (av.rows(), 1), "mul_col: shape mismatch");
        let m = Mat::from_fn(av.rows(), av.cols(), |i, j| av.get(i, j) * cv.get(i, 0));
        let t = self.any_tracked(&[a, col]);
        self.push(m, Op::MulCol(a, col), t)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let m = self.value(a).scale(c);
        let t = self.tracked(a);
        self.push(m, Op::Scale(a, c), t)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let m = self.value(a).map(|x| x + c);
        let t = self.tracked(a);
        self.push(m, Op::AddScalar(a), t)
    }

    /// `s · a` where `s` is a 1×1 node.
    pub fn mul_scalar_var(&mut self, a: Var, s: Var) -> Var {
        let sv = self.value(s).scalar_value();
        let m = self.value(a).scale(sv);
        let t = self.any_tracked(&[a, s]);
        self.push(m, Op::MulScalarVar(a, s), t)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let m = self.value(a).map(f64::tanh);
        let t = self.tracked(a);
        self.push(m, Op::Tanh(a), t)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let m = self.value(a).map(f64::exp);
        let t = self.tracked(a);
        self.push(m, Op::Exp(a), t)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let m = self.value(a).map(f64::ln);
        let t = self.tracked(a);
        self.push(m, Op::Ln(a), t)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let m = self.value(a).map(gelu);
        let t = self.tracked(a);
        self.push(m, Op::Gelu(a), t)
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        let m = self.value(a).map(|x| x.powf(p));
        let t = self.tracked(a);
        self.push(m, Op::Powf(a, p), t)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let m = self.value(a).map(f64::abs);
        let t = self.tracked(a);
        self.push(m, Op::Abs(a), t)
    }

    /// `max(a, lo)` elementwise; gradient passes only where `a > lo`.
    pub fn clamp_min(&mut self, a: Var, lo: f64) -> Var {
        let m = self.value(a).map(|x| x.max(lo));
        let t = self.tracked(a);
        self.push(m, Op::ClampMin(a, lo), t)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let m = softmax_rows(self.value(a));
        let t = self.tracked(a);
        self.push(m, Op::SoftmaxRows(a), t)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut m = av.clone();
        for r in 0..m.rows() {
            let row = m.row_mut(r);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let t = self.tracked(a);
        self.push(m, Op::LogSoftmaxRows(a), t)
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let m = Mat::from_fn(av.rows(), 1, |r, _| av.row(r).iter().sum());
        let t = self.tracked(a);
        self.push(m, Op::RowSum(a), t)
    }

    pub fn row_mean(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let n = av.cols() as f64;
        let m = Mat::from_fn(av.rows(), 1, |r, _| av.row(r).iter().sum::<f64>() / n);
        let t = self.tracked(a);
        self.push(m, Op::RowMean(a), t)
    }

    pub fn col_sum(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let m = Mat::from_fn(1, av.cols(), |_, c| (0..av.rows()).map(|r| av.get(r, c)).sum());
        let t = self.tracked(a);
        self.push(m, Op::ColSum(a), t)
    }

    pub fn col_mean(&mut self, a: Var) -> Var {
        let n = self.value(a).rows() as f64;
        let s = self.col_sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let m = Mat::scalar(self.value(a).sum());
        let t = self.tracked(a);
        self.push(m, Op::SumAll(a), t)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Maximum entry; ties resolve to the first occurrence.
    pub fn max_all(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut best = 0;
        for (i, &v) in av.data().iter().enumerate() {
            if v > av.data()[best] {
                best = i;
            }
        }
        let m = Mat::scalar(av.data()[best]);
        let t = self.tracked(a);
        self.push(m, Op::MaxAll(a, best), t)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let m = self.value(a).transpose();
        let t = self.tracked(a);
        self.push(m, Op::Transpose(a), t)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Mat> = parts.iter().map(|&p| self.value(p)).collect();
        let m = Mat::concat_rows(&mats);
        let t = self.any_tracked(parts);
        self.push(m, Op::ConcatRows(parts.to_vec()), t)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Mat> = parts.iter().map(|&p| self.value(p)).collect();
        let m = Mat::concat_cols(&mats);
        let t = self.any_tracked(parts);
        self.push(m, Op::ConcatCols(parts.to_vec()), t)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let m = self.value(a).slice_rows(start, len);
        let t = self.tracked(a);
        self.push(m, Op::SliceRows(a, start), t)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let m = self.value(a).slice_cols(start, len);
        let t = self.tracked(a);
        self.push(m, Op::SliceCols(a, start), t)
    }

    /// Rows of `a` at `idx` (repeats allowed); gradients scatter-add back.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let m = self.value(a).select_rows(idx);
        let t = self.tracked(a);
        self.push(m, Op::GatherRows(a, idx.to_vec()), t)
    }

    /// Sliding-window unfold along rows for 1-D convolution: output row `t`
    /// concatenates input rows `t - pad_left .. t - pad_left + kernel`,
    /// zero outside the input. Output has `R + pad_left + pad_right - kernel + 1` rows.
    pub fn unfold(&mut self, a: Var, kernel: usize, pad_left: usize, pad_right: usize) -> Var {
        let av = self.value(a);
        let (r, c) = av.shape();
        let out_rows = (r + pad_left + pad_right + 1).saturating_sub(kernel);
        let mut m = Mat::zeros(out_rows, kernel * c);
        for t in 0..out_rows {
            for k in 0..kernel {
                let src = t + k;
                if src < pad_left || src - pad_left >= r {
                    continue;
                }
                let src = src - pad_left;
                m.row_mut(t)[k * c..(k + 1) * c].copy_from_slice(av.row(src));
            }
        }
        let tr = self.tracked(a);
        self.push(
            m,
            Op::Unfold {
                src: a,
                kernel,
                pad_left,
            },
            tr,
        )
    }

    /// Non-overlapping max pooling over groups of `stride` rows, per column.
    /// Requires `rows % stride == 0`.
    pub fn max_pool_rows(&mut self, a: Var, stride: usize) -> Var {
        let av = self.value(a);
        let (r, c) = av.shape();
        assert!(stride > 0 && r % stride == 0, "max_pool_rows: {r} rows, stride {stride}");
        let out_rows = r / stride;
        let mut m = Mat::zeros(out_rows, c);
        let mut arg = vec![0usize; out_rows * c];
        for o in 0..out_rows {
            for j in 0..c {
                let mut best = o * stride;
                for s in o * stride..(o + 1) * stride {
                    if av.get(s, j) > av.get(best, j) {
                        best = s;
                    }
                }
                m.set(o, j, av.get(best, j));
                arg[o * c + j] = best;
            }
        }
        let t = self.tracked(a);
        self.push(m, Op::MaxPoolRows(a, arg), t)
    }

    /// Node whose forward value is `value` while its gradient flows to `src`
    /// as if it were the identity: `value - stop_grad(src) + src`, with the
    /// forward value exact.
    pub fn straight_through(&mut self, value: Mat, src: Var) -> Var {
        assert_eq!(value.shape(), self.shape(src), "straight_through: shape mismatch");
        let t = self.tracked(src);
        self.push(value, Op::StraightThrough(src), t)
    }

    /// Scalar node whose value and partial derivatives were computed outside the tape.
    pub fn custom_scalar(&mut self, value: f64, partials: Vec<(Var, Mat)>) -> Var {
        for (v, g) in &partials {
            assert_eq!(self.shape(*v), g.shape(), "custom_scalar: partial shape mismatch");
        }
        let vars: Vec<Var> = partials.iter().map(|(v, _)| *v).collect();
        let t = self.any_tracked(&vars);
        self.push(Mat::scalar(value), Op::Custom(partials), t)
    }

    /// Reverse pass from the scalar node `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward: loss must be 1x1");
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Mat::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.tracked {
                self.backprop_node(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    /// Parameter gradients keyed by parameter name.
    pub fn param_grads(&self, grads: &Gradients) -> BTreeMap<String, Mat> {
        self.params
            .iter()
            .map(|(name, v)| (name.clone(), grads.get_or_zeros(*v, self.shape(*v))))
            .collect()
    }

    fn backprop_node(&self, node: &Node, g: &Mat, grads: &mut [Option<Mat>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let acc = |v: Var, d: Mat, grads: &mut [Option<Mat>]| {
            if !self.nodes[v.0].tracked {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&d),
                slot @ None => *slot = Some(d),
            }
        };
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.tracked(*a) {
                    acc(*a, g.matmul_t(val(*b)), grads);
                }
                if self.tracked(*b) {
                    acc(*b, val(*a).t_matmul(g), grads);
                }
            }
            Op::MatMulT(a, b) => {
                if self.tracked(*a) {
                    acc(*a, g.matmul(val(*b)), grads);
                }
                if self.tracked(*b) {
                    acc(*b, g.t_matmul(val(*a)), grads);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone(), grads);
                acc(*b, g.clone(), grads);
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone(), grads);
                acc(*b, g.scale(-1.0), grads);
            }
            Op::Mul(a, b) => {
                acc(*a, g.zip_map(val(*b), |x, y| x * y), grads);
                acc(*b, g.zip_map(val(*a), |x, y| x * y), grads);
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone(), grads);
                acc(*row, col_sums(g), grads);
            }
            Op::MulRow(a, row) => {
                let rv = val(*row);
                acc(
                    *a,
                    Mat::from_fn(g.rows(), g.cols(), |i, j| g.get(i, j) * rv.get(0, j)),
                    grads,
                );
                acc(*row, col_sums(&g.zip_map(val(*a), |x, y| x * y)), grads);
            }
            Op::AddCol(a, col) => {
                acc(*a, g.clone(), grads);
                acc(*col, row_sums(g), grads);
            }
            Op::MulCol(a, col) => {
                let cv = val(*col);
                acc(
                    *a,
                    Mat::from_fn(g.rows(), g.cols(), |i, j| g.get(i, j) * cv.get(i, 0)),
                    grads,
                );
                acc(*col, row_sums(&g.zip_map(val(*a), |x, y| x * y)), grads);
            }
            Op::Scale(a, c) => acc(*a, g.scale(*c), grads),
            Op::AddScalar(a) => acc(*a, g.clone(), grads),
            Op::MulScalarVar(a, s) => {
                let sv = val(*s).scalar_value();
                acc(*a, g.scale(sv), grads);
                let ds: f64 = g.data().iter().zip(val(*a).data()).map(|(x, y)| x * y).sum();
                acc(*s, Mat::scalar(ds), grads);
            }
            Op::Tanh(a) => acc(*a, g.zip_map(out, |gv, y| gv * (1.0 - y * y)), grads),
            Op::Exp(a) => acc(*a, g.zip_map(out, |gv, y| gv * y), grads),
            Op::Ln(a) => acc(*a, g.zip_map(val(*a), |gv, x| gv / x), grads),
            Op::Gelu(a) => acc(*a, g.zip_map(val(*a), |gv, x| gv * gelu_grad(x)), grads),
            Op::Powf(a, p) => acc(
                *a,
                g.zip_map(val(*a), |gv, x| gv * p * x.powf(p - 1.0)),
                grads,
            ),
            Op::Abs(a) => acc(*a, g.zip_map(val(*a), |gv, x| gv * sign(x)), grads),
            Op::ClampMin(a, lo) => acc(
                *a,
                g.zip_map(val(*a), |gv, x| if x > *lo { gv } else { 0.0 }),
                grads,
            ),
            Op::SoftmaxRows(a) => {
                let mut d = Mat::zeros(g.rows(), g.cols());
                for r in 0..g.rows() {
                    let y = out.row(r);
                    let gr = g.row(r);
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (j, dv) in d.row_mut(r).iter_mut().enumerate() {
                        *dv = y[j] * (gr[j] - dot);
                    }
                }
                acc(*a, d, grads);
            }
            Op::LogSoftmaxRows(a) => {
                let mut d = Mat::zeros(g.rows(), g.cols());
                for r in 0..g.rows() {
                    let y = out.row(r);
                    let gr = g.row(r);
                    let gs: f64 = gr.iter().sum();
                    for (j, dv) in d.row_mut(r).iter_mut().enumerate() {
                        *dv = gr[j] - y[j].exp() * gs;
                    }
                }
                acc(*a, d, grads);
            }
            Op::RowSum(a) => {
                let (r, c) = self.shape(*a);
                acc(*a, Mat::from_fn(r, c, |i, _| g.get(i, 0)), grads);
            }
            Op::RowMean(a) => {
                let (r, c) = self.shape(*a);
                let n = c as f64;
                acc(*a, Mat::from_fn(r, c, |i, _| g.get(i, 0) / n), grads);
            }
            Op::ColSum(a) => {
                let (r, c) = self.shape(*a);
                acc(*a, Mat::from_fn(r, c, |_, j| g.get(0, j)), grads);
            }
            Op::SumAll(a) => {
                let (r, c) = self.shape(*a);
                acc(*a, Mat::filled(r, c, g.scalar_value()), grads);
            }
            Op::MaxAll(a, idx) => {
                let (r, c) = self.shape(*a);
                let mut d = Mat::zeros(r, c);
                d.data_mut()[*idx] = g.scalar_value();
                acc(*a, d, grads);
            }
            Op::Transpose(a) => acc(*a, g.transpose(), grads),
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let n = self.shape(p).0;
                    if self.tracked(p) {
                        acc(p, g.slice_rows(start, n), grads);
                    }
                    start += n;
                }
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let n = self.shape(p).1;
                    if self.tracked(p) {
                        acc(p, g.slice_cols(start, n), grads);
                    }
                    start += n;
                }
            }
            Op::SliceRows(a, start) => {
                let (r, c) = self.shape(*a);
                let mut d = Mat::zeros(r, c);
                for i in 0..g.rows() {
                    d.row_mut(start + i).copy_from_slice(g.row(i));
                }
                acc(*a, d, grads);
            }
            Op::SliceCols(a, start) => {
                let (r, c) = self.shape(*a);
                let mut d = Mat::zeros(r, c);
                for i in 0..r {
                    d.row_mut(i)[*start..start + g.cols()].copy_from_slice(g.row(i));
                }
                acc(*a, d, grads);
            }
            Op::GatherRows(a, idx) => {
                let (r, c) = self.shape(*a);
                let mut d = Mat::zeros(r, c);
                for (i, &src) in idx.iter().enumerate() {
                    for (dv, gv) in d.row_mut(src).iter_mut().zip(g.row(i)) {
                        *dv += gv;
                    }
                }
                acc(*a, d, grads);
            }
            Op::Unfold {
                src,
                kernel,
                pad_left,
            } => {
                let (r, c) = self.shape(*src);
                let mut d = Mat::zeros(r, c);
                for t in 0..g.rows() {
                    for k in 0..*kernel {
                        let s = t + k;
                        if s < *pad_left || s - pad_left >= r {
                            continue;
                        }
                        let s = s - pad_left;
                        let grow = &g.row(t)[k * c..(k + 1) * c];
                        for (dv, gv) in d.row_mut(s).iter_mut().zip(grow) {
                            *dv += gv;
                        }
                    }
                }
                acc(*src, d, grads);
            }
            Op::MaxPoolRows(a, arg) => {
                let (r, c) = self.shape(*a);
                let mut d = Mat::zeros(r, c);
                for o in 0..g.rows() {
                    for j in 0..c {
                        let s = arg[o * c + j];
                        d.set(s, j, d.get(s, j) + g.get(o, j));
                    }
                }
                acc(*a, d, grads);
            }
            Op::StraightThrough(a) => acc(*a, g.clone(), grads),
            Op::Custom(partials) => {
                let gv = g.scalar_value();
                for (v, p) in partials {
                    acc(*v, p.scale(gv), grads);
                }
            }
        }
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

fn col_sums(g: &Mat) -> Mat {
    Mat::from_fn(1, g.cols(), |_, j| (0..g.rows()).map(|i| g.get(i, j)).sum())
}

fn row_sums(g: &Mat) -> Mat {
    Mat::from_fn(g.rows(), 1, |i, _| g.row(i).iter().sum())
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let th = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(a: &Mat) -> Mat {
    let mut m = a.clone();
    for r in 0..m.rows() {
        let row = m.row_mut(r);
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    m
}

/// Central finite-difference gradient of a scalar function of one matrix.
pub fn numeric_grad(x: &Mat, step: f64, mut f: impl FnMut(&Mat) -> f64) -> Mat {
    let mut out = Mat::zeros(x.rows(), x.cols());
    let mut xp = x.clone();
    for i in 0..x.len() {
        let orig = xp.data()[i];
        xp.data_mut()[i] = orig + step;
        let fp = f(&xp);
        xp.data_mut()[i] = orig - step;
        let fm = f(&xp);
        xp.data_mut()[i] = orig;
        out.data_mut()[i] = (fp - fm) / (2.0 * step);
    }
    out
}

/// `max |a - b| / max(max |b|, floor)`, the relative error used by gradient checks.
pub fn relative_error(analytic: &Mat, numeric: &Mat, floor: f64) -> f64 {
    let scale = numeric
        .data()
        .iter()
        .map(|v| v.abs())
        .fold(floor, f64::max);
    analytic.max_abs_diff(numeric) / scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rand_mat(rng: &mut impl Rng, r: usize, c: usize) -> Mat {
        Mat::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    /// Checks d(loss)/d(x) for a graph-building closure against central differences.
    fn check(x: &Mat, build: impl Fn(&mut Graph, Var) -> Var) {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let loss = build(&mut g, xv);
        let grads = g.backward(loss);
        let analytic = grads.get_or_zeros(xv, x.shape());
        let numeric = numeric_grad(x, 1e-5, |xp| {
            let mut g = Graph::new();
            let xv = g.input(xp.clone());
            let l = build(&mut g, xv);
            g.value(l).scalar_value()
        });
        let err = relative_error(&analytic, &numeric, 1e-8);
        assert!(err < 1e-6, "relative error {err}\n{analytic:?}\n{numeric:?}");
    }

    #[test]
    fn elementwise_ops_match_finite_differences() {
        let mut rng = crate::rng::stream(1, "test", 0);
        let x = rand_mat(&mut rng, 3, 4);
        let w = rand_mat(&mut rng, 4, 2);
        let row = rand_mat(&mut rng, 1, 4);
        let col = rand_mat(&mut rng, 3, 1);
        check(&x, |g, xv| {
            let wv = g.constant(w.clone());
            let h = g.matmul(xv, wv);
            let h = g.tanh(h);
            let e = g.exp(h);
            g.sum_all(e)
        });
        check(&x, |g, xv| {
            let r = g.constant(row.clone());
            let c = g.constant(col.clone());
            let a = g.add_row(xv, r);
            let b = g.mul_row(a, r);
            let cc = g.mul_col(b, c);
            let d = g.add_col(cc, c);
            let e = g.gelu(d);
            let sq = g.mul(e, xv);
            g.mean_all(sq)
        });
        check(&x, |g, xv| {
            let p = g.powf(xv, 2.0);
            let p = g.add_scalar(p, 0.5);
            let p = g.powf(p, -0.5);
            let l = g.ln(p);
            let t = g.transpose(l);
            let m = g.matmul(xv, t);
            g.sum_all(m)
        });
    }

    #[test]
    fn softmax_and_log_softmax_grads() {
        let mut rng = crate::rng::stream(2, "test", 0);
        let x = rand_mat(&mut rng, 3, 5);
        let w = rand_mat(&mut rng, 3, 5);
        check(&x, |g, xv| {
            let s = g.softmax_rows(xv);
            let wv = g.constant(w.clone());
            let m = g.mul(s, wv);
            g.sum_all(m)
        });
        check(&x, |g, xv| {
            let s = g.log_softmax_rows(xv);
            let wv = g.constant(w.clone());
            let m = g.mul(s, wv);
            g.sum_all(m)
        });
    }

    #[test]
    fn structural_ops_grads() {
        let mut rng = crate::rng::stream(3, "test", 0);
        let x = rand_mat(&mut rng, 8, 3);
        let w = rand_mat(&mut rng, 9, 2);
        check(&x, |g, xv| {
            let u = g.unfold(xv, 3, 1, 1);
            let wv = g.constant(w.clone());
            let y = g.matmul(u, wv);
            let y = g.tanh(y);
            let p = g.max_pool_rows(y, 4);
            let q = g.gather_rows(p, &[1, 0, 1]);
            let a = g.slice_rows(xv, 2, 3);
            let b = g.slice_cols(a, 1, 2);
            let c = g.concat_rows(&[q, b]);
            let d = g.concat_cols(&[c, c]);
            let s = g.row_sum(d);
            let s2 = g.mul(s, s);
            g.sum_all(s2)
        });
        check(&x, |g, xv| {
            let m = g.row_mean(xv);
            let c = g.col_sum(xv);
            let mm = g.max_all(c);
            let a = g.abs(m);
            let s = g.sum_all(a);
            let sv = g.mul_scalar_var(xv, mm);
            let t = g.sum_all(sv);
            g.add(s, t)
        });
    }

    #[test]
    fn untracked_constants_get_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Mat::scalar(2.0));
        let p = g.param("w", &Mat::scalar(3.0));
        let y = g.mul(c, p);
        let grads = g.backward(y);
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(p).unwrap().scalar_value(), 2.0);
        let named = g.param_grads(&grads);
        assert_eq!(named["w"].scalar_value(), 2.0);
    }

    #[test]
    fn stop_grad_blocks_flow() {
        let mut g = Graph::new();
        let x = g.input(Mat::scalar(1.5));
        let s = g.stop_grad(x);
        let y = g.mul(x, s);
        let grads = g.backward(y);
        assert_eq!(grads.get(x).unwrap().scalar_value(), 1.5);
    }
}
