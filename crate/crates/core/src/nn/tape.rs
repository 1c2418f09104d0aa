//! Reverse-mode differentiation over dense `f64` matrices.
//!
//! Operations are recorded on a [`Tape`] as they are evaluated. Calling
//! [`Tape::backward`] on a `1 x 1` output walks the tape in reverse and
//! accumulates the gradient of that scalar into every node that depends on
//! a leaf created with [`Tape::param`]. Nodes created with
//! [`Tape::constant`] (and everything computed only from constants) are
//! skipped.
//!
//! Shapes are checked with assertions: a mismatch here is a programming
//! error in the model code, not a recoverable condition.

use ndarray::{Array2, Axis, Zip};

use super::math::{sigmoid, softplus};
use crate::graph::{n_pairs, pairs};

pub type Mat = Array2<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBroadcast(Var, Var),
    AddConst(Var),
    MulConst(Var, Mat),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Log(Var),
    Exp(Var),
    LogSoftmaxRows(Var),
    SoftmaxRows(Var),
    Sum(Var),
    RowSum(Var),
    Transpose(Var),
    SelectRows(Var, Vec<usize>),
    HStack(Vec<Var>),
    LogMeanExpRows(Var),
    MirrorPairs(Var),
    NormalizeAdjacency(Var, Vec<f64>),
    PairLogits { z: Var, zt: Var, b: Var, s: Var },
}

struct Node {
    value: Mat,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar output, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    /// Gradient for a leaf; `None` when the output does not depend on it.
    /// Interior nodes are not retained.
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }

    /// Gradient with respect to `v`, zero-filled if the output does not depend on it.
    pub fn wrt(&self, v: Var, tape: &Tape) -> Mat {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Mat::zeros(tape.value(v).raw_dim()))
    }
}

fn accumulate(slot: &mut Option<Mat>, g: Mat) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_any(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// A differentiable input.
    pub fn param(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A fixed input; no gradient is tracked for it.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.dim(), (1, 1), "scalar() on a non-scalar node");
        m[[0, 0]]
    }

    fn unary(&mut self, a: Var, value: Mat, op: Op) -> Var {
        let g = self.grad_any(&[a]);
        self.push(value, op, g)
    }

    fn binary(&mut self, a: Var, b: Var, value: Mat, op: Op) -> Var {
        let g = self.grad_any(&[a, b]);
        self.push(value, op, g)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.ncols(), vb.nrows(), "matmul inner dimensions");
        let v = va.dot(vb);
        self.binary(a, b, v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "add shapes");
        let v = self.value(a) + self.value(b);
        self.binary(a, b, v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "sub shapes");
        let v = self.value(a) - self.value(b);
        self.binary(a, b, v, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "mul shapes");
        let v = self.value(a) * self.value(b);
        self.binary(a, b, v, Op::Mul(a, b))
    }

    /// `a + b` where `b` is `1 x 1`, `1 x cols` or `rows x 1`.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Var {
        let (ra, ca) = self.value(a).dim();
        let (rb, cb) = self.value(b).dim();
        assert!(
            (rb == 1 || rb == ra) && (cb == 1 || cb == ca),
            "cannot broadcast {rb}x{cb} onto {ra}x{ca}"
        );
        let v = self.value(a) + self.value(b);
        self.binary(a, b, v, Op::AddBroadcast(a, b))
    }

    /// `a + c` for a fixed matrix `c`.
    pub fn add_const(&mut self, a: Var, c: &Mat) -> Var {
        let v = self.value(a) + c;
        self.unary(a, v, Op::AddConst(a))
    }

    /// Elementwise `a * m` for a fixed matrix `m` (masks, one-hot selectors).
    pub fn mul_const(&mut self, a: Var, m: Mat) -> Var {
        assert_eq!(self.value(a).dim(), m.dim(), "mul_const shapes");
        let v = self.value(a) * &m;
        self.unary(a, v, Op::MulConst(a, m))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a) * s;
        self.unary(a, v, Op::Scale(a, s))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.unary(a, v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.unary(a, v, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(softplus);
        self.unary(a, v, Op::Softplus(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::ln);
        self.unary(a, v, Op::Log(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::exp);
        self.unary(a, v, Op::Exp(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |acc, &x| acc.max(x));
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            row -= lse;
        }
        self.unary(a, v, Op::LogSoftmaxRows(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |acc, &x| acc.max(x));
            row.mapv_inplace(|x| (x - m).exp());
            let s = row.sum();
            row /= s;
        }
        self.unary(a, v, Op::SoftmaxRows(a))
    }

    /// Sum of all entries, as a `1 x 1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Mat::from_elem((1, 1), self.value(a).sum());
        self.unary(a, v, Op::Sum(a))
    }

    /// Row sums, as a `rows x 1` node.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.unary(a, v, Op::RowSum(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.unary(a, v, Op::Transpose(a))
    }

    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let v = self.value(a).select(Axis(0), rows);
        self.unary(a, v, Op::SelectRows(a, rows.to_vec()))
    }

    /// Concatenates column blocks with equal row counts.
    pub fn hstack(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "hstack of nothing");
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("hstack row counts");
        let g = self.grad_any(parts);
        self.push(v, Op::HStack(parts.to_vec()), g)
    }

    /// `log(mean_j exp(a_ij))` per row, as a `rows x 1` node.
    pub fn log_mean_exp_rows(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let cols = src.ncols() as f64;
        let v = src
            .rows()
            .into_iter()
            .map(|row| {
                let m = row.fold(f64::NEG_INFINITY, |acc, &x| acc.max(x));
                m + (row.iter().map(|x| (x - m).exp()).sum::<f64>() / cols).ln()
            })
            .collect::<Vec<_>>();
        let v = Mat::from_shape_vec((v.len(), 1), v).unwrap();
        self.unary(a, v, Op::LogMeanExpRows(a))
    }

    /// Expands a `pairs x 1` vector into a symmetric `n x n` matrix with zero diagonal.
    pub fn mirror_pairs(&mut self, a: Var, n: usize) -> Var {
        let src = self.value(a);
        assert_eq!(src.dim(), (n_pairs(n), 1), "mirror_pairs input shape");
        let v = crate::graph::mirror_pairs(src.as_slice().expect("contiguous"), n);
        self.unary(a, v, Op::MirrorPairs(a))
    }

    /// `D^{-1/2} (A + I) D^{-1/2}`; see [`crate::graph::normalize_adjacency`].
    pub fn normalize_adjacency(&mut self, a: Var) -> Var {
        let (v, inv_sqrt) = crate::graph::normalize::normalize_unchecked(self.value(a));
        self.unary(a, v, Op::NormalizeAdjacency(a, inv_sqrt))
    }

    /// Per-pair logits `z_i . zt_j + b_i + b_j + s` for `i < j`, as a `pairs x 1` node.
    ///
    /// `z` and `zt` are `n x d`, `b` is `n x 1` and `s` is `1 x 1`.
    /// Passing the same node for `z` and `zt` gives the symmetric form.
    pub fn pair_logits(&mut self, z: Var, zt: Var, b: Var, s: Var) -> Var {
        let (zv, ztv, bv, sv) = (self.value(z), self.value(zt), self.value(b), self.value(s));
        let n = zv.nrows();
        assert_eq!(zv.dim(), ztv.dim(), "pair_logits embedding shapes");
        assert_eq!(bv.dim(), (n, 1), "pair_logits bias shape");
        assert_eq!(sv.dim(), (1, 1), "pair_logits shift shape");
        let gram = zv.dot(&ztv.t());
        let shift = sv[[0, 0]];
        let vals: Vec<f64> = pairs(n)
            .map(|(i, j)| gram[[i, j]] + bv[[i, 0]] + bv[[j, 0]] + shift)
            .collect();
        let v = Mat::from_shape_vec((vals.len(), 1), vals).unwrap();
        let g = self.grad_any(&[z, zt, b, s]);
        self.push(v, Op::PairLogits { z, zt, b, s }, g)
    }

    /// Gradient of the `1 x 1` node `output` with respect to every tracked node.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.value(output).dim(), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Mat::ones((1, 1)));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            // Leaves keep their gradient; interior buffers are consumed.
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let y = &node.value;
            let wants = |v: &Var| self.nodes[v.0].needs_grad;
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    if wants(a) {
                        accumulate(&mut grads[a.0], g.dot(&self.value(*b).t()));
                    }
                    if wants(b) {
                        accumulate(&mut grads[b.0], self.value(*a).t().dot(&g));
                    }
                }
                Op::Add(a, b) => {
                    if wants(a) {
                        accumulate(&mut grads[a.0], g.clone());
                    }
                    if wants(b) {
                        accumulate(&mut grads[b.0], g.clone());
                    }
                }
                Op::Sub(a, b) => {
                    if wants(a) {
                        accumulate(&mut grads[a.0], g.clone());
                    }
                    if wants(b) {
                        accumulate(&mut grads[b.0], -&g);
                    }
                }
                Op::Mul(a, b) => {
                    if wants(a) {
                        accumulate(&mut grads[a.0], &g * self.value(*b));
                    }
                    if wants(b) {
                        accumulate(&mut grads[b.0], &g * self.value(*a));
                    }
                }
                Op::AddBroadcast(a, b) => {
                    if wants(a) {
                        accumulate(&mut grads[a.0], g.clone());
                    }
                    if wants(b) {
                        let (rb, cb) = self.value(*b).dim();
                        let mut gb = g.clone();
                        if rb == 1 {
                            gb = gb.sum_axis(Axis(0)).insert_axis(Axis(0));
                        }
                        if cb == 1 {
                            gb = gb.sum_axis(Axis(1)).insert_axis(Axis(1));
                        }
                        accumulate(&mut grads[b.0], gb);
                    }
                }
                Op::AddConst(a) => accumulate(&mut grads[a.0], g),
                Op::MulConst(a, m) => accumulate(&mut grads[a.0], &g * m),
                Op::Scale(a, s) => accumulate(&mut grads[a.0], &g * *s),
                Op::Relu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(self.value(*a))
                        .for_each(|gv, &x| {
                            if x <= 0.0 {
                                *gv = 0.0
                            }
                        });
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Sigmoid(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(y).for_each(|gv, &s| *gv *= s * (1.0 - s));
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Softplus(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(self.value(*a))
                        .for_each(|gv, &x| *gv *= sigmoid(x));
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Log(a) => accumulate(&mut grads[a.0], &g / self.value(*a)),
                Op::Exp(a) => accumulate(&mut grads[a.0], &g * y),
                Op::LogSoftmaxRows(a) => {
                    let gsum = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                    let soft = y.mapv(f64::exp);
                    accumulate(&mut grads[a.0], &g - &(&soft * &gsum));
                }
                Op::SoftmaxRows(a) => {
                    let dot = (&g * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                    accumulate(&mut grads[a.0], y * &(&g - &dot));
                }
                Op::Sum(a) => {
                    let ga = Mat::from_elem(self.value(*a).raw_dim(), g[[0, 0]]);
                    accumulate(&mut grads[a.0], ga);
                }
                Op::RowSum(a) => {
                    let shape = self.value(*a).raw_dim();
                    let ga = g.broadcast(shape).expect("row_sum broadcast").to_owned();
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Transpose(a) => accumulate(&mut grads[a.0], g.t().to_owned()),
                Op::SelectRows(a, rows) => {
                    let mut ga = Mat::zeros(self.value(*a).raw_dim());
                    for (k, &r) in rows.iter().enumerate() {
                        let mut dst = ga.row_mut(r);
                        dst += &g.row(k);
                    }
                    accumulate(&mut grads[a.0], ga);
                }
                Op::HStack(parts) => {
                    let mut col = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        if wants(p) {
                            let block = g.slice(ndarray::s![.., col..col + w]).to_owned();
                            accumulate(&mut grads[p.0], block);
                        }
                        col += w;
                    }
                }
                Op::LogMeanExpRows(a) => {
                    let x = self.value(*a);
                    let mut ga = Mat::zeros(x.raw_dim());
                    for (r, (xr, mut gr)) in x.rows().into_iter().zip(ga.rows_mut()).enumerate() {
                        let m = xr.fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
                        let w: Vec<f64> = xr.iter().map(|v| (v - m).exp()).collect();
                        let total: f64 = w.iter().sum();
                        for (gv, wv) in gr.iter_mut().zip(w) {
                            *gv = g[[r, 0]] * wv / total;
                        }
                    }
                    accumulate(&mut grads[a.0], ga);
                }
                Op::MirrorPairs(a) => {
                    let n = y.nrows();
                    let vals: Vec<f64> = pairs(n).map(|(i, j)| g[[i, j]] + g[[j, i]]).collect();
                    let ga = Mat::from_shape_vec((vals.len(), 1), vals).unwrap();
                    accumulate(&mut grads[a.0], ga);
                }
                Op::NormalizeAdjacency(a, inv_sqrt) => {
                    // y_ij = t_ij d_i^{-1/2} d_j^{-1/2}, t = A + I, d_i = sum_j t_ij.
                    let n = y.nrows();
                    let gy = &g * y;
                    let row = gy.sum_axis(Axis(1));
                    let col = gy.sum_axis(Axis(0));
                    let d_grad: Vec<f64> = (0..n)
                        .map(|k| -0.5 * inv_sqrt[k] * inv_sqrt[k] * (row[k] + col[k]))
                        .collect();
                    let ga = Mat::from_shape_fn((n, n), |(i, j)| {
                        g[[i, j]] * inv_sqrt[i] * inv_sqrt[j] + d_grad[i]
                    });
                    accumulate(&mut grads[a.0], ga);
                }
                Op::PairLogits { z, zt, b, s } => {
                    let (zv, ztv) = (self.value(*z), self.value(*zt));
                    let n = zv.nrows();
                    let mut gz = Mat::zeros(zv.raw_dim());
                    let mut gzt = Mat::zeros(ztv.raw_dim());
                    let mut gb = Mat::zeros((n, 1));
                    for (p, (i, j)) in pairs(n).enumerate() {
                        let gp = g[[p, 0]];
                        if gp == 0.0 {
                            continue;
                        }
                        gz.row_mut(i).scaled_add(gp, &ztv.row(j));
                        gzt.row_mut(j).scaled_add(gp, &zv.row(i));
                        gb[[i, 0]] += gp;
                        gb[[j, 0]] += gp;
                    }
                    if wants(z) {
                        accumulate(&mut grads[z.0], gz);
                    }
                    if wants(zt) {
                        accumulate(&mut grads[zt.0], gzt);
                    }
                    if wants(b) {
                        accumulate(&mut grads[b.0], gb);
                    }
                    if wants(s) {
                        accumulate(&mut grads[s.0], Mat::from_elem((1, 1), g.sum()));
                    }
                }
            }
        }
        Gradients { grads }
    }
}
