//! Two-layer GCN: `softmax(Â relu(Â X W0) W1)`.

use ndarray::Array2;
use rand::Rng;

use super::tape::{Mat, Tape, Var};
use crate::error::{Error, Result};

/// Weights of the two graph-convolution layers.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnParams {
    /// `D x Q`
    pub w0: Mat,
    /// `Q x C`
    pub w1: Mat,
}

impl GcnParams {
    pub fn init<R: Rng + ?Sized>(n_features: usize, hidden: usize, n_classes: usize, rng: &mut R) -> Self {
        Self {
            w0: glorot_init(n_features, hidden, rng),
            w1: glorot_init(hidden, n_classes, rng),
        }
    }

    pub fn n_features(&self) -> usize {
        self.w0.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.w0.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.w1.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.w0.iter().chain(self.w1.iter()).all(|v| v.is_finite())
    }
}

/// Uniform on `[-a, a]` with `a = sqrt(6 / (rows + cols))`.
pub fn glorot_init<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Mat {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-a..=a))
}

/// Inverted-dropout mask: each entry is `0` with probability `rate`,
/// otherwise `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(shape: (usize, usize), rate: f64, rng: &mut R) -> Mat {
    if rate <= 0.0 {
        return Mat::ones(shape);
    }
    let keep = 1.0 - rate;
    Array2::from_shape_simple_fn(shape, || {
        if rng.gen::<f64>() < keep {
            1.0 / keep
        } else {
            0.0
        }
    })
}

fn check_shapes(x: &Mat, a_hat: &Mat, params: &GcnParams) -> Result<()> {
    let n = x.nrows();
    if a_hat.dim() != (n, n) {
        return Err(Error::ShapeMismatch(format!(
            "normalized adjacency is {:?}, expected {n}x{n}",
            a_hat.dim()
        )));
    }
    if params.w0.nrows() != x.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "W0 has {} rows but features have {} columns",
            params.w0.nrows(),
            x.ncols()
        )));
    }
    if params.w1.nrows() != params.w0.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "W0 has {} columns but W1 has {} rows",
            params.w0.ncols(),
            params.w1.nrows()
        )));
    }
    Ok(())
}

/// Differentiable handles to the GCN weights on a tape.
#[derive(Debug, Clone, Copy)]
pub struct GcnVars {
    pub w0: Var,
    pub w1: Var,
}

impl GcnVars {
    pub fn params(tape: &mut Tape, params: &GcnParams) -> Self {
        Self {
            w0: tape.param(params.w0.clone()),
            w1: tape.param(params.w1.clone()),
        }
    }

    pub fn constants(tape: &mut Tape, params: &GcnParams) -> Self {
        Self {
            w0: tape.constant(params.w0.clone()),
            w1: tape.constant(params.w1.clone()),
        }
    }
}

/// Records the forward pass and returns the row-wise log-probabilities.
///
/// `a_hat` must already be normalized. With `dropout > 0` the input
/// features and the hidden activations are dropped out.
pub fn record_log_probs<R: Rng + ?Sized>(
    tape: &mut Tape,
    x: &Mat,
    a_hat: Var,
    w: GcnVars,
    dropout: f64,
    rng: &mut R,
) -> Var {
    let x_in = if dropout > 0.0 {
        x * &dropout_mask(x.dim(), dropout, rng)
    } else {
        x.clone()
    };
    let x_in = tape.constant(x_in);
    let xw = tape.matmul(x_in, w.w0);
    let h = tape.matmul(a_hat, xw);
    let mut h = tape.relu(h);
    if dropout > 0.0 {
        let dim = tape.value(h).dim();
        h = tape.mul_const(h, dropout_mask(dim, dropout, rng));
    }
    let hw = tape.matmul(h, w.w1);
    let logits = tape.matmul(a_hat, hw);
    tape.log_softmax_rows(logits)
}

/// Class probabilities `Π`; every row sums to one.
///
/// Dropout is applied only when `training` is set.
pub fn gcn_forward<R: Rng + ?Sized>(
    x: &Mat,
    a_hat: &Mat,
    params: &GcnParams,
    dropout: f64,
    training: bool,
    rng: &mut R,
) -> Result<Mat> {
    check_shapes(x, a_hat, params)?;
    if !(0.0..1.0).contains(&dropout) {
        return Err(Error::InvalidConfig(format!("dropout rate {dropout} not in [0, 1)")));
    }
    let mut tape = Tape::new();
    let a = tape.constant(a_hat.clone());
    let w = GcnVars::constants(&mut tape, params);
    let rate = if training { dropout } else { 0.0 };
    let lp = record_log_probs(&mut tape, x, a, w, rate, rng);
    let mut probs = tape.value(lp).mapv(f64::exp);
    for mut row in probs.rows_mut() {
        let s = row.sum();
        row /= s;
    }
    Ok(probs)
}

/// One-hot targets restricted to the masked rows.
pub fn masked_targets(y: &Mat, mask: &[bool]) -> Result<Mat> {
    if mask.len() != y.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "mask has length {} for {} label rows",
            mask.len(),
            y.nrows()
        )));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::EmptyMask);
    }
    let mut t = y.clone();
    for (mut row, &m) in t.rows_mut().into_iter().zip(mask) {
        if !m {
            row.fill(0.0);
        }
    }
    Ok(t)
}

/// Records `sum_{n in mask} log Π[n, y_n]` from log-probabilities.
pub fn record_log_likelihood(tape: &mut Tape, log_probs: Var, targets: &Mat) -> Var {
    let picked = tape.mul_const(log_probs, targets.clone());
    tape.sum(picked)
}

/// `-sum_{n in mask} sum_c Y[n,c] log Π[n,c]`, summed over the masked nodes.
pub fn masked_cross_entropy(probs: &Mat, y: &Mat, mask: &[bool]) -> Result<f64> {
    if probs.dim() != y.dim() {
        return Err(Error::ShapeMismatch(format!(
            "probabilities {:?} vs labels {:?}",
            probs.dim(),
            y.dim()
        )));
    }
    let t = masked_targets(y, mask)?;
    Ok(-probs
        .iter()
        .zip(t.iter())
        .filter(|(_, &yv)| yv != 0.0)
        .map(|(p, yv)| yv * p.ln())
        .sum::<f64>())
}

/// [`masked_cross_entropy`] divided by the number of masked nodes.
pub fn masked_cross_entropy_mean(probs: &Mat, y: &Mat, mask: &[bool]) -> Result<f64> {
    let total = masked_cross_entropy(probs, y, mask)?;
    Ok(total / mask.iter().filter(|&&m| m).count() as f64)
}

/// `weight * ||W0||_F^2`; optionally also over `W1`.
pub fn l2_penalty(params: &GcnParams, weight: f64, both_layers: bool) -> f64 {
    let sq = |m: &Mat| m.iter().map(|v| v * v).sum::<f64>();
    let mut total = sq(&params.w0);
    if both_layers {
        total += sq(&params.w1);
    }
    weight * total
}

/// Tape version of [`l2_penalty`].
pub fn record_l2_penalty(tape: &mut Tape, w: GcnVars, weight: f64, both_layers: bool) -> Var {
    let mut layers = vec![w.w0];
    if both_layers {
        layers.push(w.w1);
    }
    let mut total: Option<Var> = None;
    for l in layers {
        let sq = tape.mul(l, l);
        let s = tape.sum(sq);
        total = Some(match total {
            Some(t) => tape.add(t, s),
            None => s,
        });
    }
    tape.scale(total.unwrap(), weight)
}
