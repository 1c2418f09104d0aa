use ndarray::Array2;

use crate::error::{Error, Result};

/// `D^{-1/2} (A + I) D^{-1/2}` with `D` the row sums of `A + I`.
///
/// Accepts binary and relaxed (continuous) adjacencies alike. Every degree
/// is at least one because of the self-loop.
pub fn normalize_adjacency(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::ShapeMismatch(format!(
            "adjacency must be square, got {}x{}",
            n,
            a.ncols()
        )));
    }
    for i in 0..n {
        for j in 0..n {
            let v = a[[i, j]];
            if v < 0.0 {
                return Err(Error::NegativeEntry { i, j });
            }
            if j > i && (v - a[[j, i]]).abs() > 1e-12 * v.abs().max(1.0) {
                return Err(Error::AsymmetricInput { i, j });
            }
        }
    }
    Ok(normalize_unchecked(a).0)
}

/// Normalization without validation; also returns `D^{-1/2}` for backprop.
pub(crate) fn normalize_unchecked(a: &Array2<f64>) -> (Array2<f64>, Vec<f64>) {
    let n = a.nrows();
    let inv_sqrt: Vec<f64> = a
        .rows()
        .into_iter()
        .map(|r| 1.0 / (r.sum() + 1.0).sqrt())
        .collect();
    let out = Array2::from_shape_fn((n, n), |(i, j)| {
        let tilde = a[[i, j]] + if i == j { 1.0 } else { 0.0 };
        inv_sqrt[i] * tilde * inv_sqrt[j]
    });
    (out, inv_sqrt)
}

/// Divides each row by its L1 norm; all-zero rows are left as they are.
pub fn row_normalize_features(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let l1: f64 = row.iter().map(|v| v.abs()).sum();
        if l1 > 0.0 {
            row /= l1;
        }
    }
    out
}
