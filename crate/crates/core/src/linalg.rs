//! Dense helpers that ndarray does not ship without a LAPACK backend.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Matrix exponential by scaling and squaring with a truncated Taylor series.
///
/// Accurate to roughly machine precision for the small, well-scaled
/// matrices that appear in linear signal models.
pub fn expm(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let norm = a
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a / 2f64.powi(squarings);
    let mut result = Array2::<f64>::eye(n);
    let mut term = Array2::<f64>::eye(n);
    for k in 1..=20 {
        term = term.dot(&scaled) / k as f64;
        result += &term;
    }
    for _ in 0..squarings {
        result = result.dot(&result);
    }
    result
}

/// Lower-triangular Cholesky factor of a symmetric positive semidefinite
/// matrix. Zero pivots (exactly degenerate directions) are allowed.
pub fn cholesky_psd(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    let scale = a.diag().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if d < -1e-12 * scale {
            return Err(Error::InvalidInput(
                "matrix is not positive semidefinite".into(),
            ));
        }
        let pivot = d.max(0.0).sqrt();
        l[[j, j]] = pivot;
        for i in j + 1..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = if pivot > 0.0 { s / pivot } else { 0.0 };
        }
    }
    Ok(l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn expm_scalar_and_rotation() {
        let e = expm(&array![[2.5]]);
        assert_relative_eq!(e[[0, 0]], 2.5f64.exp(), max_relative = 1e-13);
        let t = 0.7;
        let r = expm(&array![[0.0, -t], [t, 0.0]]);
        assert_relative_eq!(r[[0, 0]], t.cos(), epsilon = 1e-13);
        assert_relative_eq!(r[[1, 0]], t.sin(), epsilon = 1e-13);
    }

    #[test]
    fn cholesky_reconstructs() {
        let a = array![[4.0, 2.0, 0.4], [2.0, 5.0, 1.0], [0.4, 1.0, 3.0]];
        let l = cholesky_psd(&a).unwrap();
        let back = l.dot(&l.t());
        for (x, y) in back.iter().zip(a.iter()) {
            assert_relative_eq!(x, y, epsilon = 1e-12);
        }
        assert!(cholesky_psd(&array![[1.0, 2.0], [2.0, 1.0]]).is_err());
        assert_eq!(cholesky_psd(&array![[0.0]]).unwrap()[[0, 0]], 0.0);
    }
}
