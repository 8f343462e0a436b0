//! Small dense symmetric-matrix helpers backing covariance conditioning,
//! entropy and GP regression. Matrices here are at most a few hundred rows.

use ndarray::{Array1, Array2};

/// Cholesky factorization A = L·Lᵀ (lower triangular). None if A is not
/// numerically positive definite.
pub fn cholesky(a: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l[[j, j]] = djj;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / djj;
        }
    }
    Some(l)
}

/// Solves L·x = b for lower-triangular L.
pub fn solve_lower(l: &Array2<f64>, b: &[f64]) -> Vec<f64> {
    let n = l.nrows();
    let mut x = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Solves Lᵀ·x = b for lower-triangular L.
pub fn solve_lower_transpose(l: &Array2<f64>, b: &[f64]) -> Vec<f64> {
    let n = l.nrows();
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Solves A·x = b given the Cholesky factor L of A.
pub fn cholesky_solve(l: &Array2<f64>, b: &[f64]) -> Vec<f64> {
    let y = solve_lower(l, b);
    solve_lower_transpose(l, &y)
}

/// log|A| from its Cholesky factor.
pub fn logdet_from_cholesky(l: &Array2<f64>) -> f64 {
    (0..l.nrows()).map(|i| 2.0 * l[[i, i]].ln()).sum()
}

/// Squared norm of L⁻¹·b (the quadratic form bᵀ·A⁻¹·b).
pub fn quad_form(l: &Array2<f64>, b: &[f64]) -> f64 {
    solve_lower(l, b).iter().map(|v| v * v).sum()
}

/// Dot product helper for plain slices.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[allow(dead_code)]
pub fn to_array1(v: Vec<f64>) -> Array1<f64> {
    Array1::from_vec(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cholesky_roundtrip() {
        let a = array![[4.0, 2.0, 0.6], [2.0, 5.0, 1.5], [0.6, 1.5, 3.0]];
        let l = cholesky(&a).unwrap();
        let re = l.dot(&l.t());
        for (x, y) in a.iter().zip(re.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(cholesky(&a).is_none());
    }

    #[test]
    fn solve_matches_direct() {
        let a = array![[4.0, 2.0], [2.0, 5.0]];
        let l = cholesky(&a).unwrap();
        let x = cholesky_solve(&l, &[1.0, 2.0]);
        // A·x should reproduce b.
        assert!((4.0 * x[0] + 2.0 * x[1] - 1.0).abs() < 1e-12);
        assert!((2.0 * x[0] + 5.0 * x[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn logdet_matches_2x2_closed_form() {
        let a = array![[4.0, 2.0], [2.0, 5.0]];
        let l = cholesky(&a).unwrap();
        assert!((logdet_from_cholesky(&l) - (16.0f64).ln()).abs() < 1e-12);
    }
}
