//! Small numeric helpers: log-sum-exp and symmetric-matrix utilities.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Numerically stable `log(exp(a) + exp(b))`.
#[inline]
pub fn log_sum_exp_pair(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a > b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

/// Numerically stable log-sum-exp over a slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Largest absolute difference between a matrix and its transpose.
pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut dev: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            dev = dev.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    dev
}

/// Checks squareness and symmetry up to `tol`.
pub fn check_symmetric(m: &DMatrix<f64>, tol: f64) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "expected square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let dev = max_asymmetry(m);
    if dev > tol {
        return Err(Error::NotSymmetric { max_dev: dev });
    }
    Ok(())
}

/// Replaces `m` with `(m + m^T) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Inverse and log-determinant of a symmetric positive-definite matrix via Cholesky.
pub fn spd_inverse_logdet(m: &DMatrix<f64>, context: &str) -> Result<(DMatrix<f64>, f64)> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite {
            context: context.to_string(),
        })?;
    let log_det = 2.0
        * chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|d| d.ln())
            .sum::<f64>();
    let mut inv = chol.inverse();
    // Cholesky inversion leaves ~1e-16 asymmetry; keep caches exactly symmetric.
    symmetrize(&mut inv);
    Ok((inv, log_det))
}

/// Largest absolute off-diagonal entry.
pub fn max_abs_offdiag(m: &DMatrix<f64>) -> f64 {
    let mut v: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if i != j {
                v = v.max(m[(i, j)].abs());
            }
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn log_sum_exp_matches_naive_in_safe_range() {
        let xs = [0.3f64, -1.2, 2.0];
        let naive = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&xs) - naive).abs() < 1e-14);
    }

    #[test]
    fn log_sum_exp_handles_extreme_magnitudes() {
        let v = log_sum_exp(&[-1000.0, -1001.0]);
        assert!(v.is_finite());
        assert!((v - (-1000.0 + (-1.0f64).exp().ln_1p())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp_pair(f64::NEG_INFINITY, 5.0), 5.0);
    }

    #[test]
    fn spd_inverse_logdet_roundtrip() {
        let m = dmatrix![2.0, 0.3; 0.3, 1.0];
        let (inv, log_det) = spd_inverse_logdet(&m, "test").unwrap();
        let prod = &m * &inv;
        assert!((prod - DMatrix::identity(2, 2)).amax() < 1e-12);
        assert!((log_det - m.determinant().ln()).abs() < 1e-12);
    }

    #[test]
    fn spd_inverse_rejects_indefinite() {
        let m = dmatrix![1.0, 2.0; 2.0, 1.0];
        assert!(spd_inverse_logdet(&m, "test").is_err());
    }
}
