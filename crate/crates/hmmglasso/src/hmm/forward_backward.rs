//! Exact smoothing for Gaussian HMMs, computed entirely in log-space.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::math::log_sum_exp;

use super::{log_emission_density, HmmModel, Responsibilities};

/// Smoothing posteriors and the observed-data log-likelihood of `model`
/// on `data` (one observation per row).
///
/// All recursions run in log-space, so sequences up to millions of
/// observations do not underflow.
pub fn forward_backward(data: &DMatrix<f64>, model: &HmmModel) -> Result<Responsibilities> {
    let (_, _, resp) = smooth(data, model)?;
    Ok(resp)
}

/// Full smoothing pass returning the internal log-domain alpha/beta tables
/// alongside the posteriors. Exposed within the crate for tests.
pub(crate) fn smooth(
    data: &DMatrix<f64>,
    model: &HmmModel,
) -> Result<(DMatrix<f64>, DMatrix<f64>, Responsibilities)> {
    let n = data.nrows();
    let k = model.num_states();
    if n == 0 {
        return Err(Error::InvalidParameter("empty observation matrix".into()));
    }
    if data.ncols() != model.dim() {
        return Err(Error::DimensionMismatch(format!(
            "data has {} columns, model dimension is {}",
            data.ncols(),
            model.dim()
        )));
    }

    // Emission log-densities; -inf is a legal value (probability zero),
    // NaN or +inf indicates a degenerate state.
    let mut log_b = DMatrix::zeros(n, k);
    for t in 0..n {
        let x = data.row(t).transpose();
        for s in 0..k {
            let v = log_emission_density(&x, &model.states[s])?;
            if v.is_nan() || v == f64::INFINITY {
                return Err(Error::NonFiniteEmission { state: s, t });
            }
            log_b[(t, s)] = v;
        }
    }

    let log_pi: Vec<f64> = model.initial.iter().map(|p| p.ln()).collect();
    let log_trans = model.transition.map(|p| p.ln());

    let mut alpha = DMatrix::zeros(n, k);
    for s in 0..k {
        alpha[(0, s)] = log_pi[s] + log_b[(0, s)];
    }
    let mut scratch = vec![0.0; k];
    for t in 1..n {
        for s2 in 0..k {
            for s1 in 0..k {
                scratch[s1] = alpha[(t - 1, s1)] + log_trans[(s1, s2)];
            }
            alpha[(t, s2)] = log_b[(t, s2)] + log_sum_exp(&scratch);
        }
    }

    let mut beta = DMatrix::zeros(n, k);
    for t in (0..n - 1).rev() {
        for s1 in 0..k {
            for s2 in 0..k {
                scratch[s2] = log_trans[(s1, s2)] + log_b[(t + 1, s2)] + beta[(t + 1, s2)];
            }
            beta[(t, s1)] = log_sum_exp(&scratch);
        }
    }

    let last: Vec<f64> = (0..k).map(|s| alpha[(n - 1, s)]).collect();
    let ll = log_sum_exp(&last);
    if !ll.is_finite() {
        return Err(Error::NonFiniteLikelihood { iteration: 0 });
    }

    let mut u = DMatrix::zeros(n, k);
    for t in 0..n {
        for s in 0..k {
            u[(t, s)] = (alpha[(t, s)] + beta[(t, s)] - ll).exp();
        }
    }

    let mut v = Vec::with_capacity(n - 1);
    for t in 0..n - 1 {
        let mut vt = DMatrix::zeros(k, k);
        for s1 in 0..k {
            for s2 in 0..k {
                vt[(s1, s2)] =
                    (alpha[(t, s1)] + log_trans[(s1, s2)] + log_b[(t + 1, s2)] + beta[(t + 1, s2)]
                        - ll)
                        .exp();
            }
        }
        v.push(vt);
    }

    let pi = u.row_sum().transpose() / n as f64;

    Ok((
        alpha,
        beta,
        Responsibilities {
            u,
            v,
            pi,
            log_likelihood: ll,
        },
    ))
}
