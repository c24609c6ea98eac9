//! Blockwise coordinate descent for the (weighted) graphical lasso, plus the
//! reweighting loop that handles the scale-invariant penalties.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::math;

use super::{objective, PenaltyKind, PenaltySpec};

/// Convergence threshold on the largest absolute change of the working
/// covariance between sweeps.
pub const GLASSO_TOL: f64 = 1e-6;

/// Cap on full column sweeps of the blockwise coordinate descent.
const MAX_SWEEPS: usize = 200;

/// Inner lasso tolerance (max absolute coefficient change per cycle).
const INNER_TOL: f64 = 1e-8;
const INNER_MAX_CYCLES: usize = 500;

/// Objective-change threshold and cap for the penalty-reweighting loop.
const REWEIGHT_TOL: f64 = 1e-6;
const REWEIGHT_MAX_ITER: usize = 50;

/// Classical graphical lasso with uniform off-diagonal penalty `rho`.
/// The diagonal is not penalized.
pub(crate) fn solve_invcov(
    cov: &DMatrix<f64>,
    rho: f64,
    warm_start: Option<&DMatrix<f64>>,
) -> Result<DMatrix<f64>> {
    if rho == 0.0 {
        let (inv, _) = math::spd_inverse_logdet(cov, "unpenalized precision estimate")?;
        return Ok(inv);
    }
    let p = cov.nrows();
    let rho_mat = DMatrix::from_element(p, p, rho);
    solve_weighted(cov, &rho_mat, warm_start)
}

/// Scale-invariant penalties: standardize to correlation scale, iterate
/// weighted convex subproblems with scale factors frozen at the current
/// iterate, and map the solution back to the original scale.
///
/// Working on the correlation scale makes the computation itself invariant
/// to per-variable rescaling, so estimated graphs do not depend on units.
pub(crate) fn solve_rescaled(
    cov: &DMatrix<f64>,
    penalty: &PenaltySpec,
    warm_start: Option<&DMatrix<f64>>,
) -> Result<DMatrix<f64>> {
    let p = cov.nrows();
    let scale = DVector::from_fn(p, |l, _| cov[(l, l)].sqrt());
    let mut corr = DMatrix::from_fn(p, p, |i, j| cov[(i, j)] / (scale[i] * scale[j]));
    math::symmetrize(&mut corr);

    // Omega transforms contravariantly: scaling data by D scales it by D^-1.
    let mut omega = match warm_start {
        Some(w) => DMatrix::from_fn(p, p, |i, j| w[(i, j)] * scale[i] * scale[j]),
        None => DMatrix::identity(p, p),
    };

    if penalty.rho == 0.0 {
        omega = solve_invcov(&corr, 0.0, None)?;
    } else {
        let mut prev_obj = f64::INFINITY;
        for _ in 0..REWEIGHT_MAX_ITER {
            let weights = penalty_weights(penalty.kind, &omega)?;
            let rho_mat = weights.map(|w| penalty.rho * w);
            omega = solve_weighted(&corr, &rho_mat, Some(&omega))?;
            let obj = objective(&omega, &corr, penalty);
            if (prev_obj - obj).abs() < REWEIGHT_TOL {
                break;
            }
            prev_obj = obj;
        }
    }

    let mut out = DMatrix::from_fn(p, p, |i, j| omega[(i, j)] / (scale[i] * scale[j]));
    math::symmetrize(&mut out);
    Ok(out)
}

/// Entry-wise penalty weights with the scale factors frozen at `omega`.
fn penalty_weights(kind: PenaltyKind, omega: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = omega.nrows();
    match kind {
        PenaltyKind::Invcov => Ok(DMatrix::from_element(p, p, 1.0)),
        PenaltyKind::Parcor => Ok(DMatrix::from_fn(p, p, |i, j| {
            1.0 / (omega[(i, i)] * omega[(j, j)]).sqrt()
        })),
        PenaltyKind::Invcor => {
            let (sigma, _) = math::spd_inverse_logdet(omega, "reweighting iterate")?;
            Ok(DMatrix::from_fn(p, p, |i, j| {
                (sigma[(i, i)] * sigma[(j, j)]).sqrt()
            }))
        }
    }
}

/// Blockwise coordinate descent with an entry-wise penalty matrix.
///
/// Each column update solves a lasso subproblem by cyclic coordinate descent
/// with soft thresholding; the working covariance `W` keeps the input
/// diagonal (the diagonal is unpenalized) and converges to the inverse of
/// the estimated precision.
fn solve_weighted(
    cov: &DMatrix<f64>,
    rho_mat: &DMatrix<f64>,
    warm_start: Option<&DMatrix<f64>>,
) -> Result<DMatrix<f64>> {
    let p = cov.nrows();
    if p == 1 {
        return Ok(DMatrix::from_element(1, 1, 1.0 / cov[(0, 0)]));
    }

    let mut w = cov.clone();
    // beta[(i, j)]: lasso coefficient of variable i in the column-j problem.
    let mut beta = DMatrix::zeros(p, p);
    if let Some(prev) = warm_start {
        for j in 0..p {
            let d = prev[(j, j)];
            if d > 0.0 {
                for i in 0..p {
                    if i != j {
                        beta[(i, j)] = -prev[(i, j)] / d;
                    }
                }
            }
        }
    }

    let mut q = vec![0.0; p];
    let mut converged = false;
    for _sweep in 0..MAX_SWEEPS {
        let mut max_change: f64 = 0.0;
        for j in 0..p {
            // q_i = sum_{m != j} W[i, m] beta[m, j], maintained incrementally.
            for i in 0..p {
                let mut acc = 0.0;
                for m in 0..p {
                    if m != j {
                        acc += w[(i, m)] * beta[(m, j)];
                    }
                }
                q[i] = acc;
            }
            for _cycle in 0..INNER_MAX_CYCLES {
                let mut max_delta: f64 = 0.0;
                for i in 0..p {
                    if i == j {
                        continue;
                    }
                    let old = beta[(i, j)];
                    let resid = cov[(i, j)] - (q[i] - w[(i, i)] * old);
                    let thr = rho_mat[(i, j)];
                    let new = soft_threshold(resid, thr) / w[(i, i)];
                    if new != old {
                        let delta = new - old;
                        beta[(i, j)] = new;
                        for r in 0..p {
                            q[r] += delta * w[(r, i)];
                        }
                        max_delta = max_delta.max(delta.abs());
                    }
                }
                if max_delta < INNER_TOL {
                    break;
                }
            }
            for i in 0..p {
                if i != j {
                    let change = (q[i] - w[(i, j)]).abs();
                    max_change = max_change.max(change);
                    w[(i, j)] = q[i];
                    w[(j, i)] = q[i];
                }
            }
        }
        if max_change < GLASSO_TOL {
            converged = true;
            break;
        }
    }

    let omega = recover_precision(&w, &beta)?;
    if !converged {
        return Err(Error::GlassoNoConvergence {
            iterations: MAX_SWEEPS,
            last: Box::new(omega),
        });
    }
    Ok(omega)
}

/// Back out the precision matrix from the converged working covariance and
/// lasso coefficients.
fn recover_precision(w: &DMatrix<f64>, beta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = w.nrows();
    let mut omega = DMatrix::zeros(p, p);
    for j in 0..p {
        let mut dot = 0.0;
        for i in 0..p {
            if i != j {
                dot += w[(i, j)] * beta[(i, j)];
            }
        }
        let denom = w[(j, j)] - dot;
        if denom <= 0.0 || denom.is_nan() {
            return Err(Error::NotPositiveDefinite {
                context: "precision recovery in graphical lasso".to_string(),
            });
        }
        let theta_jj = 1.0 / denom;
        omega[(j, j)] = theta_jj;
        for i in 0..p {
            if i != j {
                omega[(i, j)] = -beta[(i, j)] * theta_jj;
            }
        }
    }
    // Symmetrize; the two triangles agree up to solver tolerance, and exact
    // zeros agree in pattern so averaging preserves them.
    math::symmetrize(&mut omega);
    Ok(omega)
}

#[inline]
fn soft_threshold(x: f64, thr: f64) -> f64 {
    if x > thr {
        x - thr
    } else if x < -thr {
        x + thr
    } else {
        0.0
    }
}
