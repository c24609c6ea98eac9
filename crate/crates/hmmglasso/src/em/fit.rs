//! The EM loop: alternating penalized M-steps and forward-backward E-steps.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::glasso::{glasso_solve, penalty_value, PenaltySpec};
use crate::hmm::{forward_backward, GaussianState, HmmModel, Responsibilities, SufficientStats};
use crate::math;

use super::{FitConfig, FitResult, Initialization, Termination};

/// Relative floor added to the diagonal of each weighted empirical
/// covariance, guarding near-singular matrices at small effective sizes.
const DIAG_FLOOR: f64 = 1e-8;

/// How per-state emission parameters are estimated in the M-step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum EmissionEstimator {
    /// Penalized precision via the graphical lasso (the default).
    Penalized,
    /// Diagonal covariance MLE (baseline).
    Diagonal,
}

/// One penalized M-step: emission parameters from the expected sufficient
/// statistics, transition rows from expected counts, initial distribution
/// from the first posterior row.
pub fn m_step(
    stats: &SufficientStats,
    resp: &Responsibilities,
    config: &FitConfig,
) -> Result<HmmModel> {
    let n = resp.num_obs();
    let p = stats.t1[0].len();
    let lambda = config.lambda.resolve(n, p);
    m_step_impl(
        stats,
        &resp.u,
        n,
        lambda,
        config,
        None,
        None,
        EmissionEstimator::Penalized,
    )
}

#[allow(clippy::too_many_arguments)]
fn m_step_impl(
    stats: &SufficientStats,
    u: &DMatrix<f64>,
    n: usize,
    lambda: f64,
    config: &FitConfig,
    transition_override: Option<&DMatrix<f64>>,
    warm: Option<&HmmModel>,
    estimator: EmissionEstimator,
) -> Result<HmmModel> {
    let k = stats.t1.len();
    let states: Vec<GaussianState> = (0..k)
        .into_par_iter()
        .map(|s| estimate_state(stats, s, n, lambda, config, warm, estimator))
        .collect::<Result<_>>()?;

    let transition = match transition_override {
        Some(t) => t.clone(),
        None => normalize_rows(&stats.t3),
    };
    let initial = normalize_initial(u);
    HmmModel::new(states, transition, initial)
}

fn estimate_state(
    stats: &SufficientStats,
    s: usize,
    n: usize,
    lambda: f64,
    config: &FitConfig,
    warm: Option<&HmmModel>,
    estimator: EmissionEstimator,
) -> Result<GaussianState> {
    let n_k = stats.n_k[s];
    if n_k <= 1e-10 {
        return Err(Error::ZeroStateMass { state: s });
    }
    let p = stats.t1[s].len();
    let mean = &stats.t1[s] / n_k;
    let mut cov = &stats.t2[s] / n_k - &mean * mean.transpose();
    math::symmetrize(&mut cov);

    let pi_k = n_k / n as f64;
    let rho = match estimator {
        EmissionEstimator::Penalized => 2.0 * lambda * pi_k.sqrt() / n_k,
        EmissionEstimator::Diagonal => 0.0,
    };
    if estimator == EmissionEstimator::Penalized && rho == 0.0 {
        // Unpenalized estimation must fail loudly on a singular covariance
        // rather than let the diagonal floor mask it.
        check_well_conditioned(&cov, s)?;
    }
    let mean_diag = cov.trace() / p as f64;
    for l in 0..p {
        cov[(l, l)] += DIAG_FLOOR * mean_diag;
    }

    let precision = match estimator {
        EmissionEstimator::Penalized => {
            let spec = PenaltySpec::new(config.penalty, rho)?;
            let warm_prec = warm.map(|m| m.states[s].precision());
            let (omega, _) = glasso_solve(&cov, &spec, warm_prec).map_err(|e| match e {
                Error::NotPositiveDefinite { .. } => Error::SingularCovariance { state: s },
                other => other,
            })?;
            omega
        }
        EmissionEstimator::Diagonal => {
            let mut omega = DMatrix::zeros(p, p);
            for l in 0..p {
                if cov[(l, l)] <= 0.0 {
                    return Err(Error::SingularCovariance { state: s });
                }
                omega[(l, l)] = 1.0 / cov[(l, l)];
            }
            omega
        }
    };
    GaussianState::new(mean, precision).map_err(|e| match e {
        Error::NotPositiveDefinite { .. } => Error::SingularCovariance { state: s },
        other => other,
    })
}

/// A state whose posterior mass has numerically vanished cannot be
/// re-estimated from its own statistics. Spreading a sliver of uniform
/// weight over such states keeps warm-started refits (as pruning produces
/// them) well defined; the `pi_min` rule still retires the state at the
/// next check.
fn rescue_starving_states(u: &mut DMatrix<f64>) {
    let n = u.nrows();
    let k = u.ncols();
    let threshold = n as f64 * 1e-9;
    let mut rescued = false;
    for s in 0..k {
        if u.column(s).sum() < threshold {
            rescued = true;
            for t in 0..n {
                u[(t, s)] += 1e-8;
            }
        }
    }
    if rescued {
        for t in 0..n {
            let sum: f64 = u.row(t).sum();
            for s in 0..k {
                u[(t, s)] /= sum;
            }
        }
    }
}

/// Rejects covariance matrices whose Cholesky pivots reveal (near-)rank
/// deficiency, as happens when a state holds fewer points than dimensions.
fn check_well_conditioned(cov: &DMatrix<f64>, state: usize) -> Result<()> {
    let chol = cov
        .clone()
        .cholesky()
        .ok_or(Error::SingularCovariance { state })?;
    let diag = chol.l_dirty().diagonal();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for d in diag.iter() {
        lo = lo.min(*d);
        hi = hi.max(*d);
    }
    if lo <= 0.0 || lo.is_nan() || (lo / hi).powi(2) < 1e-12 {
        return Err(Error::SingularCovariance { state });
    }
    Ok(())
}

fn normalize_rows(counts: &DMatrix<f64>) -> DMatrix<f64> {
    let k = counts.nrows();
    let mut out = DMatrix::zeros(k, k);
    for i in 0..k {
        let sum: f64 = counts.row(i).sum();
        if sum > 0.0 {
            for j in 0..k {
                out[(i, j)] = counts[(i, j)] / sum;
            }
        } else {
            // No expected outgoing mass; fall back to a uniform row so the
            // model stays valid.
            for j in 0..k {
                out[(i, j)] = 1.0 / k as f64;
            }
        }
    }
    out
}

fn normalize_initial(u: &DMatrix<f64>) -> DVector<f64> {
    let k = u.ncols();
    let mut initial = DVector::from_fn(k, |s, _| u[(0, s)].max(0.0));
    let sum = initial.sum();
    if sum > 0.0 {
        initial /= sum;
    } else {
        initial.fill(1.0 / k as f64);
    }
    initial
}

/// Fits a K-state model by penalized EM from the supplied initialization.
///
/// The first iteration keeps the initialization's transition matrix (there
/// are no expected transition counts before the first E-step). The run
/// stops when the relative change of the state covariances falls below
/// `config.eps`, when a state's scaled size drops below `pi_min`, when the
/// iteration cap is reached, or (non-convex penalties only) when the
/// penalized objective rises on three consecutive iterations.
pub fn fit_hmmglasso(
    data: &DMatrix<f64>,
    k: usize,
    config: &FitConfig,
    init: &Initialization,
) -> Result<FitResult> {
    fit_with_estimator(data, k, config, init, EmissionEstimator::Penalized)
}

pub(crate) fn fit_with_estimator(
    data: &DMatrix<f64>,
    k: usize,
    config: &FitConfig,
    init: &Initialization,
    estimator: EmissionEstimator,
) -> Result<FitResult> {
    config.validate()?;
    init.validate()?;
    let n = data.nrows();
    let p = data.ncols();
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if init.num_states() != k {
        return Err(Error::DimensionMismatch(format!(
            "initialization has {} states, expected {k}",
            init.num_states()
        )));
    }
    if init.u.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "initialization covers {} observations, data has {n}",
            init.u.nrows()
        )));
    }

    let lambda = config.lambda.resolve(n, p);
    let pi_min = config.pi_min.resolve(n);
    let nonconvex = matches!(
        config.penalty,
        crate::glasso::PenaltyKind::Parcor | crate::glasso::PenaltyKind::Invcor
    );

    let mut u = init.u.clone();
    let mut v: Vec<DMatrix<f64>> = Vec::new();
    let mut prev_model: Option<HmmModel> = None;
    let mut trace: Vec<f64> = Vec::new();
    let mut rises = 0usize;

    for iteration in 1..=config.max_iter {
        rescue_starving_states(&mut u);
        let stats = SufficientStats::accumulate(data, &u, &v);
        let transition_override = if iteration == 1 {
            Some(&init.transition)
        } else {
            None
        };
        let model = m_step_impl(
            &stats,
            &u,
            n,
            lambda,
            config,
            transition_override,
            prev_model.as_ref(),
            estimator,
        )?;

        let resp = forward_backward(data, &model).map_err(|e| match e {
            Error::NonFiniteLikelihood { .. } => Error::NonFiniteLikelihood { iteration },
            other => other,
        })?;

        let pnll = penalized_nll(&model, &resp, lambda, config, estimator);
        if !pnll.is_finite() {
            return Err(Error::NonFiniteLikelihood { iteration });
        }
        if nonconvex {
            if let Some(&last) = trace.last() {
                // Count only rises above numeric noise.
                if pnll > last + 1e-9 * (1.0 + last.abs()) {
                    rises += 1;
                } else {
                    rises = 0;
                }
            }
        }
        trace.push(pnll);

        let mut done = None;
        if let Some((state, _)) = resp.pi.iter().enumerate().find(|(_, &pi_k)| pi_k < pi_min) {
            done = Some(Termination::StateCollapsed { state });
        } else if let Some(prev) = &prev_model {
            let err = covariance_change(prev, &model);
            if err < config.eps {
                done = Some(Termination::Converged);
            }
        }
        if done.is_none() && nonconvex && rises >= 3 {
            done = Some(Termination::ObjectiveRising);
        }
        if done.is_none() && iteration == config.max_iter {
            done = Some(Termination::MaxIter);
        }

        if let Some(termination) = done {
            return Ok(FitResult {
                model,
                resp,
                penalized_nll_trace: trace,
                termination,
                iterations: iteration,
                lambda,
                pi_min,
            });
        }

        u = resp.u;
        v = resp.v;
        prev_model = Some(model);
    }
    unreachable!("loop always terminates via max_iter");
}

/// `-loglik + lambda * sum_k sqrt(pi_k) Pen(Omega_k)` at the current iterate.
fn penalized_nll(
    model: &HmmModel,
    resp: &Responsibilities,
    lambda: f64,
    config: &FitConfig,
    estimator: EmissionEstimator,
) -> f64 {
    let mut value = -resp.log_likelihood;
    if estimator == EmissionEstimator::Penalized && lambda > 0.0 {
        for (s, state) in model.states.iter().enumerate() {
            value += lambda * resp.pi[s].sqrt() * penalty_value(config.penalty, state.precision());
        }
    }
    value
}

/// `max_{k,l,l'} |Sigma_new - Sigma_old| / (1 + |Sigma_new|)`.
fn covariance_change(prev: &HmmModel, next: &HmmModel) -> f64 {
    let mut err: f64 = 0.0;
    for (a, b) in prev.states.iter().zip(next.states.iter()) {
        let sa = a.covariance();
        let sb = b.covariance();
        for i in 0..sa.nrows() {
            for j in 0..sa.ncols() {
                let change = (sb[(i, j)] - sa[(i, j)]).abs() / (1.0 + sb[(i, j)].abs());
                err = err.max(change);
            }
        }
    }
    err
}
