//! Penalized EM for Gaussian HMMs with sparse state-specific precisions.
//!
//! Each M-step maximizes the expected complete-data log-likelihood minus a
//! state-adaptive penalty `lambda * sqrt(pi_k) * Pen(Omega_k)`, which reduces
//! per state to a graphical-lasso subproblem with effective multiplier
//! `2 lambda sqrt(pi_k) / n_k`. The `sqrt(pi_k)` factor matches the way
//! l1-penalties must scale with sample size, so one universal `lambda`
//! serves states of any size.

mod fit;

pub use fit::{fit_hmmglasso, m_step};
pub(crate) use fit::{fit_with_estimator, EmissionEstimator};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::glasso::PenaltyKind;
use crate::hmm::{HmmModel, Responsibilities};

/// Universal regularization level `sqrt(2 n ln p) / 2`.
///
/// Depends only on the shape of the data; using it inside the
/// state-adaptive penalty reproduces the universal shrinkage level of the
/// graphical lasso for every state, whatever its effective sample size.
pub fn lambda_uni(n: usize, p: usize) -> f64 {
    (2.0 * n as f64 * (p as f64).ln()).sqrt() / 2.0
}

/// Penalty level: either the universal default or an explicit value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lambda {
    /// Resolve to [`lambda_uni`] for the data at hand.
    Universal,
    Fixed(f64),
}

impl Lambda {
    pub fn resolve(self, n: usize, p: usize) -> f64 {
        match self {
            Lambda::Universal => lambda_uni(n, p),
            Lambda::Fixed(v) => v,
        }
    }
}

/// Minimum scaled effective state size below which a fit is stopped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PiMin {
    /// 5/n: states smaller than five effective observations collapse.
    Auto,
    Fixed(f64),
}

impl PiMin {
    pub fn resolve(self, n: usize) -> f64 {
        match self {
            PiMin::Auto => 5.0 / n as f64,
            PiMin::Fixed(v) => v,
        }
    }
}

/// Configuration of one penalized EM run.
#[derive(Debug, Clone, Copy)]
pub struct FitConfig {
    pub lambda: Lambda,
    pub penalty: PenaltyKind,
    /// Convergence threshold on the relative change of the state covariances.
    pub eps: f64,
    pub pi_min: PiMin,
    pub max_iter: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            lambda: Lambda::Universal,
            penalty: PenaltyKind::Parcor,
            eps: 1e-3,
            pi_min: PiMin::Auto,
            max_iter: 500,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eps <= 0.0 || self.eps.is_nan() {
            return Err(Error::InvalidParameter(format!(
                "eps must be positive, got {}",
                self.eps
            )));
        }
        if let Lambda::Fixed(l) = self.lambda {
            if l < 0.0 || l.is_nan() {
                return Err(Error::InvalidParameter(format!(
                    "lambda must be nonnegative, got {l}"
                )));
            }
        }
        if let PiMin::Fixed(pm) = self.pi_min {
            if pm <= 0.0 || pm >= 1.0 || pm.is_nan() {
                return Err(Error::InvalidParameter(format!(
                    "pi_min must lie in (0, 1), got {pm}"
                )));
            }
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter(
                "max_iter must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Starting point of a fit: soft assignments, a transition matrix used for
/// the first E-step, and the implied scaled state sizes.
#[derive(Debug, Clone)]
pub struct Initialization {
    /// n x K soft assignment matrix; rows sum to one.
    pub u: DMatrix<f64>,
    /// K x K row-stochastic transition matrix.
    pub transition: DMatrix<f64>,
    /// Scaled effective sizes implied by `u`.
    pub pi: DVector<f64>,
}

impl Initialization {
    /// Builds an initialization from soft assignments, deriving `pi` and
    /// using a uniform transition matrix.
    pub fn from_soft_assignments(u: DMatrix<f64>) -> Result<Self> {
        let k = u.ncols();
        if k == 0 || u.nrows() == 0 {
            return Err(Error::InvalidParameter("empty initialization".into()));
        }
        let pi = u.row_sum().transpose() / u.nrows() as f64;
        let transition = DMatrix::from_element(k, k, 1.0 / k as f64);
        let init = Self { u, transition, pi };
        init.validate()?;
        Ok(init)
    }

    /// Builds a hard initialization from integer labels in `0..k`.
    pub fn from_labels(labels: &[usize], k: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidParameter("empty label vector".into()));
        }
        let mut u = DMatrix::zeros(labels.len(), k);
        for (t, &l) in labels.iter().enumerate() {
            if l >= k {
                return Err(Error::InvalidParameter(format!(
                    "label {l} at position {t} out of range for k={k}"
                )));
            }
            u[(t, l)] = 1.0;
        }
        Self::from_soft_assignments(u)
    }

    pub fn num_states(&self) -> usize {
        self.u.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.u.ncols();
        if self.transition.nrows() != k || self.transition.ncols() != k || self.pi.len() != k {
            return Err(Error::DimensionMismatch(
                "initialization fields have inconsistent state counts".into(),
            ));
        }
        for t in 0..self.u.nrows() {
            let s: f64 = self.u.row(t).sum();
            if (s - 1.0).abs() > 1e-8 || self.u.row(t).iter().any(|&x| x < 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "initial assignment row {t} is not a probability vector (sum {s})"
                )));
            }
        }
        crate::hmm::check_stochastic_rows(&self.transition)?;
        Ok(())
    }
}

/// Why a fit stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Relative change of the state covariances fell below `eps`.
    Converged,
    /// A state's scaled effective size fell below `pi_min`.
    StateCollapsed { state: usize },
    /// Iteration cap reached.
    MaxIter,
    /// Safeguard for the non-convex penalties: the penalized objective rose
    /// on three consecutive iterations.
    ObjectiveRising,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::StateCollapsed { .. } => "state_collapsed",
            Termination::MaxIter => "max_iter",
            Termination::ObjectiveRising => "objective_rising",
        }
    }
}

/// A converged (or stopped) fit: parameters, posteriors and diagnostics.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: HmmModel,
    pub resp: Responsibilities,
    /// Penalized negative log-likelihood after each EM iteration.
    pub penalized_nll_trace: Vec<f64>,
    pub termination: Termination,
    pub iterations: usize,
    /// Resolved penalty level used by the run.
    pub lambda: f64,
    /// Resolved collapse threshold used by the run.
    pub pi_min: f64,
}

impl FitResult {
    pub fn num_states(&self) -> usize {
        self.model.num_states()
    }

    pub fn num_obs(&self) -> usize {
        self.resp.num_obs()
    }
}
