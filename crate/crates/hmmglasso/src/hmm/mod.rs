//! Core probabilistic objects: Gaussian emission states, the hidden Markov
//! model, smoothing posteriors and expected sufficient statistics.

mod forward_backward;
mod sample;

pub use forward_backward::forward_backward;
pub use sample::{sample_path, sample_path_with};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::math;

/// Tolerance used when validating stochastic vectors and symmetry.
pub(crate) const PROB_TOL: f64 = 1e-10;

/// One hidden state's multivariate Normal emission parameters.
///
/// The precision matrix is the primary parameter; covariance and the
/// log-determinant of the precision are computed once and cached.
#[derive(Debug, Clone)]
pub struct GaussianState {
    mean: DVector<f64>,
    precision: DMatrix<f64>,
    covariance: DMatrix<f64>,
    log_det_precision: f64,
}

impl GaussianState {
    /// Builds a state from its mean and precision matrix.
    ///
    /// The precision must be symmetric (to 1e-10) and positive definite.
    pub fn new(mean: DVector<f64>, precision: DMatrix<f64>) -> Result<Self> {
        if mean.len() != precision.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "mean has length {}, precision is {}x{}",
                mean.len(),
                precision.nrows(),
                precision.ncols()
            )));
        }
        math::check_symmetric(&precision, PROB_TOL)?;
        let (covariance, log_det_precision) =
            math::spd_inverse_logdet(&precision, "emission precision")?;
        Ok(Self {
            mean,
            precision,
            covariance,
            log_det_precision,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn log_det_precision(&self) -> f64 {
        self.log_det_precision
    }
}

/// Quadratic forms larger than this are treated as log-density -inf
/// instead of being allowed to overflow downstream arithmetic.
const QUAD_FORM_CAP: f64 = 1e12;

/// Log of the multivariate Normal density of `x` under `state`.
///
/// Returns `-inf` for points so far in the tails that the quadratic form
/// exceeds an overflow guard.
pub fn log_emission_density(x: &DVector<f64>, state: &GaussianState) -> Result<f64> {
    let p = state.dim();
    if x.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "observation has length {}, state dimension is {}",
            x.len(),
            p
        )));
    }
    let centered = x - state.mean();
    let quad = (state.precision() * &centered).dot(&centered);
    if quad > QUAD_FORM_CAP {
        return Ok(f64::NEG_INFINITY);
    }
    let p = p as f64;
    Ok(0.5 * state.log_det_precision() - 0.5 * p * (2.0 * std::f64::consts::PI).ln() - 0.5 * quad)
}

/// A hidden Markov model with multivariate Normal emissions.
#[derive(Debug, Clone)]
pub struct HmmModel {
    pub states: Vec<GaussianState>,
    /// Row-stochastic transition matrix; entry (k, k') is P(S_{t+1}=k' | S_t=k).
    pub transition: DMatrix<f64>,
    /// Distribution of the first state.
    pub initial: DVector<f64>,
}

impl HmmModel {
    pub fn new(
        states: Vec<GaussianState>,
        transition: DMatrix<f64>,
        initial: DVector<f64>,
    ) -> Result<Self> {
        let k = states.len();
        if k == 0 {
            return Err(Error::InvalidParameter(
                "model needs at least one state".into(),
            ));
        }
        let p = states[0].dim();
        if states.iter().any(|s| s.dim() != p) {
            return Err(Error::DimensionMismatch(
                "states have inconsistent dimensions".into(),
            ));
        }
        if transition.nrows() != k || transition.ncols() != k {
            return Err(Error::DimensionMismatch(format!(
                "transition is {}x{}, expected {}x{}",
                transition.nrows(),
                transition.ncols(),
                k,
                k
            )));
        }
        if initial.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "initial distribution has length {}, expected {}",
                initial.len(),
                k
            )));
        }
        check_stochastic_rows(&transition)?;
        check_stochastic(initial.as_slice(), "initial distribution")?;
        Ok(Self {
            states,
            transition,
            initial,
        })
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn dim(&self) -> usize {
        self.states[0].dim()
    }
}

pub(crate) fn check_stochastic(v: &[f64], what: &str) -> Result<()> {
    if v.iter().any(|&x| x < 0.0 || !x.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "{what} has negative or non-finite entries"
        )));
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(Error::InvalidParameter(format!(
            "{what} sums to {sum}, expected 1"
        )));
    }
    Ok(())
}

pub(crate) fn check_stochastic_rows(m: &DMatrix<f64>) -> Result<()> {
    for (i, row) in m.row_iter().enumerate() {
        let row: Vec<f64> = row.iter().cloned().collect();
        check_stochastic(&row, &format!("transition row {i}"))?;
    }
    Ok(())
}

/// State posteriors from a smoothing pass, with the observed-data
/// log-likelihood of the model that produced them.
#[derive(Debug, Clone)]
pub struct Responsibilities {
    /// n x K matrix; entry (t, k) is P(S_t = k | X).
    pub u: DMatrix<f64>,
    /// Pairwise posteriors; `v[t]` is K x K with entry (k, k') = P(S_t=k, S_{t+1}=k' | X).
    pub v: Vec<DMatrix<f64>>,
    /// Scaled effective sample sizes pi_k = (sum_t u_k(t)) / n.
    pub pi: DVector<f64>,
    /// Observed-data log-likelihood.
    pub log_likelihood: f64,
}

impl Responsibilities {
    pub fn num_obs(&self) -> usize {
        self.u.nrows()
    }

    pub fn num_states(&self) -> usize {
        self.u.ncols()
    }

    /// Maximum a posteriori state per observation.
    pub fn map_labels(&self) -> Vec<usize> {
        (0..self.u.nrows())
            .map(|t| {
                let row = self.u.row(t);
                let mut best = 0;
                for k in 1..row.len() {
                    if row[k] > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

/// Expected sufficient statistics of the complete-data log-likelihood.
#[derive(Debug, Clone)]
pub struct SufficientStats {
    /// Per state: sum_t u_k(t) X_t.
    pub t1: Vec<DVector<f64>>,
    /// Per state: sum_t u_k(t) X_t X_t^T.
    pub t2: Vec<DMatrix<f64>>,
    /// Expected transition counts: entry (k, k') = sum_t v_kk'(t).
    pub t3: DMatrix<f64>,
    /// Effective sample sizes n_k = sum_t u_k(t).
    pub n_k: DVector<f64>,
}

impl SufficientStats {
    /// Accumulates the statistics for `data` under soft assignments `u` and
    /// pairwise posteriors `v`.
    pub fn accumulate(data: &DMatrix<f64>, u: &DMatrix<f64>, v: &[DMatrix<f64>]) -> Self {
        let n = data.nrows();
        let p = data.ncols();
        let k = u.ncols();
        let mut t1 = vec![DVector::zeros(p); k];
        let mut t2 = vec![DMatrix::zeros(p, p); k];
        let mut n_k = DVector::zeros(k);
        for t in 0..n {
            let x = data.row(t).transpose();
            for s in 0..k {
                let w = u[(t, s)];
                if w == 0.0 {
                    continue;
                }
                n_k[s] += w;
                t1[s].axpy(w, &x, 1.0);
                t2[s].syger(w, &x, &x, 1.0);
            }
        }
        // syger fills the lower triangle; mirror it.
        for m in t2.iter_mut() {
            m.fill_upper_triangle_with_lower_triangle();
        }
        let mut t3 = DMatrix::zeros(k, k);
        for vt in v {
            t3 += vt;
        }
        Self { t1, t2, t3, n_k }
    }
}
