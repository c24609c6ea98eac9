//! BIC and MMDL scores with l1 degrees of freedom.
//!
//! Both criteria charge the transition matrix `(1/2) log(n) K(K-1)` and each
//! state `Df(k)` parameters, where `Df(k)` counts the mean dimension plus the
//! nonzero upper-triangle entries of the estimated precision. BIC prices
//! every parameter at `(1/2) log(n)`; MMDL prices state-specific parameters
//! at `(1/2) log(n pi_k)` - the log of the effective sample size they were
//! actually estimated from - which is what makes it suitable for models with
//! hidden states of very different sizes.

use crate::em::FitResult;
use crate::error::{Error, Result};
use crate::glasso::EDGE_TOL;
use crate::hmm::GaussianState;

/// Model selection criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Bic,
    Mmdl,
}

impl Criterion {
    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::Bic => "bic",
            Criterion::Mmdl => "mmdl",
        }
    }
}

impl std::str::FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bic" => Ok(Criterion::Bic),
            "mmdl" => Ok(Criterion::Mmdl),
            other => Err(Error::InvalidParameter(format!(
                "unknown criterion '{other}' (expected bic or mmdl)"
            ))),
        }
    }
}

/// A criterion value split into its additive parts.
#[derive(Debug, Clone)]
pub struct ScoreBreakdown {
    pub criterion: Criterion,
    /// Negative observed-data log-likelihood (unpenalized).
    pub nll: f64,
    /// `(1/2) log(n) K(K-1)` for the transition matrix.
    pub transition_cost: f64,
    /// Per-state parameter cost.
    pub state_costs: Vec<f64>,
    pub total: f64,
}

/// l1 degrees of freedom of one state: mean dimension plus the number of
/// upper-triangle (including diagonal) precision entries above `tol`.
pub fn degrees_of_freedom(state: &GaussianState, tol: f64) -> usize {
    let p = state.dim();
    let omega = state.precision();
    let mut nonzeros = 0;
    for l in 0..p {
        for l2 in l..p {
            if omega[(l, l2)].abs() > tol {
                nonzeros += 1;
            }
        }
    }
    p + nonzeros
}

/// Scores a fit with the requested criterion.
///
/// Uses the unpenalized log-likelihood from the fit's final E-step and the
/// shared edge tolerance, so the counted degrees of freedom agree exactly
/// with the estimated graphs.
pub fn score(fit: &FitResult, criterion: Criterion) -> Result<ScoreBreakdown> {
    let n = fit.num_obs() as f64;
    let k = fit.num_states();
    let nll = -fit.resp.log_likelihood;
    let transition_cost = 0.5 * n.ln() * (k * (k - 1)) as f64;

    let mut state_costs = Vec::with_capacity(k);
    for (s, state) in fit.model.states.iter().enumerate() {
        let df = degrees_of_freedom(state, EDGE_TOL) as f64;
        let cost = match criterion {
            Criterion::Bic => 0.5 * n.ln() * df,
            Criterion::Mmdl => {
                let pi_k = fit.resp.pi[s];
                if pi_k <= 0.0 || pi_k.is_nan() {
                    return Err(Error::InvalidParameter(format!(
                        "MMDL undefined: state {s} has zero effective size"
                    )));
                }
                0.5 * (n * pi_k).ln() * df
            }
        };
        state_costs.push(cost);
    }
    let total = nll + transition_cost + state_costs.iter().sum::<f64>();
    Ok(ScoreBreakdown {
        criterion,
        nll,
        transition_cost,
        state_costs,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::Termination;
    use crate::hmm::{HmmModel, Responsibilities};
    use nalgebra::{dmatrix, dvector, DMatrix, DVector};

    fn diag_state(p: usize) -> GaussianState {
        GaussianState::new(DVector::zeros(p), DMatrix::identity(p, p)).unwrap()
    }

    /// Hand-assembled fit with known posteriors and precision patterns.
    fn synthetic_fit(n: usize, pis: &[f64], states: Vec<GaussianState>, ll: f64) -> FitResult {
        let k = states.len();
        let mut u = DMatrix::zeros(n, k);
        for t in 0..n {
            for s in 0..k {
                u[(t, s)] = pis[s];
            }
        }
        let model = HmmModel::new(
            states,
            DMatrix::from_element(k, k, 1.0 / k as f64),
            DVector::from_element(k, 1.0 / k as f64),
        )
        .unwrap();
        FitResult {
            model,
            resp: Responsibilities {
                u,
                v: Vec::new(),
                pi: DVector::from_column_slice(pis),
                log_likelihood: ll,
            },
            penalized_nll_trace: vec![-ll],
            termination: Termination::Converged,
            iterations: 1,
            lambda: 0.0,
            pi_min: 1e-3,
        }
    }

    #[test]
    fn df_counts_upper_triangle_including_diagonal() {
        assert_eq!(degrees_of_freedom(&diag_state(3), EDGE_TOL), 6);

        let dense = dmatrix![1.0, 0.2, 0.1; 0.2, 1.0, 0.3; 0.1, 0.3, 1.0];
        let s = GaussianState::new(DVector::zeros(3), dense).unwrap();
        assert_eq!(degrees_of_freedom(&s, EDGE_TOL), 9);

        let one_edge = dmatrix![1.0, 0.4; 0.4, 1.0];
        let s = GaussianState::new(DVector::zeros(2), one_edge).unwrap();
        assert_eq!(degrees_of_freedom(&s, EDGE_TOL), 5);
    }

    #[test]
    fn single_state_scores_coincide() {
        let fit = synthetic_fit(50, &[1.0], vec![diag_state(2)], -80.0);
        let bic = score(&fit, Criterion::Bic).unwrap();
        let mmdl = score(&fit, Criterion::Mmdl).unwrap();
        assert_eq!(bic.transition_cost, 0.0);
        assert!((bic.total - mmdl.total).abs() < 1e-12);
    }

    #[test]
    fn mmdl_is_below_bic_for_fractional_states() {
        let fit = synthetic_fit(100, &[0.7, 0.3], vec![diag_state(2), diag_state(2)], -150.0);
        let bic = score(&fit, Criterion::Bic).unwrap();
        let mmdl = score(&fit, Criterion::Mmdl).unwrap();
        assert!(mmdl.total < bic.total);
    }

    #[test]
    fn totals_match_hand_evaluated_formula() {
        // n=100, K=2, p=2; state 0 has one off-diagonal edge, state 1 none.
        let with_edge = dmatrix![1.0, 0.4; 0.4, 1.0];
        let s0 = GaussianState::new(DVector::zeros(2), with_edge).unwrap();
        let s1 = diag_state(2);
        let fit = synthetic_fit(100, &[0.6, 0.4], vec![s0, s1], -210.0);

        let n = 100.0f64;
        // Df: state 0 = 2 + 3 = 5, state 1 = 2 + 2 = 4.
        let bic_expected = 210.0 + 0.5 * n.ln() * 2.0 + 0.5 * n.ln() * 5.0 + 0.5 * n.ln() * 4.0;
        let mmdl_expected = 210.0
            + 0.5 * n.ln() * 2.0
            + 0.5 * (n * 0.6f64).ln() * 5.0
            + 0.5 * (n * 0.4f64).ln() * 4.0;

        let bic = score(&fit, Criterion::Bic).unwrap();
        let mmdl = score(&fit, Criterion::Mmdl).unwrap();
        assert!((bic.total - bic_expected).abs() < 1e-10);
        assert!((mmdl.total - mmdl_expected).abs() < 1e-10);

        // Breakdown identity: total = nll + transition + sum(state costs).
        let rebuilt = bic.nll + bic.transition_cost + bic.state_costs.iter().sum::<f64>();
        assert!((bic.total - rebuilt).abs() < 1e-12);

        // BIC - MMDL = (1/2) sum_k log(1/pi_k) Df(k).
        let gap = 0.5 * (1.0f64 / 0.6).ln() * 5.0 + 0.5 * (1.0f64 / 0.4).ln() * 4.0;
        assert!((bic.total - mmdl.total - gap).abs() < 1e-10);
    }

    #[test]
    fn score_is_invariant_to_state_relabeling() {
        let with_edge = dmatrix![1.0, 0.4; 0.4, 1.0];
        let s0 = GaussianState::new(dvector![1.0, 0.0], with_edge).unwrap();
        let s1 = diag_state(2);
        let fit = synthetic_fit(80, &[0.25, 0.75], vec![s0.clone(), s1.clone()], -120.0);
        let swapped = synthetic_fit(80, &[0.75, 0.25], vec![s1, s0], -120.0);
        for criterion in [Criterion::Bic, Criterion::Mmdl] {
            let a = score(&fit, criterion).unwrap();
            let b = score(&swapped, criterion).unwrap();
            assert!((a.total - b.total).abs() < 1e-12);
        }
    }

    #[test]
    fn mmdl_rejects_zero_size_state() {
        let fit = synthetic_fit(40, &[1.0, 0.0], vec![diag_state(2), diag_state(2)], -60.0);
        assert!(score(&fit, Criterion::Mmdl).is_err());
        assert!(score(&fit, Criterion::Bic).is_ok());
    }
}
