//! Penalized sparse precision estimation.
//!
//! Solves, for a symmetric input covariance `C` and penalty level `rho`,
//!
//! ```text
//! minimize over SPD Omega:   -log|Omega| + tr(Omega C) + rho * Pen(Omega)
//! ```
//!
//! with three penalty variants, all acting on off-diagonal entries only:
//!
//! * `invcov`  - `Pen = sum |Omega_ll'|`, the classical graphical lasso;
//! * `parcor`  - the l1 norm of the partial correlation matrix
//!   `Psi_ll' = -Omega_ll' / sqrt(Omega_ll Omega_l'l')`;
//! * `invcor`  - the l1 norm of the inverse correlation matrix, equivalently
//!   `sum |Omega_ll'| * sqrt(Sigma_ll Sigma_l'l')` with `Sigma = Omega^-1`.
//!
//! `parcor` and `invcor` are scale-invariant: rescaling variables does not
//! change the estimated graph. They are non-convex and solved by iterating
//! weighted convex subproblems; `invcov` is convex and solved directly by
//! blockwise coordinate descent.

mod solver;

use std::collections::BTreeSet;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::math;

pub use solver::GLASSO_TOL;

/// Shared tolerance for deciding that a precision entry is a structural zero.
///
/// Coordinate descent produces exact zeros; this only guards round-off, and
/// the same constant is used by degrees-of-freedom counting so both views of
/// the estimated graph agree.
pub const EDGE_TOL: f64 = 1e-8;

/// Penalty variant for the precision subproblem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyKind {
    /// l1 on off-diagonal precision entries (classical graphical lasso).
    Invcov,
    /// l1 on off-diagonal partial correlations (scale-invariant).
    Parcor,
    /// l1 on off-diagonal inverse-correlation entries (scale-invariant).
    Invcor,
}

impl PenaltyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PenaltyKind::Invcov => "invcov",
            PenaltyKind::Parcor => "parcor",
            PenaltyKind::Invcor => "invcor",
        }
    }
}

impl std::str::FromStr for PenaltyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "invcov" => Ok(PenaltyKind::Invcov),
            "parcor" => Ok(PenaltyKind::Parcor),
            "invcor" => Ok(PenaltyKind::Invcor),
            other => Err(Error::InvalidParameter(format!(
                "unknown penalty kind '{other}' (expected invcov, parcor or invcor)"
            ))),
        }
    }
}

/// A penalty variant together with its effective multiplier.
#[derive(Debug, Clone, Copy)]
pub struct PenaltySpec {
    pub kind: PenaltyKind,
    /// Nonnegative multiplier on the penalty term.
    pub rho: f64,
}

impl PenaltySpec {
    pub fn new(kind: PenaltyKind, rho: f64) -> Result<Self> {
        if rho < 0.0 || rho.is_nan() {
            return Err(Error::InvalidParameter(format!(
                "penalty multiplier must be nonnegative, got {rho}"
            )));
        }
        Ok(Self { kind, rho })
    }

    /// Value of `rho * Pen(omega)` for this spec.
    pub fn value(&self, omega: &DMatrix<f64>) -> f64 {
        self.rho * penalty_value(self.kind, omega)
    }
}

/// `Pen(omega)` without the multiplier.
///
/// Panics if `omega` is not positive definite (the invcor variant needs
/// the inverse).
pub fn penalty_value(kind: PenaltyKind, omega: &DMatrix<f64>) -> f64 {
    let p = omega.nrows();
    let mut total = 0.0;
    match kind {
        PenaltyKind::Invcov => {
            for i in 0..p {
                for j in 0..p {
                    if i != j {
                        total += omega[(i, j)].abs();
                    }
                }
            }
        }
        PenaltyKind::Parcor => {
            for i in 0..p {
                for j in 0..p {
                    if i != j {
                        total += omega[(i, j)].abs() / (omega[(i, i)] * omega[(j, j)]).sqrt();
                    }
                }
            }
        }
        PenaltyKind::Invcor => {
            let sigma = omega
                .clone()
                .cholesky()
                .expect("penalty evaluated at non-SPD point")
                .inverse();
            for i in 0..p {
                for j in 0..p {
                    if i != j {
                        total += omega[(i, j)].abs() * (sigma[(i, i)] * sigma[(j, j)]).sqrt();
                    }
                }
            }
        }
    }
    total
}

/// Objective `-log|omega| + tr(omega C) + rho Pen(omega)` attained at `omega`.
///
/// Panics if `omega` is not positive definite.
pub fn objective(omega: &DMatrix<f64>, cov: &DMatrix<f64>, penalty: &PenaltySpec) -> f64 {
    let (_, log_det) = math::spd_inverse_logdet(omega, "objective").expect("SPD iterate");
    -log_det + (omega * cov).trace() + penalty.value(omega)
}

/// Solves the penalized precision problem for `cov_emp`.
///
/// `warm_start`, when given, is a previous precision estimate used to seed
/// the solver. Returns the estimated precision and the attained objective.
/// For `invcov` the result is the global minimizer of the convex objective;
/// for `parcor`/`invcor` it is a fixed point of the reweighting iteration.
pub fn glasso_solve(
    cov_emp: &DMatrix<f64>,
    penalty: &PenaltySpec,
    warm_start: Option<&DMatrix<f64>>,
) -> Result<(DMatrix<f64>, f64)> {
    math::check_symmetric(cov_emp, 1e-10)?;
    let p = cov_emp.nrows();
    for l in 0..p {
        if cov_emp[(l, l)] <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "covariance diagonal entry {l} is {} (must be positive)",
                cov_emp[(l, l)]
            )));
        }
    }

    let omega = match penalty.kind {
        PenaltyKind::Invcov => solver::solve_invcov(cov_emp, penalty.rho, warm_start)?,
        PenaltyKind::Parcor | PenaltyKind::Invcor => {
            solver::solve_rescaled(cov_emp, penalty, warm_start)?
        }
    };
    let obj = objective(&omega, cov_emp, penalty);
    Ok((omega, obj))
}

/// Partial correlation matrix `Psi_ll' = -Omega_ll' / sqrt(Omega_ll Omega_l'l')`.
///
/// The formula makes the diagonal identically -1.
pub fn partial_correlation(precision: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = precision.nrows();
    for l in 0..p {
        if precision[(l, l)] <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "precision diagonal entry {l} is not positive"
            )));
        }
    }
    let mut psi = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            psi[(i, j)] = -precision[(i, j)] / (precision[(i, i)] * precision[(j, j)]).sqrt();
        }
    }
    Ok(psi)
}

/// Undirected edge set of the conditional independence graph: pairs `(l, l')`
/// with `l < l'` whose precision entry exceeds `tol` in magnitude.
pub fn graph_of(precision: &DMatrix<f64>, tol: f64) -> BTreeSet<(usize, usize)> {
    let p = precision.nrows();
    let mut edges = BTreeSet::new();
    for l in 0..p {
        for l2 in (l + 1)..p {
            if precision[(l, l2)].abs() > tol {
                edges.insert((l, l2));
            }
        }
    }
    edges
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, DVector};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_spd(p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(p, p, |_, _| rng.random::<f64>() - 0.5);
        let mut m = &a * a.transpose();
        for i in 0..p {
            m[(i, i)] += 0.5 + rng.random::<f64>();
        }
        math::symmetrize(&mut m);
        m
    }

    #[test]
    fn identity_input_returns_identity() {
        for rho in [0.0, 0.1, 1.0] {
            let c = DMatrix::identity(4, 4);
            let spec = PenaltySpec::new(PenaltyKind::Invcov, rho).unwrap();
            let (omega, _) = glasso_solve(&c, &spec, None).unwrap();
            assert!((omega - DMatrix::identity(4, 4)).amax() < 1e-9, "rho={rho}");
        }
    }

    #[test]
    fn zero_penalty_recovers_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = random_spd(4, &mut rng);
        let spec = PenaltySpec::new(PenaltyKind::Invcov, 0.0).unwrap();
        let (omega, _) = glasso_solve(&c, &spec, None).unwrap();
        let direct = c.clone().try_inverse().unwrap();
        assert!((omega - direct).amax() < 1e-6);
    }

    #[test]
    fn large_penalty_gives_diagonal_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = random_spd(5, &mut rng);
        let rho = math::max_abs_offdiag(&c) * 1.01;
        let spec = PenaltySpec::new(PenaltyKind::Invcov, rho).unwrap();
        let (omega, _) = glasso_solve(&c, &spec, None).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                if i != j {
                    assert_eq!(omega[(i, j)], 0.0, "entry ({i},{j}) not exactly zero");
                }
                if i == j {
                    assert!((omega[(i, i)] - 1.0 / c[(i, i)]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn solution_is_symmetric_and_positive_definite() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for kind in [
            PenaltyKind::Invcov,
            PenaltyKind::Parcor,
            PenaltyKind::Invcor,
        ] {
            let c = random_spd(5, &mut rng);
            let spec = PenaltySpec::new(kind, 0.15).unwrap();
            let (omega, _) = glasso_solve(&c, &spec, None).unwrap();
            assert!(math::max_asymmetry(&omega) < 1e-8);
            assert!(
                omega.clone().cholesky().is_some(),
                "{kind:?} output not SPD"
            );
        }
    }

    #[test]
    fn edge_count_nonincreasing_in_rho() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let c = random_spd(6, &mut rng);
        let mut last = usize::MAX;
        for rho in [0.02, 0.08, 0.15, 0.3, 0.6] {
            let spec = PenaltySpec::new(PenaltyKind::Invcov, rho).unwrap();
            let (omega, _) = glasso_solve(&c, &spec, None).unwrap();
            let edges = graph_of(&omega, EDGE_TOL).len();
            assert!(
                edges <= last,
                "edge count increased from {last} to {edges} at rho={rho}"
            );
            last = edges;
        }
    }

    #[test]
    fn parcor_zero_pattern_is_scale_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..5 {
            let p = 3 + (trial % 3);
            let c = random_spd(p, &mut rng);
            let scales = DVector::from_fn(p, |_, _| 0.1 + 9.9 * rng.random::<f64>());
            let d = DMatrix::from_diagonal(&scales);
            let scaled = &d * &c * &d;

            let spec = PenaltySpec::new(PenaltyKind::Parcor, 0.3).unwrap();
            let (omega_a, _) = glasso_solve(&c, &spec, None).unwrap();
            let (omega_b, _) = glasso_solve(&scaled, &spec, None).unwrap();
            assert_eq!(
                graph_of(&omega_a, EDGE_TOL),
                graph_of(&omega_b, EDGE_TOL),
                "trial {trial}"
            );
        }
    }

    #[test]
    fn partial_correlation_formula() {
        let omega = DMatrix::identity(3, 3);
        let psi = partial_correlation(&omega).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { -1.0 } else { 0.0 };
                assert!((psi[(i, j)] - expected).abs() < 1e-15);
            }
        }

        let omega = dmatrix![1.0, -0.5; -0.5, 1.0];
        let psi = partial_correlation(&omega).unwrap();
        assert!((psi[(0, 1)] - 0.5).abs() < 1e-15);

        // Diagonal rescaling cancels out.
        let d = dmatrix![2.0, 0.0; 0.0, 0.3];
        let rescaled = &d * &omega * &d;
        let psi2 = partial_correlation(&rescaled).unwrap();
        assert!((psi2.clone() - psi).amax() < 1e-14);

        let bad = dmatrix![-1.0, 0.0; 0.0, 1.0];
        assert!(partial_correlation(&bad).is_err());
    }

    #[test]
    fn graph_edges_respect_tolerance() {
        let diag = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0]));
        assert!(graph_of(&diag, EDGE_TOL).is_empty());

        let mut m = DMatrix::identity(3, 3);
        m[(0, 1)] = 0.3;
        m[(1, 0)] = 0.3;
        let edges = graph_of(&m, EDGE_TOL);
        assert_eq!(edges.into_iter().collect::<Vec<_>>(), vec![(0, 1)]);

        assert!(graph_of(&m, 0.5).is_empty());
    }

    #[test]
    fn rejects_nonpositive_diagonal() {
        let c = dmatrix![0.0, 0.1; 0.1, 1.0];
        let spec = PenaltySpec::new(PenaltyKind::Invcov, 0.1).unwrap();
        assert!(glasso_solve(&c, &spec, None).is_err());
    }
}
