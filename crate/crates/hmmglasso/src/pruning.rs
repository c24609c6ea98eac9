//! Greedy backward pruning of the number of states.
//!
//! Starting from a single fit at `k_max`, each step builds two warm
//! initial conditions with one state fewer - merging the two closest states
//! (by symmetric Kullback-Leibler divergence) or deleting the smallest one -
//! refits both, and keeps whichever scores better under the chosen
//! criterion. Only the very first fit needs an initializer; every later fit
//! starts from the previous estimate, which is what makes exploring a whole
//! range of state counts cheap and robust.

use nalgebra::{DMatrix, DVector};

use crate::em::{fit_hmmglasso, FitConfig, FitResult, Initialization};
use crate::error::{Error, Result};
use crate::hmm::{GaussianState, HmmModel};
use crate::selection::{score, Criterion, ScoreBreakdown};

/// Which mean term the symmetric KL divergence uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeanTerm {
    /// `(mu_a - mu_b)^T (Sigma_a^-1 + Sigma_b^-1) (mu_a - mu_b)`, the
    /// canonical symmetric KL mean term.
    Standard,
    /// `(mu_a - mu_b)^T (Sigma_a^-1 - Sigma_b^-1) (mu_a - mu_b)`. Degenerate:
    /// it vanishes whenever the two covariances are equal, regardless of the
    /// mean separation. Provided for comparison.
    Difference,
}

/// Symmetric Kullback-Leibler divergence between two Gaussian states
/// (standard mean term).
pub fn sym_kl(a: &GaussianState, b: &GaussianState) -> Result<f64> {
    sym_kl_with(a, b, MeanTerm::Standard)
}

/// Symmetric KL divergence with a selectable mean term.
pub fn sym_kl_with(a: &GaussianState, b: &GaussianState, mean_term: MeanTerm) -> Result<f64> {
    let p = a.dim();
    if b.dim() != p {
        return Err(Error::DimensionMismatch(format!(
            "states have dimensions {} and {}",
            p,
            b.dim()
        )));
    }
    // tr{(Sa - Sb)(Sb^-1 - Sa^-1)} = tr(Sa Ob) + tr(Sb Oa) - 2p.
    let trace_term = (a.covariance() * b.precision()).trace()
        + (b.covariance() * a.precision()).trace()
        - 2.0 * p as f64;
    let d = a.mean() - b.mean();
    let mean_term = match mean_term {
        MeanTerm::Standard => (a.precision() * &d).dot(&d) + (b.precision() * &d).dot(&d),
        MeanTerm::Difference => (a.precision() * &d).dot(&d) - (b.precision() * &d).dot(&d),
    };
    Ok(trace_term + mean_term)
}

/// The pair of states minimizing the symmetric KL divergence.
///
/// Ties break toward the smallest indices.
pub fn closest_pair(model: &HmmModel) -> Result<(usize, usize)> {
    let k = model.num_states();
    if k < 2 {
        return Err(Error::InvalidParameter(
            "need at least two states to find a closest pair".into(),
        ));
    }
    let mut best = (0, 1);
    let mut best_div = f64::INFINITY;
    for k1 in 0..k {
        for k2 in (k1 + 1)..k {
            let div = sym_kl(&model.states[k1], &model.states[k2])?;
            if div < best_div {
                best_div = div;
                best = (k1, k2);
            }
        }
    }
    Ok(best)
}

/// Initial conditions for a `K-1`-state refit after merging states `k1` and
/// `k2` of `fit`.
///
/// Merged responsibilities add; the merged transition row sums the two
/// outgoing rows, the incoming column is reset to `1/(K-1)`, and rows are
/// renormalized so the result is a valid starting transition matrix. The
/// merged state takes the position `min(k1, k2)`.
pub fn merge_init(fit: &FitResult, k1: usize, k2: usize) -> Result<Initialization> {
    let k = fit.num_states();
    if k1 == k2 || k1 >= k || k2 >= k {
        return Err(Error::InvalidParameter(format!(
            "invalid merge pair ({k1}, {k2}) for {k} states"
        )));
    }
    let (lo, hi) = if k1 < k2 { (k1, k2) } else { (k2, k1) };
    let n = fit.num_obs();
    let new_k = k - 1;
    // Old index of each new position: `lo` holds the merged state.
    let old_of: Vec<usize> = (0..new_k).map(|j| if j < hi { j } else { j + 1 }).collect();

    let u_old = &fit.resp.u;
    let mut u = DMatrix::zeros(n, new_k);
    for (j, &old) in old_of.iter().enumerate() {
        if j == lo {
            for t in 0..n {
                u[(t, j)] = u_old[(t, lo)] + u_old[(t, hi)];
            }
        } else {
            for t in 0..n {
                u[(t, j)] = u_old[(t, old)];
            }
        }
    }

    let trans_old = &fit.model.transition;
    let mut transition = DMatrix::zeros(new_k, new_k);
    for (j, &oj) in old_of.iter().enumerate() {
        for (j2, &oj2) in old_of.iter().enumerate() {
            if j2 == lo {
                // Incoming column of the merged state.
                transition[(j, j2)] = 1.0 / new_k as f64;
            } else if j == lo {
                // Outgoing row of the merged state.
                transition[(j, j2)] = trans_old[(k1, oj2)] + trans_old[(k2, oj2)];
            } else {
                transition[(j, j2)] = trans_old[(oj, oj2)];
            }
        }
    }
    renormalize_rows(&mut transition);

    let pi = u.row_sum().transpose() / n as f64;
    let init = Initialization { u, transition, pi };
    init.validate()?;
    Ok(init)
}

/// Initial conditions for a `K-1`-state refit after deleting state `k_del`.
///
/// The state's responsibility column and transition row/column are removed
/// and the remainders renormalized. Observations whose posterior mass sat
/// entirely on the deleted state restart from a uniform assignment.
pub fn delete_init(fit: &FitResult, k_del: usize) -> Result<Initialization> {
    let k = fit.num_states();
    if k < 2 {
        return Err(Error::InvalidParameter(
            "cannot delete a state from a single-state fit".into(),
        ));
    }
    if k_del >= k {
        return Err(Error::InvalidParameter(format!(
            "state index {k_del} out of range for {k} states"
        )));
    }
    let n = fit.num_obs();
    let new_k = k - 1;
    let old_of: Vec<usize> = (0..new_k)
        .map(|j| if j < k_del { j } else { j + 1 })
        .collect();

    let u_old = &fit.resp.u;
    let mut u = DMatrix::zeros(n, new_k);
    for t in 0..n {
        let mut sum = 0.0;
        for (j, &old) in old_of.iter().enumerate() {
            let val = u_old[(t, old)];
            u[(t, j)] = val;
            sum += val;
        }
        if sum > 0.0 {
            for j in 0..new_k {
                u[(t, j)] /= sum;
            }
        } else {
            for j in 0..new_k {
                u[(t, j)] = 1.0 / new_k as f64;
            }
        }
    }

    let trans_old = &fit.model.transition;
    let mut transition = DMatrix::zeros(new_k, new_k);
    for (j, &oj) in old_of.iter().enumerate() {
        for (j2, &oj2) in old_of.iter().enumerate() {
            transition[(j, j2)] = trans_old[(oj, oj2)];
        }
    }
    renormalize_rows(&mut transition);

    let pi = u.row_sum().transpose() / n as f64;
    let init = Initialization { u, transition, pi };
    init.validate()?;
    Ok(init)
}

fn renormalize_rows(m: &mut DMatrix<f64>) {
    let k = m.ncols();
    for i in 0..m.nrows() {
        let sum: f64 = m.row(i).sum();
        if sum > 0.0 {
            for j in 0..k {
                m[(i, j)] /= sum;
            }
        } else {
            for j in 0..k {
                m[(i, j)] = 1.0 / k as f64;
            }
        }
    }
}

/// The pruning move that produced a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PruneAction {
    /// States (of the previous, larger model) that were merged.
    Merge(usize, usize),
    /// State (of the previous, larger model) that was deleted.
    Delete(usize),
}

/// One level of the pruning descent.
#[derive(Debug)]
pub struct PruneStep {
    pub k: usize,
    pub fit: FitResult,
    pub bic: ScoreBreakdown,
    pub mmdl: ScoreBreakdown,
    /// Move that produced this fit; `None` for the initial fit at `k_max`.
    pub action: Option<PruneAction>,
}

/// Full record of a pruning run, ordered from `k_max` down to `k_min`.
#[derive(Debug)]
pub struct PruneTrace {
    pub steps: Vec<PruneStep>,
    pub criterion: Criterion,
    selected: usize,
}

impl PruneTrace {
    /// Number of states minimizing the chosen criterion over the descent.
    pub fn selected_k(&self) -> usize {
        self.steps[self.selected].k
    }

    /// The step whose fit minimizes the chosen criterion.
    pub fn selected_step(&self) -> &PruneStep {
        &self.steps[self.selected]
    }
}

/// Runs greedy backward pruning from `k_max` down to `k_min`.
///
/// `init_fn` produces the one and only initialization, at `k_max`; every
/// subsequent fit is warm-started from merge or delete initial conditions.
/// At each level both candidate refits are computed and the one with the
/// smaller criterion value is kept (ties prefer the merge, which preserves
/// posterior mass assignments).
pub fn backward_prune<F>(
    data: &DMatrix<f64>,
    k_min: usize,
    k_max: usize,
    config: &FitConfig,
    criterion: Criterion,
    mut init_fn: F,
) -> Result<PruneTrace>
where
    F: FnMut(&DMatrix<f64>, usize) -> Result<Initialization>,
{
    if k_min < 1 || k_min >= k_max {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= k_min < k_max, got k_min={k_min}, k_max={k_max}"
        )));
    }

    let init = init_fn(data, k_max)?;
    let first = fit_hmmglasso(data, k_max, config, &init)?;
    let mut steps = vec![PruneStep {
        k: k_max,
        bic: score(&first, Criterion::Bic)?,
        mmdl: score(&first, Criterion::Mmdl)?,
        fit: first,
        action: None,
    }];

    let mut kappa = k_max;
    while kappa > k_min {
        let current = &steps.last().unwrap().fit;
        let (m1, m2) = closest_pair(&current.model)?;
        let smallest = argmin(&current.resp.pi);
        let init_merge = merge_init(current, m1, m2)?;
        let init_delete = delete_init(current, smallest)?;

        let (fit_merge, fit_delete) = rayon::join(
            || fit_hmmglasso(data, kappa - 1, config, &init_merge),
            || fit_hmmglasso(data, kappa - 1, config, &init_delete),
        );
        let fit_merge = fit_merge?;
        let fit_delete = fit_delete?;

        let c_merge = score(&fit_merge, criterion)?.total;
        let c_delete = score(&fit_delete, criterion)?.total;
        let (chosen, action) = if c_merge <= c_delete {
            (fit_merge, PruneAction::Merge(m1, m2))
        } else {
            (fit_delete, PruneAction::Delete(smallest))
        };

        kappa -= 1;
        steps.push(PruneStep {
            k: kappa,
            bic: score(&chosen, Criterion::Bic)?,
            mmdl: score(&chosen, Criterion::Mmdl)?,
            fit: chosen,
            action: Some(action),
        });
    }

    // Smallest criterion value; exact ties resolve toward fewer states.
    let mut selected = 0;
    for (i, step) in steps.iter().enumerate() {
        let total = match criterion {
            Criterion::Bic => step.bic.total,
            Criterion::Mmdl => step.mmdl.total,
        };
        let best = match criterion {
            Criterion::Bic => steps[selected].bic.total,
            Criterion::Mmdl => steps[selected].mmdl.total,
        };
        if total <= best {
            selected = i;
        }
    }

    Ok(PruneTrace {
        steps,
        criterion,
        selected,
    })
}

fn argmin(v: &DVector<f64>) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] < v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::{Lambda, PiMin, Termination};
    use crate::glasso::PenaltyKind;
    use crate::hmm::Responsibilities;
    use nalgebra::dmatrix;

    fn state(mean: &[f64], prec: DMatrix<f64>) -> GaussianState {
        GaussianState::new(DVector::from_column_slice(mean), prec).unwrap()
    }

    fn state1(mean: f64, var: f64) -> GaussianState {
        state(&[mean], dmatrix![1.0 / var])
    }

    #[test]
    fn sym_kl_of_identical_states_is_zero() {
        let a = state(&[1.0, -1.0], dmatrix![2.0, 0.3; 0.3, 1.0]);
        assert!(sym_kl(&a, &a).unwrap().abs() < 1e-12);
    }

    #[test]
    fn sym_kl_mean_separation_example() {
        // p=1, unit variances, means one apart: trace term 0, mean term 2.
        let a = state1(0.0, 1.0);
        let b = state1(1.0, 1.0);
        assert!((sym_kl(&a, &b).unwrap() - 2.0).abs() < 1e-12);
        // The printed difference form cannot see this separation.
        assert!(sym_kl_with(&a, &b, MeanTerm::Difference).unwrap().abs() < 1e-12);
    }

    #[test]
    fn sym_kl_variance_separation_example() {
        // p=1, equal means, variances 1 and 2: (1-2)(1/2-1) = 0.5.
        let a = state1(0.0, 1.0);
        let b = state1(0.0, 2.0);
        assert!((sym_kl(&a, &b).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn sym_kl_is_symmetric_and_nonnegative() {
        let states = [
            state(&[0.0, 0.0], dmatrix![1.0, 0.2; 0.2, 1.5]),
            state(&[1.0, -0.5], dmatrix![2.0, -0.4; -0.4, 0.8]),
            state(&[-2.0, 3.0], dmatrix![0.5, 0.1; 0.1, 0.9]),
        ];
        for a in &states {
            for b in &states {
                let ab = sym_kl(a, b).unwrap();
                let ba = sym_kl(b, a).unwrap();
                assert!((ab - ba).abs() < 1e-12);
                assert!(ab >= -1e-12);
            }
        }
    }

    fn model_from_states(states: Vec<GaussianState>) -> HmmModel {
        let k = states.len();
        HmmModel::new(
            states,
            DMatrix::from_element(k, k, 1.0 / k as f64),
            DVector::from_element(k, 1.0 / k as f64),
        )
        .unwrap()
    }

    #[test]
    fn closest_pair_finds_identical_states() {
        let model = model_from_states(vec![state1(0.0, 1.0), state1(5.0, 1.0), state1(0.0, 1.0)]);
        assert_eq!(closest_pair(&model).unwrap(), (0, 2));
    }

    #[test]
    fn closest_pair_of_two_states_is_the_only_pair() {
        let model = model_from_states(vec![state1(0.0, 1.0), state1(3.0, 2.0)]);
        assert_eq!(closest_pair(&model).unwrap(), (0, 1));
        let single = model_from_states(vec![state1(0.0, 1.0)]);
        assert!(closest_pair(&single).is_err());
    }

    #[test]
    fn closest_pair_matches_exhaustive_search() {
        let states = vec![
            state(&[0.0, 0.0], dmatrix![1.0, 0.0; 0.0, 1.0]),
            state(&[0.4, 0.1], dmatrix![1.1, 0.2; 0.2, 0.9]),
            state(&[4.0, -3.0], dmatrix![0.7, 0.0; 0.0, 1.3]),
        ];
        let model = model_from_states(states.clone());
        let mut best = (0, 1);
        let mut best_div = f64::INFINITY;
        for a in 0..3 {
            for b in (a + 1)..3 {
                let d = sym_kl(&states[a], &states[b]).unwrap();
                if d < best_div {
                    best_div = d;
                    best = (a, b);
                }
            }
        }
        assert_eq!(closest_pair(&model).unwrap(), best);
    }

    fn fit_from(u: DMatrix<f64>, transition: DMatrix<f64>) -> FitResult {
        let k = u.ncols();
        let n = u.nrows();
        let pi = u.row_sum().transpose() / n as f64;
        let states: Vec<GaussianState> = (0..k).map(|s| state1(s as f64, 1.0)).collect();
        let initial = DVector::from_element(k, 1.0 / k as f64);
        FitResult {
            model: HmmModel::new(states, transition, initial).unwrap(),
            resp: Responsibilities {
                u,
                v: Vec::new(),
                pi,
                log_likelihood: -10.0,
            },
            penalized_nll_trace: vec![10.0],
            termination: Termination::Converged,
            iterations: 1,
            lambda: 0.0,
            pi_min: 1e-3,
        }
    }

    #[test]
    fn merge_adds_responsibility_columns() {
        let u = dmatrix![
            0.2, 0.3, 0.5;
            0.1, 0.1, 0.8;
            0.4, 0.4, 0.2
        ];
        let trans = DMatrix::from_element(3, 3, 1.0 / 3.0);
        let fit = fit_from(u, trans);
        let init = merge_init(&fit, 0, 1).unwrap();
        assert_eq!(init.u.ncols(), 2);
        for t in 0..3 {
            assert!((init.u[(t, 0)] - (fit.resp.u[(t, 0)] + fit.resp.u[(t, 1)])).abs() < 1e-15);
            assert!((init.u.row(t).sum() - 1.0).abs() < 1e-12);
        }
        assert!((init.pi.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn merge_transition_matches_hand_computation() {
        // K=3, merge states 0 and 1 into new state 0 (old state 2 becomes 1).
        let u = dmatrix![
            0.5, 0.3, 0.2;
            0.2, 0.6, 0.2;
            0.3, 0.3, 0.4
        ];
        let trans = dmatrix![
            0.6, 0.3, 0.1;
            0.2, 0.5, 0.3;
            0.25, 0.25, 0.5
        ];
        let fit = fit_from(u, trans);
        let init = merge_init(&fit, 0, 1).unwrap();

        // Rule application before renormalization:
        //   merged row, other columns: 0.1 + 0.3 = 0.4; merged incoming column: 1/2.
        //   row 0 (merged): [0.5, 0.4]  -> renormalized [5/9, 4/9]
        //   row 1 (old 2):  [0.5, 0.5]  -> stays (column rule then old entry)
        let expected = dmatrix![
            0.5 / 0.9, 0.4 / 0.9;
            0.5, 0.5
        ];
        assert!((init.transition.clone() - expected).amax() < 1e-12);
    }

    #[test]
    fn delete_from_two_states_leaves_all_ones() {
        let u = dmatrix![0.9, 0.1; 0.3, 0.7; 0.5, 0.5];
        let trans = dmatrix![0.8, 0.2; 0.4, 0.6];
        let fit = fit_from(u, trans);
        let init = delete_init(&fit, 1).unwrap();
        assert_eq!(init.u.ncols(), 1);
        assert!(init.u.iter().all(|&x| (x - 1.0).abs() < 1e-12));
        assert!((init.pi[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn delete_renormalizes_rows_and_handles_concentrated_mass() {
        let u = dmatrix![
            0.2, 0.3, 0.5;
            0.0, 1.0, 0.0;
            0.6, 0.0, 0.4
        ];
        let trans = dmatrix![
            0.6, 0.3, 0.1;
            0.2, 0.5, 0.3;
            0.25, 0.25, 0.5
        ];
        let fit = fit_from(u, trans);
        let init = delete_init(&fit, 1).unwrap();
        // Row 0: (0.2, 0.5) / 0.7; row 1 was all on the deleted state -> uniform.
        assert!((init.u[(0, 0)] - 0.2 / 0.7).abs() < 1e-12);
        assert!((init.u[(0, 1)] - 0.5 / 0.7).abs() < 1e-12);
        assert!((init.u[(1, 0)] - 0.5).abs() < 1e-12);
        assert!((init.u[(1, 1)] - 0.5).abs() < 1e-12);
        // Transition: remove row/col 1, renormalize rows.
        let expected = dmatrix![
            0.6 / 0.7, 0.1 / 0.7;
            0.25 / 0.75, 0.5 / 0.75
        ];
        assert!((init.transition.clone() - expected).amax() < 1e-12);
        assert!((init.pi.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn prune_single_gaussian_selects_one_state() {
        use crate::baselines::kmeans_init;
        use crate::hmm::sample_path;

        let truth = model_from_states(vec![state(&[0.0, 0.0], dmatrix![1.0, 0.3; 0.3, 1.0])]);
        let (data, _) = sample_path(&truth, 400, 5).unwrap();
        let config = FitConfig {
            lambda: Lambda::Universal,
            penalty: PenaltyKind::Parcor,
            eps: 1e-3,
            pi_min: PiMin::Auto,
            max_iter: 200,
        };
        let trace = backward_prune(&data, 1, 4, &config, Criterion::Mmdl, |d, k| {
            kmeans_init(d, k, 5, 3)
        })
        .unwrap();
        assert_eq!(trace.steps.len(), 4);
        assert_eq!(trace.selected_k(), 1);
        // Ks descend from 4 to 1, one entry per level.
        let ks: Vec<usize> = trace.steps.iter().map(|s| s.k).collect();
        assert_eq!(ks, vec![4, 3, 2, 1]);
    }
}
