//! Baseline estimators and evaluation metrics: unpenalized and
//! diagonal-covariance EM, K-means initialization, pooled graphical lasso,
//! adjusted Rand index and edge-recovery rates.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::em::{
    fit_with_estimator, EmissionEstimator, FitConfig, FitResult, Initialization, Lambda, PiMin,
};
use crate::error::{Error, Result};
use crate::glasso::{glasso_solve, PenaltySpec};

/// Unpenalized maximum likelihood EM: `lambda = 0`, dense covariances, and a
/// collapse threshold of `p/n` so the per-state covariances stay invertible.
pub fn fit_unpenalized(
    data: &DMatrix<f64>,
    k: usize,
    config: &FitConfig,
    init: &Initialization,
) -> Result<FitResult> {
    let cfg = FitConfig {
        lambda: Lambda::Fixed(0.0),
        pi_min: PiMin::Fixed((data.ncols() as f64 / data.nrows() as f64).min(0.999)),
        ..*config
    };
    fit_with_estimator(data, k, &cfg, init, EmissionEstimator::Penalized)
}

/// EM with diagonal-restricted covariance matrices.
pub fn fit_diagcov(
    data: &DMatrix<f64>,
    k: usize,
    config: &FitConfig,
    init: &Initialization,
) -> Result<FitResult> {
    let cfg = FitConfig {
        lambda: Lambda::Fixed(0.0),
        ..*config
    };
    fit_with_estimator(data, k, &cfg, init, EmissionEstimator::Diagonal)
}

/// Best-of-`restarts` Lloyd K-means converted to a hard initialization:
/// 0/1 assignments, uniform starting transition matrix, cluster shares as
/// effective sizes. Deterministic for a given seed.
pub fn kmeans_init(
    data: &DMatrix<f64>,
    k: usize,
    restarts: usize,
    seed: u64,
) -> Result<Initialization> {
    let labels = kmeans_labels(data, k, restarts, seed)?;
    Initialization::from_labels(&labels, k)
}

/// Cluster labels from the best of `restarts` Lloyd runs.
pub fn kmeans_labels(
    data: &DMatrix<f64>,
    k: usize,
    restarts: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let n = data.nrows();
    if k == 0 || restarts == 0 {
        return Err(Error::InvalidParameter(
            "k and restarts must be at least 1".into(),
        ));
    }
    if n < k {
        return Err(Error::InvalidParameter(format!(
            "cannot form {k} clusters from {n} observations"
        )));
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for r in 0..restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        let (labels, trace) = lloyd(data, k, &mut rng);
        let ss = *trace.last().unwrap();
        if best.as_ref().is_none_or(|(b, _)| ss < *b) {
            best = Some((ss, labels));
        }
    }
    Ok(best.unwrap().1)
}

/// One Lloyd run from random distinct seeds. Returns the final labels and
/// the within-cluster sum of squares after each iteration.
fn lloyd<R: Rng>(data: &DMatrix<f64>, k: usize, rng: &mut R) -> (Vec<usize>, Vec<f64>) {
    let n = data.nrows();
    let p = data.ncols();

    // Initial centroids: k distinct rows.
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    while chosen.len() < k {
        let idx = rng.random_range(0..n);
        if !chosen.contains(&idx) {
            chosen.push(idx);
        }
    }
    let mut centroids: Vec<DVector<f64>> =
        chosen.iter().map(|&i| data.row(i).transpose()).collect();

    let mut labels = vec![0usize; n];
    let mut trace = Vec::new();
    for _iter in 0..100 {
        // Assignment step.
        let mut changed = false;
        let mut ss = 0.0;
        for (t, label) in labels.iter_mut().enumerate() {
            let x = data.row(t);
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let mut d = 0.0;
                for j in 0..p {
                    let diff = x[j] - centroid[j];
                    d += diff * diff;
                }
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if *label != best {
                *label = best;
                changed = true;
            }
            ss += best_d;
        }
        trace.push(ss);
        if !changed && trace.len() > 1 {
            break;
        }
        // Update step.
        let mut counts = vec![0usize; k];
        let mut sums = vec![DVector::<f64>::zeros(p); k];
        for (t, &label) in labels.iter().enumerate() {
            counts[label] += 1;
            sums[label] += data.row(t).transpose();
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = &sums[c] / counts[c] as f64;
            } else {
                // Empty cluster: reseat on the point farthest from its centroid.
                let mut far_t = 0;
                let mut far_d = -1.0;
                for t in 0..n {
                    let d = (data.row(t).transpose() - &centroids[labels[t]]).norm_squared();
                    if d > far_d {
                        far_d = d;
                        far_t = t;
                    }
                }
                centroids[c] = data.row(far_t).transpose();
            }
        }
    }
    (labels, trace)
}

/// Graphical lasso on the pooled sample covariance of all observations,
/// ignoring any state structure.
pub fn pooled_glasso(data: &DMatrix<f64>, penalty: &PenaltySpec) -> Result<DMatrix<f64>> {
    let n = data.nrows() as f64;
    let mean = data.row_sum().transpose() / n;
    let mut cov = DMatrix::zeros(data.ncols(), data.ncols());
    for t in 0..data.nrows() {
        let d = data.row(t).transpose() - &mean;
        cov.syger(1.0 / n, &d, &d, 1.0);
    }
    cov.fill_upper_triangle_with_lower_triangle();
    let (omega, _) = glasso_solve(&cov, penalty, None)?;
    Ok(omega)
}

/// Adjusted Rand index between two partitions: 1 for identical partitions
/// (up to relabeling), about 0 for agreement at chance level.
pub fn adjusted_rand_index(labels_a: &[usize], labels_b: &[usize]) -> Result<f64> {
    if labels_a.len() != labels_b.len() {
        return Err(Error::DimensionMismatch(format!(
            "label vectors have lengths {} and {}",
            labels_a.len(),
            labels_b.len()
        )));
    }
    let n = labels_a.len();
    if n == 0 {
        return Err(Error::InvalidParameter("empty label vectors".into()));
    }
    let ka = labels_a.iter().max().unwrap() + 1;
    let kb = labels_b.iter().max().unwrap() + 1;
    let mut table = vec![vec![0usize; kb]; ka];
    for (&a, &b) in labels_a.iter().zip(labels_b) {
        table[a][b] += 1;
    }
    let choose2 = |m: usize| -> f64 { (m as f64) * (m as f64 - 1.0) / 2.0 };

    let sum_cells: f64 = table
        .iter()
        .flat_map(|row| row.iter())
        .map(|&c| choose2(c))
        .sum();
    let sum_a: f64 = table.iter().map(|row| choose2(row.iter().sum())).sum();
    let sum_b: f64 = (0..kb)
        .map(|j| choose2(table.iter().map(|row| row[j]).sum()))
        .sum();
    let total = choose2(n);

    let expected = sum_a * sum_b / total;
    let max_index = 0.5 * (sum_a + sum_b);
    if (max_index - expected).abs() < 1e-12 {
        return Ok(1.0);
    }
    Ok((sum_cells - expected) / (max_index - expected))
}

/// Edge-recovery rates of an estimated graph against the data-generating one.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct GraphMetrics {
    pub tpr: f64,
    pub fpr: f64,
    pub true_edges: usize,
    pub estimated_edges: usize,
}

/// TPR and FPR of `estimated` with respect to `truth` over the `p(p-1)/2`
/// possible edges. An empty true graph scores TPR 1 by convention (there is
/// nothing to miss); a complete true graph scores FPR 0.
pub fn graph_metrics(
    estimated: &BTreeSet<(usize, usize)>,
    truth: &BTreeSet<(usize, usize)>,
    p: usize,
) -> GraphMetrics {
    let all_pairs = p * (p - 1) / 2;
    let hits = estimated.intersection(truth).count();
    let false_pos = estimated.difference(truth).count();
    let negatives = all_pairs - truth.len();
    let tpr = if truth.is_empty() {
        1.0
    } else {
        hits as f64 / truth.len() as f64
    };
    let fpr = if negatives == 0 {
        0.0
    } else {
        false_pos as f64 / negatives as f64
    };
    GraphMetrics {
        tpr,
        fpr,
        true_edges: truth.len(),
        estimated_edges: estimated.len(),
    }
}

/// Greedily matches estimated states to true states by maximizing label
/// overlap. Returns, for each estimated state, the matched true state (or
/// `None` when there are more estimated than true states).
pub fn match_states(
    estimated_labels: &[usize],
    true_labels: &[usize],
    k_est: usize,
    k_true: usize,
) -> Vec<Option<usize>> {
    let mut overlap = vec![vec![0usize; k_true]; k_est];
    for (&e, &t) in estimated_labels.iter().zip(true_labels) {
        if e < k_est && t < k_true {
            overlap[e][t] += 1;
        }
    }
    let mut assignment = vec![None; k_est];
    let mut used_est = vec![false; k_est];
    let mut used_true = vec![false; k_true];
    for _ in 0..k_est.min(k_true) {
        let mut best = (0usize, 0usize);
        let mut best_count = 0usize;
        let mut found = false;
        for e in 0..k_est {
            if used_est[e] {
                continue;
            }
            for t in 0..k_true {
                if used_true[t] {
                    continue;
                }
                if !found || overlap[e][t] > best_count {
                    best = (e, t);
                    best_count = overlap[e][t];
                    found = true;
                }
            }
        }
        if !found {
            break;
        }
        assignment[best.0] = Some(best.1);
        used_est[best.0] = true;
        used_true[best.1] = true;
    }
    assignment
}
