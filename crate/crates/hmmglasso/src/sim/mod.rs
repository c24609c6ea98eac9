//! Synthetic benchmark models and experiment protocols.
//!
//! Four data-generating designs are provided. Models 1-3 share one layout -
//! sticky transitions, block-disjoint sparse means, sparse precisions with a
//! support partly shared across states - and differ in their `n/p` ratio.
//! Model 4 has two indistinguishable-by-emission states plus sparse extras
//! and one uniformly-dispersing state, making it a harder dynamic problem.

mod experiments;

pub use experiments::{
    run_experiment_1, run_experiment_2, Exp1Method, Exp1Options, Exp1Record, Exp2Method,
    Exp2Options, Exp2Record,
};

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hmm::{sample_path_with, GaussianState, HmmModel};

/// Specification of one synthetic data set.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SimSpec {
    /// Benchmark design, 1 through 4.
    pub model_id: u8,
    pub k_true: usize,
    pub n: usize,
    pub p: usize,
    /// Mean separation.
    pub alpha: f64,
    pub seed: u64,
}

impl SimSpec {
    /// The benchmark's standard shape for each design:
    /// model 1 (n=2000, p=10), model 2 (n=2000, p=75),
    /// model 3 (n=1000, p=100), model 4 (n=5000, p=50).
    pub fn standard(model_id: u8, k_true: usize, alpha: f64, seed: u64) -> Result<Self> {
        let (n, p) = match model_id {
            1 => (2000, 10),
            2 => (2000, 75),
            3 => (1000, 100),
            4 => (5000, 50),
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown benchmark model {other}"
                )))
            }
        };
        Ok(Self {
            model_id,
            k_true,
            n,
            p,
            alpha,
            seed,
        })
    }

    fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.model_id) {
            return Err(Error::InvalidParameter(format!(
                "unknown benchmark model {}",
                self.model_id
            )));
        }
        if self.k_true == 0 || self.n == 0 || self.p == 0 {
            return Err(Error::InvalidParameter(
                "k_true, n and p must be positive".into(),
            ));
        }
        if self.model_id != 4 && self.p < self.k_true {
            return Err(Error::InvalidParameter(format!(
                "mean placement needs p >= k_true (p={}, k_true={})",
                self.p, self.k_true
            )));
        }
        if self.model_id == 4 && self.p < 2 {
            return Err(Error::InvalidParameter("model 4 needs p >= 2".into()));
        }
        Ok(())
    }
}

/// The exact data-generating model for `spec`.
///
/// All precisions are standardized to unit diagonal; the initial state
/// distribution is uniform. Random support placement is driven by
/// `spec.seed`, so a spec pins down its truth completely.
pub fn build_truth(spec: &SimSpec) -> Result<HmmModel> {
    spec.validate()?;
    let k = spec.k_true;
    let p = spec.p;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(0xA11CE);

    let transition = match spec.model_id {
        4 => {
            // Sticky rows except the last state, which disperses uniformly.
            let gamma = 1.0 / (0.9 + 0.1 * (k as f64 - 1.0));
            DMatrix::from_fn(k, k, |i, j| {
                if i == k - 1 {
                    1.0 / k as f64
                } else if i == j {
                    0.9 * gamma
                } else {
                    0.1 * gamma
                }
            })
        }
        _ => {
            let gamma = 1.0 / (0.9 + 0.1 * (k as f64 - 1.0));
            DMatrix::from_fn(k, k, |i, j| if i == j { 0.9 * gamma } else { 0.1 * gamma })
        }
    };

    let means: Vec<DVector<f64>> = match spec.model_id {
        4 => (0..k)
            .map(|s| {
                let mut mu = DVector::zeros(p);
                if s < 2 {
                    mu[0] = spec.alpha;
                    mu[1] = spec.alpha;
                }
                mu
            })
            .collect(),
        _ => {
            // Disjoint blocks of p/k nonzero entries with alternating sign,
            // scaled so each mean has norm alpha.
            let block = p / k;
            (0..k)
                .map(|s| {
                    let mut mu = DVector::zeros(p);
                    let sign = if (s + 1) % 2 == 1 { -1.0 } else { 1.0 };
                    let value = sign * spec.alpha / (block as f64).sqrt();
                    for l in s * block..(s + 1) * block {
                        mu[l] = value;
                    }
                    mu
                })
                .collect()
        }
    };

    let supports = precision_supports(spec, &mut rng)?;
    let states: Vec<GaussianState> = means
        .into_iter()
        .zip(supports)
        .map(|(mu, pairs)| {
            let omega = sparse_precision(p, &pairs);
            GaussianState::new(mu, omega)
        })
        .collect::<Result<_>>()?;

    HmmModel::new(states, transition, DVector::from_element(k, 1.0 / k as f64))
}

/// Edge supports per state.
///
/// Models 1-3: p unordered pairs per state, floor(p/2) of them shared by all
/// states and the rest state-specific (disjoint across states while the pool
/// lasts, sampled from the remaining off-support pool otherwise).
/// Model 4: states 0 and 1 have empty supports (identity precision), the
/// rest two distinct pairs each.
fn precision_supports(spec: &SimSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<(usize, usize)>>> {
    let p = spec.p;
    let k = spec.k_true;
    let mut pool: Vec<(usize, usize)> = (0..p)
        .flat_map(|i| ((i + 1)..p).map(move |j| (i, j)))
        .collect();
    pool.shuffle(rng);

    match spec.model_id {
        4 => {
            let mut supports = vec![Vec::new(), Vec::new()];
            let mut cursor = 0usize;
            for _ in 2..k {
                let take = 2.min(pool.len().saturating_sub(cursor));
                let mut pairs = Vec::with_capacity(2);
                for _ in 0..take {
                    pairs.push(pool[cursor]);
                    cursor += 1;
                }
                supports.push(pairs);
            }
            supports.truncate(k);
            while supports.len() < k {
                supports.push(Vec::new());
            }
            Ok(supports)
        }
        _ => {
            let shared_count = p / 2;
            let distinct_count = p - shared_count;
            if shared_count > pool.len() {
                return Err(Error::InvalidParameter(format!(
                    "cannot place {shared_count} shared edges among {} pairs",
                    pool.len()
                )));
            }
            let shared: Vec<(usize, usize)> = pool[..shared_count].to_vec();
            let mut cursor = shared_count;
            let mut supports = Vec::with_capacity(k);
            for _ in 0..k {
                let mut pairs = shared.clone();
                if cursor + distinct_count <= pool.len() {
                    pairs.extend_from_slice(&pool[cursor..cursor + distinct_count]);
                    cursor += distinct_count;
                } else {
                    // Pool exhausted: reuse the off-shared pool, reshuffled.
                    let mut extra: Vec<(usize, usize)> = pool[shared_count..].to_vec();
                    extra.shuffle(rng);
                    pairs.extend(extra.into_iter().take(distinct_count));
                }
                supports.push(pairs);
            }
            Ok(supports)
        }
    }
}

/// SPD precision with exactly the requested off-diagonal support:
/// magnitude-0.5 entries with alternating signs, a ridge sized to push the
/// smallest eigenvalue to 0.1, then rescaling to unit diagonal.
fn sparse_precision(p: usize, pairs: &[(usize, usize)]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(p, p);
    for (idx, &(i, j)) in pairs.iter().enumerate() {
        let value = 0.5 * if idx % 2 == 0 { 1.0 } else { -1.0 };
        m[(i, j)] = value;
        m[(j, i)] = value;
    }
    let min_eig = m
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let delta = 0.1 - min_eig.min(0.0);
    for l in 0..p {
        m[(l, l)] += delta;
    }
    // Unit-diagonal standardization preserves both support and definiteness.
    let d = DVector::from_fn(p, |l, _| m[(l, l)].sqrt());
    DMatrix::from_fn(p, p, |i, j| m[(i, j)] / (d[i] * d[j]))
}

/// Draws a data set from the model described by `spec`.
pub fn generate(spec: &SimSpec) -> Result<(DMatrix<f64>, Vec<usize>, HmmModel)> {
    let truth = build_truth(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(0xDA7A);
    let (data, labels) = sample_path_with(&truth, spec.n, &mut rng)?;
    Ok((data, labels, truth))
}

/// True edge sets per state.
pub fn truth_graphs(truth: &HmmModel) -> Vec<BTreeSet<(usize, usize)>> {
    truth
        .states
        .iter()
        .map(|s| crate::glasso::graph_of(s.precision(), crate::glasso::EDGE_TOL))
        .collect()
}

/// Deterministic per-task seed derivation (SplitMix64 over a combined key).
pub(crate) fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_mul(0x9E3779B97F4A7C15);
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}
