//! Sampling observation sequences from a model.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

use super::HmmModel;

/// Draws `n` observations and their hidden state labels from `model`.
///
/// Deterministic for a given `seed`. Returns the n x p observation matrix
/// and the 0-based state label of each row.
pub fn sample_path(model: &HmmModel, n: usize, seed: u64) -> Result<(DMatrix<f64>, Vec<usize>)> {
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_path_with(model, n, &mut rng)
}

/// As [`sample_path`] but drawing from a caller-supplied generator.
pub fn sample_path_with<R: Rng>(
    model: &HmmModel,
    n: usize,
    rng: &mut R,
) -> Result<(DMatrix<f64>, Vec<usize>)> {
    let p = model.dim();

    // Cholesky factors of the state covariances, computed once.
    let factors: Vec<DMatrix<f64>> = model
        .states
        .iter()
        .map(|s| {
            s.covariance()
                .clone()
                .cholesky()
                .map(|c| c.l())
                .ok_or_else(|| Error::NotPositiveDefinite {
                    context: "state covariance while sampling".to_string(),
                })
        })
        .collect::<Result<_>>()?;

    let mut labels = Vec::with_capacity(n);
    let mut data = DMatrix::zeros(n, p);
    let mut state = draw_categorical(model.initial.as_slice(), rng);
    for t in 0..n {
        if t > 0 {
            let row: Vec<f64> = model.transition.row(state).iter().cloned().collect();
            state = draw_categorical(&row, rng);
        }
        labels.push(state);
        let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = model.states[state].mean() + &factors[state] * z;
        data.row_mut(t).copy_from(&x.transpose());
    }
    Ok((data, labels))
}

fn draw_categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::GaussianState;
    use nalgebra::{dmatrix, dvector};

    fn sticky_two_state() -> HmmModel {
        HmmModel::new(
            vec![
                GaussianState::new(dvector![-2.0], dmatrix![1.0]).unwrap(),
                GaussianState::new(dvector![2.0], dmatrix![1.0]).unwrap(),
            ],
            dmatrix![0.9, 0.1; 0.1, 0.9],
            dvector![0.5, 0.5],
        )
        .unwrap()
    }

    #[test]
    fn single_state_labels_are_constant() {
        let model = HmmModel::new(
            vec![GaussianState::new(dvector![0.0], dmatrix![1.0]).unwrap()],
            dmatrix![1.0],
            dvector![1.0],
        )
        .unwrap();
        let (_, labels) = sample_path(&model, 50, 7).unwrap();
        assert!(labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn zero_samples_is_an_error() {
        let model = sticky_two_state();
        assert!(sample_path(&model, 0, 1).is_err());
    }

    #[test]
    fn same_seed_reproduces_output() {
        let model = sticky_two_state();
        let (d1, l1) = sample_path(&model, 200, 42).unwrap();
        let (d2, l2) = sample_path(&model, 200, 42).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(d1, d2);
        let (_, l3) = sample_path(&model, 200, 43).unwrap();
        assert_ne!(l1, l3);
    }

    #[test]
    fn self_transition_frequency_matches_model() {
        let model = sticky_two_state();
        let n = 100_000;
        let (_, labels) = sample_path(&model, n, 1).unwrap();
        let stays = labels.windows(2).filter(|w| w[0] == w[1]).count() as f64;
        let freq = stays / (n - 1) as f64;
        assert!(
            (freq - 0.9).abs() < 0.01,
            "self-transition frequency {freq} not within 0.01 of 0.9"
        );
    }
}
