#![allow(dead_code)]

use agm_mcmc::{AdaptiveState, Covariance, GaussianComponent, MixtureProposal};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rel_err_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let diff = (a - b).norm();
    if diff == 0.0 {
        0.0
    } else {
        diff / b.norm()
    }
}

pub fn rel_err_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let diff = (a - b).norm();
    if diff == 0.0 {
        0.0
    } else {
        diff / b.norm()
    }
}

/// Largest relative discrepancy between two proposals over means,
/// covariances and the weight vector.
pub fn proposal_discrepancy(a: &MixtureProposal, b: &MixtureProposal) -> f64 {
    let mut worst = rel_err_vec(
        &DVector::from_column_slice(a.weights()),
        &DVector::from_column_slice(b.weights()),
    );
    for (ca, cb) in a.components().iter().zip(b.components()) {
        worst = worst.max(rel_err_vec(ca.mean(), cb.mean()));
        worst = worst.max(rel_err_mat(ca.cov().matrix(), cb.cov().matrix()));
    }
    worst
}

/// Feeds one random assignment stream through a history-keeping state
/// updated with the block formulas and a history-free state updated
/// recursively. The first `train` points are recorded without publishing.
/// Returns the worst discrepancy seen after any step.
pub fn recursive_vs_block(dim: usize, components: usize, len: usize, train: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let comps: Vec<GaussianComponent> = (0..components)
        .map(|_| {
            let mean = DVector::from_fn(dim, |_, _| rng.random_range(-5.0..5.0));
            GaussianComponent::new(mean, Covariance::isotropic(dim, 10.0).unwrap()).unwrap()
        })
        .collect();
    let q = MixtureProposal::uniform(comps).unwrap();
    // points come from a random correlated Gaussian per component
    let centers: Vec<DVector<f64>> = (0..components)
        .map(|_| DVector::from_fn(dim, |_, _| rng.random_range(-8.0..8.0)))
        .collect();
    let mixers: Vec<DMatrix<f64>> = (0..components)
        .map(|_| DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.5..1.5)))
        .collect();
    let epsilon = 1e-6;

    let mut block = AdaptiveState::with_history(q.clone());
    let mut recursive = AdaptiveState::new(q);
    let mut worst = 0.0f64;
    for step in 0..len {
        let j = rng.random_range(0..components);
        let z = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = &centers[j] + &mixers[j] * z;
        block.record(j, &x);
        recursive.record(j, &x);
        if step >= train {
            block.block_update(j, epsilon).unwrap();
            recursive.recursive_update(j, epsilon).unwrap();
        }
        worst = worst.max(proposal_discrepancy(recursive.proposal(), block.proposal()));
        assert_eq!(block.counts(), recursive.counts());
    }
    worst
}
