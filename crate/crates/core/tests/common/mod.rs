//! Independent oracles and generators shared by the integration tests.
#![allow(dead_code)]

use anyq::learner::KmProblem;
use anyq::Rng;

/// Exact minimum of the weighted 2-means loss, by enumerating every
/// assignment of samples to two clusters. Each cluster's loss is taken at its
/// weighted mean (clusters with no weight cost nothing).
pub fn brute_force_two_means(samples: &[f64], weights: &[f64]) -> f64 {
    let n = samples.len();
    assert!(n <= 20);
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << n) {
        let mut total = 0.0;
        for side in [0, 1] {
            let members: Vec<usize> = (0..n).filter(|&i| (mask >> i) & 1 == side).collect();
            let wsum: f64 = members.iter().map(|&i| weights[i]).sum();
            if wsum == 0.0 {
                continue;
            }
            let mean = members.iter().map(|&i| weights[i] * samples[i]).sum::<f64>() / wsum;
            total += members
                .iter()
                .map(|&i| weights[i] * (samples[i] - mean).powi(2))
                .sum::<f64>();
        }
        best = best.min(total);
    }
    best
}

/// Weighted mean of the members of cluster `c` (plain mean when every member
/// has zero weight); `None` for an empty cluster.
pub fn cluster_mean(p: &KmProblem, assignments: &[usize], c: usize) -> Option<f64> {
    let members: Vec<usize> = (0..p.len()).filter(|&i| assignments[i] == c).collect();
    if members.is_empty() {
        return None;
    }
    let wsum: f64 = members.iter().map(|&i| p.weights()[i]).sum();
    Some(if wsum > 0.0 {
        members.iter().map(|&i| p.weights()[i] * p.samples()[i]).sum::<f64>() / wsum
    } else {
        members.iter().map(|&i| p.samples()[i]).sum::<f64>() / members.len() as f64
    })
}

/// A random clustering problem of `n` samples mixing continuous values,
/// repeated values and zero weights.
pub fn random_problem(rng: &mut Rng, n: usize) -> KmProblem {
    let style = rng.below(3);
    let samples: Vec<f64> = (0..n)
        .map(|_| match style {
            0 => rng.normal() * 3.0,
            1 => rng.below(4) as f64 - 1.5,
            _ => {
                let z = rng.normal();
                z * z * z
            }
        })
        .collect();
    let mut weights: Vec<f64> = (0..n)
        .map(|_| if rng.uniform() < 0.2 { 0.0 } else { rng.uniform() * 2.0 })
        .collect();
    if weights.iter().all(|&w| w == 0.0) {
        weights[rng.below(n)] = 1.0;
    }
    KmProblem::new(samples, weights).unwrap()
}
