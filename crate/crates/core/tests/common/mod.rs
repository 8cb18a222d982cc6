#![allow(dead_code)]

use std::time::Duration;

use rand::Rng as _;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use spectral_uncertainty::gateway::Clock;
use spectral_uncertainty::kernel::Embedding;
use spectral_uncertainty::spectral::SampleMatrix;

/// Clock that never advances and never sleeps: timings come out as exact
/// zeros, which keeps serialized runs byte-identical.
pub struct FrozenClock;

impl Clock for FrozenClock {
    fn now(&self) -> Duration {
        Duration::ZERO
    }

    fn sleep(&self, _duration: Duration) {}
}

pub fn random_unit(dim: usize, rng: &mut ChaCha8Rng) -> Embedding {
    loop {
        let values: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if let Ok(embedding) = Embedding::new(values) {
            return embedding;
        }
    }
}

pub fn random_sample_matrix(n: usize, m: usize, dim: usize, rng: &mut ChaCha8Rng) -> SampleMatrix {
    let groups = (0..n)
        .map(|_| (0..m).map(|_| random_unit(dim, rng)).collect())
        .collect();
    SampleMatrix::new(groups).expect("valid sample matrix")
}

/// Cyclic Jacobi eigenvalue iteration for small symmetric matrices.
///
/// Deliberately independent of the eigensolver used by the library: this
/// is the test-side route for checking spectra.
#[allow(clippy::needless_range_loop)]
pub fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _sweep in 0..200 {
        let mut off_diagonal = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off_diagonal += a[i][j] * a[i][j];
            }
        }
        if off_diagonal < 1e-28 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() < 1e-18 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eigenvalues: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    eigenvalues.sort_unstable_by(|x, y| y.partial_cmp(x).expect("finite eigenvalues"));
    eigenvalues
}

/// Entropy of an eigenvalue list with clipping matching the library's
/// convention, for use with `jacobi_eigenvalues`.
pub fn entropy_of_eigenvalues(eigenvalues: &[f64]) -> f64 {
    -eigenvalues
        .iter()
        .map(|&l| if l > 1e-12 { l * l.ln() } else { 0.0 })
        .sum::<f64>()
}

#[cfg(test)]
mod self_checks {
    use super::*;

    #[test]
    fn jacobi_matches_hand_computed_two_by_two() {
        let eigenvalues = jacobi_eigenvalues(vec![vec![0.5, 0.25], vec![0.25, 0.5]]);
        assert!((eigenvalues[0] - 0.75).abs() < 1e-12);
        assert!((eigenvalues[1] - 0.25).abs() < 1e-12);
    }
}
