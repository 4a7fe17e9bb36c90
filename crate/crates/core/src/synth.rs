//! Seeded generators for synthetic priors and test matrices.
//!
//! The evaluation harness and the benchmarks run on synthetic configuration
//! statistics; everything here is deterministic in the seed.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::prior::PriorModel;

/// i.i.d. standard Gaussian matrix.
pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Random n x n orthogonal matrix: Q factor of a Gaussian matrix with the
/// diagonal of R forced non-negative so the draw is unique.
pub fn random_orthogonal(n: usize, seed: u64) -> DMatrix<f64> {
    let qr = gaussian_matrix(n, n, seed).qr();
    let mut q = qr.q();
    let r = qr.r();
    for i in 0..n {
        if r[(i, i)] < 0.0 {
            for k in 0..n {
                q[(k, i)] = -q[(k, i)];
            }
        }
    }
    q
}

/// SPD matrix with the given eigenvalues in a random orthogonal basis.
pub fn spd_with_spectrum(spectrum: &[f64], seed: u64) -> DMatrix<f64> {
    let n = spectrum.len();
    let q = random_orthogonal(n, seed);
    let d = DMatrix::from_diagonal(&DVector::from_row_slice(spectrum));
    let m = &q * d * q.transpose();
    (&m + m.transpose()) * 0.5
}

/// Random SPD matrix with eigenvalues drawn uniformly from `[0.5, 3]`.
pub fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let spectrum: Vec<f64> = (0..n).map(|_| 0.5 + 2.5 * rng.random::<f64>()).collect();
    spd_with_spectrum(&spectrum, seed)
}

/// Zero-mean prior over a random SPD covariance.
pub fn random_prior(n: usize, seed: u64) -> PriorModel {
    PriorModel::from_covariance(DVector::zeros(n), random_spd(n, seed))
        .expect("random SPD covariance is a valid prior")
}

/// Geometric spectrum `decay^0, decay^1, ...`; `decay = 0.5` mimics a
/// strongly correlated configuration where a few synergies dominate.
pub fn synergy_spectrum(n: usize, decay: f64) -> Vec<f64> {
    (0..n).map(|i| decay.powi(i as i32)).collect()
}

/// Zero-mean prior with a synergy-like geometric spectrum in a random basis.
pub fn synergy_prior(n: usize, decay: f64, seed: u64) -> PriorModel {
    PriorModel::from_covariance(DVector::zeros(n), spd_with_spectrum(&synergy_spectrum(n, decay), seed))
        .expect("synergy covariance is a valid prior")
}

/// Gaussian m x n matrix, redrawn until comfortably full row rank (a single
/// draw suffices in practice).
pub fn random_full_rank(m: usize, n: usize, seed: u64) -> DMatrix<f64> {
    for attempt in 0..8 {
        let h = gaussian_matrix(m, n, seed.wrapping_add(attempt * 0x5851_f42d));
        let sv = h.clone().singular_values();
        if sv.min() > 1e-6 * sv.max() {
            return h;
        }
    }
    unreachable!("Gaussian matrices are full rank almost surely")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn orthogonal_is_orthogonal_and_deterministic() {
        let q = random_orthogonal(6, 9);
        assert_relative_eq!(&(q.transpose() * &q), &DMatrix::identity(6, 6), epsilon = 1e-12);
        assert_eq!(q, random_orthogonal(6, 9));
    }

    #[test]
    fn spd_spectrum_round_trips() {
        let spec = [4.0, 2.0, 1.0, 0.25];
        let m = spd_with_spectrum(&spec, 3);
        let eig = m.symmetric_eigen().eigenvalues;
        let mut got: Vec<f64> = eig.iter().copied().collect();
        got.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for (g, e) in got.iter().zip(spec.iter()) {
            assert_relative_eq!(g, e, max_relative = 1e-10);
        }
    }

    #[test]
    fn synergy_spectrum_halves() {
        assert_eq!(synergy_spectrum(4, 0.5), vec![1.0, 0.5, 0.25, 0.125]);
    }
}
