//! Per-replication random streams.
//!
//! Replication `r` draws from its own ChaCha stream of the master seed, so
//! results do not depend on how replications are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Relative slack when counting `T* ≥ T`, so that resamples reproducing the
/// observed statistic up to rounding count as ties.
const TIE_RTOL: f64 = 1e-12;

pub fn replication_rng(seed: u64, r: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r as u64 + 1);
    rng
}

/// `#{T* ≥ T}` with ties counted.
pub fn count_exceedances(observed: f64, null: &[f64]) -> usize {
    let threshold = observed - TIE_RTOL * observed.abs();
    null.iter().filter(|&&v| v >= threshold).count()
}

/// `(1 + exceed) / (1 + Δ)`.
pub fn add_one_p_value(exceedances: usize, replications: usize) -> f64 {
    (1 + exceedances) as f64 / (1 + replications) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_independent_of_order() {
        let a: Vec<u64> = (0..4).map(|r| replication_rng(5, r).random()).collect();
        let b: Vec<u64> = (0..4)
            .rev()
            .map(|r| replication_rng(5, r).random())
            .collect();
        assert_eq!(a, b.into_iter().rev().collect::<Vec<_>>());
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn ties_count() {
        assert_eq!(count_exceedances(0.0, &[0.0, 0.0, -0.0]), 3);
        assert_eq!(count_exceedances(2.0, &[1.0, 2.0, 3.0]), 2);
        assert_eq!(count_exceedances(1.0, &[1.0 - 1e-15]), 1);
        assert_eq!(add_one_p_value(0, 1999), 1.0 / 2000.0);
    }
}
