use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Result, TbmError};

/// Permutation p-value `(1 + #{T_perm >= T_obs}) / (trials + 1)`.
///
/// `values` (a covariate or a label vector) is shuffled uniformly once per
/// trial. Trial `t` draws from stream `t` of a ChaCha generator seeded with
/// `seed`, so the result does not depend on the thread count. Returns the
/// observed statistic and the p-value.
pub fn permutation_test<T, F>(values: &[T], statistic: F, trials: usize, seed: u64) -> Result<(f64, f64)>
where
    T: Clone + Send + Sync,
    F: Fn(&[T]) -> f64 + Sync,
{
    if trials == 0 {
        return Err(TbmError::InvalidConfig("permutation test needs at least one trial".into()));
    }
    let observed = statistic(values);
    let exceed = (0..trials)
        .into_par_iter()
        .filter(|&t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let mut p = values.to_vec();
            p.shuffle(&mut rng);
            statistic(&p) >= observed
        })
        .count();
    Ok((observed, (1 + exceed) as f64 / (trials + 1) as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ordered_pairs(v: &[f64]) -> f64 {
        v.windows(2).filter(|w| w[1] > w[0]).count() as f64
    }

    #[test]
    fn extreme_statistic_gets_the_floor() {
        let v: Vec<f64> = (0..40).map(f64::from).collect();
        let (obs, p) = permutation_test(&v, ordered_pairs, 1000, 3).unwrap();
        assert_eq!(obs, 39.0);
        assert!((p - 1.0 / 1001.0).abs() < 1e-15);
    }

    #[test]
    fn constant_statistic_gives_one() {
        let v = vec![1.0, 2.0, 3.0];
        let (_, p) = permutation_test(&v, |_| 0.5, 50, 0).unwrap();
        assert_eq!(p, 1.0);
    }

    #[test]
    fn deterministic_under_seed() {
        let v: Vec<f64> = (0..12).map(|i| ((i * 7) % 5) as f64).collect();
        let a = permutation_test(&v, ordered_pairs, 200, 11).unwrap();
        let b = permutation_test(&v, ordered_pairs, 200, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_trials_rejected() {
        assert!(permutation_test(&[1.0], |_| 0.0, 0, 0).is_err());
    }
}
