use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::DatasetError;

/// Shuffles `items` by `seed` and cuts them into train/val/test parts sized
/// by `ratios` (rounded; test takes the remainder).
pub fn split<T: Clone>(
    items: &[T],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<T>, Vec<T>, Vec<T>), DatasetError> {
    let (a, b, c) = ratios;
    if [a, b, c].iter().any(|r| !(r.is_finite() && *r > 0.0)) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(DatasetError::Config(format!(
            "split ratios ({a}, {b}, {c}) must be positive and sum to 1"
        )));
    }
    let n = items.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64 * a).round() as usize).min(n);
    let n_val = ((n as f64 * b).round() as usize).min(n - n_train);
    let take = |r: &[usize]| r.iter().map(|&i| items[i].clone()).collect::<Vec<_>>();
    Ok((
        take(&idx[..n_train]),
        take(&idx[n_train..n_train + n_val]),
        take(&idx[n_train + n_val..]),
    ))
}

/// Shuffles `items` by `seed` and holds out `round(n * fraction)` of them.
/// Returns `(kept, held_out)`.
pub fn holdout<T: Clone>(items: &[T], fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>), DatasetError> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(DatasetError::Config(format!("holdout fraction {fraction} must be in [0, 1)")));
    }
    let n = items.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held = ((n as f64 * fraction).round() as usize).min(n);
    let take = |r: &[usize]| r.iter().map(|&i| items[i].clone()).collect::<Vec<_>>();
    Ok((take(&idx[held..]), take(&idx[..held])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sizes_follow_ratios() {
        let items: Vec<u32> = (0..1000).collect();
        let (tr, va, te) = split(&items, (0.8, 0.1, 0.1), 4).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (800, 100, 100));
        let items: Vec<u32> = (0..20000).collect();
        let (tr, va, te) = split(&items, (0.9, 0.05, 0.05), 4).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (18000, 1000, 1000));
    }

    #[test]
    fn same_seed_same_split() {
        let items: Vec<u32> = (0..500).collect();
        assert_eq!(split(&items, (0.6, 0.2, 0.2), 1).unwrap(), split(&items, (0.6, 0.2, 0.2), 1).unwrap());
        assert_ne!(split(&items, (0.6, 0.2, 0.2), 1).unwrap(), split(&items, (0.6, 0.2, 0.2), 2).unwrap());
    }

    #[test]
    fn bad_ratios() {
        let items = [1, 2, 3];
        assert!(split(&items, (0.5, 0.5, 0.5), 0).is_err());
        assert!(split(&items, (1.0, 0.0, 0.0), 0).is_err());
        assert!(split(&items, (f64::NAN, 0.5, 0.5), 0).is_err());
    }

    #[test]
    fn holdout_sizes() {
        let items: Vec<u32> = (0..100).collect();
        let (kept, held) = holdout(&items, 0.1, 3).unwrap();
        assert_eq!((kept.len(), held.len()), (90, 10));
        assert!(held.iter().all(|h| !kept.contains(h)));
        assert_eq!(holdout(&items, 0.0, 3).unwrap().1.len(), 0);
        assert!(holdout(&items, 1.0, 3).is_err());
    }

    proptest! {
        #[test]
        fn disjoint_and_exhaustive(n in 0usize..300, a in 1u32..10, b in 1u32..10, c in 1u32..10, seed: u64) {
            let total = (a + b + c) as f64;
            let items: Vec<usize> = (0..n).collect();
            let (tr, va, te) = split(&items, (a as f64 / total, b as f64 / total, c as f64 / total), seed).unwrap();
            let mut all: Vec<usize> = tr.iter().chain(&va).chain(&te).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, items);
        }
    }
}
