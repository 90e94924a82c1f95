//! Deterministic k-fold subject splits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// One cross-validation split over item indices `0..n_items`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Fold sizes for `n` items over `k` folds.
///
/// When `n` splits evenly every fold gets `n/k`. Otherwise the first `k-1`
/// folds alternate between `ceil(n/k)` and `floor(n/k)` and the final fold
/// absorbs whatever remains, spreading the imbalance instead of piling every
/// extra item onto the leading folds. Degenerate cases where that would
/// starve the last fold fall back to the plain remainder split.
fn fold_sizes(n: usize, k: usize) -> Vec<usize> {
    let (base, rem) = (n / k, n % k);
    let mut sizes = vec![base; k];
    if rem == 0 {
        return sizes;
    }
    for (i, s) in sizes.iter_mut().take(k - 1).enumerate() {
        if i % 2 == 0 {
            *s = base + 1;
        }
    }
    let assigned: usize = sizes[..k - 1].iter().sum();
    if assigned < n {
        sizes[k - 1] = n - assigned;
    } else {
        for (i, s) in sizes.iter_mut().enumerate() {
            *s = base + usize::from(i < rem);
        }
    }
    sizes
}

/// Splits `0..n_items` into `k` folds.
///
/// Item ids are shuffled once with a seeded generator and dealt into
/// consecutive slices sized by [`fold_sizes`], so the folds partition the id
/// set. For each fold, that slice is the test set, the next `holdout`
/// shuffled ids outside it form the validation set, and everything else
/// trains. Identical inputs always yield identical splits.
pub fn split_folds(n_items: usize, k: usize, seed: u64, holdout: usize) -> Result<Vec<FoldSplit>> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    if n_items < k {
        return Err(Error::Config(format!(
            "cannot split {n_items} items into {k} non-empty folds"
        )));
    }
    let sizes = fold_sizes(n_items, k);
    let largest = *sizes.iter().max().expect("k >= 2");
    if holdout + largest > n_items {
        return Err(Error::Config(format!(
            "holdout {holdout} plus largest test fold {largest} exceeds {n_items} items"
        )));
    }

    let mut ids: Vec<usize> = (0..n_items).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);

    let mut folds = Vec::with_capacity(k);
    let mut lo = 0;
    for &size in &sizes {
        let hi = lo + size;
        let mut test: Vec<usize> = ids[lo..hi].to_vec();
        let mut rest: Vec<usize> = ids[..lo].iter().chain(&ids[hi..]).copied().collect();
        let mut validation: Vec<usize> = rest.drain(..holdout).collect();
        let mut train = rest;
        test.sort_unstable();
        validation.sort_unstable();
        train.sort_unstable();
        folds.push(FoldSplit {
            train,
            validation,
            test,
        });
        lo = hi;
    }
    Ok(folds)
}
