use serde::Serialize;

use super::{HeadsError, Result};
use crate::rng::CounterRng;

pub const DEFAULT_RATIOS: [f64; 3] = [0.6, 0.2, 0.2];

/// Seeded train/validation/test partition of `0..n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitPlan {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }
}

/// Shuffles `0..n` with `seed`, then cuts contiguous blocks of
/// `round(n·train)` and `round(n·val)`; the remainder is the test set.
pub fn make_split(n: usize, ratios: [f64; 3], seed: u64) -> Result<SplitPlan> {
    if n < 5 {
        return Err(HeadsError::TooFewSamples { need: 5, have: n });
    }
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (sum - 1.0).abs() > 1e-9 {
        return Err(HeadsError::InvalidRatios);
    }
    let n_train = (n as f64 * ratios[0]).round() as usize;
    let n_val = ((n as f64 * ratios[1]).round() as usize).min(n - n_train);
    let order = CounterRng::new(seed).permutation(n);
    Ok(SplitPlan {
        seed,
        ratios,
        train: order[..n_train].to_vec(),
        val: order[n_train..n_train + n_val].to_vec(),
        test: order[n_train + n_val..].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sizes_and_determinism() {
        let a = make_split(10, DEFAULT_RATIOS, 3).unwrap();
        assert_eq!(a.sizes(), (6, 2, 2));
        assert_eq!(a, make_split(10, DEFAULT_RATIOS, 3).unwrap());
        let mut all: Vec<usize> = a.train.iter().chain(&a.val).chain(&a.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(make_split(400, [0.5, 0.25, 0.25], 0).unwrap().sizes(), (200, 100, 100));
        assert!(make_split(4, DEFAULT_RATIOS, 0).is_err());
    }

    #[test]
    fn train_frequency_near_ratio() {
        let mut counts = [0usize; 20];
        for seed in 0..100 {
            for &i in &make_split(20, DEFAULT_RATIOS, seed).unwrap().train {
                counts[i] += 1;
            }
        }
        assert!(counts.iter().all(|&c| (50..=70).contains(&c)), "{counts:?}");
    }
}
