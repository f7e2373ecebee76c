//! Mean pairwise feature distance within a set.

use crate::error::{Error, Result};
use crate::rngx::Rng;

#[derive(Clone, Copy, Debug)]
pub enum DiversityPairs {
    /// Exhaustive mean over all unordered pairs.
    All,
    /// Seeded random pairs (distinct indices per pair); counts at or above
    /// the total pair count fall back to the exhaustive mean.
    Sampled(usize),
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn diversity(features: &[Vec<f64>], pairs: DiversityPairs, seed: u64) -> Result<f64> {
    let n = features.len();
    if n < 2 {
        return Err(Error::Invalid(format!(
            "diversity needs at least 2 feature vectors, got {n}"
        )));
    }
    let total_pairs = n * (n - 1) / 2;
    let sampled = match pairs {
        DiversityPairs::All => None,
        DiversityPairs::Sampled(k) if k >= total_pairs => None,
        DiversityPairs::Sampled(k) => Some(k),
    };
    match sampled {
        None => {
            let mut acc = 0.0f64;
            for i in 0..n {
                for j in i + 1..n {
                    acc += euclid(&features[i], &features[j]);
                }
            }
            Ok(acc / total_pairs as f64)
        }
        Some(k) => {
            let mut rng = Rng::derive(seed, "diversity");
            let mut acc = 0.0f64;
            for _ in 0..k {
                let i = rng.below(n);
                let mut j = rng.below(n - 1);
                if j >= i {
                    j += 1;
                }
                acc += euclid(&features[i], &features[j]);
            }
            Ok(acc / k as f64)
        }
    }
}
