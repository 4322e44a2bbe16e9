use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::records::{Dataset, Split};
use crate::error::{Error, Result};

/// Split sizes for `n` items: train and val are rounded, test takes the rest.
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let train = ((ratios[0] * n as f64).round() as usize).min(n);
    let val = ((ratios[1] * n as f64).round() as usize).min(n - train);
    Ok([train, val, n - train - val])
}

/// Assigns every review to train/val/test by a seeded shuffle.
/// Users and movies are shared by all splits.
pub fn split_dataset(ds: &Dataset, ratios: [f64; 3], seed: u64) -> Result<Dataset> {
    let n = ds.reviews.len();
    let [train, val, _] = split_sizes(n, ratios)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut splits = vec![Split::Test; n];
    for (pos, &r) in order.iter().enumerate() {
        splits[r] = if pos < train {
            Split::Train
        } else if pos < train + val {
            Split::Val
        } else {
            Split::Test
        };
    }
    let mut out = ds.clone();
    out.set_splits(&splits);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::records::{MovieRecord, ReviewRecord, UserRecord};

    fn ds(n: usize) -> Dataset {
        let users = vec![UserRecord {
            user_id: "u".into(),
            metadata: Default::default(),
            description_text: None,
            review_ids: vec![],
        }];
        let movies = vec![MovieRecord {
            movie_id: "m".into(),
            metadata: Default::default(),
            synopsis_text: String::new(),
            genre: None,
        }];
        let reviews = (0..n)
            .map(|i| ReviewRecord {
                review_id: format!("r{i}"),
                user_id: "u".into(),
                movie_id: "m".into(),
                metadata: Default::default(),
                text: String::new(),
                label: (i % 2) as u8,
                split: None,
            })
            .collect();
        Dataset::new(users, movies, reviews).unwrap()
    }

    #[test]
    fn all_train() {
        let d = split_dataset(&ds(17), [1.0, 0.0, 0.0], 3).unwrap();
        assert_eq!(d.split_indices(Split::Train).len(), 17);
    }

    #[test]
    fn exact_counts_and_determinism() {
        let base = ds(1000);
        let a = split_dataset(&base, [0.8, 0.1, 0.1], 42).unwrap();
        let counts: Vec<usize> = [Split::Train, Split::Val, Split::Test]
            .iter()
            .map(|&s| a.split_indices(s).len())
            .collect();
        assert_eq!(counts, [800, 100, 100]);
        let b = split_dataset(&base, [0.8, 0.1, 0.1], 42).unwrap();
        assert_eq!(a.split_indices(Split::Val), b.split_indices(Split::Val));
    }

    #[test]
    fn ratios_must_sum_to_one() {
        assert!(split_dataset(&ds(3), [0.5, 0.1, 0.1], 0).unwrap_err().is_config());
    }
}
