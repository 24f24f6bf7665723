use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::encode::EncodedExample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplits {
    pub train: Vec<EncodedExample>,
    pub validation: Vec<EncodedExample>,
    pub test: Vec<EncodedExample>,
    pub seed: u64,
}

/// Shuffled (not stratified) train/validation/test split. Validation and test
/// get `floor(n·ratio)` examples; the remainder goes to train.
pub fn split_dataset(examples: Vec<EncodedExample>, ratios: (f64, f64, f64), seed: u64) -> Result<DatasetSplits> {
    let (tr, va, te) = ratios;
    if [tr, va, te].iter().any(|r| !r.is_finite() || *r <= 0.0) {
        return Err(Error::Split(format!("ratios must be positive, got {ratios:?}")));
    }
    if (tr + va + te - 1.0).abs() > 1e-9 {
        return Err(Error::Split(format!("ratios must sum to 1, got {}", tr + va + te)));
    }
    let n = examples.len();
    if n < 3 {
        return Err(Error::Split(format!("need at least 3 examples to split, got {n}")));
    }
    let n_val = (n as f64 * va).floor() as usize;
    let n_test = (n as f64 * te).floor() as usize;
    if n_val == 0 || n_test == 0 {
        return Err(Error::Split(format!(
            "ratios {ratios:?} leave an empty validation or test split for {n} examples"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut slots: Vec<Option<EncodedExample>> = examples.into_iter().map(Some).collect();
    let mut take = |range: &[usize]| -> Vec<EncodedExample> {
        range.iter().map(|&i| slots[i].take().expect("each index taken once")).collect()
    };
    let validation = take(&order[..n_val]);
    let test = take(&order[n_val..n_val + n_test]);
    let train = take(&order[n_val + n_test..]);
    Ok(DatasetSplits {
        train,
        validation,
        test,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn examples(n: usize) -> Vec<EncodedExample> {
        (0..n)
            .map(|i| EncodedExample {
                indices: vec![i as u32],
                label: (i % 3 == 0) as u8 as f64,
            })
            .collect()
    }

    fn ids(v: &[EncodedExample]) -> Vec<u32> {
        v.iter().map(|e| e.indices[0]).collect()
    }

    #[test]
    fn sizes_follow_floor_allocation() {
        let s = split_dataset(examples(100), (0.8, 0.1, 0.1), 1).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (80, 10, 10));
        let s = split_dataset(examples(105), (0.8, 0.1, 0.1), 1).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (85, 10, 10));
    }

    #[test]
    fn same_seed_same_membership() {
        let a = split_dataset(examples(50), (0.6, 0.2, 0.2), 9).unwrap();
        let b = split_dataset(examples(50), (0.6, 0.2, 0.2), 9).unwrap();
        assert_eq!(a, b);
        let c = split_dataset(examples(50), (0.6, 0.2, 0.2), 10).unwrap();
        assert_ne!(ids(&a.train), ids(&c.train));
    }

    #[test]
    fn splits_partition_the_input() {
        let s = split_dataset(examples(77), (0.7, 0.15, 0.15), 4).unwrap();
        let mut all: Vec<u32> = [ids(&s.train), ids(&s.validation), ids(&s.test)].concat();
        all.sort_unstable();
        assert_eq!(all, (0..77).collect::<Vec<u32>>());
    }

    #[test]
    fn class_frequencies_track_global_frequency() {
        // Every split holds at least 1000 examples.
        let s = split_dataset(examples(12_000), (0.8, 0.1, 0.1), 2).unwrap();
        let global = 4000.0 / 12_000.0;
        for part in [&s.train, &s.validation, &s.test] {
            let freq = part.iter().filter(|e| e.label == 1.0).count() as f64 / part.len() as f64;
            assert!((freq - global).abs() < 0.05, "{freq}");
        }
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert!(split_dataset(examples(2), (0.8, 0.1, 0.1), 0).is_err());
        assert!(split_dataset(examples(100), (0.8, 0.1, 0.2), 0).is_err());
        assert!(split_dataset(examples(100), (1.0, 0.0, 0.0), 0).is_err());
    }
}
