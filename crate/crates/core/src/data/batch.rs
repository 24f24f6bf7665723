use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::encode::EncodedExample;
use crate::error::{Error, Result};

/// A mini-batch in flat row-major layout: `indices` is `B × fields`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub indices: Vec<u32>,
    pub fields: usize,
    pub labels: Vec<f64>,
}

impl Batch {
    pub fn from_examples<'a>(examples: impl IntoIterator<Item = &'a EncodedExample>) -> Result<Self> {
        let mut indices = Vec::new();
        let mut labels = Vec::new();
        let mut fields = None;
        for ex in examples {
            match fields {
                None => fields = Some(ex.indices.len()),
                Some(m) if m != ex.indices.len() => {
                    return Err(Error::dimension("batch", &[m], &[ex.indices.len()]));
                }
                _ => {}
            }
            indices.extend_from_slice(&ex.indices);
            labels.push(ex.label);
        }
        let fields = fields.ok_or_else(|| Error::Iteration("cannot build an empty batch".into()))?;
        Ok(Batch { indices, fields, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn example_indices(&self, b: usize) -> &[u32] {
        &self.indices[b * self.fields..(b + 1) * self.fields]
    }
}

/// Seeded mini-batch stream over one split.
///
/// Non-cyclic iterators make one shuffled pass (the last batch may be
/// short). Cyclic iterators reshuffle at every epoch boundary and never end;
/// every batch is full, wrapping across epochs.
#[derive(Debug, Clone)]
pub struct BatchIterator<'a> {
    examples: &'a [EncodedExample],
    batch_size: usize,
    cyclic: bool,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
}

impl<'a> BatchIterator<'a> {
    pub fn new(examples: &'a [EncodedExample], batch_size: usize, seed: u64, cyclic: bool) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Iteration("cannot iterate over an empty split".into()));
        }
        if batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut rng);
        Ok(BatchIterator {
            examples,
            batch_size,
            cyclic,
            rng,
            order,
            pos: 0,
        })
    }

    /// Sequential, unshuffled single pass (for evaluation).
    pub fn sequential(examples: &'a [EncodedExample], batch_size: usize) -> Result<Self> {
        let mut it = Self::new(examples, batch_size, 0, false)?;
        it.order = (0..examples.len()).collect();
        Ok(it)
    }
}

impl Iterator for BatchIterator<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let mut picked = Vec::with_capacity(self.batch_size);
        while picked.len() < self.batch_size {
            if self.pos == self.order.len() {
                if !self.cyclic {
                    break;
                }
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            picked.push(&self.examples[self.order[self.pos]]);
            self.pos += 1;
        }
        if picked.is_empty() {
            return None;
        }
        Some(Batch::from_examples(picked).expect("split examples share a field count"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn examples(n: usize) -> Vec<EncodedExample> {
        (0..n)
            .map(|i| EncodedExample {
                indices: vec![i as u32, 0],
                label: 0.0,
            })
            .collect()
    }

    #[test]
    fn one_epoch_with_short_tail() {
        let ex = examples(100);
        let sizes: Vec<usize> = BatchIterator::new(&ex, 30, 1, false).unwrap().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![30, 30, 30, 10]);
    }

    #[test]
    fn epoch_covers_every_example_once() {
        let ex = examples(100);
        let mut seen: Vec<u32> = BatchIterator::new(&ex, 7, 3, false)
            .unwrap()
            .flat_map(|b| (0..b.len()).map(move |i| b.example_indices(i)[0]).collect::<Vec<_>>())
            .collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..100).collect::<Vec<u32>>());
    }

    #[test]
    fn cyclic_iterator_wraps_with_full_batches() {
        let ex = examples(100);
        let batches: Vec<Batch> = BatchIterator::new(&ex, 30, 1, true).unwrap().take(10).collect();
        assert_eq!(batches.len(), 10);
        assert!(batches.iter().all(|b| b.len() == 30));
    }

    #[test]
    fn fixed_seed_fixes_order() {
        let ex = examples(64);
        let a: Vec<Batch> = BatchIterator::new(&ex, 10, 5, true).unwrap().take(20).collect();
        let b: Vec<Batch> = BatchIterator::new(&ex, 10, 5, true).unwrap().take(20).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_split_or_zero_batch_is_an_error() {
        assert!(matches!(BatchIterator::new(&[], 4, 0, false), Err(Error::Iteration(_))));
        let ex = examples(3);
        assert!(BatchIterator::new(&ex, 0, 0, false).is_err());
    }
}
