//! Index streams over a fixed set: shuffled epochs, reshuffled on exhaustion.

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::rng::{derive_seed, stream_rng, Stream};

#[derive(Debug, Clone)]
pub struct EpochSampler {
    len: usize,
    seed: u64,
    stream: Stream,
    cached: Option<(u64, Vec<usize>)>,
}

impl EpochSampler {
    pub fn new(len: usize, seed: u64, stream: Stream) -> Self {
        Self { len, seed, stream, cached: None }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Whether a batch of `size` has to be drawn with replacement.
    pub fn undersized(&self, size: usize) -> bool {
        self.len > 0 && self.len < size
    }

    fn permutation(&mut self, epoch: u64) -> &[usize] {
        if self.cached.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut idx: Vec<usize> = (0..self.len).collect();
            idx.shuffle(&mut stream_rng(self.seed, self.stream, epoch));
            self.cached = Some((epoch, idx));
        }
        &self.cached.as_ref().expect("just filled").1
    }

    /// Indices for one batch. A pure function of `(seed, stream, iteration, size)`.
    pub fn draw(&mut self, iteration: usize, size: usize) -> Vec<usize> {
        if self.len == 0 || size == 0 {
            return Vec::new();
        }
        if self.undersized(size) {
            let mut rng = stream_rng(derive_seed(self.seed, self.stream, u64::MAX), self.stream, iteration as u64);
            return (0..size).map(|_| rng.gen_range(0..self.len)).collect();
        }
        let start = iteration as u64 * size as u64;
        let len = self.len as u64;
        (0..size as u64)
            .map(|j| {
                let pos = start + j;
                self.permutation(pos / len)[(pos % len) as usize]
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn each_epoch_covers_every_index_once() {
        let mut s = EpochSampler::new(10, 3, Stream::LabeledSampler);
        let mut seen: Vec<usize> = (0..5).flat_map(|i| s.draw(i, 2)).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn draws_are_replayable_out_of_order() {
        let mut a = EpochSampler::new(7, 1, Stream::PositiveSampler);
        let mut b = EpochSampler::new(7, 1, Stream::PositiveSampler);
        let fwd: Vec<Vec<usize>> = (0..6).map(|i| a.draw(i, 3)).collect();
        let back: Vec<Vec<usize>> = (0..6).rev().map(|i| b.draw(i, 3)).collect();
        assert_eq!(fwd, back.into_iter().rev().collect::<Vec<_>>());
    }

    #[test]
    fn undersized_sets_sample_with_replacement() {
        let mut s = EpochSampler::new(3, 0, Stream::NegativeSampler);
        assert!(s.undersized(8));
        let batch = s.draw(0, 8);
        assert_eq!(batch.len(), 8);
        assert!(batch.iter().all(|&i| i < 3));
        assert!(EpochSampler::new(0, 0, Stream::NegativeSampler).draw(0, 4).is_empty());
    }
}
