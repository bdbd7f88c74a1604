use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::mix_seed;

/// Sample order for one domain: a fresh seeded shuffle per epoch, drawn in
/// sequence. Draw `k` is a pure function of `(seed, salt, k)`, so a resumed
/// run needs only the iteration counter.
#[derive(Clone, Debug)]
pub struct EpochSampler {
    len: usize,
    seed: u64,
    cached: Option<(u64, Vec<usize>)>,
}

impl EpochSampler {
    pub fn new(len: usize, seed: u64, salt: u64) -> Self {
        EpochSampler { len, seed: mix_seed(seed, salt), cached: None }
    }

    pub fn permutation(&self, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(self.seed, epoch)));
        order
    }

    /// Sample index of the `k`-th draw.
    pub fn draw(&mut self, k: u64) -> usize {
        let (epoch, pos) = (k / self.len as u64, (k % self.len as u64) as usize);
        if self.cached.as_ref().map(|c| c.0) != Some(epoch) {
            self.cached = Some((epoch, self.permutation(epoch)));
        }
        self.cached.as_ref().expect("filled above").1[pos]
    }

    /// Draws `(t − 1)·b .. t·b` for 1-based iteration `t`.
    pub fn batch(&mut self, t: u64, b: usize) -> Vec<usize> {
        let first = (t - 1) * b as u64;
        (first..first + b as u64).map(|k| self.draw(k)).collect()
    }
}
