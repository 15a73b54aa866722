//! Seeded next-token data with a planted bigram rule.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ssm::LossSpec;

use super::config::LossKind;

/// Probability that the next token follows the planted rule.
pub const RULE_PROBABILITY: f64 = 0.9;

/// Fixed token embeddings plus a generator of token streams in which
/// `next = (3·cur + 1) mod V` most of the time.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub embedding: Vec<Vec<f64>>,
    rng: ChaCha8Rng,
}

/// One training sequence: `T` input vectors and the loss over the `T`
/// following tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub ids: Vec<usize>,
    pub tokens: Vec<Vec<f64>>,
    pub loss: LossSpec,
}

pub fn planted_successor(cur: usize, v: usize) -> usize {
    (3 * cur + 1) % v
}

impl SyntheticTask {
    pub fn new(v: usize, p: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_da7a);
        let embedding = (0..v).map(|_| (0..p).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        SyntheticTask { embedding, rng }
    }

    pub fn vocab(&self) -> usize {
        self.embedding.len()
    }

    pub fn sample(&mut self, t: usize, loss: LossKind) -> Sample {
        let v = self.vocab();
        let mut ids = Vec::with_capacity(t + 1);
        ids.push(self.rng.random_range(0..v));
        for i in 0..t {
            let next = if self.rng.random_bool(RULE_PROBABILITY) {
                planted_successor(ids[i], v)
            } else {
                self.rng.random_range(0..v)
            };
            ids.push(next);
        }
        let tokens = ids[..t].iter().map(|&id| self.embedding[id].clone()).collect();
        let targets = &ids[1..];
        let loss = match loss {
            LossKind::CrossEntropy => LossSpec::CrossEntropy(targets.to_vec()),
            LossKind::Mse => LossSpec::Mse(
                targets
                    .iter()
                    .map(|&id| (0..v).map(|j| if j == id { 1.0 } else { 0.0 }).collect())
                    .collect(),
            ),
        };
        Sample { ids, tokens, loss }
    }

    pub fn batch(&mut self, bs: usize, t: usize, loss: LossKind) -> Vec<Sample> {
        (0..bs).map(|_| self.sample(t, loss)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = SyntheticTask::new(8, 4, 3);
        let mut b = SyntheticTask::new(8, 4, 3);
        assert_eq!(a.batch(2, 10, LossKind::CrossEntropy), b.batch(2, 10, LossKind::CrossEntropy));
    }

    #[test]
    fn rule_dominates() {
        let mut task = SyntheticTask::new(8, 4, 1);
        let s = task.sample(2000, LossKind::CrossEntropy);
        let hits = s.ids.windows(2).filter(|w| w[1] == planted_successor(w[0], 8)).count();
        let rate = hits as f64 / 2000.0;
        assert!(rate > 0.85 && rate < 0.95, "{rate}");
        assert_eq!(s.tokens[5], task.embedding[s.ids[5]]);
    }
}
