use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Identifies one reproducible random stream: ChaCha8 keyed by `seed`,
/// positioned on stream `stream`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeededRng {
    pub seed: u64,
    pub stream: u64,
}

impl SeededRng {
    pub const ALGORITHM: &'static str = "chacha8";

    pub fn new(seed: u64, stream: u64) -> Self {
        SeededRng { seed, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        stream_rng(self.seed, self.stream)
    }
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Folds an epoch and an item index into one stream id.
pub fn epoch_stream(epoch: usize, index: usize) -> u64 {
    ((epoch as u64) << 32) | index as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_seed_and_stream_repeat() {
        let a: Vec<u64> = SeededRng::new(5, 3).rng().random_iter().take(8).collect();
        let b: Vec<u64> = SeededRng::new(5, 3).rng().random_iter().take(8).collect();
        let c: Vec<u64> = SeededRng::new(5, 4).rng().random_iter().take(8).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
