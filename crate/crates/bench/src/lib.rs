//! Fixtures shared by the criterion benches.

use fullstream_core::corpus::SyntheticCorpus;
use fullstream_core::engine::TextChunk;
use fullstream_core::{DurationDistribution, JointLogits, DURATION_BINS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random joint logits over `n_vocab` semantic tokens.
pub fn random_joint(n_vocab: usize, seed: u64) -> JointLogits {
    let mut r = rng(seed);
    let flat = (0..DURATION_BINS * n_vocab).map(|_| r.gen_range(-8.0..8.0)).collect();
    JointLogits::from_flat(DURATION_BINS, n_vocab, flat).expect("well-formed logits")
}

pub fn random_distribution(seed: u64) -> DurationDistribution {
    let mut r = rng(seed);
    let w: Vec<f64> = (0..DURATION_BINS).map(|_| r.gen_range(0.05..1.0)).collect();
    DurationDistribution::from_weights(&w).expect("positive weights")
}

/// Synthetic words as pre-phonemized chunks.
pub fn corpus(syllables: usize, seed: u64) -> Vec<TextChunk> {
    SyntheticCorpus::new(syllables, seed).words().into_iter().map(TextChunk::phonemes).collect()
}
