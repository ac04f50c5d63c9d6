//! Shared fixtures for the criterion benches.

use dgst_core::{RngState, Sentence, Transferrer, TransferrerDims};

/// Token ids start after the four specials.
pub fn random_batch(rng: &mut RngState, n: usize, len: usize, vocab: usize) -> Vec<Sentence> {
    (0..n)
        .map(|_| Sentence((0..len).map(|_| 4 + rng.below(vocab - 4) as u32).collect()))
        .collect()
}

pub fn transferrer(vocab: usize, embed: usize, hidden: usize, layers: usize) -> Transferrer {
    let dims = TransferrerDims {
        vocab,
        embed,
        hidden,
        layers,
    };
    Transferrer::new("f.", dims, &mut RngState::new(1)).expect("valid bench dims")
}
