//! Word-level edit operations, edit distance, and neighbourhood sampling.
//!
//! A noisified sentence is drawn from the neighbourhood of `s` by sampling
//! an edit fraction `m` from a half-normal law whose mean is the noise
//! intensity `gamma`, then applying `round(m · len(s))` random edits.

use rand_distr::{Distribution, StandardNormal};

use crate::corpus::{Sentence, Vocab, NUM_SPECIALS};
use crate::error::{Error, Result};
use crate::rng::RngState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EditKind {
    Replace,
    Insert,
    Delete,
}

/// Noise intensity and the enabled edit kinds.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSpec {
    pub gamma: f64,
    pub ops: Vec<EditKind>,
}

impl NoiseSpec {
    pub fn new(gamma: f64) -> Self {
        NoiseSpec {
            gamma,
            ops: vec![EditKind::Replace, EditKind::Insert, EditKind::Delete],
        }
    }

    pub fn with_ops(gamma: f64, ops: &[EditKind]) -> Result<Self> {
        let spec = NoiseSpec {
            gamma,
            ops: ops.to_vec(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be ≥ 0, got {}", self.gamma)));
        }
        if self.ops.is_empty() {
            return Err(Error::Config("at least one edit kind must be enabled".into()));
        }
        Ok(())
    }

    /// Scale of the zero-mean normal whose absolute value has mean `gamma`.
    pub fn sigma(&self) -> f64 {
        self.gamma * (std::f64::consts::PI / 2.0).sqrt()
    }
}

/// Unclamped draw `|z|`, `z ~ N(0, sigma²)`.
pub fn sample_folded(spec: &NoiseSpec, rng: &mut RngState) -> f64 {
    if spec.gamma == 0.0 {
        return 0.0;
    }
    let z: f64 = StandardNormal.sample(rng);
    (z * spec.sigma()).abs()
}

/// Edit fraction `m` in `[0, 1]`.
pub fn sample_edit_fraction(spec: &NoiseSpec, rng: &mut RngState) -> f64 {
    sample_folded(spec, rng).min(1.0)
}

fn random_content_token(vocab: &Vocab, rng: &mut RngState) -> u32 {
    (NUM_SPECIALS + rng.below(vocab.content_len())) as u32
}

/// Applies exactly `k` random edits in sequence.
pub fn apply_edits(
    s: &Sentence,
    k: usize,
    spec: &NoiseSpec,
    vocab: &Vocab,
    rng: &mut RngState,
) -> Result<Sentence> {
    if vocab.content_len() == 0 {
        return Err(Error::Invalid("vocabulary has no non-special tokens".into()));
    }
    if spec.ops.is_empty() {
        return Err(Error::Config("no edit kinds enabled".into()));
    }
    let mut ids = s.0.clone();
    for _ in 0..k {
        let mut kind = spec.ops[rng.below(spec.ops.len())];
        if ids.is_empty() {
            kind = EditKind::Insert;
        }
        match kind {
            EditKind::Replace => {
                let pos = rng.below(ids.len());
                ids[pos] = random_content_token(vocab, rng);
            }
            EditKind::Insert => {
                let pos = rng.below(ids.len() + 1);
                let tok = random_content_token(vocab, rng);
                ids.insert(pos, tok);
            }
            EditKind::Delete => {
                let pos = rng.below(ids.len());
                ids.remove(pos);
            }
        }
    }
    Ok(Sentence(ids))
}

/// Outcome of one neighbourhood draw.
#[derive(Clone, Debug, PartialEq)]
pub struct Noisified {
    pub sentence: Sentence,
    pub fraction: f64,
    pub edits: usize,
}

pub fn edit_count(fraction: f64, len: usize) -> usize {
    (fraction * len as f64).round() as usize
}

/// Applies `round(fraction · len(s))` edits.
pub fn neighbourhood_with_fraction(
    s: &Sentence,
    fraction: f64,
    spec: &NoiseSpec,
    vocab: &Vocab,
    rng: &mut RngState,
) -> Result<Noisified> {
    let edits = edit_count(fraction, s.len());
    let sentence = if edits == 0 {
        s.clone()
    } else {
        apply_edits(s, edits, spec, vocab, rng)?
    };
    Ok(Noisified {
        sentence,
        fraction,
        edits,
    })
}

/// Draws one member of the neighbourhood of `s`, reporting the sampled
/// fraction and edit count.
pub fn neighbourhood_draw(s: &Sentence, spec: &NoiseSpec, vocab: &Vocab, rng: &mut RngState) -> Result<Noisified> {
    if s.is_empty() {
        return Err(Error::Invalid("cannot noisify an empty sentence".into()));
    }
    let m = sample_edit_fraction(spec, rng);
    neighbourhood_with_fraction(s, m, spec, vocab, rng)
}

pub fn neighbourhood_sample(s: &Sentence, spec: &NoiseSpec, vocab: &Vocab, rng: &mut RngState) -> Result<Sentence> {
    Ok(neighbourhood_draw(s, spec, vocab, rng)?.sentence)
}

/// Word-level Levenshtein distance with unit costs.
pub fn edit_distance(a: &[u32], b: &[u32]) -> usize {
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, &x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}
