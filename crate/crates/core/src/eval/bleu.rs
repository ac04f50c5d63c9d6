use std::collections::HashMap;

use crate::corpus::Sentence;
use crate::error::{Error, Result};

/// Clipped n-gram match statistics summed over a corpus.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BleuStats {
    /// `matches[n-1]` clipped matches of order `n`.
    pub matches: Vec<usize>,
    /// `totals[n-1]` candidate n-grams of order `n`.
    pub totals: Vec<usize>,
    pub candidate_len: usize,
    pub reference_len: usize,
}

impl BleuStats {
    pub fn precision(&self, n: usize) -> Option<f64> {
        let t = self.totals[n - 1];
        (t > 0).then(|| self.matches[n - 1] as f64 / t as f64)
    }

    pub fn brevity_penalty(&self) -> f64 {
        if self.candidate_len == 0 {
            return 0.0;
        }
        (1.0 - self.reference_len as f64 / self.candidate_len as f64).min(0.0).exp()
    }

    /// Geometric mean of the defined precisions times the brevity penalty.
    /// Orders with no candidate n-grams are left out of the mean.
    pub fn score(&self) -> f64 {
        let defined: Vec<f64> = (1..=self.matches.len()).filter_map(|n| self.precision(n)).collect();
        if defined.is_empty() || defined.contains(&0.0) {
            return 0.0;
        }
        let log_mean = defined.iter().map(|p| p.ln()).sum::<f64>() / defined.len() as f64;
        self.brevity_penalty() * log_mean.exp()
    }
}

fn ngram_counts(ids: &[u32], n: usize) -> HashMap<&[u32], usize> {
    let mut m = HashMap::new();
    if ids.len() >= n {
        for w in ids.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

pub fn bleu_stats(candidates: &[Sentence], references: &[Sentence], max_n: usize) -> Result<BleuStats> {
    if candidates.len() != references.len() {
        return Err(Error::Invalid(format!(
            "{} candidates for {} references",
            candidates.len(),
            references.len()
        )));
    }
    if candidates.is_empty() {
        return Err(Error::Invalid("BLEU over an empty corpus".into()));
    }
    if max_n == 0 {
        return Err(Error::Invalid("BLEU needs max_n ≥ 1".into()));
    }
    let mut stats = BleuStats {
        matches: vec![0; max_n],
        totals: vec![0; max_n],
        ..BleuStats::default()
    };
    for (c, r) in candidates.iter().zip(references) {
        stats.candidate_len += c.len();
        stats.reference_len += r.len();
        for n in 1..=max_n {
            let cand = ngram_counts(c.ids(), n);
            let refs = ngram_counts(r.ids(), n);
            stats.totals[n - 1] += c.len().saturating_sub(n - 1);
            stats.matches[n - 1] += cand
                .iter()
                .map(|(g, &k)| k.min(refs.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
        }
    }
    Ok(stats)
}

/// Corpus-level BLEU with one reference per candidate, in `[0, 1]`.
pub fn bleu(candidates: &[Sentence], references: &[Sentence], max_n: usize) -> Result<f64> {
    Ok(bleu_stats(candidates, references, max_n)?.score())
}
