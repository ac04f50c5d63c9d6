//! Linear bag-of-n-grams style classifier in the fastText mould: hashed
//! unigram and bigram embeddings are averaged and fed to a softmax layer.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::{Sentence, Style};
use crate::error::{Error, Result};
use crate::rng::RngState;

const CLASSES: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierConfig {
    pub dim: usize,
    pub buckets: usize,
    pub epochs: usize,
    pub lr: f32,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            dim: 16,
            buckets: 1 << 20,
            epochs: 5,
            lr: 0.1,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Classifier {
    dim: usize,
    buckets: usize,
    embeddings: Vec<f32>,
    /// `[dim × 2]`.
    output: Vec<f32>,
    bias: [f32; CLASSES],
}

fn fnv1a(words: &[u32]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for w in words {
        for b in w.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

impl Classifier {
    /// All-zero model: every input gets probability 0.5 per class.
    pub fn zeros(dim: usize, buckets: usize) -> Result<Classifier> {
        if dim == 0 || buckets == 0 {
            return Err(Error::Config("classifier dim and buckets must be ≥ 1".into()));
        }
        Ok(Classifier {
            dim,
            buckets,
            embeddings: vec![0.0; dim * buckets],
            output: vec![0.0; dim * CLASSES],
            bias: [0.0; CLASSES],
        })
    }

    /// Bucket ids of every unigram and bigram.
    pub fn features(&self, s: &Sentence) -> Vec<usize> {
        let ids = s.ids();
        let mut f: Vec<usize> = ids
            .iter()
            .map(|&w| (fnv1a(&[w]) % self.buckets as u64) as usize)
            .collect();
        f.extend(
            ids.windows(2)
                .map(|w| (fnv1a(&[w[0], w[1], u32::MAX]) % self.buckets as u64) as usize),
        );
        f
    }

    fn hidden(&self, feats: &[usize]) -> Vec<f32> {
        let mut h = vec![0.0; self.dim];
        if feats.is_empty() {
            return h;
        }
        for &f in feats {
            for (h, e) in h.iter_mut().zip(&self.embeddings[f * self.dim..(f + 1) * self.dim]) {
                *h += e;
            }
        }
        let inv = 1.0 / feats.len() as f32;
        h.iter_mut().for_each(|v| *v *= inv);
        h
    }

    fn probs_from_hidden(&self, h: &[f32]) -> [f32; CLASSES] {
        let mut logits = self.bias;
        for (i, &hv) in h.iter().enumerate() {
            for (c, l) in logits.iter_mut().enumerate() {
                *l += hv * self.output[i * CLASSES + c];
            }
        }
        let max = logits[0].max(logits[1]);
        let e = [(logits[0] - max).exp(), (logits[1] - max).exp()];
        let z = e[0] + e[1];
        [e[0] / z, e[1] / z]
    }

    pub fn probabilities(&self, s: &Sentence) -> [f32; CLASSES] {
        self.probs_from_hidden(&self.hidden(&self.features(s)))
    }

    /// Most likely style and its probability.
    pub fn classify(&self, s: &Sentence) -> (Style, f32) {
        let p = self.probabilities(s);
        let label = usize::from(p[1] > p[0]);
        (Style::from_label(label), p[label])
    }

    /// Fraction of `sentences` classified as `style`.
    pub fn rate(&self, sentences: &[Sentence], style: Style) -> f64 {
        if sentences.is_empty() {
            return 0.0;
        }
        let hits = sentences.iter().filter(|s| self.classify(s).0 == style).count();
        hits as f64 / sentences.len() as f64
    }

    /// Accuracy over both labelled sets.
    pub fn accuracy(&self, x: &[Sentence], y: &[Sentence]) -> f64 {
        let n = x.len() + y.len();
        if n == 0 {
            return 0.0;
        }
        (self.rate(x, Style::X) * x.len() as f64 + self.rate(y, Style::Y) * y.len() as f64) / n as f64
    }

    fn sgd_update(&mut self, feats: &[usize], label: usize, lr: f32) {
        let h = self.hidden(feats);
        let p = self.probs_from_hidden(&h);
        let mut grad = p;
        grad[label] -= 1.0;
        let mut dh = vec![0.0; self.dim];
        for (i, d) in dh.iter_mut().enumerate() {
            for (c, g) in grad.iter().enumerate() {
                *d += self.output[i * CLASSES + c] * g;
                self.output[i * CLASSES + c] -= lr * h[i] * g;
            }
        }
        for (b, g) in self.bias.iter_mut().zip(grad) {
            *b -= lr * g;
        }
        if feats.is_empty() {
            return;
        }
        let scale = lr / feats.len() as f32;
        for &f in feats {
            let row = &mut self.embeddings[f * self.dim..(f + 1) * self.dim];
            for (e, d) in row.iter_mut().zip(&dh) {
                *e -= scale * d;
            }
        }
    }
}

/// Trains on the X and Y training sentences with SGD and a linearly
/// decaying learning rate.
pub fn train_classifier(x: &[Sentence], y: &[Sentence], cfg: &ClassifierConfig) -> Result<Classifier> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::Invalid("classifier training needs sentences of both styles".into()));
    }
    let mut model = Classifier::zeros(cfg.dim, cfg.buckets)?;
    let mut rng = RngState::new(cfg.seed);
    let scale = 1.0 / cfg.dim as f32;
    model
        .embeddings
        .iter_mut()
        .for_each(|e| *e = rng.random_range(-scale..=scale));

    let mut examples: Vec<(Vec<usize>, usize)> = x
        .iter()
        .map(|s| (model.features(s), Style::X.label()))
        .chain(y.iter().map(|s| (model.features(s), Style::Y.label())))
        .collect();
    let total = (cfg.epochs * examples.len()).max(1) as f32;
    let mut seen = 0usize;
    for _ in 0..cfg.epochs {
        examples.shuffle(&mut rng);
        for (feats, label) in &examples {
            let lr = cfg.lr * (1.0 - seen as f32 / total);
            model.sgd_update(feats, *label, lr);
            seen += 1;
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ClassifierConfig {
        ClassifierConfig {
            buckets: 1 << 12,
            ..ClassifierConfig::default()
        }
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = Classifier::zeros(4, 16).unwrap();
        let p = m.probabilities(&Sentence(vec![5, 6, 7]));
        assert_eq!(p, [0.5, 0.5]);
    }

    #[test]
    fn disjoint_vocabularies_separate_perfectly() {
        let mut rng = RngState::new(3);
        let mut make = |lo: u32| -> Vec<Sentence> {
            (0..200)
                .map(|_| Sentence((0..6).map(|_| lo + rng.below(20) as u32).collect()))
                .collect()
        };
        let (xt, yt, xd, yd) = (make(4), make(100), make(4), make(100));
        let m = train_classifier(&xt, &yt, &small()).unwrap();
        assert_eq!(m.accuracy(&xd, &yd), 1.0);
        let (style, p) = m.classify(&Sentence(vec![4, 5, 6]));
        assert_eq!(style, Style::X);
        assert!(p > 0.9);
        let q = m.probabilities(&Sentence(vec![101, 4]));
        assert!((q[0] + q[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn single_class_rejected() {
        assert!(train_classifier(&[Sentence(vec![4])], &[], &small()).is_err());
    }

    #[test]
    fn empty_sentence_gets_prior_class() {
        let x: Vec<Sentence> = (0..30).map(|_| Sentence(vec![4, 5])).collect();
        let y: Vec<Sentence> = (0..10).map(|_| Sentence(vec![6, 7])).collect();
        let m = train_classifier(&x, &y, &small()).unwrap();
        let (style, p) = m.classify(&Sentence(vec![]));
        assert_eq!(style, Style::X);
        assert!(p > 0.5);
    }
}
