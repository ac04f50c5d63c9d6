//! Synthetic two-style marker corpus.
//!
//! Each sentence is a random walk over content words with one or two style
//! markers inserted at random positions. Every content word has a fixed,
//! randomly chosen set of `branching` successors shared by both styles. X (`neg`) uses negative markers,
//! Y (`pos`) positive ones, and both share the content words, so a perfect
//! transfer swaps markers and keeps everything else.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::{reference_path, split_path, Split, Style, StyleCorpus, StyleData, Vocab};
use crate::error::{Error, Result};
use crate::rng::RngState;

pub const NEGATIVE_MARKERS: [&str; 3] = ["bad", "awful", "poor"];
pub const POSITIVE_MARKERS: [&str; 3] = ["good", "great", "fine"];

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub content_vocab: usize,
    pub min_content: usize,
    pub max_content: usize,
    /// Successors per content word; `content_vocab` or more gives i.i.d. words.
    pub branching: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_train: 2000,
            n_dev: 200,
            n_test: 500,
            content_vocab: 20,
            min_content: 12,
            max_content: 16,
            branching: 2,
            seed: 7,
        }
    }
}

/// Plain-text splits of one style plus references into the other style.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawSplits {
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
    pub references: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub x: RawSplits,
    pub y: RawSplits,
}

pub fn markers(style: Style) -> &'static [&'static str; 3] {
    match style {
        Style::X => &NEGATIVE_MARKERS,
        Style::Y => &POSITIVE_MARKERS,
    }
}

fn content_word(i: usize) -> String {
    format!("w{i}")
}

fn successor_table(spec: &SyntheticSpec) -> Vec<Vec<usize>> {
    let mut rng = RngState::stream(spec.seed, 2);
    (0..spec.content_vocab)
        .map(|_| {
            let mut all: Vec<usize> = (0..spec.content_vocab).collect();
            all.shuffle(&mut rng);
            all.truncate(spec.branching);
            all
        })
        .collect()
}

/// Returns the sentence and its mirror image with markers swapped.
fn sentence(spec: &SyntheticSpec, next: &[Vec<usize>], style: Style, rng: &mut RngState) -> (String, String) {
    let len = rng.random_range(spec.min_content..=spec.max_content);
    let mut w = rng.below(spec.content_vocab);
    let mut words: Vec<(String, Option<usize>)> = Vec::with_capacity(len + 2);
    for _ in 0..len {
        words.push((content_word(w), None));
        let succ = &next[w];
        w = succ[rng.below(succ.len())];
    }
    let n_markers = rng.random_range(1..=2);
    for _ in 0..n_markers {
        let m = rng.below(3);
        let pos = rng.below(words.len() + 1);
        words.insert(pos, (markers(style)[m].to_string(), Some(m)));
    }
    let text = words.iter().map(|(w, _)| w.as_str()).collect::<Vec<_>>().join(" ");
    let mirror = words
        .iter()
        .map(|(w, m)| match m {
            Some(m) => markers(style.other())[*m],
            None => w.as_str(),
        })
        .collect::<Vec<_>>()
        .join(" ");
    (text, mirror)
}

pub fn make_synthetic_corpus(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    if spec.n_train == 0 || spec.content_vocab == 0 || spec.branching == 0 || spec.min_content > spec.max_content {
        return Err(Error::Config(format!("invalid synthetic corpus spec {spec:?}")));
    }
    let next = successor_table(spec);
    let build = |style: Style, stream: u64| {
        let mut rng = RngState::stream(spec.seed, stream);
        let mut splits = RawSplits::default();
        for _ in 0..spec.n_train {
            splits.train.push(sentence(spec, &next, style, &mut rng).0);
        }
        for _ in 0..spec.n_dev {
            splits.dev.push(sentence(spec, &next, style, &mut rng).0);
        }
        for _ in 0..spec.n_test {
            let (s, r) = sentence(spec, &next, style, &mut rng);
            splits.test.push(s);
            splits.references.push(r);
        }
        splits
    };
    Ok(SyntheticCorpus {
        x: build(Style::X, 0),
        y: build(Style::Y, 1),
    })
}

impl SyntheticCorpus {
    pub fn splits(&self, style: Style) -> &RawSplits {
        match style {
            Style::X => &self.x,
            Style::Y => &self.y,
        }
    }

    /// Writes the `<style>.<split>.txt` / `<style>.ref.txt` layout.
    pub fn write_dir(&self, root: &Path) -> Result<()> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let write = |path: &Path, lines: &[String]| -> Result<()> {
            let mut text = lines.join("\n");
            if !text.is_empty() {
                text.push('\n');
            }
            fs::write(path, text).map_err(|e| Error::io(path, e))
        };
        for style in [Style::X, Style::Y] {
            let s = self.splits(style);
            write(&split_path(root, style, Split::Train), &s.train)?;
            write(&split_path(root, style, Split::Dev), &s.dev)?;
            write(&split_path(root, style, Split::Test), &s.test)?;
            write(&reference_path(root, style), &s.references)?;
        }
        Ok(())
    }

    /// Encodes everything with a vocabulary covering every training token.
    pub fn to_style_data(&self) -> Result<StyleData> {
        let lines = self.x.train.iter().chain(&self.y.train).map(String::as_str);
        let vocab = Vocab::build(lines, 1, usize::MAX)?;
        let encode = |style: Style| {
            let s = self.splits(style);
            let enc = |v: &[String]| v.iter().map(|l| vocab.encode(l)).collect::<Vec<_>>();
            StyleCorpus {
                style,
                train: enc(&s.train),
                dev: enc(&s.dev),
                test: enc(&s.test),
                references: Some(enc(&s.references)),
            }
        };
        let (x, y) = (encode(Style::X), encode(Style::Y));
        Ok(StyleData { vocab, x, y })
    }
}
