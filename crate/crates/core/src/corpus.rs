//! Whitespace-tokenized style corpora and the shared vocabulary.
//!
//! A corpus directory holds `<style>.<split>.txt` files with style in
//! `{neg, pos}` and split in `{train, dev, test}`, plus optional
//! `<style>.ref.txt` references aligned line by line with the test split.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const NUM_SPECIALS: usize = 4;
pub const SPECIAL_TOKENS: [&str; NUM_SPECIALS] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Token ids of one sentence, without PAD/BOS/EOS.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Sentence(pub Vec<u32>);

impl Sentence {
    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<u32>> for Sentence {
    fn from(ids: Vec<u32>) -> Self {
        Sentence(ids)
    }
}

/// The two style labels. `X` is stored under the `neg` file stem and `Y`
/// under `pos`; `f` maps X to Y and `g` maps Y to X.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Style {
    X,
    Y,
}

impl Style {
    pub fn stem(self) -> &'static str {
        match self {
            Style::X => "neg",
            Style::Y => "pos",
        }
    }

    pub fn other(self) -> Style {
        match self {
            Style::X => Style::Y,
            Style::Y => Style::X,
        }
    }

    pub fn label(self) -> usize {
        match self {
            Style::X => 0,
            Style::Y => 1,
        }
    }

    pub fn from_label(label: usize) -> Style {
        if label == 0 {
            Style::X
        } else {
            Style::Y
        }
    }
}

impl fmt::Display for Style {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.stem())
    }
}

/// Bidirectional token/id map. Ids `0..4` are the specials.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Vocabulary of the specials followed by `tokens` in order. Tokens
    /// equal to a special or repeated are skipped.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for s in SPECIAL_TOKENS {
            v.push(s.to_string());
        }
        for t in tokens {
            let t = t.into();
            if !v.index.contains_key(&t) {
                v.push(t);
            }
        }
        v
    }

    fn push(&mut self, token: String) {
        self.index.insert(token.clone(), self.tokens.len() as u32);
        self.tokens.push(token);
    }

    /// Most frequent tokens with count ≥ `min_freq`, capped so the total
    /// size including specials is at most `max_size`. Ties keep first
    /// occurrence order.
    pub fn build<'a, I>(lines: I, min_freq: usize, max_size: usize) -> Result<Vocab>
    where
        I: IntoIterator<Item = &'a str>,
    {
        if min_freq < 1 {
            return Err(Error::Config("min_freq must be at least 1".into()));
        }
        if max_size < NUM_SPECIALS {
            return Err(Error::Config(format!("max_size must be at least {NUM_SPECIALS}")));
        }
        let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
        let mut order = 0;
        for line in lines {
            for tok in line.split(' ').filter(|t| !t.is_empty()) {
                if SPECIAL_TOKENS.contains(&tok) {
                    continue;
                }
                let e = counts.entry(tok).or_insert_with(|| {
                    order += 1;
                    (0, order)
                });
                e.0 += 1;
            }
        }
        let mut ranked: Vec<(&str, usize, usize)> = counts
            .into_iter()
            .filter(|(_, (c, _))| *c >= min_freq)
            .map(|(t, (c, o))| (t, c, o))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        ranked.truncate(max_size - NUM_SPECIALS);
        Ok(Vocab::from_tokens(ranked.into_iter().map(|(t, _, _)| t)))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Number of non-special entries.
    pub fn content_len(&self) -> usize {
        self.tokens.len() - NUM_SPECIALS
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < NUM_SPECIALS
    }

    /// Whitespace-tokenizes `line`; unknown tokens become UNK.
    pub fn encode(&self, line: &str) -> Sentence {
        Sentence(
            line.split(' ')
                .filter(|t| !t.is_empty())
                .map(|t| self.id(t).unwrap_or(UNK))
                .collect(),
        )
    }

    pub fn decode(&self, s: &Sentence) -> Result<String> {
        let mut out = String::new();
        for (i, &id) in s.ids().iter().enumerate() {
            let tok = self.token(id).ok_or(Error::TokenId { id, size: self.len() })?;
            if i > 0 {
                out.push(' ');
            }
            out.push_str(tok);
        }
        Ok(out)
    }

    /// One token per line, in id order, specials included.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Vocab> {
        let lines = read_lines(path)?;
        let tokens: Vec<&str> = lines.iter().map(|(_, l)| l.as_str()).collect();
        if tokens.len() < NUM_SPECIALS || tokens[..NUM_SPECIALS] != SPECIAL_TOKENS {
            return Err(Error::Invalid(format!(
                "{}: vocabulary must start with {:?}",
                path.display(),
                SPECIAL_TOKENS
            )));
        }
        let v = Vocab::from_tokens(tokens[NUM_SPECIALS..].iter().copied());
        if v.len() != tokens.len() {
            return Err(Error::Invalid(format!("{}: duplicate vocabulary entries", path.display())));
        }
        Ok(v)
    }
}

/// Reads non-empty lines with their 1-based line numbers. Empty lines are
/// skipped with a warning.
fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let body = bytes.strip_suffix(b"\n").unwrap_or(&bytes);
    if body.is_empty() {
        return Ok(out);
    }
    for (i, raw) in body.split(|&b| b == b'\n').enumerate() {
        let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
        let line = std::str::from_utf8(raw).map_err(|_| Error::Utf8 {
            path: path.to_path_buf(),
            line: i + 1,
        })?;
        if line.trim().is_empty() {
            warn!("{}:{}: skipping empty line", path.display(), i + 1);
            continue;
        }
        out.push((i + 1, line.to_string()));
    }
    Ok(out)
}

/// Loads one sentence per line, mapping out-of-vocabulary tokens to UNK.
pub fn load_corpus(path: &Path, vocab: &Vocab) -> Result<Vec<Sentence>> {
    Ok(read_lines(path)?.iter().map(|(_, l)| vocab.encode(l)).collect())
}

/// Raw lines of a file, for vocabulary building.
pub fn load_lines(path: &Path) -> Result<Vec<String>> {
    Ok(read_lines(path)?.into_iter().map(|(_, l)| l).collect())
}

/// Builds a vocabulary over every token of `files`.
pub fn build_vocab(files: &[PathBuf], min_freq: usize, max_size: usize) -> Result<Vocab> {
    if files.is_empty() {
        return Err(Error::Invalid("build_vocab needs at least one file".into()));
    }
    let mut lines = Vec::new();
    for f in files {
        lines.extend(load_lines(f)?);
    }
    Vocab::build(lines.iter().map(String::as_str), min_freq, max_size)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

pub fn split_path(root: &Path, style: Style, split: Split) -> PathBuf {
    root.join(format!("{}.{}.txt", style.stem(), split.name()))
}

pub fn reference_path(root: &Path, style: Style) -> PathBuf {
    root.join(format!("{}.ref.txt", style.stem()))
}

/// All splits of one style.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleCorpus {
    pub style: Style,
    pub train: Vec<Sentence>,
    pub dev: Vec<Sentence>,
    pub test: Vec<Sentence>,
    /// Human transfers of `test` into the other style, one per test line.
    pub references: Option<Vec<Sentence>>,
}

impl StyleCorpus {
    pub fn load(root: &Path, style: Style, vocab: &Vocab) -> Result<StyleCorpus> {
        let train = load_corpus(&split_path(root, style, Split::Train), vocab)?;
        let dev = load_corpus(&split_path(root, style, Split::Dev), vocab)?;
        let test = load_corpus(&split_path(root, style, Split::Test), vocab)?;
        let ref_path = reference_path(root, style);
        let references = if ref_path.exists() {
            let refs = load_corpus(&ref_path, vocab)?;
            if refs.len() != test.len() {
                return Err(Error::Invalid(format!(
                    "{}: {} references for {} test sentences",
                    ref_path.display(),
                    refs.len(),
                    test.len()
                )));
            }
            Some(refs)
        } else {
            None
        };
        Ok(StyleCorpus {
            style,
            train,
            dev,
            test,
            references,
        })
    }

    pub fn check_ids(&self, vocab: &Vocab) -> Result<()> {
        let all = self
            .train
            .iter()
            .chain(&self.dev)
            .chain(&self.test)
            .chain(self.references.iter().flatten());
        for s in all {
            if let Some(&id) = s.ids().iter().find(|&&id| id as usize >= vocab.len()) {
                return Err(Error::TokenId { id, size: vocab.len() });
            }
        }
        Ok(())
    }
}

/// The X/Y corpus pair with its shared vocabulary.
#[derive(Clone, Debug)]
pub struct StyleData {
    pub vocab: Vocab,
    pub x: StyleCorpus,
    pub y: StyleCorpus,
}

impl StyleData {
    /// Builds the vocabulary from both training splits and loads all files.
    pub fn load_dir(root: &Path, min_freq: usize, max_size: usize) -> Result<StyleData> {
        let files = [
            split_path(root, Style::X, Split::Train),
            split_path(root, Style::Y, Split::Train),
        ];
        let vocab = build_vocab(&files, min_freq, max_size)?;
        Self::load_with_vocab(root, vocab)
    }

    pub fn load_with_vocab(root: &Path, vocab: Vocab) -> Result<StyleData> {
        let x = StyleCorpus::load(root, Style::X, &vocab)?;
        let y = StyleCorpus::load(root, Style::Y, &vocab)?;
        Ok(StyleData { vocab, x, y })
    }

    pub fn corpus(&self, style: Style) -> &StyleCorpus {
        match style {
            Style::X => &self.x,
            Style::Y => &self.y,
        }
    }
}
