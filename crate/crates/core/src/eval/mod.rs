//! Transfer intensity (classifier accuracy) and content preservation
//! (self-BLEU, ref-BLEU) of a pair of transferrers.

pub mod bleu;
pub mod classifier;

use std::fmt::Write as _;

pub use bleu::{bleu, bleu_stats, BleuStats};
pub use classifier::{train_classifier, Classifier, ClassifierConfig};

use crate::corpus::{Sentence, Style, StyleData};
use crate::error::{Error, Result};
use crate::transferrer::{GenerationConfig, Transferrer};

pub const BLEU_ORDER: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    XToY,
    YToX,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::XToY => "x2y",
            Direction::YToX => "y2x",
        }
    }

    pub fn parse(s: &str) -> Option<Direction> {
        match s {
            "x2y" => Some(Direction::XToY),
            "y2x" => Some(Direction::YToX),
            _ => None,
        }
    }

    pub fn source(self) -> Style {
        match self {
            Direction::XToY => Style::X,
            Direction::YToX => Style::Y,
        }
    }

    pub fn target(self) -> Style {
        self.source().other()
    }
}

/// Scores of one evaluated system output, all in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub self_bleu: f64,
    pub ref_bleu: Option<f64>,
    pub n: usize,
}

/// Per-direction reports plus their average.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemReport {
    pub x2y: MetricsReport,
    pub y2x: MetricsReport,
    pub average: MetricsReport,
}

/// Scores `outputs` (transfers of `inputs` into `target`).
pub fn evaluate_outputs(
    inputs: &[Sentence],
    outputs: &[Sentence],
    target: Style,
    classifier: &Classifier,
    references: Option<&[Sentence]>,
) -> Result<MetricsReport> {
    if inputs.len() != outputs.len() {
        return Err(Error::Invalid(format!(
            "{} outputs for {} inputs",
            outputs.len(),
            inputs.len()
        )));
    }
    Ok(MetricsReport {
        accuracy: classifier.rate(outputs, target),
        self_bleu: bleu(outputs, inputs, BLEU_ORDER)?,
        ref_bleu: references.map(|r| bleu(outputs, r, BLEU_ORDER)).transpose()?,
        n: outputs.len(),
    })
}

fn average(a: &MetricsReport, b: &MetricsReport) -> MetricsReport {
    let ref_bleu = match (a.ref_bleu, b.ref_bleu) {
        (Some(x), Some(y)) => Some((x + y) / 2.0),
        (Some(x), None) | (None, Some(x)) => Some(x),
        (None, None) => None,
    };
    MetricsReport {
        accuracy: (a.accuracy + b.accuracy) / 2.0,
        self_bleu: (a.self_bleu + b.self_bleu) / 2.0,
        ref_bleu,
        n: a.n + b.n,
    }
}

/// Inputs and generated outputs for both directions.
#[derive(Clone, Debug, PartialEq)]
pub struct Transfers {
    pub x2y: Vec<Sentence>,
    pub y2x: Vec<Sentence>,
}

pub struct EvalInputs<'a> {
    pub x_test: &'a [Sentence],
    pub y_test: &'a [Sentence],
    pub x_refs: Option<&'a [Sentence]>,
    pub y_refs: Option<&'a [Sentence]>,
}

impl<'a> EvalInputs<'a> {
    /// Test splits and references of a loaded corpus.
    pub fn from_test(data: &'a StyleData) -> EvalInputs<'a> {
        EvalInputs {
            x_test: &data.x.test,
            y_test: &data.y.test,
            x_refs: data.x.references.as_deref(),
            y_refs: data.y.references.as_deref(),
        }
    }
}

/// Transfers both test sets (`f` on X, `g` on Y) and scores them.
pub fn evaluate_system(
    f: &Transferrer,
    g: &Transferrer,
    data: &EvalInputs<'_>,
    classifier: Option<&Classifier>,
    gen: &GenerationConfig,
) -> Result<(SystemReport, Transfers)> {
    let classifier = classifier.ok_or_else(|| Error::Invalid("evaluation needs a style classifier".into()))?;
    let transfers = Transfers {
        x2y: f.transfer_all(data.x_test, gen, 64)?,
        y2x: g.transfer_all(data.y_test, gen, 64)?,
    };
    let report = score_transfers(data, &transfers, classifier)?;
    Ok((report, transfers))
}

pub fn score_transfers(data: &EvalInputs<'_>, t: &Transfers, classifier: &Classifier) -> Result<SystemReport> {
    let x2y = evaluate_outputs(data.x_test, &t.x2y, Style::Y, classifier, data.x_refs)?;
    let y2x = evaluate_outputs(data.y_test, &t.y2x, Style::X, classifier, data.y_refs)?;
    let average = average(&x2y, &y2x);
    Ok(SystemReport { x2y, y2x, average })
}

impl SystemReport {
    fn rows(&self) -> [(&'static str, &MetricsReport); 3] {
        [("x2y", &self.x2y), ("y2x", &self.y2x), ("avg", &self.average)]
    }

    /// Flat `key<TAB>value` lines; keys are `<direction>.<metric>` with
    /// direction in `x2y`, `y2x`, `avg`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (dir, m) in self.rows() {
            let _ = writeln!(out, "{dir}.acc\t{}", m.accuracy);
            let _ = writeln!(out, "{dir}.self_bleu\t{}", m.self_bleu);
            if let Some(r) = m.ref_bleu {
                let _ = writeln!(out, "{dir}.ref_bleu\t{r}");
            }
            let _ = writeln!(out, "{dir}.n\t{}", m.n);
        }
        out
    }

    /// Human-readable table, scores ×100. The `avg` row is the unweighted
    /// mean of the two directions.
    pub fn table(&self) -> String {
        let mut out = format!("{:<6}{:>8}{:>11}{:>10}{:>7}\n", "dir", "acc", "self-BLEU", "ref-BLEU", "n");
        for (dir, m) in self.rows() {
            let r = m.ref_bleu.map_or_else(|| "-".to_string(), |r| format!("{:.1}", r * 100.0));
            let _ = writeln!(
                out,
                "{:<6}{:>8.1}{:>11.1}{:>10}{:>7}",
                dir,
                m.accuracy * 100.0,
                m.self_bleu * 100.0,
                r,
                m.n
            );
        }
        out
    }
}
