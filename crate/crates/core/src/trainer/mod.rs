//! The dual-generator training loop.
//!
//! For `f` (X → Y) each batch of Y sentences contributes two terms:
//!
//! * reconstruction: `f` recovers `y` from a neighbourhood sample of `y`;
//! * transfer: `g` (frozen, no gradient) maps `y` to `x* = g(y)`, and `f`
//!   recovers `y` from a neighbourhood sample of `x*`.
//!
//! Both terms are summed into one optimizer step on `f` only. The `g` cycle
//! mirrors this on X batches with `f` frozen. Cycles alternate per batch.

pub mod config;
pub mod synthetic;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;

pub use config::{TrainConfig, Variant, KEYS};
pub use synthetic::{make_synthetic_corpus, SyntheticCorpus, SyntheticSpec};

use crate::corpus::{Sentence, StyleData, Vocab, UNK};
use crate::editops::{neighbourhood_sample, NoiseSpec};
use crate::error::{Error, Result};
use crate::eval::{evaluate_system, score_transfers, Classifier, EvalInputs, MetricsReport, SystemReport, Transfers};
use crate::neural::{save_params, AdamConfig, Graph, ParamStore, Var};
use crate::rng::RngState;
use crate::transferrer::{GenerationConfig, Transferrer};

const STREAM_INIT_F: u64 = 0;
const STREAM_INIT_G: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_NOISE_F: u64 = 3;
const STREAM_NOISE_G: u64 = 4;

/// Source sentences, the frozen transferrer's outputs for them, and the
/// inputs actually fed to the learner.
#[derive(Clone, Debug, PartialEq)]
pub struct CycleBatch {
    pub sources: Vec<Sentence>,
    pub generated: Vec<Sentence>,
    pub noisified: Vec<Sentence>,
}

/// Per-update settings shared by both cycles.
#[derive(Clone, Debug)]
pub struct StepContext<'a> {
    pub vocab: &'a Vocab,
    pub variant: Variant,
    pub noise: NoiseSpec,
    pub adam: AdamConfig,
    pub clip_norm: f32,
    pub generation: GenerationConfig,
}

fn non_empty(s: Sentence) -> Sentence {
    if s.is_empty() {
        Sentence(vec![UNK])
    } else {
        s
    }
}

/// Neighbourhood samples of a batch; a sample that lost every token
/// becomes a single UNK so it can still be encoded.
fn noisify(batch: &[Sentence], noise: &NoiseSpec, vocab: &Vocab, rng: &mut RngState) -> Result<Vec<Sentence>> {
    batch
        .iter()
        .map(|s| neighbourhood_sample(s, noise, vocab, rng).map(non_empty))
        .collect()
}

/// Records the reconstruction term for `learner` on `batch`.
pub fn reconstruction_loss(
    graph: &mut Graph,
    learner: &Transferrer,
    batch: &[Sentence],
    ctx: &StepContext<'_>,
    rng: &mut RngState,
) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let inputs = if ctx.variant.noisy_reconstruction() {
        noisify(batch, &ctx.noise, ctx.vocab, rng)?
    } else {
        batch.to_vec()
    };
    learner.teacher_forced_loss(graph, &inputs, batch)
}

/// Generates the frozen transferrer's outputs for `batch` (no tape is
/// differentiated) and noisifies them according to the variant.
pub fn build_cycle_batch(
    frozen: &Transferrer,
    batch: &[Sentence],
    ctx: &StepContext<'_>,
    rng: &mut RngState,
) -> Result<CycleBatch> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let fed = if ctx.variant.noise_before_generation() {
        noisify(batch, &ctx.noise, ctx.vocab, rng)?
    } else {
        batch.to_vec()
    };
    let generated: Vec<Sentence> = frozen
        .transfer_batch(&fed, &ctx.generation)?
        .into_iter()
        .map(non_empty)
        .collect();
    let noisified = if ctx.variant.noise_after_generation() {
        noisify(&generated, &ctx.noise, ctx.vocab, rng)?
    } else {
        generated.clone()
    };
    Ok(CycleBatch {
        sources: batch.to_vec(),
        generated,
        noisified,
    })
}

/// Records the transfer term: the learner reconstructs the sources from
/// the noisified generations.
pub fn transfer_loss(graph: &mut Graph, learner: &Transferrer, cycle: &CycleBatch) -> Result<Var> {
    learner.teacher_forced_loss(graph, &cycle.noisified, &cycle.sources)
}

fn apply_update(learner: &mut Transferrer, graph: &Graph, loss: Var, ctx: &StepContext<'_>) -> Result<()> {
    graph.backward(loss, learner.store_mut())?;
    if ctx.clip_norm > 0.0 {
        learner.store_mut().clip_grad_norm(ctx.clip_norm);
    }
    learner.store_mut().adam_step(&ctx.adam);
    Ok(())
}

/// One reconstruction-only update of `learner`. Returns the loss.
pub fn reconstruction_step(
    learner: &mut Transferrer,
    batch: &[Sentence],
    ctx: &StepContext<'_>,
    rng: &mut RngState,
) -> Result<f32> {
    let mut graph = Graph::new();
    let loss = reconstruction_loss(&mut graph, learner, batch, ctx, rng)?;
    apply_update(learner, &graph, loss, ctx)?;
    Ok(graph.value(loss).item())
}

/// One transfer-only update of `learner` with `frozen` providing the
/// generations. Returns the loss and the batch that was used.
pub fn transfer_step(
    learner: &mut Transferrer,
    frozen: &Transferrer,
    batch: &[Sentence],
    ctx: &StepContext<'_>,
    rng: &mut RngState,
) -> Result<(f32, CycleBatch)> {
    let cycle = build_cycle_batch(frozen, batch, ctx, rng)?;
    let mut graph = Graph::new();
    let loss = transfer_loss(&mut graph, learner, &cycle)?;
    apply_update(learner, &graph, loss, ctx)?;
    Ok((graph.value(loss).item(), cycle))
}

/// Loss terms of one combined update.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CycleLosses {
    pub reconstruction: f32,
    pub transfer: f32,
}

/// The per-batch update: both enabled terms summed into one step.
pub fn cycle_step(
    learner: &mut Transferrer,
    frozen: &Transferrer,
    batch: &[Sentence],
    ctx: &StepContext<'_>,
    rng: &mut RngState,
) -> Result<CycleLosses> {
    let mut graph = Graph::new();
    let mut terms = Vec::with_capacity(2);
    let mut out = CycleLosses::default();
    if ctx.variant.uses_reconstruction() {
        let l = reconstruction_loss(&mut graph, learner, batch, ctx, rng)?;
        out.reconstruction = graph.value(l).item();
        terms.push(l);
    }
    if ctx.variant.uses_transfer() {
        let cycle = build_cycle_batch(frozen, batch, ctx, rng)?;
        let l = transfer_loss(&mut graph, learner, &cycle)?;
        out.transfer = graph.value(l).item();
        terms.push(l);
    }
    let total = match terms[..] {
        [a] => a,
        [a, b] => graph.add(a, b)?,
        _ => unreachable!("every variant enables at least one term"),
    };
    apply_update(learner, &graph, total, ctx)?;
    Ok(out)
}

/// Mean losses and dev metrics of one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub gamma: f64,
    pub rec_f: f64,
    pub tran_f: f64,
    pub rec_g: f64,
    pub tran_g: f64,
    /// Average of both directions on the dev subsets.
    pub dev: MetricsReport,
    pub freeze_checks: usize,
}

impl EpochStats {
    pub fn total_loss(&self) -> f64 {
        self.rec_f + self.tran_f + self.rec_g + self.tran_g
    }

    /// Tab-separated: epoch, four losses, dev accuracy, dev self-BLEU.
    pub fn log_line(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            self.epoch, self.rec_f, self.tran_f, self.rec_g, self.tran_g, self.dev.accuracy, self.dev.self_bleu
        )
    }
}

pub struct TrainOutcome {
    pub f: Transferrer,
    pub g: Transferrer,
    pub history: Vec<EpochStats>,
    /// Epoch whose dev accuracy was highest (first on ties).
    pub best_epoch: usize,
}

/// Both transferrers in one store, `f.` parameters first.
pub fn checkpoint_bytes(f: &Transferrer, g: &Transferrer) -> Result<Vec<u8>> {
    Ok(save_params(&f.store().merged(g.store())?))
}

/// Splits a checkpoint back into `(f, g)`.
pub fn load_checkpoint(bytes: &[u8]) -> Result<(Transferrer, Transferrer)> {
    let store = crate::neural::load_params(bytes)?;
    let f = Transferrer::from_store("f.", store.with_prefix("f."))?;
    let g = Transferrer::from_store("g.", store.with_prefix("g."))?;
    if f.store().len() + g.store().len() != store.len() {
        let extra = store
            .names()
            .iter()
            .find(|n| !n.starts_with("f.") && !n.starts_with("g."))
            .cloned()
            .unwrap_or_default();
        return Err(Error::UnexpectedTensor(extra));
    }
    Ok((f, g))
}

fn batches(n: usize, size: usize, rng: &mut RngState) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(size).map(<[usize]>::to_vec).collect()
}

fn freeze_snapshot(t: &Transferrer) -> Vec<u8> {
    save_params(t.store())
}

fn verify_frozen(before: &[u8], frozen: &Transferrer, name: &'static str) -> Result<()> {
    if freeze_snapshot(frozen) != before || !frozen.store().grads_are_zero() {
        return Err(Error::FreezeViolation(name));
    }
    Ok(())
}

fn usable(sentences: &[Sentence]) -> Vec<Sentence> {
    sentences.iter().filter(|s| !s.is_empty()).cloned().collect()
}

/// Output locations for a run; `None` keeps everything in memory.
#[derive(Clone, Debug)]
pub struct RunPaths {
    pub out_dir: PathBuf,
    pub log_path: PathBuf,
}

impl RunPaths {
    pub fn from_config(cfg: &TrainConfig) -> Option<RunPaths> {
        if cfg.out_dir.is_empty() {
            return None;
        }
        let out_dir = PathBuf::from(&cfg.out_dir);
        let log_path = if cfg.log_path.is_empty() {
            out_dir.join("metrics.tsv")
        } else {
            PathBuf::from(&cfg.log_path)
        };
        Some(RunPaths { out_dir, log_path })
    }

    pub fn last(&self) -> PathBuf {
        self.out_dir.join("last.ckpt")
    }

    pub fn best(&self) -> PathBuf {
        self.out_dir.join("best.ckpt")
    }

    pub fn vocab(&self) -> PathBuf {
        self.out_dir.join("vocab.txt")
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Trains `f` and `g` on the training splits of `data`.
pub fn train_dgst(cfg: &TrainConfig, data: &StyleData, classifier: &Classifier) -> Result<TrainOutcome> {
    cfg.validate()?;
    let x_train = usable(&data.x.train);
    let y_train = usable(&data.y.train);
    if x_train.is_empty() || y_train.is_empty() {
        return Err(Error::Invalid("both training corpora must be non-empty".into()));
    }
    let dims = cfg.dims(data.vocab.len());
    let mut f = Transferrer::new("f.", dims, &mut RngState::stream(cfg.seed, STREAM_INIT_F))?;
    let mut g = Transferrer::new("g.", dims, &mut RngState::stream(cfg.seed, STREAM_INIT_G))?;
    let mut shuffle_rng = RngState::stream(cfg.seed, STREAM_SHUFFLE);
    let mut noise_f = RngState::stream(cfg.seed, STREAM_NOISE_F);
    let mut noise_g = RngState::stream(cfg.seed, STREAM_NOISE_G);

    let x_dev: Vec<Sentence> = usable(&data.x.dev).into_iter().take(cfg.dev_limit).collect();
    let y_dev: Vec<Sentence> = usable(&data.y.dev).into_iter().take(cfg.dev_limit).collect();

    let paths = RunPaths::from_config(cfg);
    let mut log = match &paths {
        Some(p) => {
            fs::create_dir_all(&p.out_dir).map_err(|e| Error::io(&p.out_dir, e))?;
            data.vocab.save(&p.vocab())?;
            write_file(&p.out_dir.join("config.txt"), cfg.to_text().as_bytes())?;
            Some(fs::File::create(&p.log_path).map_err(|e| Error::io(&p.log_path, e))?)
        }
        None => None,
    };

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best_epoch = 0;
    let mut best_acc = f64::NEG_INFINITY;
    for epoch in 1..=cfg.epochs {
        let ctx = StepContext {
            vocab: &data.vocab,
            variant: cfg.variant,
            noise: NoiseSpec::new(cfg.gamma_at(epoch)),
            adam: cfg.adam(),
            clip_norm: cfg.clip_norm,
            generation: cfg.generation(),
        };
        let xb = batches(x_train.len(), cfg.batch_size, &mut shuffle_rng);
        let yb = batches(y_train.len(), cfg.batch_size, &mut shuffle_rng);
        let steps = xb.len().max(yb.len());
        let (mut sums, mut freeze_checks) = ([0.0f64; 4], 0);
        for step in 0..steps {
            let check = cfg.check_freeze && step == 0;

            let y_batch: Vec<Sentence> = yb[step % yb.len()].iter().map(|&i| y_train[i].clone()).collect();
            let before = check.then(|| freeze_snapshot(&g));
            let lf = cycle_step(&mut f, &g, &y_batch, &ctx, &mut noise_f)?;
            if let Some(before) = before {
                verify_frozen(&before, &g, "g")?;
                freeze_checks += 1;
            }

            let x_batch: Vec<Sentence> = xb[step % xb.len()].iter().map(|&i| x_train[i].clone()).collect();
            let before = check.then(|| freeze_snapshot(&f));
            let lg = cycle_step(&mut g, &f, &x_batch, &ctx, &mut noise_g)?;
            if let Some(before) = before {
                verify_frozen(&before, &f, "f")?;
                freeze_checks += 1;
            }

            for (s, v) in sums.iter_mut().zip([lf.reconstruction, lf.transfer, lg.reconstruction, lg.transfer]) {
                *s += v as f64;
            }
        }
        let mean = |i: usize| sums[i] / steps as f64;

        let dev = if x_dev.is_empty() || y_dev.is_empty() {
            MetricsReport {
                accuracy: 0.0,
                self_bleu: 0.0,
                ref_bleu: None,
                n: 0,
            }
        } else {
            let gen = cfg.generation();
            let transfers = Transfers {
                x2y: f.transfer_all(&x_dev, &gen, 64)?,
                y2x: g.transfer_all(&y_dev, &gen, 64)?,
            };
            let inputs = EvalInputs {
                x_test: &x_dev,
                y_test: &y_dev,
                x_refs: None,
                y_refs: None,
            };
            score_transfers(&inputs, &transfers, classifier)?.average
        };
        let stats = EpochStats {
            epoch,
            gamma: ctx.noise.gamma,
            rec_f: mean(0),
            tran_f: mean(1),
            rec_g: mean(2),
            tran_g: mean(3),
            dev,
            freeze_checks,
        };
        info!(
            "epoch {epoch}: loss {:.4} (rec_f {:.4} tran_f {:.4} rec_g {:.4} tran_g {:.4}) dev acc {:.3} self-BLEU {:.3}",
            stats.total_loss(),
            stats.rec_f,
            stats.tran_f,
            stats.rec_g,
            stats.tran_g,
            stats.dev.accuracy,
            stats.dev.self_bleu
        );

        let improved = stats.dev.accuracy > best_acc;
        if improved {
            best_acc = stats.dev.accuracy;
            best_epoch = epoch;
        }
        if let (Some(p), Some(log)) = (&paths, log.as_mut()) {
            writeln!(log, "{}", stats.log_line()).map_err(|e| Error::io(&p.log_path, e))?;
            let bytes = checkpoint_bytes(&f, &g)?;
            write_file(&p.last(), &bytes)?;
            if improved {
                write_file(&p.best(), &bytes)?;
            }
        }
        history.push(stats);
    }
    Ok(TrainOutcome {
        f,
        g,
        history,
        best_epoch,
    })
}

/// One row of an ablation study: a variant and its test-set report.
#[derive(Clone, Debug)]
pub struct AblationRow {
    pub variant: Variant,
    pub report: SystemReport,
}

/// Trains every variant with the same config and seed, in table order, and
/// scores each on the test splits. With a non-empty `out_dir` each variant
/// writes into its own subdirectory.
pub fn run_ablation(cfg: &TrainConfig, data: &StyleData, classifier: &Classifier) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(Variant::TABLE_ORDER.len());
    for variant in Variant::TABLE_ORDER {
        let mut run = cfg.clone();
        run.variant = variant;
        if !cfg.out_dir.is_empty() {
            run.out_dir = Path::new(&cfg.out_dir).join(variant.name()).to_string_lossy().into_owned();
            run.log_path = String::new();
        }
        info!("ablation: training {variant}");
        let out = train_dgst(&run, data, classifier)?;
        let (report, _) = evaluate_system(&out.f, &out.g, &EvalInputs::from_test(data), Some(classifier), &run.generation())?;
        rows.push(AblationRow { variant, report });
    }
    Ok(rows)
}

/// `variant  self_bleu  acc` table, scores ×100 from the direction average.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut out = format!("{:<15}{:>10}{:>8}\n", "variant", "self_bleu", "acc");
    for r in rows {
        out.push_str(&format!(
            "{:<15}{:>10.1}{:>8.1}\n",
            r.variant.name(),
            r.report.average.self_bleu * 100.0,
            r.report.average.accuracy * 100.0
        ));
    }
    out
}

/// Merged store of both transferrers; convenient for whole-model checks.
pub fn joint_store(f: &Transferrer, g: &Transferrer) -> Result<ParamStore> {
    f.store().merged(g.store())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transferrer::TransferrerDims;

    fn vocab() -> Vocab {
        Vocab::from_tokens((0..12).map(|i| format!("t{i}")))
    }

    fn model(prefix: &str, seed: u64) -> Transferrer {
        let dims = TransferrerDims {
            vocab: 16,
            embed: 8,
            hidden: 16,
            layers: 1,
        };
        Transferrer::new(prefix, dims, &mut RngState::new(seed)).unwrap()
    }

    fn ctx(v: &Vocab, variant: Variant, gamma: f64) -> StepContext<'_> {
        StepContext {
            vocab: v,
            variant,
            noise: NoiseSpec::new(gamma),
            adam: AdamConfig::default(),
            clip_norm: 5.0,
            generation: GenerationConfig::default(),
        }
    }

    fn batch() -> Vec<Sentence> {
        vec![Sentence(vec![4, 5, 6, 7]), Sentence(vec![8, 9, 10]), Sentence(vec![11, 12, 13, 14, 15])]
    }

    #[test]
    fn transfer_step_leaves_frozen_untouched() {
        let v = vocab();
        let mut f = model("f.", 1);
        let g = model("g.", 2);
        let before = save_params(g.store());
        let mut rng = RngState::new(3);
        transfer_step(&mut f, &g, &batch(), &ctx(&v, Variant::Full, 0.3), &mut rng).unwrap();
        assert_eq!(save_params(g.store()), before);
        assert!(g.store().grads_are_zero());
    }

    #[test]
    fn tran_no_noise_feeds_generation_unchanged() {
        let v = vocab();
        let g = model("g.", 2);
        let mut rng = RngState::new(4);
        let c = build_cycle_batch(&g, &batch(), &ctx(&v, Variant::TranNoNoise, 0.9), &mut rng).unwrap();
        assert_eq!(c.noisified, c.generated);
        assert!(c.generated.iter().all(|s| !s.is_empty()));
    }

    #[test]
    fn pre_noise_generates_from_noisy_sources() {
        let v = vocab();
        let g = model("g.", 2);
        let c_ctx = ctx(&v, Variant::PreNoise, 0.5);
        let mut rng = RngState::new(5);
        let c = build_cycle_batch(&g, &batch(), &c_ctx, &mut rng).unwrap();
        assert_eq!(c.noisified, c.generated);
        // Replay the same draws: the frozen model saw the noisified sources.
        let mut replay = RngState::new(5);
        let noisy = noisify(&batch(), &c_ctx.noise, &v, &mut replay).unwrap();
        let expected: Vec<Sentence> = g
            .transfer_batch(&noisy, &c_ctx.generation)
            .unwrap()
            .into_iter()
            .map(non_empty)
            .collect();
        assert_eq!(c.generated, expected);
    }

    #[test]
    fn rec_no_noise_matches_zero_gamma() {
        let v = vocab();
        let run = |variant, gamma| {
            let mut f = model("f.", 1);
            let mut rng = RngState::new(6);
            let l = reconstruction_step(&mut f, &batch(), &ctx(&v, variant, gamma), &mut rng).unwrap();
            (l, save_params(f.store()))
        };
        assert_eq!(run(Variant::RecNoNoise, 0.3), run(Variant::Full, 0.0));
    }

    #[test]
    fn heavy_noise_never_yields_empty_inputs() {
        let v = vocab();
        let mut rng = RngState::new(8);
        let short = vec![Sentence(vec![4]); 200];
        let out = noisify(&short, &NoiseSpec::new(2.0), &v, &mut rng).unwrap();
        assert!(out.iter().all(|s| !s.is_empty()));
        assert!(out.iter().any(|s| s.ids() == [UNK]));
    }

    #[test]
    fn empty_batch_rejected() {
        let v = vocab();
        let mut f = model("f.", 1);
        let g = model("g.", 2);
        let mut rng = RngState::new(7);
        let c = ctx(&v, Variant::Full, 0.3);
        assert!(reconstruction_step(&mut f, &[], &c, &mut rng).is_err());
        assert!(transfer_step(&mut f, &g, &[], &c, &mut rng).is_err());
    }

    #[test]
    fn ablation_table_shape() {
        let m = MetricsReport {
            accuracy: 0.5,
            self_bleu: 0.25,
            ref_bleu: None,
            n: 2,
        };
        let rows: Vec<AblationRow> = Variant::TABLE_ORDER
            .into_iter()
            .map(|variant| AblationRow {
                variant,
                report: SystemReport {
                    x2y: m.clone(),
                    y2x: m.clone(),
                    average: m.clone(),
                },
            })
            .collect();
        let t = ablation_table(&rows);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 7);
        assert!(lines[1].starts_with("no-rec") && lines[6].starts_with("full"));
        assert!(lines[6].contains("25.0") && lines[6].contains("50.0"));
    }

    #[test]
    fn checkpoint_splits_back() {
        let f = model("f.", 1);
        let g = model("g.", 2);
        let bytes = checkpoint_bytes(&f, &g).unwrap();
        let (f2, g2) = load_checkpoint(&bytes).unwrap();
        assert_eq!(f2.store(), f.store());
        assert_eq!(g2.store(), g.store());
    }
}
