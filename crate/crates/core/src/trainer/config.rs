//! Training configuration. The key table below is the single schema for the
//! config file format (`key = value` lines) and for command-line flags.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::eval::ClassifierConfig;
use crate::neural::AdamConfig;
use crate::transferrer::{GenerationConfig, TransferrerDims};

/// Training objective variants used for ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Full,
    NoRec,
    RecNoNoise,
    NoTran,
    TranNoNoise,
    PreNoise,
}

impl Variant {
    /// Row order of the ablation table.
    pub const TABLE_ORDER: [Variant; 6] = [
        Variant::NoRec,
        Variant::RecNoNoise,
        Variant::NoTran,
        Variant::TranNoNoise,
        Variant::PreNoise,
        Variant::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoRec => "no-rec",
            Variant::RecNoNoise => "rec-no-noise",
            Variant::NoTran => "no-tran",
            Variant::TranNoNoise => "tran-no-noise",
            Variant::PreNoise => "pre-noise",
        }
    }

    pub fn uses_reconstruction(self) -> bool {
        self != Variant::NoRec
    }

    pub fn uses_transfer(self) -> bool {
        self != Variant::NoTran
    }

    pub fn noisy_reconstruction(self) -> bool {
        self != Variant::RecNoNoise
    }

    /// Noise on the frozen transferrer's output before it is fed to the learner.
    pub fn noise_after_generation(self) -> bool {
        !matches!(self, Variant::TranNoNoise | Variant::PreNoise)
    }

    /// Noise on the source sentence before the frozen transferrer sees it.
    pub fn noise_before_generation(self) -> bool {
        self == Variant::PreNoise
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Variant> {
        Variant::TABLE_ORDER
            .into_iter()
            .find(|v| v.name() == s || (s == "full-model" && *v == Variant::Full))
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub data_dir: String,
    pub out_dir: String,
    pub log_path: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub gamma_initial: f64,
    pub gamma_late: f64,
    pub gamma_switch_epoch: usize,
    pub variant: Variant,
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub adam_eps: f32,
    pub clip_norm: f32,
    pub seed: u64,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub max_len_extra: usize,
    pub min_freq: usize,
    pub max_vocab: usize,
    pub dev_limit: usize,
    pub check_freeze: bool,
    pub cls_dim: usize,
    pub cls_buckets: usize,
    pub cls_epochs: usize,
    pub cls_lr: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            data_dir: "data".into(),
            out_dir: "runs/dgst".into(),
            log_path: String::new(),
            epochs: 60,
            batch_size: 32,
            gamma_initial: 0.3,
            gamma_late: 0.03,
            gamma_switch_epoch: 50,
            variant: Variant::Full,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 5.0,
            seed: 1,
            embed_dim: 64,
            hidden_dim: 256,
            layers: 4,
            max_len_extra: 5,
            min_freq: 2,
            max_vocab: 10_000,
            dev_limit: 500,
            check_freeze: true,
            cls_dim: 16,
            cls_buckets: 1 << 20,
            cls_epochs: 5,
            cls_lr: 0.1,
        }
    }
}

/// Every config key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("data_dir", "corpus directory holding <style>.<split>.txt files"),
    ("out_dir", "directory for checkpoints, vocabulary and logs (empty: write nothing)"),
    ("log_path", "per-epoch metric log (empty: <out_dir>/metrics.tsv)"),
    ("epochs", "training epochs"),
    ("batch_size", "sentences per batch and transferrer"),
    ("gamma_initial", "noise intensity up to and including gamma_switch_epoch"),
    ("gamma_late", "noise intensity after gamma_switch_epoch"),
    ("gamma_switch_epoch", "last epoch trained with gamma_initial"),
    ("variant", "full | no-rec | rec-no-noise | no-tran | tran-no-noise | pre-noise"),
    ("lr", "Adam learning rate"),
    ("beta1", "Adam first-moment decay"),
    ("beta2", "Adam second-moment decay"),
    ("adam_eps", "Adam epsilon"),
    ("clip_norm", "global gradient-norm clip (0 disables)"),
    ("seed", "random seed"),
    ("embed_dim", "token embedding size"),
    ("hidden_dim", "LSTM hidden size"),
    ("layers", "encoder and decoder depth"),
    ("max_len_extra", "generated length cap beyond the input length"),
    ("min_freq", "minimum token count for the vocabulary"),
    ("max_vocab", "vocabulary size cap, specials included"),
    ("dev_limit", "dev sentences per style evaluated after each epoch"),
    ("check_freeze", "verify the frozen transferrer is untouched once per epoch"),
    ("cls_dim", "style classifier embedding size"),
    ("cls_buckets", "style classifier hash buckets"),
    ("cls_epochs", "style classifier training epochs"),
    ("cls_lr", "style classifier learning rate"),
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

impl TrainConfig {
    /// Desk-scale settings for the synthetic marker corpus: a single-layer
    /// model with the noise switch moved inside a 30-epoch budget. Writes
    /// nothing to disk.
    pub fn synthetic() -> TrainConfig {
        TrainConfig {
            out_dir: String::new(),
            epochs: 30,
            batch_size: 16,
            gamma_switch_epoch: 10,
            lr: 5e-4,
            embed_dim: 32,
            hidden_dim: 256,
            layers: 1,
            min_freq: 1,
            dev_limit: 200,
            ..TrainConfig::default()
        }
    }

    pub fn get(&self, key: &str) -> Result<String> {
        Ok(match key {
            "data_dir" => self.data_dir.clone(),
            "out_dir" => self.out_dir.clone(),
            "log_path" => self.log_path.clone(),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "gamma_initial" => self.gamma_initial.to_string(),
            "gamma_late" => self.gamma_late.to_string(),
            "gamma_switch_epoch" => self.gamma_switch_epoch.to_string(),
            "variant" => self.variant.to_string(),
            "lr" => self.lr.to_string(),
            "beta1" => self.beta1.to_string(),
            "beta2" => self.beta2.to_string(),
            "adam_eps" => self.adam_eps.to_string(),
            "clip_norm" => self.clip_norm.to_string(),
            "seed" => self.seed.to_string(),
            "embed_dim" => self.embed_dim.to_string(),
            "hidden_dim" => self.hidden_dim.to_string(),
            "layers" => self.layers.to_string(),
            "max_len_extra" => self.max_len_extra.to_string(),
            "min_freq" => self.min_freq.to_string(),
            "max_vocab" => self.max_vocab.to_string(),
            "dev_limit" => self.dev_limit.to_string(),
            "check_freeze" => self.check_freeze.to_string(),
            "cls_dim" => self.cls_dim.to_string(),
            "cls_buckets" => self.cls_buckets.to_string(),
            "cls_epochs" => self.cls_epochs.to_string(),
            "cls_lr" => self.cls_lr.to_string(),
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        })
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "data_dir" => self.data_dir = v.to_string(),
            "out_dir" => self.out_dir = v.to_string(),
            "log_path" => self.log_path = v.to_string(),
            "epochs" => self.epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "gamma_initial" => self.gamma_initial = parse(key, v)?,
            "gamma_late" => self.gamma_late = parse(key, v)?,
            "gamma_switch_epoch" => self.gamma_switch_epoch = parse(key, v)?,
            "variant" => self.variant = v.parse()?,
            "lr" => self.lr = parse(key, v)?,
            "beta1" => self.beta1 = parse(key, v)?,
            "beta2" => self.beta2 = parse(key, v)?,
            "adam_eps" => self.adam_eps = parse(key, v)?,
            "clip_norm" => self.clip_norm = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "embed_dim" => self.embed_dim = parse(key, v)?,
            "hidden_dim" => self.hidden_dim = parse(key, v)?,
            "layers" => self.layers = parse(key, v)?,
            "max_len_extra" => self.max_len_extra = parse(key, v)?,
            "min_freq" => self.min_freq = parse(key, v)?,
            "max_vocab" => self.max_vocab = parse(key, v)?,
            "dev_limit" => self.dev_limit = parse(key, v)?,
            "check_freeze" => self.check_freeze = parse(key, v)?,
            "cls_dim" => self.cls_dim = parse(key, v)?,
            "cls_buckets" => self.cls_buckets = parse(key, v)?,
            "cls_epochs" => self.cls_epochs = parse(key, v)?,
            "cls_lr" => self.cls_lr = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and lines
    /// starting with `#` are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<TrainConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = TrainConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|(k, _)| format!("{k} = {}\n", self.get(k).expect("every listed key is readable")))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return fail("epochs must be ≥ 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be ≥ 1".into());
        }
        for (name, g) in [("gamma_initial", self.gamma_initial), ("gamma_late", self.gamma_late)] {
            if !(g >= 0.0 && g.is_finite()) {
                return fail(format!("{name} must be ≥ 0"));
            }
        }
        if self.gamma_switch_epoch > self.epochs {
            return fail(format!(
                "gamma_switch_epoch ({}) exceeds epochs ({})",
                self.gamma_switch_epoch, self.epochs
            ));
        }
        if self.lr.is_nan() || self.lr <= 0.0 || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("invalid optimizer hyperparameters".into());
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.layers == 0 {
            return fail("model dimensions must be ≥ 1".into());
        }
        if self.min_freq == 0 || self.max_vocab < 5 {
            return fail("min_freq must be ≥ 1 and max_vocab ≥ 5".into());
        }
        if self.cls_dim == 0 || self.cls_buckets == 0 {
            return fail("classifier dimensions must be ≥ 1".into());
        }
        Ok(())
    }

    /// Noise intensity for a 1-based epoch.
    pub fn gamma_at(&self, epoch: usize) -> f64 {
        if epoch <= self.gamma_switch_epoch {
            self.gamma_initial
        } else {
            self.gamma_late
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn generation(&self) -> GenerationConfig {
        GenerationConfig {
            max_len_extra: self.max_len_extra,
        }
    }

    pub fn dims(&self, vocab: usize) -> TransferrerDims {
        TransferrerDims {
            vocab,
            embed: self.embed_dim,
            hidden: self.hidden_dim,
            layers: self.layers,
        }
    }

    pub fn classifier(&self) -> ClassifierConfig {
        ClassifierConfig {
            dim: self.cls_dim,
            buckets: self.cls_buckets,
            epochs: self.cls_epochs,
            lr: self.cls_lr,
            seed: self.seed,
        }
    }
}
