use std::fs;

use dgst_core::neural::AdamConfig;
use dgst_core::neural::Graph;
use dgst_core::trainer::{
    load_checkpoint, make_synthetic_corpus, reconstruction_step, StepContext, SyntheticSpec,
};
use dgst_core::transferrer::GenerationConfig;
use dgst_core::{
    train_classifier, train_dgst, NoiseSpec, RngState, Sentence, StyleData, TrainConfig, Transferrer, TransferrerDims,
    Variant,
};

fn toy_data(n: usize) -> StyleData {
    let spec = SyntheticSpec {
        n_train: n,
        n_dev: 20,
        n_test: 20,
        ..SyntheticSpec::default()
    };
    make_synthetic_corpus(&spec).unwrap().to_style_data().unwrap()
}

fn tiny_config(dir: &std::path::Path) -> TrainConfig {
    TrainConfig {
        out_dir: dir.to_string_lossy().into_owned(),
        epochs: 3,
        gamma_switch_epoch: 2,
        embed_dim: 8,
        hidden_dim: 16,
        cls_buckets: 1 << 12,
        ..TrainConfig::synthetic()
    }
}

#[test]
fn reconstruction_loss_halves_in_200_steps() {
    let data = toy_data(50);
    let dims = TransferrerDims {
        vocab: data.vocab.len(),
        embed: 32,
        hidden: 64,
        layers: 1,
    };
    let mut f = Transferrer::new("f.", dims, &mut RngState::new(1)).unwrap();
    let ctx = StepContext {
        vocab: &data.vocab,
        variant: Variant::Full,
        noise: NoiseSpec::new(0.3),
        adam: AdamConfig::default(),
        clip_norm: 5.0,
        generation: GenerationConfig::default(),
    };
    let mut rng = RngState::new(2);
    let batch = &data.y.train[..];
    let eval = |f: &Transferrer| {
        let mut g = Graph::new();
        let l = f.teacher_forced_loss(&mut g, batch, batch).unwrap();
        g.value(l).item()
    };
    let initial = eval(&f);
    for _ in 0..200 {
        reconstruction_step(&mut f, batch, &ctx, &mut rng).unwrap();
    }
    let last = eval(&f);
    assert!(last < 0.5 * initial, "{initial} -> {last}");
}

#[test]
fn overfits_one_pair_at_default_learning_rate() {
    let dims = TransferrerDims {
        vocab: 12,
        embed: 64,
        hidden: 256,
        layers: 4,
    };
    let mut t = Transferrer::new("f.", dims, &mut RngState::new(3)).unwrap();
    let x = vec![Sentence(vec![4, 5, 6, 7])];
    let y = vec![Sentence(vec![8, 9, 10])];
    let adam = AdamConfig::default();
    let mut loss = f32::INFINITY;
    for _ in 0..500 {
        let mut g = Graph::new();
        let l = t.teacher_forced_loss(&mut g, &x, &y).unwrap();
        loss = g.value(l).item();
        g.backward(l, t.store_mut()).unwrap();
        t.store_mut().clip_grad_norm(5.0);
        t.store_mut().adam_step(&adam);
    }
    assert!(loss < 0.01, "loss {loss}");
}

#[test]
fn run_writes_log_checkpoints_and_follows_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let data = toy_data(64);
    let cls = train_classifier(&data.x.train, &data.y.train, &cfg.classifier()).unwrap();
    let out = train_dgst(&cfg, &data, &cls).unwrap();

    let gammas: Vec<f64> = out.history.iter().map(|s| s.gamma).collect();
    assert_eq!(gammas, vec![0.3, 0.3, 0.03]);
    for s in &out.history {
        assert_eq!(s.total_loss(), s.rec_f + s.tran_f + s.rec_g + s.tran_g);
        assert_eq!(s.freeze_checks, 2);
        assert!(s.total_loss().is_finite() && s.total_loss() > 0.0);
    }

    let log = fs::read_to_string(dir.path().join("metrics.tsv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines.iter().all(|l| l.split('\t').count() == 7));
    assert!(lines[2].starts_with("3\t"));

    let (f, g) = load_checkpoint(&fs::read(dir.path().join("last.ckpt")).unwrap()).unwrap();
    assert_eq!(f.store(), out.f.store());
    assert_eq!(g.store(), out.g.store());
    assert!(dir.path().join("best.ckpt").exists());
    let vocab = dgst_core::Vocab::load(&dir.path().join("vocab.txt")).unwrap();
    assert_eq!(vocab, data.vocab);
    let saved = TrainConfig::from_file(&dir.path().join("config.txt")).unwrap();
    assert_eq!(saved, cfg);
}

#[test]
fn no_rec_and_no_tran_skip_their_terms() {
    let data = toy_data(32);
    let mut cfg = tiny_config(std::path::Path::new(""));
    cfg.out_dir = String::new();
    cfg.epochs = 1;
    cfg.gamma_switch_epoch = 1;
    let cls = train_classifier(&data.x.train, &data.y.train, &cfg.classifier()).unwrap();

    cfg.variant = Variant::NoRec;
    let s = &train_dgst(&cfg, &data, &cls).unwrap().history[0];
    assert_eq!((s.rec_f, s.rec_g), (0.0, 0.0));
    assert!(s.tran_f > 0.0 && s.tran_g > 0.0);

    cfg.variant = Variant::NoTran;
    let s = &train_dgst(&cfg, &data, &cls).unwrap().history[0];
    assert_eq!((s.tran_f, s.tran_g), (0.0, 0.0));
    assert!(s.rec_f > 0.0 && s.rec_g > 0.0);
}

#[test]
fn invalid_config_is_rejected_before_training() {
    let data = toy_data(8);
    let cfg = TrainConfig {
        gamma_switch_epoch: 10,
        epochs: 5,
        out_dir: String::new(),
        ..TrainConfig::synthetic()
    };
    let cls = train_classifier(&data.x.train, &data.y.train, &cfg.classifier()).unwrap();
    assert!(train_dgst(&cfg, &data, &cls).is_err());
}
