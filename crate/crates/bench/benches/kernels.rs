use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use dgst_bench::{random_batch, transferrer};
use dgst_core::eval::{bleu, train_classifier, ClassifierConfig};
use dgst_core::neural::{Graph, Tensor};
use dgst_core::transferrer::GenerationConfig;
use dgst_core::{edit_distance, neighbourhood_sample, NoiseSpec, RngState, Vocab};

fn linear(c: &mut Criterion) {
    let mut group = c.benchmark_group("linear");
    for n in [64usize, 256] {
        let x = Tensor::filled(&[32, n], 0.5);
        let w = Tensor::filled(&[n, 4 * n], 0.01);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| {
                let mut g = Graph::new();
                let xv = g.input(x.clone()).unwrap();
                let wv = g.input(w.clone()).unwrap();
                black_box(g.linear(xv, wv, None).unwrap());
            })
        });
    }
    group.finish();
}

fn teacher_forced(c: &mut Criterion) {
    let mut group = c.benchmark_group("teacher_forced_step");
    group.sample_size(20);
    for hidden in [64usize, 128] {
        let mut t = transferrer(40, 32, hidden, 1);
        let batch = random_batch(&mut RngState::new(2), 32, 16, 40);
        group.bench_with_input(BenchmarkId::from_parameter(hidden), &hidden, |b, _| {
            b.iter(|| {
                let mut g = Graph::new();
                let loss = t.teacher_forced_loss(&mut g, &batch, &batch).unwrap();
                g.backward(loss, t.store_mut()).unwrap();
                t.store_mut().zero_grads();
            })
        });
    }
    group.finish();
}

fn greedy(c: &mut Criterion) {
    let t = transferrer(40, 32, 128, 1);
    let batch = random_batch(&mut RngState::new(3), 32, 16, 40);
    let cfg = GenerationConfig::default();
    c.bench_function("greedy_transfer_32x16", |b| b.iter(|| black_box(t.transfer_batch(&batch, &cfg).unwrap())));
}

fn text_metrics(c: &mut Criterion) {
    let mut rng = RngState::new(4);
    let a = random_batch(&mut rng, 500, 16, 1000);
    let r = random_batch(&mut rng, 500, 16, 1000);
    c.bench_function("bleu_500", |b| b.iter(|| black_box(bleu(&a, &r, 4).unwrap())));
    c.bench_function("edit_distance_16", |b| {
        b.iter(|| black_box(edit_distance(a[0].ids(), r[0].ids())))
    });
    let vocab = Vocab::from_tokens((0..996).map(|i| format!("t{i}")));
    let spec = NoiseSpec::new(0.3);
    c.bench_function("neighbourhood_sample_16", |b| {
        b.iter(|| black_box(neighbourhood_sample(&a[1], &spec, &vocab, &mut rng).unwrap()))
    });
    let cfg = ClassifierConfig {
        buckets: 1 << 16,
        ..ClassifierConfig::default()
    };
    let cls = train_classifier(&a, &r, &cfg).unwrap();
    c.bench_function("classify_500", |b| b.iter(|| black_box(cls.rate(&a, dgst_core::Style::X))));
}

criterion_group!(benches, linear, teacher_forced, greedy, text_metrics);
criterion_main!(benches);
