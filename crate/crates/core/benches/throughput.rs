//! Throughput of the data-parallel hot paths.
//!
//! Run once with default features and once with `--no-default-features`;
//! benchmark ids carry the backend name so criterion reports the two builds
//! side by side. The parallel build also measures a one-thread pool.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sssd_ecg::data::make_toy_corpus;
use sssd_ecg::diffusion::{ancestral_sample, build_schedule, denoising_loss};
use sssd_ecg::eval::{predict_records, ClassifierConfig, XResNet1d};
use sssd_ecg::model::{CachedSssd, SssdEcg, SssdEcgConfig};
use sssd_ecg::rng;
use sssd_ecg::s4::S4Config;
use sssd_nn::{par, Tape, Tensor};

fn backends() -> Vec<(&'static str, usize)> {
    if cfg!(feature = "parallel") {
        vec![("rayon", par::current_threads()), ("rayon-1thread", 1)]
    } else {
        vec![("sequential", 1)]
    }
}

fn bench_model() -> SssdEcg<f32> {
    let cfg = SssdEcgConfig {
        n_residual_layers: 2,
        residual_channels: 32,
        skip_channels: 32,
        diffusion_embed_dims: [32, 64, 64],
        n_labels: 71,
        length: 1000,
        zero_output_init: false,
        ..SssdEcgConfig::default()
    };
    SssdEcg::new(cfg, S4Config { state_size: 16, ..S4Config::default() }, 0).expect("valid config")
}

fn toy_corpus(c: &mut Criterion) {
    let mut g = c.benchmark_group("toy_corpus_200");
    g.sample_size(10);
    for (name, threads) in backends() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| par::with_threads(threads, || make_toy_corpus(200, 4, 1000, 1).expect("valid")))
        });
    }
    g.finish();
}

fn train_step(c: &mut Criterion) {
    let model = bench_model();
    let sched = build_schedule(50, 1e-4, 0.08).expect("valid schedule");
    let mut r = rng::seeded(1);
    let x0 = Tensor::<f32>::randn(&[4, 8, 1000], 1.0, &mut r);
    let cond = Tensor::<f32>::zeros(&[4, 71]);
    let mut g = c.benchmark_group("denoising_loss_backward_b4");
    g.sample_size(10);
    for (name, threads) in backends() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                par::with_threads(threads, || {
                    let tape = Tape::new();
                    let (loss, _) =
                        denoising_loss(&model, &tape, &x0, &cond, &sched, &mut rng::seeded(2)).expect("finite");
                    tape.backward(&loss).expect("backward")
                })
            })
        });
    }
    g.finish();
}

fn sampling(c: &mut Criterion) {
    let model = bench_model();
    let cached = CachedSssd::new(&model).expect("cache");
    let sched = build_schedule(5, 1e-4, 0.5).expect("valid schedule");
    let cond = Tensor::<f32>::zeros(&[8, 71]);
    let mut g = c.benchmark_group("ancestral_sample_b8_t5");
    g.sample_size(10);
    for (name, threads) in backends() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| par::with_threads(threads, || ancestral_sample(&cached, &cond, &sched, &[8, 8, 1000], 3)))
        });
    }
    g.finish();
}

fn classifier(c: &mut Criterion) {
    let clf = XResNet1d::<f32>::new(ClassifierConfig::desk(), 71, 0).expect("valid config");
    let data = make_toy_corpus(16, 4, 1000, 2).expect("valid");
    let mut g = c.benchmark_group("classifier_predict_16");
    g.sample_size(10);
    for (name, threads) in backends() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| par::with_threads(threads, || predict_records(&clf, &data.records).expect("predict")))
        });
    }
    g.finish();
}

criterion_group!(benches, toy_corpus, train_step, sampling, classifier);
criterion_main!(benches);
