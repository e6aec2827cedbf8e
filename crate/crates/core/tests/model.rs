use std::collections::BTreeMap;

use sssd_ecg::data::{make_toy_corpus, LabelVector, LabelVocabulary};
use sssd_ecg::diffusion::{build_schedule, denoising_loss, NoisePredictor};
use sssd_ecg::error::Error;
use sssd_ecg::leads::check_lead_consistency;
use sssd_ecg::model::{generate_dataset_copy, sinusoidal_embedding, CachedSssd, GenerateOptions, SssdEcg, SssdEcgConfig};
use sssd_ecg::rng;
use sssd_ecg::s4::S4Config;
use sssd_nn::{Adam, AdamConfig, Tape, Tensor};

fn tiny(layers: usize, channels: usize, length: usize, zero_out: bool) -> SssdEcgConfig {
    SssdEcgConfig {
        n_residual_layers: layers,
        residual_channels: channels,
        skip_channels: channels,
        diffusion_embed_dims: [16, 32, 32],
        n_labels: 71,
        label_embed_dim: None,
        out_leads: 8,
        length,
        zero_output_init: zero_out,
    }
}

fn s4(n: usize) -> S4Config {
    S4Config {
        state_size: n,
        ..S4Config::default()
    }
}

fn random_batch(b: usize, len: usize, seed: u64) -> (Tensor<f64>, Tensor<f64>) {
    let mut r = rng::seeded(seed);
    let x = Tensor::randn(&[b, 8, len], 1.0, &mut r);
    let c = Tensor::from_fn(&[b, 71], |i| if (i * 7 + seed as usize) % 5 == 0 { 1.0 } else { 0.0 });
    (x, c)
}

fn run(m: &SssdEcg<f64>, x: &Tensor<f64>, steps: &[usize], c: &Tensor<f64>) -> Tensor<f64> {
    let tape = Tape::inference();
    m.forward(&tape, &tape.constant(x.clone()), steps, c, None).unwrap().into_tensor()
}

#[test]
fn output_shape_matches_input() {
    let m = SssdEcg::<f64>::new(tiny(2, 8, 64, false), s4(4), 1).unwrap();
    let (x, c) = random_batch(2, 64, 3);
    let y = run(&m, &x, &[0, 17], &c);
    assert_eq!(y.shape(), &[2, 8, 64]);
    assert!(y.all_finite());
}

#[test]
fn shape_violations_are_rejected() {
    let m = SssdEcg::<f64>::new(tiny(1, 8, 64, true), s4(4), 1).unwrap();
    let tape = Tape::inference();
    let wrong_len = tape.constant(Tensor::zeros(&[1, 8, 63]));
    let c = Tensor::zeros(&[1, 71]);
    assert!(matches!(m.forward(&tape, &wrong_len, &[0], &c, None), Err(Error::InputShape(_))));
    let wrong_leads = tape.constant(Tensor::zeros(&[1, 12, 64]));
    assert!(matches!(m.forward(&tape, &wrong_leads, &[0], &c, None), Err(Error::InputShape(_))));
    let x = tape.constant(Tensor::zeros(&[1, 8, 64]));
    let short = Tensor::zeros(&[1, 70]);
    assert!(matches!(m.forward(&tape, &x, &[0], &short, None), Err(Error::ConditionShape(_))));
    assert!(matches!(m.embed_condition(&tape, &short, 0), Err(Error::ConditionShape(_))));
    assert!(matches!(m.forward(&tape, &x, &[0, 1], &c, None), Err(Error::InputShape(_))));
}

#[test]
fn config_validation() {
    let mut cfg = tiny(2, 8, 64, true);
    cfg.out_leads = 12;
    assert!(matches!(SssdEcg::<f32>::new(cfg, s4(4), 0), Err(Error::Config(_))));
    let mut cfg = tiny(2, 8, 64, true);
    cfg.n_residual_layers = 0;
    assert!(SssdEcg::<f32>::new(cfg, s4(4), 0).is_err());
    let cfg: SssdEcgConfig = serde_json::from_str(
        r#"{"n_residual_layers":36,"residual_channels":256,"skip_channels":256,
            "diffusion_embed_dims":[128,512,512],"n_labels":71,"out_leads":8,"length":1000}"#,
    )
    .unwrap();
    assert_eq!(cfg, SssdEcgConfig::default());
    assert!(serde_json::from_str::<SssdEcgConfig>(r#"{"n_residual_layers":1,"bogus":2}"#).is_err());
}

#[test]
fn construction_and_forward_are_deterministic() {
    let a = SssdEcg::<f64>::new(tiny(2, 8, 64, false), s4(4), 9).unwrap();
    let b = SssdEcg::<f64>::new(tiny(2, 8, 64, false), s4(4), 9).unwrap();
    let c = SssdEcg::<f64>::new(tiny(2, 8, 64, false), s4(4), 10).unwrap();
    let (x, cond) = random_batch(2, 64, 1);
    let ya = run(&a, &x, &[3, 4], &cond);
    assert_eq!(ya, run(&b, &x, &[3, 4], &cond));
    assert_eq!(ya, run(&a, &x, &[3, 4], &cond));
    assert!(ya.max_abs_diff(&run(&c, &x, &[3, 4], &cond)).unwrap() > 0.0);
}

#[test]
fn zero_output_init_predicts_zero() {
    let m = SssdEcg::<f64>::new(tiny(2, 8, 64, true), s4(4), 2).unwrap();
    let (x, c) = random_batch(2, 64, 5);
    assert_eq!(run(&m, &x, &[1, 2], &c).max_abs(), 0.0);
}

#[test]
fn step_embedding_separates_steps() {
    let steps: Vec<usize> = (0..200).collect();
    let e = sinusoidal_embedding::<f64>(&steps, 128);
    assert_eq!(e.shape(), &[200, 128]);
    // Row t = 0 is [0; 64] followed by [1; 64].
    assert!(e.data()[..64].iter().all(|&v| v == 0.0));
    assert!(e.data()[64..128].iter().all(|&v| v == 1.0));
    for i in 0..200 {
        for j in 0..i {
            let d: f64 = (0..128).map(|k| (e.get(&[i, k]) - e.get(&[j, k])).powi(2)).sum();
            assert!(d > 1e-6, "steps {i} and {j} collide");
        }
    }
    let m = SssdEcg::<f64>::new(tiny(1, 8, 64, true), s4(4), 2).unwrap();
    let tape = Tape::inference();
    let emb = m.embed_steps(&tape, &[0, 1, 49]).unwrap();
    assert_eq!(emb.shape(), &[3, 32]);
}

#[test]
fn condition_embedding_is_affine() {
    let m = SssdEcg::<f64>::new(tiny(2, 8, 64, true), s4(4), 4).unwrap();
    let tape = Tape::inference();
    let a = Tensor::from_fn(&[1, 71], |i| if i % 3 == 0 { 1.0 } else { 0.0 });
    let b = Tensor::from_fn(&[1, 71], |i| if i % 4 == 1 { 1.0 } else { 0.0 });
    for layer in 0..2 {
        let ea = m.embed_condition(&tape, &a, layer).unwrap().into_tensor();
        let eb = m.embed_condition(&tape, &b, layer).unwrap().into_tensor();
        for alpha in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let mix = a.zip_map(&b, |x, y| alpha * x + (1.0 - alpha) * y).unwrap();
            let em = m.embed_condition(&tape, &mix, layer).unwrap().into_tensor();
            let lin = ea.zip_map(&eb, |x, y| alpha * x + (1.0 - alpha) * y).unwrap();
            assert!(em.max_abs_diff(&lin).unwrap() < 1e-6);
        }
    }
    // Zero input gives the projection bias; a basis vector gives a matrix row.
    let zero = m.label_embedding(&tape, &Tensor::zeros(&[1, 71])).unwrap();
    assert_eq!(zero.value().max_abs(), 0.0);
    let e5 = Tensor::from_fn(&[1, 71], |i| if i == 5 { 1.0 } else { 0.0 });
    let row = m.label_embedding(&tape, &e5).unwrap().into_tensor();
    let matrix = m.store.get(m.store.find("label_embed.matrix").unwrap());
    assert_eq!(row.data(), &matrix.data()[5 * 8..6 * 8]);
    let bias = m.store.get(m.store.find("layers.0.fc_label.bias").unwrap());
    let e0 = m.embed_condition(&tape, &Tensor::zeros(&[1, 71]), 0).unwrap();
    assert_eq!(e0.value().data(), bias.data());
}

#[test]
fn residual_layer_zero_network_gives_zero() {
    let mut m = SssdEcg::<f64>::new(tiny(2, 8, 32, true), s4(4), 4).unwrap();
    let ids: Vec<_> = m
        .store
        .iter()
        .filter(|(_, p)| p.name.contains("res_conv") || p.name.contains("skip_conv"))
        .map(|(id, _)| id)
        .collect();
    for id in ids {
        let z = Tensor::zeros(m.store.get(id).shape());
        m.store.set(id, z).unwrap();
    }
    let tape = Tape::inference();
    let x = tape.constant(Tensor::zeros(&[1, 8, 32]));
    let t = tape.constant(Tensor::zeros(&[1, 32]));
    let c = tape.constant(Tensor::zeros(&[1, 8]));
    let (res, skip) = m.residual_layer_forward(&tape, 0, &x, &t, &c, None).unwrap();
    assert_eq!(res.value().max_abs(), 0.0);
    assert_eq!(skip.value().max_abs(), 0.0);
}

#[test]
fn residual_layer_responds_to_condition() {
    let m = SssdEcg::<f64>::new(tiny(2, 8, 32, false), s4(4), 4).unwrap();
    let tape = Tape::inference();
    let mut r = rng::seeded(1);
    let x = tape.constant(Tensor::randn(&[1, 8, 32], 1.0, &mut r));
    let t = m.embed_steps(&tape, &[3]).unwrap();
    let c0 = Tensor::zeros(&[1, 71]);
    let delta = 1e-4;
    let c1 = Tensor::from_fn(&[1, 71], |i| if i == 2 { delta } else { 0.0 });
    let out = |c: &Tensor<f64>| {
        let e = m.label_embedding(&tape, c).unwrap();
        let (res, skip) = m.residual_layer_forward(&tape, 0, &x, &t, &e, None).unwrap();
        (res.into_tensor(), skip.into_tensor())
    };
    let (r0, s0) = out(&c0);
    let (r1, s1) = out(&c1);
    let jac = |a: &Tensor<f64>, b: &Tensor<f64>| a.zip_map(b, |x, y| (x - y) / delta).unwrap().norm();
    assert!(jac(&r0, &r1) >= 1e-8);
    assert!(jac(&s0, &s1) >= 1e-8);
    let (r2, _) = out(&c0);
    assert_eq!(r0, r2);
}

#[test]
fn output_depends_on_condition() {
    let m = SssdEcg::<f64>::new(tiny(2, 8, 64, false), s4(4), 6).unwrap();
    let (x, c) = random_batch(1, 64, 8);
    let other = c.map(|v| 1.0 - v);
    let d = run(&m, &x, &[5], &c).max_abs_diff(&run(&m, &x, &[5], &other)).unwrap();
    assert!(d > 0.0);
}

#[test]
fn init_output_stays_bounded_with_depth() {
    for layers in [2, 36] {
        let m = SssdEcg::<f32>::new(tiny(layers, 16, 200, false), s4(8), 3).unwrap();
        let mut r = rng::seeded(4);
        let tape = Tape::inference();
        let x = tape.constant(Tensor::randn(&[2, 8, 200], 1.0, &mut r));
        let c = Tensor::from_fn(&[2, 71], |i| (i % 2) as f32);
        let y = m.forward(&tape, &x, &[0, 199], &c, None).unwrap();
        let peak = y.value().max_abs();
        assert!(peak < 1e3, "{layers} layers: max |y| = {peak}");
    }
}

fn loss_and_grads(m: &SssdEcg<f64>, seed: u64) -> (f64, BTreeMap<String, f64>) {
    let sched = build_schedule(50, 1e-4, 0.08).unwrap();
    let (x, c) = random_batch(2, 64, 11);
    let tape = Tape::new();
    let (loss, v) = denoising_loss(m, &tape, &x, &c, &sched, &mut rng::seeded(seed)).unwrap();
    let grads = tape.backward(&loss).unwrap();
    let mut norms = BTreeMap::new();
    for (id, p) in m.store.iter() {
        if p.trainable {
            norms.insert(p.name.clone(), grads.param(id).map_or(0.0, |g| g.norm()));
        }
    }
    (v.value, norms)
}

#[test]
fn every_parameter_group_receives_gradient() {
    // Random output layer: gradient reaches everything at init.
    let m = SssdEcg::<f64>::new(tiny(2, 8, 64, false), s4(4), 12).unwrap();
    let (_, norms) = loss_and_grads(&m, 1);
    for (name, n) in &norms {
        assert!(*n > 0.0, "{name} has zero gradient");
    }

    // Zero output layer: only it is reached at init, everything after one step.
    let mut m = SssdEcg::<f64>::new(tiny(2, 8, 64, true), s4(4), 12).unwrap();
    let (_, norms) = loss_and_grads(&m, 1);
    for (name, n) in &norms {
        assert_eq!(*n > 0.0, name.starts_with("out_conv"), "{name}: {n}");
    }
    let sched = build_schedule(50, 1e-4, 0.08).unwrap();
    let (x, c) = random_batch(2, 64, 11);
    let tape = Tape::new();
    let (loss, _) = denoising_loss(&m, &tape, &x, &c, &sched, &mut rng::seeded(1)).unwrap();
    let g = tape.backward(&loss).unwrap();
    Adam::new(AdamConfig::with_lr(1e-3)).step(&mut m.store, &g).unwrap();
    let (_, norms) = loss_and_grads(&m, 2);
    for (name, n) in &norms {
        assert!(*n > 0.0, "{name} has zero gradient after one step");
    }
}

#[test]
fn one_step_reduces_batch_loss() {
    let cfg = SssdEcgConfig {
        diffusion_embed_dims: [128, 512, 512],
        ..tiny(2, 64, 256, true)
    };
    let mut m = SssdEcg::<f64>::new(cfg, s4(16), 21).unwrap();
    let sched = build_schedule(50, 1e-4, 0.08).unwrap();
    let (x, c) = random_batch(2, 256, 4);
    let eval = |m: &SssdEcg<f64>| {
        let tape = Tape::new();
        let (loss, v) = denoising_loss(m, &tape, &x, &c, &sched, &mut rng::seeded(77)).unwrap();
        (v.value, tape.backward(&loss).unwrap())
    };
    let (before, grads) = eval(&m);
    Adam::new(AdamConfig::with_lr(1e-4)).step(&mut m.store, &grads).unwrap();
    let (after, _) = eval(&m);
    assert!(after < before, "{after} >= {before}");
}

#[test]
fn cached_predictor_matches_uncached() {
    let m = SssdEcg::<f64>::new(tiny(2, 8, 64, false), s4(4), 13).unwrap();
    let cached = CachedSssd::new(&m).unwrap();
    let (x, c) = random_batch(2, 64, 2);
    let tape = Tape::inference();
    let xv = tape.constant(x.clone());
    let a = cached.predict(&tape, &xv, &[1, 9], &c).unwrap().into_tensor();
    let b = run(&m, &x, &[1, 9], &c);
    assert!(a.max_abs_diff(&b).unwrap() < 1e-10);
}

#[test]
fn dataset_copy_contract() {
    let m = SssdEcg::<f32>::new(tiny(1, 8, 100, false), s4(4), 14).unwrap();
    let sched = build_schedule(4, 1e-4, 0.2).unwrap();
    let vocab = LabelVocabulary::ptbxl();
    let labels: Vec<LabelVector> = (0..5)
        .map(|i| LabelVector::new((0..71).map(|j| ((i + j) % 9 == 0) as u8 as f32).collect()).unwrap())
        .collect();
    let opts = GenerateOptions { batch_size: 2, seed: 3 };
    let ds = generate_dataset_copy(&m, &labels, None, &vocab, &sched, &opts).unwrap();
    assert_eq!(ds.len(), 5);
    assert_eq!(ds.labels, labels);
    for (i, r) in ds.records.iter().enumerate() {
        assert_eq!(r.n_leads, 12);
        assert_eq!(r.len(), 100);
        assert_eq!(r.fold as usize, i % 10 + 1);
        assert_eq!(r.record_id, format!("synth-{i:05}"));
        let c = check_lead_consistency(&r.lead_major(), 1e-6).unwrap();
        assert!(c.consistent, "record {i}: {}", c.max_residual);
    }
    // Same seed, different batching: identical records.
    let again = generate_dataset_copy(&m, &labels, None, &vocab, &sched, &GenerateOptions { batch_size: 5, seed: 3 }).unwrap();
    assert_eq!(again, ds);
    let other = generate_dataset_copy(&m, &labels, None, &vocab, &sched, &GenerateOptions { batch_size: 5, seed: 4 }).unwrap();
    assert_ne!(other.records[0].signal, ds.records[0].signal);
}

#[test]
fn synth_copy_keeps_folds_and_labels() {
    let real = make_toy_corpus(12, 4, 100, 1).unwrap();
    let m = SssdEcg::<f32>::new(tiny(1, 8, 100, false), s4(4), 14).unwrap();
    let sched = build_schedule(2, 1e-4, 0.2).unwrap();
    let s = sssd_ecg::model::synth_copy(&m, &real, &sched, &GenerateOptions::default()).unwrap();
    assert_eq!(s.labels, real.labels);
    let folds = |d: &sssd_ecg::data::Dataset| d.records.iter().map(|r| r.fold).collect::<Vec<_>>();
    assert_eq!(folds(&s), folds(&real));
}
