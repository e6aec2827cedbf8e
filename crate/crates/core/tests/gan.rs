use sssd_ecg::data::make_toy_corpus;
use sssd_ecg::error::Error;
use sssd_ecg::gan::*;
use sssd_ecg::layers::BnStat;
use sssd_ecg::rng;
use sssd_nn::{Float, ParamStore, Tape, Tensor};

fn small(arch: GanArch) -> GanConfig {
    GanConfig {
        arch,
        model_size: 4,
        latent_dim: 16,
        kernel_size: 5,
        n_labels: 71,
        length: 128,
        lr: 1e-3,
        batch_size: 8,
        epochs: 1,
    }
}

fn binary_cond<F: Float>(b: usize, k: usize, seed: u64) -> Tensor<F> {
    let mut r = rng::seeded(seed);
    Tensor::from_fn(&[b, k], |_| if rand::Rng::gen_bool(&mut r, 0.5) { F::one() } else { F::zero() })
}

/// Batch-norm oracle over batch and time with biased variance.
fn standardize_oracle(x: &Tensor<f64>) -> Tensor<f64> {
    let (b, c, l) = (x.dim(0), x.dim(1), x.dim(2));
    let mut out = x.clone();
    for ch in 0..c {
        let vals: Vec<f64> = (0..b).flat_map(|i| (0..l).map(move |t| (i, t))).map(|(i, t)| x.get(&[i, ch, t])).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        for i in 0..b {
            for t in 0..l {
                out.set(&[i, ch, t], (x.get(&[i, ch, t]) - mean) / (var + 1e-5).sqrt());
            }
        }
    }
    out
}

fn cbn_setup(c: usize, k: usize) -> (ParamStore<f64>, CondBatchNorm) {
    let mut store = ParamStore::new();
    let cbn = CondBatchNorm::new(&mut store, "cbn", c, k, &mut rng::seeded(1));
    (store, cbn)
}

fn run_cbn(store: &ParamStore<f64>, cbn: &CondBatchNorm, x: &Tensor<f64>, c: &Tensor<f64>) -> Tensor<f64> {
    let tape = Tape::inference();
    let mut stats: Vec<BnStat<f64>> = Vec::new();
    cbn.forward(&tape, store, &tape.constant(x.clone()), &tape.constant(c.clone()), Some(&mut stats))
        .unwrap()
        .into_tensor()
}

#[test]
fn cbn_with_zero_embedding_is_plain_batch_norm() {
    let (mut store, cbn) = cbn_setup(3, 4);
    store.set(cbn.embed.weight, Tensor::zeros(&[4, 6])).unwrap();
    let x = Tensor::randn(&[5, 3, 7], 2.0, &mut rng::seeded(2)).map(|v| v + 1.5);
    let y = run_cbn(&store, &cbn, &x, &binary_cond(5, 4, 3));
    assert!(y.max_abs_diff(&standardize_oracle(&x)).unwrap() < 1e-12);
}

#[test]
fn cbn_matches_closed_form() {
    let (store, cbn) = cbn_setup(3, 4);
    // The label embedding bias starts at zero.
    assert!(store.get(cbn.embed.bias.unwrap()).data().iter().all(|&v| v == 0.0));
    let x = Tensor::randn(&[4, 3, 6], 1.0, &mut rng::seeded(5));
    let cond = binary_cond(4, 4, 6);
    let y = run_cbn(&store, &cbn, &x, &cond);
    let w = store.get(cbn.embed.weight);
    let bias = store.get(cbn.embed.bias.unwrap());
    let xhat = standardize_oracle(&x);
    for b in 0..4 {
        for ch in 0..3 {
            let e = |j: usize| (0..4).map(|i| cond.get(&[b, i]) * w.get(&[i, j])).sum::<f64>() + bias.get(&[j]);
            let (dg, db) = (e(ch), e(3 + ch));
            for t in 0..6 {
                let want = xhat.get(&[b, ch, t]) * (1.0 + dg) + db;
                assert!((y.get(&[b, ch, t]) - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn cbn_is_batch_permutation_equivariant() {
    let (store, cbn) = cbn_setup(2, 3);
    let x = Tensor::randn(&[4, 2, 5], 1.0, &mut rng::seeded(8));
    let cond = binary_cond(4, 3, 9);
    let y = run_cbn(&store, &cbn, &x, &cond);
    let perm = [2, 0, 3, 1];
    let permute = |t: &Tensor<f64>| {
        let parts: Vec<Tensor<f64>> = perm.iter().map(|&i| t.narrow(0, i, 1).unwrap()).collect();
        Tensor::concat(&parts.iter().collect::<Vec<_>>(), 0).unwrap()
    };
    let yp = run_cbn(&store, &cbn, &permute(&x), &permute(&cond));
    assert!(yp.max_abs_diff(&permute(&y)).unwrap() < 1e-12);
}

#[test]
fn generators_emit_eight_leads_at_target_length() {
    for arch in [GanArch::WaveGan, GanArch::Pulse2Pulse] {
        for length in [128, 1000] {
            let cfg = GanConfig { length, ..small(arch) };
            let model = GanModel::<f32>::new(cfg, 0).unwrap();
            let noise = model.sample_noise(3, &mut rng::seeded(1));
            let cond = binary_cond::<f32>(3, 71, 2);
            let tape = Tape::inference();
            let x = model.generate(&tape, &noise, &cond, None).unwrap();
            assert_eq!(x.shape(), &[3, 8, length]);
            assert!(x.value().all_finite());
            assert_eq!(model.discriminate(&tape, &x).unwrap().shape(), &[3, 1]);
        }
    }
}

#[test]
fn generator_rejects_bad_inputs() {
    let model = GanModel::<f32>::new(small(GanArch::WaveGan), 0).unwrap();
    let tape = Tape::inference();
    let cond = Tensor::zeros(&[2, 71]);
    let bad_noise = Tensor::zeros(&[2, 15]);
    assert!(matches!(model.generate(&tape, &bad_noise, &cond, None), Err(Error::GeneratorShape(_))));
    let noise = Tensor::zeros(&[2, 16]);
    assert!(matches!(
        model.generate(&tape, &noise, &Tensor::zeros(&[2, 70]), None),
        Err(Error::ConditionShape(_))
    ));
    assert!(matches!(
        model.generate(&tape, &Tensor::zeros(&[0, 16]), &Tensor::zeros(&[0, 71]), None),
        Err(Error::EmptyBatch)
    ));
    let cfg = GanConfig { kernel_size: 4, ..small(GanArch::WaveGan) };
    assert!(matches!(GanModel::<f32>::new(cfg, 0), Err(Error::Config(_))));
}

#[test]
fn construction_and_generation_are_deterministic() {
    for arch in [GanArch::WaveGan, GanArch::Pulse2Pulse] {
        let a = GanModel::<f32>::new(small(arch), 4).unwrap();
        let b = GanModel::<f32>::new(small(arch), 4).unwrap();
        let labels = make_toy_corpus(12, 4, 128, 0).unwrap();
        let da = a.generate_dataset(&labels.labels, None, &labels.vocabulary, 9, 5).unwrap();
        let db = b.generate_dataset(&labels.labels, None, &labels.vocabulary, 9, 3).unwrap();
        assert_eq!(da, db);
        assert_eq!(da.records[11].record_id, "gan-00011");
        for r in &da.records {
            let c = sssd_ecg::leads::check_lead_consistency(&r.lead_major(), 1e-6).unwrap();
            assert!(c.consistent);
        }
        let dc = a.generate_dataset(&labels.labels, None, &labels.vocabulary, 10, 5).unwrap();
        assert_ne!(da.records[0].signal, dc.records[0].signal);
    }
}

#[test]
fn output_depends_on_condition() {
    for arch in [GanArch::WaveGan, GanArch::Pulse2Pulse] {
        let model = GanModel::<f64>::new(small(arch), 3).unwrap();
        let noise = model.sample_noise(1, &mut rng::seeded(1));
        let tape = Tape::inference();
        let c0 = Tensor::zeros(&[1, 71]);
        let mut c1 = Tensor::zeros(&[1, 71]);
        c1.set(&[0, 10], 1.0);
        let y0 = model.generate(&tape, &noise, &c0, None).unwrap().into_tensor();
        let y1 = model.generate(&tape, &noise, &c1, None).unwrap().into_tensor();
        assert!(y0.max_abs_diff(&y1).unwrap() > 1e-6, "{arch:?}");
    }
}

#[test]
fn unet_skips_carry_information() {
    let model = GanModel::<f64>::new(small(GanArch::Pulse2Pulse), 3).unwrap();
    let Generator::Pulse2Pulse(g) = &model.generator else { unreachable!() };
    let noise = model.sample_noise(2, &mut rng::seeded(4));
    let cond = binary_cond(2, 71, 5);
    let tape = Tape::inference();
    let (z, c) = (tape.constant(noise), tape.constant(cond));
    let full = g.forward(&tape, &model.store, &z, &c, None, None).unwrap().into_tensor();
    for i in 0..4 {
        let ablated = g.forward(&tape, &model.store, &z, &c, None, Some(i)).unwrap().into_tensor();
        assert!(full.max_abs_diff(&ablated).unwrap() > 1e-8, "skip {i}");
    }
}

#[test]
fn generator_step_reaches_every_generator_weight_only() {
    for arch in [GanArch::WaveGan, GanArch::Pulse2Pulse] {
        let model = GanModel::<f64>::new(small(arch), 2).unwrap();
        let noise = model.sample_noise(4, &mut rng::seeded(1));
        let cond = binary_cond(4, 71, 2);
        let tape = Tape::new();
        tape.freeze_params(model.discriminator_params().iter().copied());
        let mut bn = Vec::new();
        let fake = model.generate(&tape, &noise, &cond, Some(&mut bn)).unwrap();
        let loss = lsgan_g_loss(&model.discriminate(&tape, &fake).unwrap()).unwrap();
        let grads = tape.backward(&loss).unwrap();
        for &id in model.generator_params() {
            let p = model.store.param(id);
            if !p.trainable {
                continue;
            }
            let g = grads.param(id).unwrap_or_else(|| panic!("{arch:?}: no gradient for {}", p.name));
            assert!(g.max_abs() > 0.0, "{arch:?}: zero gradient for {}", p.name);
        }
        for &id in model.discriminator_params() {
            assert!(grads.param(id).is_none());
        }
    }
}

#[test]
fn lsgan_losses_at_a_perfect_discriminator() {
    let tape = Tape::<f64>::inference();
    let real = tape.constant(Tensor::ones(&[6, 1]));
    let fake = tape.constant(Tensor::zeros(&[6, 1]));
    assert_eq!(lsgan_d_loss(&real, &fake).unwrap().into_tensor().item().unwrap(), 0.0);
    assert_eq!(lsgan_g_loss(&fake).unwrap().into_tensor().item().unwrap(), 1.0);
    // A constant critic at ½ sits at the LSGAN equilibrium of ¼ each.
    let half = tape.constant(Tensor::full(&[6, 1], 0.5));
    assert_eq!(lsgan_d_loss(&half, &half).unwrap().into_tensor().item().unwrap(), 0.25);
    assert_eq!(lsgan_g_loss(&half).unwrap().into_tensor().item().unwrap(), 0.25);
}

#[test]
fn discriminator_loss_falls_during_training() {
    let data = make_toy_corpus(80, 4, 128, 1).unwrap();
    let mut drops = Vec::new();
    for seed in 0..5 {
        let mut model = GanModel::<f32>::new(small(GanArch::WaveGan), seed).unwrap();
        let cfg = GanTrainConfig { steps: 200, batch_size: 8, lr: 1e-3 };
        let curve = train_gan(&mut model, &data, &cfg, seed).unwrap();
        let head = curve.d_loss[..20].iter().sum::<f64>() / 20.0;
        let tail = curve.d_loss[180..].iter().sum::<f64>() / 20.0;
        drops.push(head - tail);
    }
    drops.sort_by(f64::total_cmp);
    assert!(drops[2] > 0.0, "{drops:?}");
}

#[test]
fn training_needs_matching_vocabulary_and_train_folds() {
    let data = make_toy_corpus(20, 4, 128, 1).unwrap();
    let mut model = GanModel::<f32>::new(GanConfig { n_labels: 4, ..small(GanArch::WaveGan) }, 0).unwrap();
    let cfg = GanTrainConfig { steps: 1, batch_size: 2, lr: 1e-3 };
    assert!(matches!(train_gan(&mut model, &data, &cfg, 0), Err(Error::ConditionShape(_))));
    let mut model = GanModel::<f32>::new(small(GanArch::WaveGan), 0).unwrap();
    let test_only = data.split(sssd_ecg::data::Split::Test);
    assert!(matches!(train_gan(&mut model, &test_only, &cfg, 0), Err(Error::NoTrainingData)));
}
