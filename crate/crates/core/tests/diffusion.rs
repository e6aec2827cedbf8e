use proptest::prelude::*;
use rand_distr::StandardNormal;
use rand::Rng;
use sssd_ecg::diffusion::*;
use sssd_ecg::error::{Error, Result};
use sssd_ecg::rng;
use sssd_nn::{ParamId, ParamStore, Tape, Tensor, Var};

#[test]
fn reference_schedule_endpoints_are_exact() {
    let s = build_schedule(200, 0.0001, 0.02).unwrap();
    assert_eq!(s.steps(), 200);
    assert_eq!(s.betas()[0], 0.0001);
    assert_eq!(s.betas()[199], 0.02);
    assert_eq!(s.alphas_bar()[0], 1.0 - 0.0001);
    let cfg: ScheduleConfig = serde_json::from_str(r#"{"T":200,"beta_start":0.0001,"beta_end":0.02}"#).unwrap();
    assert_eq!(cfg, ScheduleConfig::default());
    assert_eq!(cfg.build().unwrap(), s);
}

/// `Π (1 - β_i)` as `exp(Σ ln1p(-β_i))` with a compensated sum.
fn alphas_bar_oracle(betas: &[f64]) -> Vec<f64> {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    betas
        .iter()
        .map(|&b| {
            let y = (-b).ln_1p() - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
            sum.exp()
        })
        .collect()
}

#[test]
fn cumulative_product_matches_high_precision_oracle() {
    for (t, a, b) in [(200, 1e-4, 0.02), (50, 1e-4, 0.08), (1000, 1e-4, 0.02)] {
        let s = build_schedule(t, a, b).unwrap();
        for (got, want) in s.alphas_bar().iter().zip(alphas_bar_oracle(s.betas())) {
            assert!(((got - want) / want).abs() < 1e-12, "{got} vs {want}");
        }
    }
    // The 200-step reference schedule keeps about 13% of the signal power.
    let last = *build_schedule(200, 1e-4, 0.02).unwrap().alphas_bar().last().unwrap();
    assert!((last - 0.1322).abs() < 1e-3, "{last}");
}

#[test]
fn beta_grid_is_linear() {
    let s = build_schedule(5, 0.1, 0.5).unwrap();
    for (t, &b) in s.betas().iter().enumerate() {
        assert!((b - (0.1 + 0.1 * t as f64)).abs() < 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn schedules_are_monotone(t in 1usize..400, lo in 1e-6f64..0.05, width in 0.0f64..0.5) {
        let hi = (lo + width).min(0.999);
        let s = build_schedule(t, lo, hi).unwrap();
        prop_assert_eq!(s.betas().len(), t);
        prop_assert_eq!(s.alphas_bar()[0], 1.0 - lo);
        for w in s.betas().windows(2) {
            prop_assert!(w[1] >= w[0]);
        }
        for w in s.alphas_bar().windows(2) {
            prop_assert!(w[1] < w[0]);
        }
        for &a in s.alphas_bar() {
            prop_assert!(a > 0.0 && a < 1.0);
        }
    }
}

#[test]
fn forward_sample_degenerate_inputs() {
    let s = build_schedule(50, 1e-4, 0.08).unwrap();
    let mut r = rng::seeded(3);
    let x0 = Tensor::<f64>::randn(&[2, 3, 7], 1.0, &mut r);
    let eps = Tensor::<f64>::randn(&[2, 3, 7], 1.0, &mut r);
    let zero = Tensor::zeros(&[2, 3, 7]);
    for t in [0, 25, 49] {
        let a = s.alphas_bar()[t];
        let only_signal = forward_sample(&x0, t, &zero, &s).unwrap();
        assert_eq!(only_signal, x0.map(|v| a.sqrt() * v));
        let only_noise = forward_sample(&zero, t, &eps, &s).unwrap();
        assert_eq!(only_noise, eps.map(|v| (1.0 - a).sqrt() * v));
    }
    let batch = forward_sample_batch(&x0, &[4, 40], &eps, &s).unwrap();
    let per_elem = |b: usize, t: usize| {
        let x = x0.narrow(0, b, 1).unwrap();
        let e = eps.narrow(0, b, 1).unwrap();
        forward_sample(&x, t, &e, &s).unwrap()
    };
    assert_eq!(batch.narrow(0, 0, 1).unwrap(), per_elem(0, 4));
    assert_eq!(batch.narrow(0, 1, 1).unwrap(), per_elem(1, 40));
    assert!(matches!(forward_sample_batch(&x0, &[1], &eps, &s), Err(Error::NoiseShape(_))));
}

#[test]
fn forward_sample_moments_pass_three_sigma() {
    let s = build_schedule(200, 1e-4, 0.02).unwrap();
    let n = 10_000;
    let x0_value = 0.7;
    let mut r = rng::seeded(2024);
    for t in [0, 100, 199] {
        let x0 = Tensor::full(&[n], x0_value);
        let eps = standard_normal::<f64, _>(&[n], &mut r);
        let xt = forward_sample(&x0, t, &eps, &s).unwrap();
        let a = s.alphas_bar()[t];
        let (mean_true, var_true) = (a.sqrt() * x0_value, 1.0 - a);
        let mean = xt.data().iter().sum::<f64>() / n as f64;
        let var = xt.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se_mean = (var_true / n as f64).sqrt();
        let se_var = var_true * (2.0 / (n - 1) as f64).sqrt();
        assert!((mean - mean_true).abs() <= 3.0 * se_mean, "t={t}: mean {mean} vs {mean_true}");
        assert!((var - var_true).abs() <= 3.0 * se_var, "t={t}: var {var} vs {var_true}");
    }
}

struct Zero;

impl NoisePredictor<f64> for Zero {
    fn predict<'t>(&self, tape: &'t Tape<f64>, x: &Var<'t, f64>, _: &[usize], _: &Tensor<f64>) -> Result<Var<'t, f64>> {
        Ok(tape.constant(Tensor::zeros(x.shape())))
    }
}

/// Knows the clean signal, so it can invert the forward process exactly.
struct Planted {
    x0: Tensor<f64>,
    sched: NoiseSchedule,
}

impl NoisePredictor<f64> for Planted {
    fn predict<'t>(&self, tape: &'t Tape<f64>, x: &Var<'t, f64>, steps: &[usize], _: &Tensor<f64>) -> Result<Var<'t, f64>> {
        let per = self.x0.len() / steps.len();
        let mut out = Vec::with_capacity(x.value().len());
        for (b, &t) in steps.iter().enumerate() {
            let a = self.sched.alphas_bar()[t];
            let xs = &x.value().data()[b * per..(b + 1) * per];
            let x0 = &self.x0.data()[b * per..(b + 1) * per];
            out.extend(xs.iter().zip(x0).map(|(&xt, &x0)| (xt - a.sqrt() * x0) / (1.0 - a).sqrt()));
        }
        Ok(tape.constant(Tensor::new(x.shape(), out)?))
    }
}

struct NonFinite;

impl NoisePredictor<f64> for NonFinite {
    fn predict<'t>(&self, tape: &'t Tape<f64>, x: &Var<'t, f64>, _: &[usize], _: &Tensor<f64>) -> Result<Var<'t, f64>> {
        Ok(tape.constant(Tensor::full(x.shape(), f64::INFINITY)))
    }
}

#[test]
fn zero_predictor_loss_is_about_one() {
    let s = build_schedule(200, 1e-4, 0.02).unwrap();
    let x0 = Tensor::<f64>::zeros(&[4, 8, 4000]);
    let c = Tensor::zeros(&[4, 71]);
    let tape = Tape::inference();
    let (_, loss) = denoising_loss(&Zero, &tape, &x0, &c, &s, &mut rng::seeded(5)).unwrap();
    assert!(x0.len() >= 100_000);
    assert!((loss.value - 1.0).abs() < 0.05, "{}", loss.value);
}

#[test]
fn exact_noise_oracle_has_zero_loss_and_loss_is_deterministic() {
    let s = build_schedule(50, 1e-4, 0.08).unwrap();
    let mut r = rng::seeded(8);
    let x0 = Tensor::<f64>::randn(&[3, 8, 50], 1.0, &mut r);
    let c = Tensor::zeros(&[3, 71]);
    let oracle = Planted { x0: x0.clone(), sched: s.clone() };
    let tape = Tape::inference();
    let (_, l) = denoising_loss(&oracle, &tape, &x0, &c, &s, &mut rng::seeded(1)).unwrap();
    assert!(l.value < 1e-20, "{}", l.value);
    let (_, a) = denoising_loss(&Zero, &tape, &x0, &c, &s, &mut rng::seeded(9)).unwrap();
    let (_, b) = denoising_loss(&Zero, &tape, &x0, &c, &s, &mut rng::seeded(9)).unwrap();
    assert_eq!(a, b);
    let bad = denoising_loss(&NonFinite, &tape, &x0, &c, &s, &mut rng::seeded(9));
    assert!(matches!(bad, Err(Error::Diverged(_))));
}

/// `ε̂ = w ⊙ x_t + b + c V`, broadcast over time.
struct Tiny {
    store: ParamStore<f64>,
    w: ParamId,
    b: ParamId,
    v: ParamId,
}

impl NoisePredictor<f64> for Tiny {
    fn predict<'t>(&self, tape: &'t Tape<f64>, x: &Var<'t, f64>, _: &[usize], c: &Tensor<f64>) -> Result<Var<'t, f64>> {
        let (bsz, ch) = (x.shape()[0], x.shape()[1]);
        let cv = tape.constant(c.clone()).matmul(&tape.param(&self.store, self.v))?.reshape(&[bsz, ch, 1])?;
        Ok(x.mul(&tape.param(&self.store, self.w))?
            .add(&tape.param(&self.store, self.b))?
            .add(&cv)?)
    }
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let mut r = rng::seeded(4);
    let mut store = ParamStore::new();
    let w = store.add("w", Tensor::randn(&[1, 3, 1], 0.5, &mut r));
    let b = store.add("b", Tensor::randn(&[1, 3, 1], 0.5, &mut r));
    let v = store.add("v", Tensor::randn(&[4, 3], 0.5, &mut r));
    let mut model = Tiny { store, w, b, v };
    let s = build_schedule(20, 1e-4, 0.2).unwrap();
    let x0 = Tensor::<f64>::randn(&[2, 3, 16], 1.0, &mut r);
    let c = Tensor::from_f64(&[2, 4], &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.5, 1.0]).unwrap();
    let loss_of = |m: &Tiny| {
        let tape = Tape::inference();
        denoising_loss(m, &tape, &x0, &c, &s, &mut rng::seeded(31)).unwrap().1.value
    };
    let tape = Tape::new();
    let (loss, _) = denoising_loss(&model, &tape, &x0, &c, &s, &mut rng::seeded(31)).unwrap();
    let grads = tape.backward(&loss).unwrap();
    let analytic: Vec<Tensor<f64>> = [w, b, v].iter().map(|&id| grads.param(id).unwrap().clone()).collect();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (k, &id) in [w, b, v].iter().enumerate() {
        for i in 0..model.store.get(id).len() {
            let orig = model.store.get(id).data()[i];
            model.store.value_mut(id).data_mut()[i] = orig + h;
            let up = loss_of(&model);
            model.store.value_mut(id).data_mut()[i] = orig - h;
            let down = loss_of(&model);
            model.store.value_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[k].data()[i];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8));
        }
    }
    assert!(worst < 1e-4, "relative error {worst}");
}

#[test]
fn single_step_sampler_closed_form() {
    let s = build_schedule(1, 1e-4, 0.02).unwrap();
    let c = Tensor::zeros(&[2, 71]);
    let out = ancestral_sample(&Zero, &c, &s, &[2, 8, 10], 42).unwrap();
    for b in 0..2 {
        let mut r = rng::seeded(rng::derive_seed(42, b as u64));
        let x_t: Vec<f64> = (0..80).map(|_| r.sample(StandardNormal)).collect();
        for (i, &xt) in x_t.iter().enumerate() {
            let want = xt / (1.0 - 1e-4f64).sqrt();
            assert!((out.data()[b * 80 + i] - want).abs() <= 4.0 * f64::EPSILON * want.abs());
        }
    }
}

#[test]
fn planted_signal_is_recovered() {
    let s = build_schedule(50, 1e-4, 0.08).unwrap();
    let mut r = rng::seeded(10);
    let x0 = Tensor::<f64>::randn(&[2, 8, 100], 0.5, &mut r);
    let oracle = Planted { x0: x0.clone(), sched: s.clone() };
    let out = ancestral_sample(&oracle, &Tensor::zeros(&[2, 71]), &s, &[2, 8, 100], 7).unwrap();
    let rms = (out.zip_map(&x0, |a, b| (a - b).powi(2)).unwrap().mean()).sqrt();
    assert!(rms < 1e-3, "rms {rms}");
}

#[test]
fn sampler_is_deterministic_per_seed_and_element() {
    let s = build_schedule(10, 1e-4, 0.2).unwrap();
    let c = Tensor::zeros(&[3, 71]);
    let a = ancestral_sample(&Zero, &c, &s, &[3, 8, 20], 5).unwrap();
    let b = ancestral_sample(&Zero, &c, &s, &[3, 8, 20], 5).unwrap();
    assert_eq!(a, b);
    let other = ancestral_sample(&Zero, &c, &s, &[3, 8, 20], 6).unwrap();
    let rms = a.zip_map(&other, |x, y| (x - y).powi(2)).unwrap().mean().sqrt();
    assert!(rms > 0.0);
    // Element 1 of the batch equals a lone run with its derived seed.
    let alone = ancestral_sample_seeded(
        &Zero,
        &Tensor::zeros(&[1, 71]),
        &s,
        &[1, 8, 20],
        &[rng::derive_seed(5, 1)],
    )
    .unwrap();
    assert_eq!(a.narrow(0, 1, 1).unwrap(), alone);
}

#[test]
fn sampler_divergence_reports_step() {
    let s = build_schedule(10, 1e-4, 0.2).unwrap();
    let out = ancestral_sample(&NonFinite, &Tensor::zeros(&[1, 71]), &s, &[1, 8, 5], 0);
    assert!(matches!(out, Err(Error::SamplerDiverged { step: 9 })), "{out:?}");
    let err = out.unwrap_err().to_string();
    assert!(err.contains("sampler diverged at step 9"));
}
