use serde::{Deserialize, Serialize};
use sssd_nn::{Adam, AdamConfig, Float, Tape, Tensor, Var};

use super::GanModel;
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::layers::update_running_stats;
use crate::model::batch_tensors;
use crate::rng;

/// `½ (mean (D(x) - 1)² + mean D(G(z))²)`.
pub fn lsgan_d_loss<'t, F: Float>(d_real: &Var<'t, F>, d_fake: &Var<'t, F>) -> Result<Var<'t, F>> {
    let real = d_real.mse(&Tensor::ones(d_real.shape()))?;
    let fake = d_fake.mse(&Tensor::zeros(d_fake.shape()))?;
    Ok(real.add(&fake)?.scale(F::of(0.5)))
}

/// `mean (D(G(z)) - 1)²`.
pub fn lsgan_g_loss<'t, F: Float>(d_fake: &Var<'t, F>) -> Result<Var<'t, F>> {
    Ok(d_fake.mse(&Tensor::ones(d_fake.shape()))?)
}

/// Separate Adam states for the two players.
pub struct GanOptimizers<F: Float> {
    pub generator: Adam<F>,
    pub discriminator: Adam<F>,
}

impl<F: Float> GanOptimizers<F> {
    /// Adam with `β1 = 0.5`, the usual adversarial setting.
    pub fn new(lr: f64) -> Self {
        let cfg = AdamConfig {
            beta1: 0.5,
            ..AdamConfig::with_lr(lr)
        };
        Self {
            generator: Adam::new(cfg),
            discriminator: Adam::new(cfg),
        }
    }
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::GanDiverged(format!("non-finite {what}")))
    }
}

/// One discriminator update followed by one generator update on fresh
/// noise. Returns `(g_loss, d_loss)` as computed before each update.
pub fn adversarial_train_step<F: Float, R: rand::Rng + ?Sized>(
    model: &mut GanModel<F>,
    opt: &mut GanOptimizers<F>,
    real: &Tensor<F>,
    cond: &Tensor<F>,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let b = real.shape().first().copied().unwrap_or(0);
    if b == 0 {
        return Err(Error::EmptyBatch);
    }
    let mut bn = Vec::new();

    // Discriminator: the fake batch is a constant on this tape.
    let noise = model.sample_noise(b, rng);
    let fake = {
        let tape = Tape::inference();
        model.generate(&tape, &noise, cond, Some(&mut bn))?.into_tensor()
    };
    let d_loss = {
        let tape = Tape::new();
        let d_real = model.discriminate(&tape, &tape.constant(real.clone()))?;
        let d_fake = model.discriminate(&tape, &tape.constant(fake))?;
        let loss = lsgan_d_loss(&d_real, &d_fake)?;
        let value = finite(loss.value().item()?.as_f64(), "discriminator loss")?;
        let grads = tape.backward(&loss)?;
        opt.discriminator.step(&mut model.store, &grads)?;
        value
    };

    // Generator: discriminator weights are constants on this tape.
    let noise = model.sample_noise(b, rng);
    let g_loss = {
        let tape = Tape::new();
        tape.freeze_params(model.discriminator_params().iter().copied());
        let fake = model.generate(&tape, &noise, cond, Some(&mut bn))?;
        let loss = lsgan_g_loss(&model.discriminate(&tape, &fake)?)?;
        let value = finite(loss.value().item()?.as_f64(), "generator loss")?;
        let grads = tape.backward(&loss)?;
        opt.generator.step(&mut model.store, &grads)?;
        value
    };
    update_running_stats(&mut model.store, &bn);
    Ok((g_loss, d_loss))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GanTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GanCurve {
    pub g_loss: Vec<f64>,
    pub d_loss: Vec<f64>,
}

/// Adversarial training on the train folds with batches drawn with
/// replacement.
pub fn train_gan<F: Float>(
    model: &mut GanModel<F>,
    data: &Dataset,
    cfg: &GanTrainConfig,
    seed: u64,
) -> Result<GanCurve> {
    if cfg.batch_size == 0 {
        return Err(Error::EmptyBatch);
    }
    if data.vocabulary.len() != model.config.n_labels {
        return Err(Error::ConditionShape(format!(
            "vocabulary {} for a generator with {} labels",
            data.vocabulary.len(),
            model.config.n_labels
        )));
    }
    let pool = data.split_indices(Split::Train);
    if pool.is_empty() {
        return Err(Error::NoTrainingData);
    }
    let mut rng = rng::seeded(seed);
    let mut opt = GanOptimizers::new(cfg.lr);
    let mut curve = GanCurve::default();
    for _ in 0..cfg.steps {
        let idx: Vec<usize> = (0..cfg.batch_size)
            .map(|_| pool[rand::Rng::gen_range(&mut rng, 0..pool.len())])
            .collect();
        let (x, c) = batch_tensors::<F>(data, &idx)?;
        let (g, d) = adversarial_train_step(model, &mut opt, &x, &c, &mut rng)?;
        curve.g_loss.push(g);
        curve.d_loss.push(d);
    }
    Ok(curve)
}
