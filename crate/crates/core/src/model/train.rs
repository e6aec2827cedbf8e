use serde::{Deserialize, Serialize};
use sssd_nn::{Adam, AdamConfig, Float, Tape, Tensor};

use super::SssdEcg;
use crate::data::{Dataset, Split};
use crate::diffusion::{denoising_loss, NoiseSchedule};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default)]
    pub clip_norm: Option<f64>,
    /// Cosine-anneals the learning rate from `lr` towards this value over
    /// `steps`; `None` keeps it constant.
    #[serde(default)]
    pub lr_final: Option<f64>,
    /// Loss values are averaged over windows of this many steps.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 100_000,
            batch_size: 4,
            lr: 2e-4,
            clip_norm: None,
            lr_final: None,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    /// Learning rate used for `step` (1-based).
    pub fn lr_at(&self, step: usize) -> f64 {
        match self.lr_final {
            None => self.lr,
            Some(end) => {
                let frac = step.saturating_sub(1) as f64 / self.steps.max(1) as f64;
                end + (self.lr - end) * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

/// Mean training loss per logging window, keyed by the window's last step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub steps: Vec<usize>,
    pub loss: Vec<f64>,
}

/// Independent leads `[n, 8, L]` and labels `[n, n_labels]` of `indices`.
pub(crate) fn batch_tensors<F: Float>(data: &Dataset, indices: &[usize]) -> Result<(Tensor<F>, Tensor<F>)> {
    let len = data.record_len().unwrap_or(0);
    let mut x = Vec::with_capacity(indices.len() * 8 * len);
    for &i in indices {
        x.extend(data.records[i].independent_leads()?.into_iter().map(|v| F::of(v as f64)));
    }
    let labels: Vec<F> = data
        .label_matrix(indices)
        .into_iter()
        .map(|v| F::of(v as f64))
        .collect();
    Ok((
        Tensor::new(&[indices.len(), 8, len], x)?,
        Tensor::new(&[indices.len(), data.vocabulary.len()], labels)?,
    ))
}

/// Trains on the train folds of `data` with Adam, sampling batches with
/// replacement. `on_log(step, mean_loss)` fires at the end of every window.
pub fn train_sssd<F: Float>(
    model: &mut SssdEcg<F>,
    data: &Dataset,
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
    seed: u64,
    mut on_log: impl FnMut(usize, f64),
) -> Result<TrainingCurve> {
    if cfg.batch_size == 0 || cfg.log_every == 0 || !(cfg.lr > 0.0) {
        return Err(Error::Config("batch_size, log_every and lr must be positive".into()));
    }
    if cfg.lr_final.is_some_and(|e| !(e >= 0.0)) {
        return Err(Error::Config("lr_final must be non-negative".into()));
    }
    if data.vocabulary.len() != model.config.n_labels {
        return Err(Error::ConditionShape(format!(
            "dataset vocabulary {} for a model with {} labels",
            data.vocabulary.len(),
            model.config.n_labels
        )));
    }
    if data.record_len() != Some(model.config.length) && !data.is_empty() {
        return Err(Error::InputShape(format!(
            "records of length {:?} for a model of length {}",
            data.record_len(),
            model.config.length
        )));
    }
    let pool = data.split_indices(Split::Train);
    if pool.is_empty() {
        return Err(Error::NoTrainingData);
    }
    let mut rng = rng::seeded(seed);
    let mut adam = Adam::new(AdamConfig {
        clip_norm: cfg.clip_norm,
        ..AdamConfig::with_lr(cfg.lr)
    });
    let mut curve = TrainingCurve::default();
    let mut window = 0.0;
    for step in 1..=cfg.steps {
        adam.config.lr = cfg.lr_at(step);
        let idx: Vec<usize> = (0..cfg.batch_size)
            .map(|_| pool[rand::Rng::gen_range(&mut rng, 0..pool.len())])
            .collect();
        let (x0, cond) = batch_tensors::<F>(data, &idx)?;
        let tape = Tape::new();
        let (loss, value) = denoising_loss(&*model, &tape, &x0, &cond, sched, &mut rng)?;
        let grads = tape.backward(&loss)?;
        adam.step(&mut model.store, &grads)?;
        window += value.value;
        if step % cfg.log_every == 0 || step == cfg.steps {
            let n = (step - 1) % cfg.log_every + 1;
            let mean = window / n as f64;
            curve.steps.push(step);
            curve.loss.push(mean);
            on_log(step, mean);
            window = 0.0;
        }
    }
    Ok(curve)
}
