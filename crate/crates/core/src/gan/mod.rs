//! Conditional GAN baselines: WaveGAN* and Pulse2Pulse generators with
//! label-conditional batch normalization, an unconditional discriminator,
//! and least-squares adversarial training.

mod nets;
mod train;

pub use nets::{CondBatchNorm, Discriminator, Generator, Pulse2PulseGen, WaveGanGen};
pub use train::{adversarial_train_step, lsgan_d_loss, lsgan_g_loss, train_gan, GanCurve, GanOptimizers, GanTrainConfig};

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use sssd_nn::{Float, ParamId, ParamStore, Tape, Tensor, Var};

use crate::data::{Dataset, EcgRecord, LabelVector, LabelVocabulary, SAMPLING_RATE};
use crate::error::{Error, Result};
use crate::layers::BnStat;
use crate::leads::{reconstruct_12_leads, EightLeadFrame};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GanArch {
    WaveGan,
    Pulse2Pulse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GanConfig {
    pub arch: GanArch,
    /// Base channel width `d`; blocks use multiples `d .. 16d`.
    pub model_size: usize,
    /// Latent width of WaveGAN*; Pulse2Pulse takes `[8 × length]` noise.
    pub latent_dim: usize,
    pub kernel_size: usize,
    pub n_labels: usize,
    pub length: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl GanConfig {
    pub fn wavegan() -> Self {
        Self {
            arch: GanArch::WaveGan,
            model_size: 50,
            latent_dim: 1000,
            kernel_size: 25,
            n_labels: 71,
            length: 1000,
            lr: 1e-4,
            batch_size: 32,
            epochs: 3000,
        }
    }

    pub fn pulse2pulse() -> Self {
        Self {
            arch: GanArch::Pulse2Pulse,
            ..Self::wavegan()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.model_size > 0
            && self.latent_dim > 0
            && self.kernel_size % 2 == 1
            && self.kernel_size >= 3
            && self.n_labels > 0
            && self.length >= 16
            && self.lr > 0.0
            && self.batch_size > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid GAN config {self:?}")))
        }
    }
}

/// Generator and discriminator sharing one parameter store.
#[derive(Debug, Clone)]
pub struct GanModel<F: Float> {
    pub config: GanConfig,
    pub store: ParamStore<F>,
    pub generator: Generator,
    pub discriminator: Discriminator,
    gen_ids: Vec<ParamId>,
    disc_ids: Vec<ParamId>,
}

impl<F: Float> GanModel<F> {
    pub fn new(config: GanConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let generator = match config.arch {
            GanArch::WaveGan => Generator::WaveGan(WaveGanGen::new(&mut store, &config, &mut rng)?),
            GanArch::Pulse2Pulse => Generator::Pulse2Pulse(Pulse2PulseGen::new(&mut store, &config, &mut rng)?),
        };
        let split = store.len();
        let discriminator = Discriminator::new(&mut store, &config, &mut rng)?;
        let gen_ids = store.ids().take(split).collect();
        let disc_ids = store.ids().skip(split).collect();
        Ok(Self {
            config,
            store,
            generator,
            discriminator,
            gen_ids,
            disc_ids,
        })
    }

    pub fn generator_params(&self) -> &[ParamId] {
        &self.gen_ids
    }

    pub fn discriminator_params(&self) -> &[ParamId] {
        &self.disc_ids
    }

    /// Shape of one noise batch.
    pub fn noise_shape(&self, batch: usize) -> Vec<usize> {
        match self.generator {
            Generator::WaveGan(_) => vec![batch, self.config.latent_dim],
            Generator::Pulse2Pulse(_) => vec![batch, 8, self.config.length],
        }
    }

    /// Uniform noise on `[-1, 1]`.
    pub fn sample_noise<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Tensor<F> {
        Tensor::uniform(&self.noise_shape(batch), -1.0, 1.0, rng)
    }

    /// `[B, 8, length]`; `stats = Some(_)` selects training-mode normalization.
    pub fn generate<'t>(
        &self,
        tape: &'t Tape<F>,
        noise: &Tensor<F>,
        cond: &Tensor<F>,
        stats: Option<&mut Vec<BnStat<F>>>,
    ) -> Result<Var<'t, F>> {
        let expect = self.noise_shape(noise.shape().first().copied().unwrap_or(0));
        if noise.shape() != expect.as_slice() {
            return Err(Error::GeneratorShape(format!("noise {:?}, expected {expect:?}", noise.shape())));
        }
        if noise.dim(0) == 0 {
            return Err(Error::EmptyBatch);
        }
        if cond.ndim() != 2 || cond.dim(0) != noise.dim(0) || cond.dim(1) != self.config.n_labels {
            return Err(Error::ConditionShape(format!("{:?}", cond.shape())));
        }
        let z = tape.constant(noise.clone());
        let c = tape.constant(cond.clone());
        let out = match &self.generator {
            Generator::WaveGan(g) => g.forward(tape, &self.store, &z, &c, stats)?,
            Generator::Pulse2Pulse(g) => g.forward(tape, &self.store, &z, &c, stats, None)?,
        };
        let want = [noise.dim(0), 8, self.config.length];
        if out.shape() != want {
            return Err(Error::GeneratorShape(format!("output {:?}, expected {want:?}", out.shape())));
        }
        Ok(out)
    }

    /// Discriminator scores `[B, 1]`.
    pub fn discriminate<'t>(&self, tape: &'t Tape<F>, x: &Var<'t, F>) -> Result<Var<'t, F>> {
        self.discriminator.forward(tape, &self.store, x)
    }

    /// One synthetic record per label vector (inference-mode normalization);
    /// record `i` draws its noise from `rng::stream(seed, i)`.
    pub fn generate_dataset(
        &self,
        labels: &[LabelVector],
        folds: Option<&[u8]>,
        vocabulary: &LabelVocabulary,
        seed: u64,
        batch_size: usize,
    ) -> Result<Dataset> {
        if batch_size == 0 {
            return Err(Error::EmptyBatch);
        }
        let len = self.config.length;
        let mut records = Vec::with_capacity(labels.len());
        for start in (0..labels.len()).step_by(batch_size) {
            let end = (start + batch_size).min(labels.len());
            let mut noise = Vec::new();
            let mut cond = Vec::new();
            for (i, l) in labels.iter().enumerate().take(end).skip(start) {
                let mut r = rng::stream(seed, i as u64);
                noise.extend(self.sample_noise(1, &mut r).into_data());
                cond.extend(l.values().iter().map(|&v| F::of(v as f64)));
            }
            let n = end - start;
            let noise = Tensor::new(&self.noise_shape(n), noise)?;
            let cond = Tensor::new(&[n, labels[start].len()], cond)?;
            let tape = Tape::inference();
            let x = self.generate(&tape, &noise, &cond, None)?;
            if !x.value().all_finite() {
                return Err(Error::GanDiverged(format!("non-finite sample near record {start}")));
            }
            for (j, frame) in x.value().data().chunks_exact(8 * len).enumerate() {
                let i = start + j;
                let frame = EightLeadFrame::new(frame.iter().map(|v| v.as_f64() as f32).collect())?;
                let fold = folds.map_or((i % 10) as u8 + 1, |f| f[i]);
                records.push(EcgRecord::from_lead_major(
                    &reconstruct_12_leads(&frame),
                    12,
                    SAMPLING_RATE,
                    format!("gan-{i:05}"),
                    fold,
                )?);
            }
        }
        Dataset::new(records, labels.to_vec(), vocabulary.clone())
    }
}
