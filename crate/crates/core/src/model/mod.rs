//! The SSSD-ECG noise-prediction network.
//!
//! ```text
//! x_t ─ conv1x1 ─ ReLU ─┬─ residual layer ─┬─ ... ─ residual layer
//!                       │        │skip      │            │skip
//!                       └────────┴──── Σ / √n_layers ────┘
//!                                           │
//!                         conv1x1 ─ ReLU ─ conv1x1 (zero init) ─ ε̂
//! ```
//!
//! A residual layer adds the projected diffusion-step embedding, doubles the
//! channels with a width-3 convolution, applies an S4 layer, adds the
//! projected label embedding, applies a second S4 layer, gates with
//! `tanh(a)·σ(b)` and splits into residual and skip projections.

mod synth;
mod train;

pub use synth::{generate_dataset_copy, synth_copy, CachedSssd, GenerateOptions};
pub(crate) use train::batch_tensors;
pub use train::{train_sssd, TrainConfig, TrainingCurve};

use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use sssd_nn::{Conv1dGeom, Float, ParamId, ParamStore, Tape, Tensor, Var};

use crate::diffusion::NoisePredictor;
use crate::error::{Error, Result};
use crate::layers::{Conv1d, ConvInit, Linear};
use crate::rng;
use crate::s4::{S4Config, S4Layer, S4Spectra};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SssdEcgConfig {
    pub n_residual_layers: usize,
    pub residual_channels: usize,
    pub skip_channels: usize,
    pub diffusion_embed_dims: [usize; 3],
    pub n_labels: usize,
    /// Width of the label embedding; `None` uses `residual_channels`.
    #[serde(default)]
    pub label_embed_dim: Option<usize>,
    pub out_leads: usize,
    pub length: usize,
    /// Start the output convolution at zero so `ε̂ ≡ 0` at init.
    #[serde(default = "default_true")]
    pub zero_output_init: bool,
}

fn default_true() -> bool {
    true
}

impl Default for SssdEcgConfig {
    fn default() -> Self {
        Self {
            n_residual_layers: 36,
            residual_channels: 256,
            skip_channels: 256,
            diffusion_embed_dims: [128, 512, 512],
            n_labels: 71,
            label_embed_dim: None,
            out_leads: 8,
            length: 1000,
            zero_output_init: true,
        }
    }
}

impl SssdEcgConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.n_residual_layers,
            self.residual_channels,
            self.skip_channels,
            self.n_labels,
            self.length,
            self.label_embed_dim(),
        ];
        if dims.contains(&0) || self.diffusion_embed_dims.contains(&0) {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.out_leads != 8 {
            return Err(Error::Config(format!("out_leads {} (must be 8)", self.out_leads)));
        }
        if self.diffusion_embed_dims[0] % 2 != 0 || self.diffusion_embed_dims[0] < 4 {
            return Err(Error::Config("sinusoidal embedding width must be even and >= 4".into()));
        }
        Ok(())
    }

    pub fn label_embed_dim(&self) -> usize {
        self.label_embed_dim.unwrap_or(self.residual_channels)
    }
}

/// `[sin(t ω_i), cos(t ω_i)]` with `ω_i = 10000^{-i/(half-1)}`, shape `[B, dim]`.
pub fn sinusoidal_embedding<F: Float>(steps: &[usize], dim: usize) -> Tensor<F> {
    let half = dim / 2;
    let scale = (10000f64).ln() / (half.max(2) - 1) as f64;
    Tensor::from_fn(&[steps.len(), dim], |i| {
        let (b, j) = (i / dim, i % dim);
        let w = (-scale * (j % half) as f64).exp();
        let arg = steps[b] as f64 * w;
        F::of(if j < half { arg.sin() } else { arg.cos() })
    })
}

#[derive(Debug, Clone)]
struct ResidualLayer {
    fc_t: Linear,
    conv: Conv1d,
    s4_first: S4Layer,
    fc_label: Linear,
    s4_second: S4Layer,
    /// Absent in the last layer, whose residual output feeds nothing.
    res_conv: Option<Conv1d>,
    skip_conv: Conv1d,
}

/// Kernel spectra of every S4 layer for the configured length.
#[derive(Clone)]
pub struct ModelCache<F: Float> {
    spectra: Vec<[S4Spectra<F>; 2]>,
}

#[derive(Debug, Clone)]
pub struct SssdEcg<F: Float> {
    pub config: SssdEcgConfig,
    pub s4: S4Config,
    pub store: ParamStore<F>,
    init_conv: Conv1d,
    fc_step1: Linear,
    fc_step2: Linear,
    label_matrix: ParamId,
    layers: Vec<ResidualLayer>,
    final_conv: Conv1d,
    out_conv: Conv1d,
}

impl<F: Float> SssdEcg<F> {
    /// Parameters are drawn from `rng::seeded(seed)` in registration order.
    pub fn new(config: SssdEcgConfig, s4: S4Config, seed: u64) -> Result<Self> {
        config.validate()?;
        s4.validate()?;
        let mut rng = rng::Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let mut store = ParamStore::new();
        let st = &mut store;
        let (res, skip) = (config.residual_channels, config.skip_channels);
        let [e0, e1, e2] = config.diffusion_embed_dims;
        let init_conv = Conv1d::pointwise(st, "init_conv", config.out_leads, res, ConvInit::Kaiming, rng);
        let fc_step1 = Linear::new(st, "step_embed.fc1", e0, e1, true, rng);
        let fc_step2 = Linear::new(st, "step_embed.fc2", e1, e2, true, rng);
        let d_embed = config.label_embed_dim();
        let label_matrix = st.add(
            "label_embed.matrix",
            Tensor::randn(&[config.n_labels, d_embed], 1.0, rng),
        );
        let mut layers = Vec::with_capacity(config.n_residual_layers);
        for i in 0..config.n_residual_layers {
            let p = format!("layers.{i}");
            layers.push(ResidualLayer {
                fc_t: Linear::new(st, &format!("{p}.fc_t"), e2, res, true, rng),
                conv: Conv1d::new(
                    st,
                    &format!("{p}.conv"),
                    res,
                    2 * res,
                    3,
                    Conv1dGeom::same(3),
                    true,
                    ConvInit::Kaiming,
                    rng,
                ),
                s4_first: S4Layer::new(st, &format!("{p}.s4_first"), 2 * res, &s4, true, rng)?,
                fc_label: Linear::new(st, &format!("{p}.fc_label"), d_embed, 2 * res, true, rng),
                s4_second: S4Layer::new(st, &format!("{p}.s4_second"), 2 * res, &s4, true, rng)?,
                res_conv: (i + 1 < config.n_residual_layers)
                    .then(|| Conv1d::pointwise(st, &format!("{p}.res_conv"), res, res, ConvInit::Kaiming, rng)),
                skip_conv: Conv1d::pointwise(st, &format!("{p}.skip_conv"), res, skip, ConvInit::Kaiming, rng),
            });
        }
        let final_conv = Conv1d::pointwise(st, "final_conv", skip, skip, ConvInit::Kaiming, rng);
        let out_init = if config.zero_output_init { ConvInit::Zero } else { ConvInit::FanIn };
        let out_conv = Conv1d::pointwise(st, "out_conv", skip, config.out_leads, out_init, rng);
        Ok(Self {
            config,
            s4,
            store,
            init_conv,
            fc_step1,
            fc_step2,
            label_matrix,
            layers,
            final_conv,
            out_conv,
        })
    }

    pub fn cache(&self) -> Result<ModelCache<F>> {
        let len = self.config.length;
        let spectra = self
            .layers
            .iter()
            .map(|l| {
                Ok([
                    l.s4_first.spectra(&self.store, len)?,
                    l.s4_second.spectra(&self.store, len)?,
                ])
            })
            .collect::<Result<_>>()?;
        Ok(ModelCache { spectra })
    }

    /// Diffusion-step embedding `[B, e2]`.
    pub fn embed_steps<'t>(&self, tape: &'t Tape<F>, steps: &[usize]) -> Result<Var<'t, F>> {
        let base = tape.constant(sinusoidal_embedding(steps, self.config.diffusion_embed_dims[0]));
        let h = self.fc_step1.forward(tape, &self.store, &base)?.silu();
        Ok(self.fc_step2.forward(tape, &self.store, &h)?.silu())
    }

    fn check_condition(&self, cond: &Tensor<F>) -> Result<()> {
        if cond.ndim() != 2 || cond.dim(1) != self.config.n_labels {
            return Err(Error::ConditionShape(format!(
                "{:?}, expected [B, {}]",
                cond.shape(),
                self.config.n_labels
            )));
        }
        Ok(())
    }

    /// `c · label_matrix`, shape `[B, d_embed]`. Linear in `c`.
    pub fn label_embedding<'t>(&self, tape: &'t Tape<F>, cond: &Tensor<F>) -> Result<Var<'t, F>> {
        self.check_condition(cond)?;
        Ok(tape
            .constant(cond.clone())
            .matmul(&tape.param(&self.store, self.label_matrix))?)
    }

    /// Conditioning added inside residual layer `layer`, shape `[B, 2 res]`.
    /// Affine in `cond`.
    pub fn embed_condition<'t>(
        &self,
        tape: &'t Tape<F>,
        cond: &Tensor<F>,
        layer: usize,
    ) -> Result<Var<'t, F>> {
        let l = self
            .layers
            .get(layer)
            .ok_or_else(|| Error::ConditionShape(format!("no residual layer {layer}")))?;
        let e = self.label_embedding(tape, cond)?;
        l.fc_label.forward(tape, &self.store, &e)
    }

    /// One residual layer on `x: [B, res, L]`; returns `(residual, skip)`.
    /// The last layer has no residual projection and returns `x / √2`.
    pub fn residual_layer_forward<'t>(
        &self,
        tape: &'t Tape<F>,
        layer: usize,
        x: &Var<'t, F>,
        step_embed: &Var<'t, F>,
        label_embed: &Var<'t, F>,
        cache: Option<&ModelCache<F>>,
    ) -> Result<(Var<'t, F>, Var<'t, F>)> {
        let l = &self.layers[layer];
        let st = &self.store;
        let res = self.config.residual_channels;
        let b = x.shape()[0];
        let spectra = cache.map(|c| &c.spectra[layer]);

        let part_t = l.fc_t.forward(tape, st, step_embed)?.reshape(&[b, res, 1])?;
        let h = x.add(&part_t)?;
        let h = l.conv.forward(tape, st, &h)?;
        let h = l.s4_first.forward(tape, st, &h, spectra.map(|s| &s[0]))?;
        let cond = l.fc_label.forward(tape, st, label_embed)?.reshape(&[b, 2 * res, 1])?;
        let h = h.add(&cond)?;
        let h = l.s4_second.forward(tape, st, &h, spectra.map(|s| &s[1]))?;
        let gated = h.narrow(1, 0, res)?.tanh().mul(&h.narrow(1, res, res)?.sigmoid())?;
        let skip = l.skip_conv.forward(tape, st, &gated)?;
        let out = match &l.res_conv {
            Some(conv) => x.add(&conv.forward(tape, st, &gated)?)?,
            None => x.clone(),
        }
        .scale(F::of(std::f64::consts::FRAC_1_SQRT_2));
        if !out.value().all_finite() || !skip.value().all_finite() {
            return Err(Error::LayerDiverged(format!("residual layer {layer}")));
        }
        Ok((out, skip))
    }

    /// `ε̂ = ε_θ(x_t, t, c)` for `x_t: [B, 8, length]`.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape<F>,
        x_t: &Var<'t, F>,
        steps: &[usize],
        cond: &Tensor<F>,
        cache: Option<&ModelCache<F>>,
    ) -> Result<Var<'t, F>> {
        let s = x_t.shape();
        if s.len() != 3 || s[1] != self.config.out_leads || s[2] != self.config.length || s[0] == 0 {
            return Err(Error::InputShape(format!(
                "{s:?}, expected [B, {}, {}]",
                self.config.out_leads, self.config.length
            )));
        }
        if steps.len() != s[0] || cond.ndim() != 2 || cond.dim(0) != s[0] {
            return Err(Error::InputShape(format!(
                "batch {} with {} steps and condition {:?}",
                s[0],
                steps.len(),
                cond.shape()
            )));
        }
        let st = &self.store;
        let step_embed = self.embed_steps(tape, steps)?;
        let label_embed = self.label_embedding(tape, cond)?;
        let mut h = self.init_conv.forward(tape, st, x_t)?.relu();
        let mut skip_sum: Option<Var<'t, F>> = None;
        for i in 0..self.layers.len() {
            let (next, skip) = self.residual_layer_forward(tape, i, &h, &step_embed, &label_embed, cache)?;
            h = next;
            skip_sum = Some(match skip_sum {
                Some(acc) => acc.add(&skip)?,
                None => skip,
            });
        }
        let skip = skip_sum
            .expect("at least one residual layer")
            .scale(F::of(1.0 / (self.layers.len() as f64).sqrt()));
        let h = self.final_conv.forward(tape, st, &skip)?.relu();
        let out = self.out_conv.forward(tape, st, &h)?;
        if !out.value().all_finite() {
            return Err(Error::Diverged("non-finite noise prediction".into()));
        }
        Ok(out)
    }
}

impl<F: Float> NoisePredictor<F> for SssdEcg<F> {
    fn predict<'t>(
        &self,
        tape: &'t Tape<F>,
        x_t: &Var<'t, F>,
        steps: &[usize],
        cond: &Tensor<F>,
    ) -> Result<Var<'t, F>> {
        self.forward(tape, x_t, steps, cond, None)
    }
}
