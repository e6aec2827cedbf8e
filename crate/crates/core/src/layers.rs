//! Parameterized building blocks shared by the generators, discriminators
//! and classifiers.

use rand::Rng;
use sssd_nn::init::{fan_in_uniform, kaiming_normal};
use sssd_nn::{Conv1dGeom, Float, NormAxes, ParamId, ParamStore, Tape, Tensor, Var};

use crate::error::Result;

/// `y = x W + b` on `[B, in]`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<F: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), fan_in_uniform(&[in_dim, out_dim], in_dim, rng));
        let bias = bias.then(|| store.add(format!("{name}.bias"), fan_in_uniform(&[out_dim], in_dim, rng)));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<'t, F: Float>(
        &self,
        tape: &'t Tape<F>,
        store: &ParamStore<F>,
        x: &Var<'t, F>,
    ) -> Result<Var<'t, F>> {
        let y = x.matmul(&tape.param(store, self.weight))?;
        Ok(match self.bias {
            Some(b) => y.add(&tape.param(store, b))?,
            None => y,
        })
    }
}

/// 1-D convolution with weight `[out, in, k]` and bias `[out, 1]`.
#[derive(Debug, Clone, Copy)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geom: Conv1dGeom,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvInit {
    /// `N(0, 2 / fan_in)` weights, zero bias.
    Kaiming,
    /// `U(±1/√fan_in)` weights and bias.
    FanIn,
    Zero,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        geom: Conv1dGeom,
        bias: bool,
        init: ConvInit,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_ch * kernel;
        let shape = [out_ch, in_ch, kernel];
        let w = match init {
            ConvInit::Kaiming => kaiming_normal(&shape, fan_in, rng),
            ConvInit::FanIn => fan_in_uniform(&shape, fan_in, rng),
            ConvInit::Zero => Tensor::zeros(&shape),
        };
        let weight = store.add(format!("{name}.weight"), w);
        let bias = bias.then(|| {
            let b = match init {
                ConvInit::FanIn => fan_in_uniform(&[out_ch, 1], fan_in, rng),
                _ => Tensor::zeros(&[out_ch, 1]),
            };
            store.add(format!("{name}.bias"), b)
        });
        Self {
            weight,
            bias,
            geom,
            in_ch,
            out_ch,
            kernel,
        }
    }

    /// Pointwise (`k = 1`) convolution.
    pub fn pointwise<F: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        init: ConvInit,
        rng: &mut R,
    ) -> Self {
        Self::new(store, name, in_ch, out_ch, 1, Conv1dGeom::valid(), true, init, rng)
    }

    pub fn forward<'t, F: Float>(
        &self,
        tape: &'t Tape<F>,
        store: &ParamStore<F>,
        x: &Var<'t, F>,
    ) -> Result<Var<'t, F>> {
        let y = x.conv1d(&tape.param(store, self.weight), self.geom)?;
        Ok(match self.bias {
            Some(b) => y.add(&tape.param(store, b))?,
            None => y,
        })
    }
}

/// Batch statistics of one normalization call in training mode.
#[derive(Debug, Clone)]
pub struct BnStat<F> {
    stats: RunningStats,
    mean: Vec<F>,
    /// Unbiased variance.
    var: Vec<F>,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel running mean and variance, stored as frozen parameters so
/// they are checkpointed with the weights.
#[derive(Debug, Clone, Copy)]
pub struct RunningStats {
    pub mean: ParamId,
    pub var: ParamId,
    pub channels: usize,
}

impl RunningStats {
    pub fn new<F: Float>(store: &mut ParamStore<F>, name: &str, channels: usize) -> Self {
        Self {
            mean: store.add_frozen(format!("{name}.running_mean"), Tensor::zeros(&[channels])),
            var: store.add_frozen(format!("{name}.running_var"), Tensor::ones(&[channels])),
            channels,
        }
    }

    /// `x̂` of `[B, C, L]` over batch and time. With `stats = Some(sink)` uses
    /// batch statistics and records them; with `None` uses running statistics.
    pub fn standardize<'t, F: Float>(
        &self,
        tape: &'t Tape<F>,
        store: &ParamStore<F>,
        x: &Var<'t, F>,
        stats: Option<&mut Vec<BnStat<F>>>,
    ) -> Result<Var<'t, F>> {
        match stats {
            Some(sink) => {
                let (xhat, mean, var) = x.standardize(NormAxes::BatchTime, F::of(BN_EPS))?;
                let n = (x.shape()[0] * x.shape()[2]) as f64;
                let corr = F::of(if n > 1.0 { n / (n - 1.0) } else { 1.0 });
                sink.push(BnStat {
                    stats: *self,
                    mean,
                    var: var.into_iter().map(|v| v * corr).collect(),
                });
                Ok(xhat)
            }
            None => {
                let c = self.channels;
                let shift = Tensor::new(&[1, c, 1], store.get(self.mean).data().to_vec())?;
                let inv = store
                    .get(self.var)
                    .map(|v| F::one() / (v + F::of(BN_EPS)).sqrt())
                    .into_shape(&[1, c, 1])?;
                Ok(x.sub(&tape.constant(shift))?.mul(&tape.constant(inv))?)
            }
        }
    }
}

/// Folds recorded batch statistics into the running estimates.
pub fn update_running_stats<F: Float>(store: &mut ParamStore<F>, stats: &[BnStat<F>]) {
    let m = F::of(BN_MOMENTUM);
    for s in stats {
        for (id, batch) in [(s.stats.mean, &s.mean), (s.stats.var, &s.var)] {
            for (r, &b) in store.value_mut(id).data_mut().iter_mut().zip(batch) {
                *r = (F::one() - m) * *r + m * b;
            }
        }
    }
}

/// Batch normalization with a per-channel affine map.
#[derive(Debug, Clone, Copy)]
pub struct BatchNorm1d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: RunningStats,
}

impl BatchNorm1d {
    /// `zero_gamma` starts the scale at zero (residual-branch init).
    pub fn new<F: Float>(store: &mut ParamStore<F>, name: &str, channels: usize, zero_gamma: bool) -> Self {
        let g = if zero_gamma { Tensor::zeros(&[1, channels, 1]) } else { Tensor::ones(&[1, channels, 1]) };
        Self {
            gamma: store.add(format!("{name}.gamma"), g),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[1, channels, 1])),
            stats: RunningStats::new(store, name, channels),
        }
    }

    pub fn forward<'t, F: Float>(
        &self,
        tape: &'t Tape<F>,
        store: &ParamStore<F>,
        x: &Var<'t, F>,
        stats: Option<&mut Vec<BnStat<F>>>,
    ) -> Result<Var<'t, F>> {
        let xhat = self.stats.standardize(tape, store, x, stats)?;
        Ok(xhat
            .mul(&tape.param(store, self.gamma))?
            .add(&tape.param(store, self.beta))?)
    }
}
