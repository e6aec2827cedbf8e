use rand::Rng;
use sssd_nn::{Conv1dGeom, Float, ParamStore, Tape, Tensor, Var};

use super::GanConfig;
use crate::error::{Error, Result};
use crate::layers::{BnStat, Conv1d, ConvInit, Linear, RunningStats};

const UPSAMPLE: usize = 4;
const N_BLOCKS: usize = 5;
const LEAK: f64 = 0.2;

/// Batch normalization whose scale and shift come from the label vector:
/// `y = (1 + Δγ(c)) x̂ + Δβ(c)` with `[Δγ, Δβ] = c W + b`.
#[derive(Debug, Clone, Copy)]
pub struct CondBatchNorm {
    pub stats: RunningStats,
    /// Label embedding `n_labels → 2 C`.
    pub embed: Linear,
    pub channels: usize,
}

impl CondBatchNorm {
    pub fn new<F: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        channels: usize,
        n_labels: usize,
        rng: &mut R,
    ) -> Self {
        let embed = Linear::new(store, &format!("{name}.embed"), n_labels, 2 * channels, true, rng);
        if let Some(b) = embed.bias {
            *store.value_mut(b) = Tensor::zeros(&[2 * channels]);
        }
        Self {
            stats: RunningStats::new(store, name, channels),
            embed,
            channels,
        }
    }

    pub fn forward<'t, F: Float>(
        &self,
        tape: &'t Tape<F>,
        store: &ParamStore<F>,
        x: &Var<'t, F>,
        cond: &Var<'t, F>,
        stats: Option<&mut Vec<BnStat<F>>>,
    ) -> Result<Var<'t, F>> {
        let s = x.shape();
        if s.len() != 3 || s[1] != self.channels {
            return Err(Error::InputShape(format!("{s:?} for {} channels", self.channels)));
        }
        if s[0] == 0 {
            return Err(Error::EmptyBatch);
        }
        if cond.shape().len() != 2 || cond.shape()[0] != s[0] {
            return Err(Error::ConditionShape(format!("{:?} for batch {}", cond.shape(), s[0])));
        }
        let (b, c) = (s[0], self.channels);
        let xhat = self.stats.standardize(tape, store, x, stats)?;
        let e = self.embed.forward(tape, store, cond)?;
        let dg = e.narrow(1, 0, c)?.reshape(&[b, c, 1])?;
        let db = e.narrow(1, c, c)?.reshape(&[b, c, 1])?;
        Ok(xhat.add(&xhat.mul(&dg)?)?.add(&db)?)
    }
}

fn same_conv<F: Float, R: Rng + ?Sized>(
    store: &mut ParamStore<F>,
    name: &str,
    ni: usize,
    nf: usize,
    k: usize,
    rng: &mut R,
) -> Conv1d {
    Conv1d::new(store, name, ni, nf, k, Conv1dGeom::same(k), true, ConvInit::FanIn, rng)
}

fn down_geom(k: usize) -> Conv1dGeom {
    Conv1dGeom {
        stride: UPSAMPLE,
        pad_left: (k - 1) / 2,
        pad_right: (k - 1) / 2,
    }
}

/// Channel widths `16d, 8d, 4d, 2d, d`.
fn widths(d: usize) -> [usize; N_BLOCKS] {
    [16 * d, 8 * d, 4 * d, 2 * d, d]
}

/// Dense projection to `[16d, l0]`, then five blocks of ×4 nearest
/// upsampling, width-k convolution, conditional batch norm and ReLU. The
/// last block's convolution maps to 8 leads with a linear output; the
/// result is trimmed to the target length.
#[derive(Debug, Clone)]
pub struct WaveGanGen {
    fc: Linear,
    convs: Vec<Conv1d>,
    norms: Vec<CondBatchNorm>,
    l0: usize,
    c0: usize,
    length: usize,
}

impl WaveGanGen {
    pub fn new<F: Float, R: Rng + ?Sized>(store: &mut ParamStore<F>, cfg: &GanConfig, rng: &mut R) -> Result<Self> {
        let w = widths(cfg.model_size);
        let l0 = cfg.length.div_ceil(UPSAMPLE.pow(N_BLOCKS as u32));
        let fc = Linear::new(store, "gen.fc", cfg.latent_dim, w[0] * l0, true, rng);
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        for i in 0..N_BLOCKS {
            let out = if i + 1 < N_BLOCKS { w[i + 1] } else { 8 };
            convs.push(same_conv(store, &format!("gen.block{i}.conv"), w[i], out, cfg.kernel_size, rng));
            if i + 1 < N_BLOCKS {
                norms.push(CondBatchNorm::new(store, &format!("gen.block{i}.cbn"), out, cfg.n_labels, rng));
            }
        }
        Ok(Self {
            fc,
            convs,
            norms,
            l0,
            c0: w[0],
            length: cfg.length,
        })
    }

    pub fn forward<'t, F: Float>(
        &self,
        tape: &'t Tape<F>,
        store: &ParamStore<F>,
        z: &Var<'t, F>,
        cond: &Var<'t, F>,
        mut stats: Option<&mut Vec<BnStat<F>>>,
    ) -> Result<Var<'t, F>> {
        let b = z.shape()[0];
        let mut h = self.fc.forward(tape, store, z)?.reshape(&[b, self.c0, self.l0])?.relu();
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(tape, store, &h.upsample(UPSAMPLE)?)?;
            if let Some(norm) = self.norms.get(i) {
                h = norm.forward(tape, store, &h, cond, stats.as_deref_mut())?.relu();
            }
        }
        let excess = h.shape()[2] - self.length;
        Ok(h.narrow(2, excess / 2, self.length)?)
    }
}

/// U-Net generator: the noise (padded to `4^5 · l0`) goes through five
/// strided convolution blocks with LeakyReLU, then five upsampling blocks,
/// each concatenating the mirrored down-block activation. Every convolution
/// but the output one is followed by conditional batch norm.
#[derive(Debug, Clone)]
pub struct Pulse2PulseGen {
    down: Vec<(Conv1d, CondBatchNorm)>,
    up: Vec<Conv1d>,
    up_norms: Vec<CondBatchNorm>,
    padded: usize,
    length: usize,
}

impl Pulse2PulseGen {
    pub fn new<F: Float, R: Rng + ?Sized>(store: &mut ParamStore<F>, cfg: &GanConfig, rng: &mut R) -> Result<Self> {
        let k = cfg.kernel_size;
        let d = cfg.model_size;
        let down_w = [8, d, 2 * d, 4 * d, 8 * d, 16 * d];
        let mut down = Vec::new();
        for i in 0..N_BLOCKS {
            let conv = Conv1d::new(
                store,
                &format!("gen.down{i}.conv"),
                down_w[i],
                down_w[i + 1],
                k,
                down_geom(k),
                true,
                ConvInit::FanIn,
                rng,
            );
            let norm = CondBatchNorm::new(store, &format!("gen.down{i}.cbn"), down_w[i + 1], cfg.n_labels, rng);
            down.push((conv, norm));
        }
        // Up block i receives the previous output (or the bottleneck) and,
        // except for the first, the concatenated mirrored skip.
        let up_out = [8 * d, 4 * d, 2 * d, d, 8];
        let mut up = Vec::new();
        let mut up_norms = Vec::new();
        let mut ni = 16 * d;
        for (i, &out) in up_out.iter().enumerate() {
            up.push(same_conv(store, &format!("gen.up{i}.conv"), ni, out, k, rng));
            if i + 1 < N_BLOCKS {
                up_norms.push(CondBatchNorm::new(store, &format!("gen.up{i}.cbn"), out, cfg.n_labels, rng));
                ni = 2 * out;
            }
        }
        let scale = UPSAMPLE.pow(N_BLOCKS as u32);
        Ok(Self {
            down,
            up,
            up_norms,
            padded: cfg.length.div_ceil(scale) * scale,
            length: cfg.length,
        })
    }

    /// `zero_skip = Some(i)` replaces the skip into up block `i + 1` with
    /// zeros (ablation probe).
    pub fn forward<'t, F: Float>(
        &self,
        tape: &'t Tape<F>,
        store: &ParamStore<F>,
        noise: &Var<'t, F>,
        cond: &Var<'t, F>,
        mut stats: Option<&mut Vec<BnStat<F>>>,
        zero_skip: Option<usize>,
    ) -> Result<Var<'t, F>> {
        let pad = self.padded - self.length;
        let mut h = noise.pad_last(pad / 2, pad - pad / 2)?;
        let mut skips = Vec::with_capacity(N_BLOCKS);
        for (conv, norm) in &self.down {
            h = conv.forward(tape, store, &h)?;
            h = norm
                .forward(tape, store, &h, cond, stats.as_deref_mut())?
                .leaky_relu(F::of(LEAK));
            skips.push(h.clone());
        }
        skips.pop();
        for (i, conv) in self.up.iter().enumerate() {
            h = conv.forward(tape, store, &h.upsample(UPSAMPLE)?)?;
            if let Some(norm) = self.up_norms.get(i) {
                h = norm.forward(tape, store, &h, cond, stats.as_deref_mut())?.relu();
                let mut skip = skips.pop().expect("one skip per inner up block");
                if zero_skip == Some(i) {
                    skip = tape.constant(Tensor::zeros(skip.shape()));
                }
                h = Var::concat(&[&h, &skip], 1)?;
            }
        }
        Ok(h.narrow(2, pad / 2, self.length)?)
    }
}

/// Unconditional critic on 8-lead signals: five stride-4 convolutions and a
/// final stride-1 one (all LeakyReLU), flattened into a linear score.
#[derive(Debug, Clone)]
pub struct Discriminator {
    convs: Vec<Conv1d>,
    head: Linear,
    length: usize,
}

impl Discriminator {
    pub fn new<F: Float, R: Rng + ?Sized>(store: &mut ParamStore<F>, cfg: &GanConfig, rng: &mut R) -> Result<Self> {
        let k = cfg.kernel_size;
        let d = cfg.model_size;
        let w = [8, d, 2 * d, 4 * d, 8 * d, 16 * d, 32 * d];
        let mut convs = Vec::new();
        let mut len = cfg.length;
        for i in 0..6 {
            let geom = if i < 5 { down_geom(k) } else { Conv1dGeom::same(k) };
            len = geom.out_len(len, k)?;
            convs.push(Conv1d::new(
                store,
                &format!("disc.block{i}.conv"),
                w[i],
                w[i + 1],
                k,
                geom,
                true,
                ConvInit::FanIn,
                rng,
            ));
        }
        let head = Linear::new(store, "disc.head", w[6] * len, 1, true, rng);
        Ok(Self {
            convs,
            head,
            length: cfg.length,
        })
    }

    pub fn forward<'t, F: Float>(&self, tape: &'t Tape<F>, store: &ParamStore<F>, x: &Var<'t, F>) -> Result<Var<'t, F>> {
        let s = x.shape();
        if s.len() != 3 || s[1] != 8 || s[2] != self.length || s[0] == 0 {
            return Err(Error::InputShape(format!("discriminator input {s:?}")));
        }
        let mut h = x.clone();
        for conv in &self.convs {
            h = conv.forward(tape, store, &h)?.leaky_relu(F::of(LEAK));
        }
        let flat = h.shape()[1] * h.shape()[2];
        self.head.forward(tape, store, &h.reshape(&[s[0], flat])?)
    }
}

#[derive(Debug, Clone)]
pub enum Generator {
    WaveGan(WaveGanGen),
    Pulse2Pulse(Pulse2PulseGen),
}
