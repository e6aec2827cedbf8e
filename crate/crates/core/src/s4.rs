//! Structured state-space layer with a dense HiPPO-LegS transition matrix.
//!
//! For each channel the continuous system `x' = Ax + Bu, y = Cx + Du` is
//! discretized with the bilinear transform (`h = dt/2`, `M = I - hA`):
//!
//! ```text
//! Ā = M⁻¹(I + hA)    B̄ = M⁻¹ dt B    K_k = C Ā^k B̄
//! ```
//!
//! and applied as a long convolution. `A` and `B` stay at their HiPPO
//! values; `C`, `D` and `log dt` are trained. The gradient of `K` with
//! respect to `h` uses the fact that `Ā`, `M⁻¹` and `A` commute:
//!
//! ```text
//! ∂K_k/∂h = k · C M⁻¹A(Ā + I) Ā^{k-1} B̄ + (C M⁻¹A + C/h) Ā^k B̄
//! ```
//!
//! so every parameter gradient is a weighted sum over `v_k = Ā^k B̄`.
//! Both the kernel and those sums are evaluated with a baby-step/giant-step
//! split `k = i + m j` (`m ≈ √L`), costing `O(N²√L + N³ log m + NL)` per
//! channel instead of `O(N²L)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sssd_nn::kernels::fftconv::{kernel_spectra, FftPlan};
use sssd_nn::{par, Complex, Float, NormAxes, ParamId, ParamStore, Tape, Tensor, Var};

use crate::error::{Error, Result};

/// Variance guard of the channel layer norm; constant inputs map to 0.
pub const NORM_EPS: f64 = 1e-5;

const KERNEL_LIMIT: f64 = 1e30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct S4Config {
    #[serde(rename = "N")]
    pub state_size: usize,
    pub dt_min: f64,
    pub dt_max: f64,
    pub bidirectional: bool,
}

impl Default for S4Config {
    fn default() -> Self {
        Self {
            state_size: 64,
            dt_min: 1e-3,
            dt_max: 1e-1,
            bidirectional: true,
        }
    }
}

impl S4Config {
    pub fn validate(&self) -> Result<()> {
        if self.state_size < 1 {
            return Err(Error::StateSize(self.state_size));
        }
        if !(self.dt_min > 0.0 && self.dt_min <= self.dt_max && self.dt_max.is_finite()) {
            return Err(Error::Config(format!(
                "s4 dt range [{}, {}]",
                self.dt_min, self.dt_max
            )));
        }
        Ok(())
    }
}

/// Single-channel parameters in f64, used by the reference path.
#[derive(Debug, Clone, PartialEq)]
pub struct SsmParams {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
    pub d: f64,
    pub log_dt: f64,
}

impl SsmParams {
    pub fn state_size(&self) -> usize {
        self.b.len()
    }
}

/// HiPPO-LegS `(A, B)` of size `n`.
pub fn hippo_legs(n: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if n < 1 {
        return Err(Error::StateSize(n));
    }
    let a = DMatrix::from_fn(n, n, |r, k| match r.cmp(&k) {
        std::cmp::Ordering::Greater => -((2 * r + 1) as f64).sqrt() * ((2 * k + 1) as f64).sqrt(),
        std::cmp::Ordering::Equal => -((r + 1) as f64),
        std::cmp::Ordering::Less => 0.0,
    });
    let b = DVector::from_fn(n, |r, _| ((2 * r + 1) as f64).sqrt());
    Ok((a, b))
}

/// HiPPO `(A, B)`, standard normal `C`, `D = 1` and `log dt` uniform in
/// `[ln dt_min, ln dt_max]`.
pub fn hippo_init<R: Rng + ?Sized>(n: usize, dt_min: f64, dt_max: f64, rng: &mut R) -> Result<SsmParams> {
    let (a, b) = hippo_legs(n)?;
    let c = DVector::from_fn(n, |_, _| rng.sample(rand_distr::StandardNormal));
    let log_dt = sample_log_dt(dt_min, dt_max, rng);
    Ok(SsmParams { a, b, c, d: 1.0, log_dt })
}

fn sample_log_dt<R: Rng + ?Sized>(dt_min: f64, dt_max: f64, rng: &mut R) -> f64 {
    let (lo, hi) = (dt_min.ln(), dt_max.ln());
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discrete {
    pub a_bar: DMatrix<f64>,
    pub b_bar: DVector<f64>,
}

pub fn discretize(params: &SsmParams) -> Result<Discrete> {
    discretize_dt(&params.a, &params.b, params.log_dt.exp())
}

/// Bilinear transform at step `dt`.
pub fn discretize_dt(a: &DMatrix<f64>, b: &DVector<f64>, dt: f64) -> Result<Discrete> {
    let n = b.len();
    if !(dt > 0.0 && dt.is_finite()) || a.nrows() != n || a.ncols() != n || n == 0 {
        return Err(Error::DiscretizationSingular(dt));
    }
    let h = dt / 2.0;
    let eye = DMatrix::<f64>::identity(n, n);
    let m = &eye - a * h;
    let p = &eye + a * h;
    let lu = m.lu();
    let a_bar = lu.solve(&p).ok_or(Error::DiscretizationSingular(dt))?;
    let b_bar = lu.solve(&(b * dt)).ok_or(Error::DiscretizationSingular(dt))?;
    if a_bar.iter().chain(b_bar.iter()).any(|v| !v.is_finite()) {
        return Err(Error::DiscretizationSingular(dt));
    }
    Ok(Discrete { a_bar, b_bar })
}

/// `y = Ā y` for a column-major `n × n` matrix; `tmp` is scratch.
#[inline]
fn matvec(a_col_major: &[f64], v: &mut [f64], tmp: &mut [f64]) {
    tmp.iter_mut().for_each(|t| *t = 0.0);
    let n = v.len();
    for (j, &vj) in v.iter().enumerate() {
        let col = &a_col_major[j * n..(j + 1) * n];
        for (t, &a) in tmp.iter_mut().zip(col) {
            *t += a * vj;
        }
    }
    v.copy_from_slice(tmp);
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Baby-step/giant-step factorization of the sequence `v_k = Ā^k B̄`:
/// `k = i + m j` with `v_k = (Ā^m)^j v_i`, `i < m`, `j < q`.
struct Powers {
    n: usize,
    m: usize,
    q: usize,
    /// `[m × N]`, row `i` is `Ā^i B̄`.
    baby: Vec<f64>,
    /// `Ā^m`, column-major.
    giant: Vec<f64>,
}

impl Powers {
    fn new(a_bar_col_major: &[f64], b_bar: &[f64], len: usize) -> Self {
        let n = b_bar.len();
        let ni = n as isize;
        let m = ((len as f64).sqrt().ceil() as usize).max(1).next_power_of_two();
        let q = len.div_ceil(m);
        let mut baby = vec![0.0; m * n];
        baby[..n].copy_from_slice(b_bar);
        let mut tmp = vec![0.0; n];
        for i in 1..m {
            let (prev, next) = baby.split_at_mut(i * n);
            let row = &mut next[..n];
            row.copy_from_slice(&prev[(i - 1) * n..]);
            matvec(a_bar_col_major, row, &mut tmp);
        }
        let mut giant = a_bar_col_major.to_vec();
        let mut p = 1;
        while p < m {
            let mut sq = vec![0.0; n * n];
            f64::gemm(n, n, n, 1.0, &giant, 1, ni, &giant, 1, ni, 0.0, &mut sq, 1, ni);
            giant = sq;
            p *= 2;
        }
        Self { n, m, q, baby, giant }
    }

    /// `K_k = C v_k` for `k < len`.
    fn kernel(&self, c: &[f64], len: usize) -> Result<Vec<f64>> {
        let (n, m, q) = (self.n, self.m, self.q);
        // Rows w_j = C (Ā^m)^j.
        let mut w = vec![0.0; q * n];
        w[..n].copy_from_slice(c);
        for j in 1..q {
            let (prev, next) = w.split_at_mut(j * n);
            let prev = &prev[(j - 1) * n..];
            for (col, out) in next[..n].iter_mut().enumerate() {
                *out = dot(&self.giant[col * n..(col + 1) * n], prev);
            }
        }
        let mut k = vec![0.0; q * m];
        let ni = n as isize;
        f64::gemm(q, n, m, 1.0, &w, ni, 1, &self.baby, 1, ni, 0.0, &mut k, m as isize, 1);
        k.truncate(len);
        if k.iter().any(|x| !x.is_finite() || x.abs() > KERNEL_LIMIT) {
            return Err(Error::KernelOverflow);
        }
        Ok(k)
    }

    /// `Σ_k weights[k] v_k`.
    fn weighted_sum(&self, weights: &[f64]) -> Vec<f64> {
        let (n, m, q) = (self.n, self.m, self.q);
        let mut g = vec![0.0; q * m];
        g[..weights.len()].copy_from_slice(weights);
        // u_j = Σ_i g[j m + i] v_i
        let mut u = vec![0.0; q * n];
        let ni = n as isize;
        f64::gemm(q, m, n, 1.0, &g, m as isize, 1, &self.baby, ni, 1, 0.0, &mut u, ni, 1);
        // Horner in Ā^m: acc = Σ_j (Ā^m)^j u_j.
        let mut acc = u[(q - 1) * n..].to_vec();
        let mut tmp = vec![0.0; n];
        for j in (0..q - 1).rev() {
            matvec(&self.giant, &mut acc, &mut tmp);
            for (a, x) in acc.iter_mut().zip(&u[j * n..(j + 1) * n]) {
                *a += x;
            }
        }
        acc
    }
}

/// `K_k = C Ā^k B̄` for `k < len`.
pub fn ssm_kernel(disc: &Discrete, c: &[f64], len: usize) -> Result<Vec<f64>> {
    let n = disc.b_bar.len();
    if c.len() != n {
        return Err(Error::StateSize(c.len()));
    }
    if len == 0 {
        return Ok(Vec::new());
    }
    Powers::new(disc.a_bar.as_slice(), disc.b_bar.as_slice(), len).kernel(c, len)
}

/// Step-by-step evaluation of `x_k = Ā x_{k-1} + B̄ u_k`, `y_k = C x_k + D u_k`.
pub fn ssm_recurrence_oracle(u: &[f64], disc: &Discrete, c: &[f64], d: f64) -> Vec<f64> {
    let n = disc.b_bar.len();
    let mut x = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    u.iter()
        .map(|&uk| {
            matvec(disc.a_bar.as_slice(), &mut x, &mut tmp);
            for (xi, bi) in x.iter_mut().zip(disc.b_bar.iter()) {
                *xi += bi * uk;
            }
            dot(c, &x) + d * uk
        })
        .collect()
}

/// Per-channel quantities kept from the forward pass for the backward pass.
struct ChannelState {
    a_bar: Vec<f64>,
    b_bar: Vec<f64>,
    r1: Vec<f64>,
    r2: Vec<f64>,
    h: f64,
}

fn channel_state(a: &DMatrix<f64>, b: &DVector<f64>, c: &[f64], log_dt: f64) -> Result<ChannelState> {
    let dt = log_dt.exp();
    let h = dt / 2.0;
    let n = c.len();
    // Ā = M⁻¹(2I - M) = 2M⁻¹ - I, so one inverse gives Ā, B̄ and C M⁻¹.
    let m_inv = (DMatrix::<f64>::identity(n, n) - a * h)
        .try_inverse()
        .filter(|m| m.iter().all(|v| v.is_finite()))
        .ok_or(Error::DiscretizationSingular(dt))?;
    let a_bar = &m_inv * 2.0 - DMatrix::<f64>::identity(n, n);
    let b_bar = &m_inv * (b * dt);
    let base = DVector::from_column_slice(c).transpose() * &m_inv * a; // C M⁻¹ A
    let r1 = &base * &a_bar + &base;
    let r2: Vec<f64> = base.iter().zip(c).map(|(x, ci)| x + ci / h).collect();
    Ok(ChannelState {
        a_bar: a_bar.as_slice().to_vec(),
        b_bar: b_bar.as_slice().to_vec(),
        r1: r1.iter().copied().collect(),
        r2,
        h,
    })
}

/// Kernel bank `[H, len]` from `C: [H, N]` and `log_dt: [H]`, recorded on
/// the tape. `a: [N, N]` and `b: [N]` are treated as constants.
pub fn ssm_kernel_op<'t, F: Float>(
    a: &Tensor<F>,
    b: &Tensor<F>,
    c: &Var<'t, F>,
    log_dt: &Var<'t, F>,
    len: usize,
) -> Result<Var<'t, F>> {
    let n = b.len();
    let h_ch = log_dt.value().len();
    if a.shape() != [n, n] || c.shape() != [h_ch, n] || log_dt.shape() != [h_ch] || len == 0 {
        return Err(Error::StateSize(n));
    }
    // Row-major tensor → column-major nalgebra matrix.
    let a64 = DMatrix::from_row_slice(n, n, &a.to_f64_vec());
    let b64 = DVector::from_vec(b.to_f64_vec());
    let c64 = c.value().to_f64_vec();
    let ldt = log_dt.value().to_f64_vec();

    let states: Vec<ChannelState> = par::try_map_indices(h_ch, |ch| {
        channel_state(&a64, &b64, &c64[ch * n..(ch + 1) * n], ldt[ch])
    })?;
    let kernels: Vec<Vec<f64>> = par::try_map_indices(h_ch, |ch| {
        let s = &states[ch];
        Powers::new(&s.a_bar, &s.b_bar, len).kernel(&c64[ch * n..(ch + 1) * n], len)
    })?;
    let k = Tensor::from_fn(&[h_ch, len], |i| F::of(kernels[i / len][i % len]));

    let tape = c.tape();
    Ok(tape.record(k, &[c, log_dt], move |g, _| {
        let g64 = g.to_f64_vec();
        let per: Vec<(Vec<f64>, f64)> = par::map_indices(h_ch, |ch| {
            let s = &states[ch];
            let gk = &g64[ch * len..(ch + 1) * len];
            let powers = Powers::new(&s.a_bar, &s.b_bar, len);
            // ∂/∂C needs Σ g_k v_k; ∂/∂h also needs Σ (k+1) g_{k+1} v_k.
            let shifted: Vec<f64> = (0..len)
                .map(|k| if k + 1 < len { (k + 1) as f64 * gk[k + 1] } else { 0.0 })
                .collect();
            let s2 = powers.weighted_sum(gk);
            let s1 = powers.weighted_sum(&shifted);
            let g_h = dot(&s.r1, &s1) + dot(&s.r2, &s2);
            (s2, g_h * s.h)
        });
        let gc = Tensor::from_fn(&[h_ch, n], |i| F::of(per[i / n].0[i % n]));
        let gl = Tensor::from_fn(&[h_ch], |i| F::of(per[i].1));
        Ok(vec![Some(gc), Some(gl)])
    }))
}

/// Circular FFT length used for sequences of length `len`.
pub fn fft_len(len: usize) -> usize {
    (2 * len).next_power_of_two()
}

/// Packs causal taps `kf` and anti-causal taps `kb` (both `[H, L]`) into a
/// circular kernel `[H, n]` for [`Var::fft_conv`], `n >= 2L`. Anti-causal
/// tap `j` sits at `n - j`; the gap between the two runs stays zero.
pub fn two_sided_kernel<'t, F: Float>(
    kf: &Var<'t, F>,
    kb: Option<&Var<'t, F>>,
    n: usize,
) -> Result<Var<'t, F>> {
    let (h, l) = (kf.shape()[0], kf.shape()[1]);
    if n < 2 * l {
        return Err(Error::InputShape(format!("FFT length {n} for sequences of {l}")));
    }
    if let Some(kb) = kb {
        if kb.shape() != kf.shape() {
            return Err(Error::InputShape(format!("{:?} vs {:?}", kf.shape(), kb.shape())));
        }
    }
    let mut out = vec![F::zero(); h * n];
    let fd = kf.value().data();
    for ch in 0..h {
        out[ch * n..ch * n + l].copy_from_slice(&fd[ch * l..(ch + 1) * l]);
        if let Some(kb) = kb {
            let bd = &kb.value().data()[ch * l..(ch + 1) * l];
            out[ch * n] += bd[0];
            for j in 1..l {
                out[ch * n + n - j] = bd[j];
            }
        }
    }
    let value = Tensor::new(&[h, n], out)?;
    let tape = kf.tape();
    let has_b = kb.is_some();
    let parents: Vec<&Var<'t, F>> = match kb {
        Some(kb) => vec![kf, kb],
        None => vec![kf],
    };
    Ok(tape.record(value, &parents, move |g, _| {
        let gd = g.data();
        let gf = Tensor::from_fn(&[h, l], |i| gd[(i / l) * n + i % l]);
        let mut grads = vec![Some(gf)];
        if has_b {
            let gb = Tensor::from_fn(&[h, l], |i| {
                let (ch, j) = (i / l, i % l);
                if j == 0 {
                    gd[ch * n]
                } else {
                    gd[ch * n + n - j]
                }
            });
            grads.push(Some(gb));
        }
        Ok(grads)
    }))
}

#[derive(Debug, Clone, Copy)]
struct SsmBank {
    c: ParamId,
    log_dt: ParamId,
}

/// Precomputed kernel spectra of one layer for a fixed sequence length.
#[derive(Clone)]
pub struct S4Spectra<F: Float> {
    plan: Arc<FftPlan<F>>,
    spectra: Arc<Vec<Vec<Complex<F>>>>,
    len: usize,
}

/// Bank of `n_channels` (optionally bidirectional) SSMs followed by an
/// optional layer norm across channels.
#[derive(Debug, Clone)]
pub struct S4Layer {
    pub n_channels: usize,
    pub state_size: usize,
    pub bidirectional: bool,
    a: ParamId,
    b: ParamId,
    fwd: SsmBank,
    bwd: Option<SsmBank>,
    d: ParamId,
    norm: Option<(ParamId, ParamId)>,
}

impl S4Layer {
    pub fn new<F: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        prefix: &str,
        n_channels: usize,
        cfg: &S4Config,
        layer_norm: bool,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.state_size;
        let (a, b) = hippo_legs(n)?;
        let a = store.add_frozen(
            format!("{prefix}.A"),
            Tensor::from_fn(&[n, n], |i| F::of(a[(i / n, i % n)])),
        );
        let b = store.add_frozen(format!("{prefix}.B"), Tensor::from_fn(&[n], |i| F::of(b[i])));
        let bank = |store: &mut ParamStore<F>, tag: &str, rng: &mut R| {
            let c = Tensor::randn(&[n_channels, n], 1.0, rng);
            let ldt = Tensor::from_fn(&[n_channels], |_| {
                F::of(sample_log_dt(cfg.dt_min, cfg.dt_max, rng))
            });
            SsmBank {
                c: store.add(format!("{prefix}.{tag}.C"), c),
                log_dt: store.add(format!("{prefix}.{tag}.log_dt"), ldt),
            }
        };
        let fwd = bank(store, "fwd", rng);
        let bwd = cfg.bidirectional.then(|| bank(store, "bwd", rng));
        let d = store.add(format!("{prefix}.D"), Tensor::ones(&[n_channels]));
        let norm = layer_norm.then(|| {
            (
                store.add(format!("{prefix}.norm.gamma"), Tensor::ones(&[1, n_channels, 1])),
                store.add(format!("{prefix}.norm.beta"), Tensor::zeros(&[1, n_channels, 1])),
            )
        });
        Ok(Self {
            n_channels,
            state_size: n,
            bidirectional: cfg.bidirectional,
            a,
            b,
            fwd,
            bwd,
            d,
            norm,
        })
    }

    /// Same parameters with the causal and anti-causal banks exchanged.
    pub fn swapped(&self) -> Option<Self> {
        let bwd = self.bwd?;
        Some(Self {
            fwd: bwd,
            bwd: Some(self.fwd),
            ..self.clone()
        })
    }

    pub fn d_param(&self) -> ParamId {
        self.d
    }

    /// `(C, log_dt)` of the causal bank and, if present, the anti-causal bank.
    pub fn bank_params(&self) -> Vec<(ParamId, ParamId)> {
        std::iter::once(self.fwd)
            .chain(self.bwd)
            .map(|b| (b.c, b.log_dt))
            .collect()
    }

    pub fn norm_params(&self) -> Option<(ParamId, ParamId)> {
        self.norm
    }

    /// Two-sided kernel `[H, fft_len(len)]` on `tape`.
    pub fn kernel<'t, F: Float>(
        &self,
        tape: &'t Tape<F>,
        store: &ParamStore<F>,
        len: usize,
    ) -> Result<Var<'t, F>> {
        let (a, b) = (store.get(self.a), store.get(self.b));
        let bank = |bk: SsmBank| {
            ssm_kernel_op(a, b, &tape.param(store, bk.c), &tape.param(store, bk.log_dt), len)
        };
        let kf = bank(self.fwd)?;
        let kb = self.bwd.map(bank).transpose()?;
        two_sided_kernel(&kf, kb.as_ref(), fft_len(len))
    }

    pub fn spectra<F: Float>(&self, store: &ParamStore<F>, len: usize) -> Result<S4Spectra<F>> {
        let tape = Tape::inference();
        let k = self.kernel(&tape, store, len)?;
        let plan = FftPlan::new(fft_len(len));
        let spectra = kernel_spectra(&plan, k.value());
        Ok(S4Spectra {
            plan: Arc::new(plan),
            spectra: Arc::new(spectra),
            len,
        })
    }

    /// Convolution plus feedthrough, before normalization.
    pub fn forward_pre_norm<'t, F: Float>(
        &self,
        tape: &'t Tape<F>,
        store: &ParamStore<F>,
        u: &Var<'t, F>,
        cache: Option<&S4Spectra<F>>,
    ) -> Result<Var<'t, F>> {
        let s = u.shape();
        if s.len() != 3 || s[1] != self.n_channels {
            return Err(Error::InputShape(format!(
                "S4 input {s:?} for {} channels",
                self.n_channels
            )));
        }
        let len = s[2];
        let y = match cache {
            Some(c) if c.len == len => u.fft_conv_fixed(&c.plan, &c.spectra)?,
            _ => u.fft_conv(&self.kernel(tape, store, len)?)?,
        };
        let d = tape.param(store, self.d).reshape(&[self.n_channels, 1])?;
        Ok(y.add(&u.mul(&d)?)?)
    }

    /// `u: [B, H, L]` to `[B, H, L]`.
    pub fn forward<'t, F: Float>(
        &self,
        tape: &'t Tape<F>,
        store: &ParamStore<F>,
        u: &Var<'t, F>,
        cache: Option<&S4Spectra<F>>,
    ) -> Result<Var<'t, F>> {
        let mut y = self.forward_pre_norm(tape, store, u, cache)?;
        if let Some((gamma, beta)) = self.norm {
            let (z, _, _) = y.standardize(NormAxes::Channels, F::of(NORM_EPS))?;
            y = z.mul(&tape.param(store, gamma))?.add(&tape.param(store, beta))?;
        }
        if !y.value().all_finite() {
            return Err(Error::LayerDiverged("non-finite S4 output".into()));
        }
        Ok(y)
    }
}
