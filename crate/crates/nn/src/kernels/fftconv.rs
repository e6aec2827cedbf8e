//! Long convolutions through a zero-padded circular FFT.
//!
//! For an input `u: [B, C, L]` and per-channel kernel `k: [C, N]` with
//! `N >= 2L - 1`, the output is
//! `y[b, c, t] = sum_m k[c, m] * u[b, c, (t - m) mod N]` for `t < L`,
//! where `u` is zero beyond `L`. Taps `0..L` act causally; taps
//! `N - L + 1..N` reach into the future, which is how two-sided
//! (bidirectional) kernels are expressed.

use std::sync::Arc;

use realfft::num_complex::Complex;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

use crate::error::{shape_err, Result};
use crate::float::Float;
use crate::par;
use crate::tensor::Tensor;

#[derive(Clone)]
pub struct FftPlan<F: Float> {
    n: usize,
    fwd: Arc<dyn RealToComplex<F>>,
    inv: Arc<dyn ComplexToReal<F>>,
}

impl<F: Float> FftPlan<F> {
    pub fn new(n: usize) -> Self {
        let mut planner = RealFftPlanner::<F>::new();
        Self {
            n,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn bins(&self) -> usize {
        self.n / 2 + 1
    }

    /// Spectrum of `signal` zero-padded to the plan length.
    pub fn forward(&self, signal: &[F]) -> Vec<Complex<F>> {
        let mut buf = vec![F::zero(); self.n];
        buf[..signal.len()].copy_from_slice(signal);
        let mut spec = self.fwd.make_output_vec();
        // Buffer lengths come from the plan itself.
        self.fwd
            .process(&mut buf, &mut spec)
            .expect("real FFT buffer sizes");
        spec
    }

    /// Inverse transform, normalized, writing the first `out.len()` samples.
    pub fn inverse_into(&self, mut spec: Vec<Complex<F>>, out: &mut [F]) {
        let last = spec.len() - 1;
        spec[0].im = F::zero();
        if self.n % 2 == 0 {
            spec[last].im = F::zero();
        }
        let mut buf = self.inv.make_output_vec();
        // DC/Nyquist imaginary parts are zeroed above; sizes come from the plan.
        let _ = self.inv.process(&mut spec, &mut buf);
        let scale = F::one() / F::of(self.n as f64);
        for (o, v) in out.iter_mut().zip(&buf) {
            *o = *v * scale;
        }
    }
}

/// Forward state kept for the backward pass.
pub struct FftConvCache<F: Float> {
    pub plan: FftPlan<F>,
    pub u_spec: Vec<Vec<Complex<F>>>,
    pub k_spec: Vec<Vec<Complex<F>>>,
    pub batch: usize,
    pub channels: usize,
    pub len: usize,
}

fn dims<F: Float>(u: &Tensor<F>, k: &Tensor<F>) -> Result<(usize, usize, usize, usize)> {
    if u.ndim() != 3 || k.ndim() != 2 || u.dim(1) != k.dim(0) || k.dim(1) + 1 < 2 * u.dim(2) {
        return shape_err(
            "fft_conv",
            format!("input {:?} with kernel {:?}", u.shape(), k.shape()),
        );
    }
    Ok((u.dim(0), u.dim(1), u.dim(2), k.dim(1)))
}

pub fn kernel_spectra<F: Float>(plan: &FftPlan<F>, k: &Tensor<F>) -> Vec<Vec<Complex<F>>> {
    let n = plan.len();
    par::map_indices(k.dim(0), |c| plan.forward(&k.data()[c * n..(c + 1) * n]))
}

/// Convolution with precomputed kernel spectra (inference path).
pub fn fft_conv_with_spectra<F: Float>(
    plan: &FftPlan<F>,
    u: &Tensor<F>,
    k_spec: &[Vec<Complex<F>>],
) -> Result<(Tensor<F>, Vec<Vec<Complex<F>>>)> {
    if u.ndim() != 3 || u.dim(1) != k_spec.len() || plan.len() + 1 < 2 * u.dim(2) {
        return shape_err("fft_conv", format!("input {:?}", u.shape()));
    }
    let (b, c, l) = (u.dim(0), u.dim(1), u.dim(2));
    let ud = u.data();
    let u_spec = par::map_indices(b * c, |bc| plan.forward(&ud[bc * l..(bc + 1) * l]));
    let mut out = vec![F::zero(); b * c * l];
    par::for_each_chunk_mut(&mut out, l, |bc, row| {
        let ks = &k_spec[bc % c];
        let prod: Vec<Complex<F>> = u_spec[bc].iter().zip(ks).map(|(a, b)| a * b).collect();
        plan.inverse_into(prod, row);
    });
    Ok((Tensor::new(&[b, c, l], out)?, u_spec))
}

pub fn fft_conv<F: Float>(u: &Tensor<F>, k: &Tensor<F>) -> Result<(Tensor<F>, FftConvCache<F>)> {
    let (b, c, l, n) = dims(u, k)?;
    let plan = FftPlan::new(n);
    let k_spec = kernel_spectra(&plan, k);
    let (y, u_spec) = fft_conv_with_spectra(&plan, u, &k_spec)?;
    Ok((
        y,
        FftConvCache {
            plan,
            u_spec,
            k_spec,
            batch: b,
            channels: c,
            len: l,
        },
    ))
}

fn grad_input_from_spectra<F: Float>(
    plan: &FftPlan<F>,
    k_spec: &[Vec<Complex<F>>],
    g_spec: &[Vec<Complex<F>>],
    b: usize,
    c: usize,
    l: usize,
) -> Result<Tensor<F>> {
    let mut gu = vec![F::zero(); b * c * l];
    par::for_each_chunk_mut(&mut gu, l, |bc, row| {
        let ks = &k_spec[bc % c];
        let prod: Vec<Complex<F>> = g_spec[bc].iter().zip(ks).map(|(g, k)| g * k.conj()).collect();
        plan.inverse_into(prod, row);
    });
    Tensor::new(&[b, c, l], gu)
}

/// Input gradient of [`fft_conv_with_spectra`] for a `[B, C, L]` output gradient.
pub fn fft_conv_spectra_backward<F: Float>(
    plan: &FftPlan<F>,
    k_spec: &[Vec<Complex<F>>],
    grad: &Tensor<F>,
) -> Result<Tensor<F>> {
    if grad.ndim() != 3 || grad.dim(1) != k_spec.len() {
        return shape_err("fft_conv_backward", format!("grad {:?}", grad.shape()));
    }
    let (b, c, l) = (grad.dim(0), grad.dim(1), grad.dim(2));
    let gd = grad.data();
    let g_spec = par::map_indices(b * c, |bc| plan.forward(&gd[bc * l..(bc + 1) * l]));
    grad_input_from_spectra(plan, k_spec, &g_spec, b, c, l)
}

/// Returns `(grad_u [B, C, L], grad_k [C, N])`.
pub fn fft_conv_backward<F: Float>(
    cache: &FftConvCache<F>,
    grad: &Tensor<F>,
    need_u: bool,
    need_k: bool,
) -> Result<(Option<Tensor<F>>, Option<Tensor<F>>)> {
    let (b, c, l) = (cache.batch, cache.channels, cache.len);
    if grad.shape() != [b, c, l] {
        return shape_err("fft_conv_backward", format!("grad {:?}", grad.shape()));
    }
    let plan = &cache.plan;
    let n = plan.len();
    let gd = grad.data();
    let g_spec = par::map_indices(b * c, |bc| plan.forward(&gd[bc * l..(bc + 1) * l]));

    let gu = if need_u {
        Some(grad_input_from_spectra(plan, &cache.k_spec, &g_spec, b, c, l)?)
    } else {
        None
    };

    let gk = if need_k {
        let mut gk = vec![F::zero(); c * n];
        par::for_each_chunk_mut(&mut gk, n, |ci, row| {
            let mut acc = vec![Complex::new(F::zero(), F::zero()); plan.bins()];
            for bi in 0..b {
                let bc = bi * c + ci;
                for ((a, g), u) in acc.iter_mut().zip(&g_spec[bc]).zip(&cache.u_spec[bc]) {
                    *a = *a + g * u.conj();
                }
            }
            plan.inverse_into(acc, row);
        });
        Some(Tensor::new(&[c, n], gk)?)
    } else {
        None
    };
    Ok((gu, gk))
}
