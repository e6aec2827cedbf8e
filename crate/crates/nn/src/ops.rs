//! Differentiable operations on [`Var`].

use std::sync::Arc;

use crate::error::{invalid, shape_err, Result};
use crate::float::Float;
use crate::kernels::broadcast::{binary, sum_to_shape};
use crate::kernels::conv::{conv1d, conv1d_backward, matmul, matmul_nt, matmul_tn, Conv1dGeom};
use crate::kernels::fftconv::{
    fft_conv, fft_conv_backward, fft_conv_spectra_backward, fft_conv_with_spectra, FftPlan,
};
use realfft::num_complex::Complex;
use crate::kernels::norm::{standardize, standardize_backward, NormAxes};
use crate::kernels::pool::{avg_pool, avg_pool_backward, max_pool, max_pool_backward, PoolGeom};
use crate::tape::Var;
use crate::tensor::Tensor;

fn same_tape<F: Float>(a: &Var<'_, F>, b: &Var<'_, F>) -> Result<()> {
    if std::ptr::eq(a.tape, b.tape) {
        Ok(())
    } else {
        Err(crate::NnError::ForeignVar)
    }
}

impl<'t, F: Float> Var<'t, F> {
    fn unary(
        &self,
        f: impl Fn(F) -> F + Send + Sync,
        df: impl Fn(F, F) -> F + Send + Sync + 'static,
    ) -> Var<'t, F> {
        let y = self.value.map(f);
        let x = self.value.clone();
        let yv = Arc::new(y.clone());
        let yc = yv.clone();
        self.tape.record(y, &[self], move |g, _| {
            let d = Tensor::new(
                x.shape(),
                x.data()
                    .iter()
                    .zip(yc.data())
                    .zip(g.data())
                    .map(|((&xi, &yi), &gi)| gi * df(xi, yi))
                    .collect(),
            )?;
            Ok(vec![Some(d)])
        })
    }

    pub fn add(&self, rhs: &Var<'t, F>) -> Result<Var<'t, F>> {
        same_tape(self, rhs)?;
        let y = binary(&self.value, &rhs.value, |a, b| a + b)?;
        let (sa, sb) = (self.shape().to_vec(), rhs.shape().to_vec());
        Ok(self.tape.record(y, &[self, rhs], move |g, need| {
            Ok(vec![
                if need[0] { Some(sum_to_shape(g, &sa)?) } else { None },
                if need[1] { Some(sum_to_shape(g, &sb)?) } else { None },
            ])
        }))
    }

    pub fn sub(&self, rhs: &Var<'t, F>) -> Result<Var<'t, F>> {
        same_tape(self, rhs)?;
        let y = binary(&self.value, &rhs.value, |a, b| a - b)?;
        let (sa, sb) = (self.shape().to_vec(), rhs.shape().to_vec());
        Ok(self.tape.record(y, &[self, rhs], move |g, need| {
            Ok(vec![
                if need[0] { Some(sum_to_shape(g, &sa)?) } else { None },
                if need[1] { Some(sum_to_shape(&g.scale(-F::one()), &sb)?) } else { None },
            ])
        }))
    }

    pub fn mul(&self, rhs: &Var<'t, F>) -> Result<Var<'t, F>> {
        same_tape(self, rhs)?;
        let y = binary(&self.value, &rhs.value, |a, b| a * b)?;
        let (a, b) = (self.value.clone(), rhs.value.clone());
        Ok(self.tape.record(y, &[self, rhs], move |g, need| {
            Ok(vec![
                if need[0] {
                    Some(sum_to_shape(&binary(g, &b, |x, y| x * y)?, a.shape())?)
                } else {
                    None
                },
                if need[1] {
                    Some(sum_to_shape(&binary(g, &a, |x, y| x * y)?, b.shape())?)
                } else {
                    None
                },
            ])
        }))
    }

    pub fn div(&self, rhs: &Var<'t, F>) -> Result<Var<'t, F>> {
        same_tape(self, rhs)?;
        let y = binary(&self.value, &rhs.value, |a, b| a / b)?;
        let (a, b) = (self.value.clone(), rhs.value.clone());
        Ok(self.tape.record(y, &[self, rhs], move |g, need| {
            let ga = binary(g, &b, |x, y| x / y)?;
            let gb = if need[1] {
                let t = binary(&ga, &a, |x, y| x * y)?;
                let t = binary(&t, &b, |x, y| -x / y)?;
                Some(sum_to_shape(&t, b.shape())?)
            } else {
                None
            };
            Ok(vec![
                if need[0] { Some(sum_to_shape(&ga, a.shape())?) } else { None },
                gb,
            ])
        }))
    }

    pub fn add_scalar(&self, s: F) -> Var<'t, F> {
        self.unary(move |x| x + s, |_, _| F::one())
    }

    pub fn scale(&self, s: F) -> Var<'t, F> {
        self.unary(move |x| x * s, move |_, _| s)
    }

    pub fn neg(&self) -> Var<'t, F> {
        self.scale(-F::one())
    }

    pub fn square(&self) -> Var<'t, F> {
        self.unary(|x| x * x, |x, _| x + x)
    }

    pub fn sqrt(&self) -> Var<'t, F> {
        self.unary(|x| x.sqrt(), |_, y| F::of(0.5) / y)
    }

    pub fn exp(&self) -> Var<'t, F> {
        self.unary(|x| x.exp(), |_, y| y)
    }

    pub fn ln(&self) -> Var<'t, F> {
        self.unary(|x| x.ln(), |x, _| F::one() / x)
    }

    pub fn tanh(&self) -> Var<'t, F> {
        self.unary(|x| x.tanh(), |_, y| F::one() - y * y)
    }

    pub fn sigmoid(&self) -> Var<'t, F> {
        self.unary(sigmoid, |_, y| y * (F::one() - y))
    }

    pub fn relu(&self) -> Var<'t, F> {
        self.unary(
            |x| if x > F::zero() { x } else { F::zero() },
            |x, _| if x > F::zero() { F::one() } else { F::zero() },
        )
    }

    pub fn leaky_relu(&self, slope: F) -> Var<'t, F> {
        self.unary(
            move |x| if x > F::zero() { x } else { x * slope },
            move |x, _| if x > F::zero() { F::one() } else { slope },
        )
    }

    /// `x * sigmoid(x)`, also known as swish.
    pub fn silu(&self) -> Var<'t, F> {
        self.unary(
            |x| x * sigmoid(x),
            |x, _| {
                let s = sigmoid(x);
                s * (F::one() + x * (F::one() - s))
            },
        )
    }

    pub fn sum(&self) -> Var<'t, F> {
        let y = Tensor::scalar(self.value.sum());
        let shape = self.shape().to_vec();
        self.tape.record(y, &[self], move |g, _| {
            Ok(vec![Some(Tensor::full(&shape, g.data()[0]))])
        })
    }

    pub fn mean(&self) -> Var<'t, F> {
        let n = F::of(self.value.len().max(1) as f64);
        self.sum().scale(F::one() / n)
    }

    /// Sum over `axis`, keeping it with size 1.
    pub fn sum_axis(&self, axis: usize) -> Result<Var<'t, F>> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() {
            return invalid("sum_axis", format!("axis {axis} for {shape:?}"));
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = 1;
        let y = sum_to_shape(&self.value, &out_shape)?;
        Ok(self.tape.record(y, &[self], move |g, _| {
            Ok(vec![Some(binary(&Tensor::zeros(&shape), g, |_, b| b)?)])
        }))
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Var<'t, F>> {
        let n = self.shape().get(axis).copied().unwrap_or(1).max(1);
        Ok(self.sum_axis(axis)?.scale(F::one() / F::of(n as f64)))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t, F>> {
        let y = self.value.reshape(shape)?;
        let orig = self.shape().to_vec();
        Ok(self.tape.record(y, &[self], move |g, _| Ok(vec![Some(g.reshape(&orig)?)])))
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var<'t, F>> {
        let y = self.value.narrow(axis, start, len)?;
        let shape = self.shape().to_vec();
        Ok(self.tape.record(y, &[self], move |g, _| {
            let n = shape[axis];
            let mut parts = Vec::new();
            let mut before = shape.clone();
            before[axis] = start;
            let mut after = shape.clone();
            after[axis] = n - start - len;
            let (zb, za) = (Tensor::zeros(&before), Tensor::zeros(&after));
            if start > 0 {
                parts.push(&zb);
            }
            parts.push(g);
            if n - start - len > 0 {
                parts.push(&za);
            }
            Ok(vec![Some(Tensor::concat(&parts, axis)?)])
        }))
    }

    pub fn concat(parts: &[&Var<'t, F>], axis: usize) -> Result<Var<'t, F>> {
        let first = match parts.first() {
            Some(p) => *p,
            None => return invalid("concat", "no inputs"),
        };
        for p in parts {
            same_tape(first, p)?;
        }
        let values: Vec<&Tensor<F>> = parts.iter().map(|p| p.value.as_ref()).collect();
        let y = Tensor::concat(&values, axis)?;
        let sizes: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        Ok(first.tape.record(y, parts, move |g, need| {
            let mut out = Vec::with_capacity(sizes.len());
            let mut start = 0;
            for (i, &n) in sizes.iter().enumerate() {
                out.push(if need[i] { Some(g.narrow(axis, start, n)?) } else { None });
                start += n;
            }
            Ok(out)
        }))
    }

    pub fn flip(&self, axis: usize) -> Result<Var<'t, F>> {
        let y = self.value.flip(axis)?;
        Ok(self.tape.record(y, &[self], move |g, _| Ok(vec![Some(g.flip(axis)?)])))
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Var<'t, F>> {
        let y = self.value.permute(perm)?;
        let mut inverse = vec![0; perm.len()];
        for (d, &p) in perm.iter().enumerate() {
            inverse[p] = d;
        }
        Ok(self.tape.record(y, &[self], move |g, _| Ok(vec![Some(g.permute(&inverse)?)])))
    }

    /// `[M, K] @ [K, N]`.
    pub fn matmul(&self, rhs: &Var<'t, F>) -> Result<Var<'t, F>> {
        same_tape(self, rhs)?;
        let y = matmul(&self.value, &rhs.value)?;
        let (a, b) = (self.value.clone(), rhs.value.clone());
        Ok(self.tape.record(y, &[self, rhs], move |g, need| {
            Ok(vec![
                if need[0] { Some(matmul_nt(g, &b)?) } else { None },
                if need[1] { Some(matmul_tn(&a, g)?) } else { None },
            ])
        }))
    }

    /// 1-D convolution, `self: [B, Cin, L]`, `weight: [Cout, Cin, K]`.
    pub fn conv1d(&self, weight: &Var<'t, F>, geom: Conv1dGeom) -> Result<Var<'t, F>> {
        same_tape(self, weight)?;
        let y = conv1d(&self.value, &weight.value, &geom)?;
        let (x, w) = (self.value.clone(), weight.value.clone());
        Ok(self.tape.record(y, &[self, weight], move |g, need| {
            let (gx, gw) = conv1d_backward(&x, &w, g, &geom, need[0], need[1])?;
            Ok(vec![gx, gw])
        }))
    }

    /// Circular long convolution, see [`crate::kernels::fftconv`].
    pub fn fft_conv(&self, kernel: &Var<'t, F>) -> Result<Var<'t, F>> {
        same_tape(self, kernel)?;
        let (y, cache) = fft_conv(&self.value, &kernel.value)?;
        Ok(self.tape.record(y, &[self, kernel], move |g, need| {
            let (gu, gk) = fft_conv_backward(&cache, g, need[0], need[1])?;
            Ok(vec![gu, gk])
        }))
    }

    /// FFT convolution against fixed kernel spectra from
    /// [`kernel_spectra`](crate::kernels::fftconv::kernel_spectra). Only the
    /// input receives a gradient.
    pub fn fft_conv_fixed(
        &self,
        plan: &Arc<FftPlan<F>>,
        k_spec: &Arc<Vec<Vec<Complex<F>>>>,
    ) -> Result<Var<'t, F>> {
        let (y, _) = fft_conv_with_spectra(plan, &self.value, k_spec)?;
        let (plan, k_spec) = (plan.clone(), k_spec.clone());
        Ok(self.tape.record(y, &[self], move |g, _| {
            Ok(vec![Some(fft_conv_spectra_backward(&plan, &k_spec, g)?)])
        }))
    }

    /// Zero-mean, unit-variance normalization of a `[B, C, L]` tensor.
    ///
    /// Also returns the per-group mean and biased variance of the input.
    pub fn standardize(&self, axes: NormAxes, eps: F) -> Result<(Var<'t, F>, Vec<F>, Vec<F>)> {
        let st = standardize(&self.value, axes, eps)?;
        let (mean, var) = (st.mean.clone(), st.var.clone());
        let y = st.xhat.clone();
        let v = self.tape.record(y, &[self], move |g, _| {
            Ok(vec![Some(standardize_backward(&st, g, axes)?)])
        });
        Ok((v, mean, var))
    }

    pub fn max_pool(&self, geom: PoolGeom) -> Result<Var<'t, F>> {
        let (y, arg) = max_pool(&self.value, &geom)?;
        let shape = self.shape().to_vec();
        Ok(self.tape.record(y, &[self], move |g, _| {
            Ok(vec![Some(max_pool_backward(&shape, &arg, g))])
        }))
    }

    pub fn avg_pool(&self, geom: PoolGeom) -> Result<Var<'t, F>> {
        let y = avg_pool(&self.value, &geom)?;
        let shape = self.shape().to_vec();
        Ok(self.tape.record(y, &[self], move |g, _| {
            Ok(vec![Some(avg_pool_backward(&shape, &geom, g)?)])
        }))
    }

    /// Maximum over the last axis of `[B, C, L]`, giving `[B, C, 1]`.
    pub fn max_last(&self) -> Result<Var<'t, F>> {
        if self.value.ndim() != 3 {
            return shape_err("max_last", format!("{:?}", self.shape()));
        }
        let l = self.shape()[2];
        self.max_pool(PoolGeom {
            kernel: l,
            stride: l,
            pad: 0,
            ceil: false,
        })
    }

    /// Nearest-neighbour upsampling of the last axis by `factor`.
    pub fn upsample(&self, factor: usize) -> Result<Var<'t, F>> {
        if factor == 0 || self.value.ndim() == 0 {
            return invalid("upsample", format!("factor {factor} on {:?}", self.shape()));
        }
        let l = *self.shape().last().unwrap_or(&1);
        let mut shape = self.shape().to_vec();
        *shape.last_mut().unwrap_or(&mut 0) = l * factor;
        let mut data = Vec::with_capacity(self.value.len() * factor);
        for &v in self.value.data() {
            data.extend(std::iter::repeat(v).take(factor));
        }
        let y = Tensor::new(&shape, data)?;
        let orig = self.shape().to_vec();
        Ok(self.tape.record(y, &[self], move |g, _| {
            let d: Vec<F> = g.data().chunks(factor).map(|c| c.iter().copied().sum()).collect();
            Ok(vec![Some(Tensor::new(&orig, d)?)])
        }))
    }

    /// Zero padding of the last axis.
    pub fn pad_last(&self, left: usize, right: usize) -> Result<Var<'t, F>> {
        let nd = self.value.ndim();
        if nd == 0 {
            return invalid("pad_last", "scalar input");
        }
        let l = self.shape()[nd - 1];
        let mut shape = self.shape().to_vec();
        shape[nd - 1] = l + left + right;
        let mut data = Vec::with_capacity(shape.iter().product());
        for row in self.value.data().chunks(l.max(1)) {
            data.extend(std::iter::repeat(F::zero()).take(left));
            data.extend_from_slice(row);
            data.extend(std::iter::repeat(F::zero()).take(right));
        }
        let y = Tensor::new(&shape, data)?;
        Ok(self.tape.record(y, &[self], move |g, _| {
            Ok(vec![Some(g.narrow(nd - 1, left, l)?)])
        }))
    }

    /// Mean squared difference to a constant target.
    pub fn mse(&self, target: &Tensor<F>) -> Result<Var<'t, F>> {
        let t = self.tape.constant(target.clone());
        Ok(self.sub(&t)?.square().mean())
    }

    /// Mean binary cross-entropy on logits against targets in `[0, 1]`.
    pub fn bce_with_logits(&self, target: &Tensor<F>) -> Result<Var<'t, F>> {
        if self.shape() != target.shape() {
            return shape_err(
                "bce_with_logits",
                format!("{:?} vs {:?}", self.shape(), target.shape()),
            );
        }
        let n = F::of(target.len().max(1) as f64);
        let loss: F = self
            .value
            .data()
            .iter()
            .zip(target.data())
            .map(|(&z, &y)| z.max(F::zero()) - z * y + (-z.abs()).exp().ln_1p())
            .sum::<F>()
            / n;
        let (z, y) = (self.value.clone(), target.clone());
        Ok(self.tape.record(Tensor::scalar(loss), &[self], move |g, _| {
            let s = g.data()[0] / n;
            let d: Vec<F> = z
                .data()
                .iter()
                .zip(y.data())
                .map(|(&zi, &yi)| (sigmoid(zi) - yi) * s)
                .collect();
            Ok(vec![Some(Tensor::new(z.shape(), d)?)])
        }))
    }
}

#[inline]
pub fn sigmoid<F: Float>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}
