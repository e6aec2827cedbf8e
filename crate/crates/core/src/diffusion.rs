//! DDPM forward process, ε-prediction objective and ancestral sampler.
//!
//! Steps are 0-based: `t ∈ 0..T`. With `ᾱ_t = Π_{i≤t}(1 - β_i)`,
//!
//! ```text
//! x_t     = √ᾱ_t x_0 + √(1 - ᾱ_t) ε
//! x_{t-1} = (x_t - β_t / √(1 - ᾱ_t) ε_θ(x_t, t, c)) / √(1 - β_t) + σ_t z,   σ_t² = β_t
//! ```
//!
//! with `z = 0` on the final step.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sssd_nn::{Float, Tape, Tensor, Var};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(rename = "T")]
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        build_schedule(self.steps, self.beta_start, self.beta_end)
    }
}

/// Linear β schedule and its cumulative products.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas_bar: Vec<f64>,
}

pub fn build_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 || !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::Schedule(format!(
            "T = {steps}, beta range [{beta_start}, {beta_end}]"
        )));
    }
    let betas: Vec<f64> = if steps == 1 {
        vec![beta_start]
    } else {
        // Lerp form: exact at both endpoints.
        let last = (steps - 1) as f64;
        (0..steps)
            .map(|t| {
                let f = t as f64 / last;
                beta_start * (1.0 - f) + beta_end * f
            })
            .collect()
    };
    let mut alphas_bar = Vec::with_capacity(steps);
    let mut acc = 1.0;
    for b in &betas {
        acc *= 1.0 - b;
        alphas_bar.push(acc);
    }
    Ok(NoiseSchedule { betas, alphas_bar })
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas_bar(&self) -> &[f64] {
        &self.alphas_bar
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t >= self.steps() {
            return Err(Error::NoiseShape(format!("step {t} outside 0..{}", self.steps())));
        }
        Ok(())
    }
}

/// `√ᾱ_t x0 + √(1 - ᾱ_t) eps` for a single step shared by the whole tensor.
pub fn forward_sample<F: Float>(
    x0: &Tensor<F>,
    t: usize,
    eps: &Tensor<F>,
    sched: &NoiseSchedule,
) -> Result<Tensor<F>> {
    sched.check_step(t)?;
    if x0.shape() != eps.shape() {
        return Err(Error::NoiseShape(format!(
            "signal {:?} vs noise {:?}",
            x0.shape(),
            eps.shape()
        )));
    }
    let a = F::of(sched.alphas_bar[t].sqrt());
    let s = F::of((1.0 - sched.alphas_bar[t]).sqrt());
    Ok(x0.zip_map(eps, move |x, e| a * x + s * e)?)
}

/// Per-element steps: `steps[b]` applies to the slice `x0[b, ..]`.
pub fn forward_sample_batch<F: Float>(
    x0: &Tensor<F>,
    steps: &[usize],
    eps: &Tensor<F>,
    sched: &NoiseSchedule,
) -> Result<Tensor<F>> {
    if x0.shape() != eps.shape() || x0.ndim() == 0 || x0.dim(0) != steps.len() {
        return Err(Error::NoiseShape(format!(
            "signal {:?}, noise {:?}, {} steps",
            x0.shape(),
            eps.shape(),
            steps.len()
        )));
    }
    let per = x0.len() / steps.len().max(1);
    let mut out = Vec::with_capacity(x0.len());
    for (b, &t) in steps.iter().enumerate() {
        sched.check_step(t)?;
        let a = F::of(sched.alphas_bar[t].sqrt());
        let s = F::of((1.0 - sched.alphas_bar[t]).sqrt());
        let (xs, es) = (&x0.data()[b * per..(b + 1) * per], &eps.data()[b * per..(b + 1) * per]);
        out.extend(xs.iter().zip(es).map(|(&x, &e)| a * x + s * e));
    }
    Ok(Tensor::new(x0.shape(), out)?)
}

/// A network `ε_θ(x_t, t, c)`.
///
/// `x_t` is `[B, leads, L]`, `steps` holds one step per batch element and
/// `cond` is `[B, n_labels]`. The output has the shape of `x_t`.
pub trait NoisePredictor<F: Float>: Sync {
    fn predict<'t>(
        &self,
        tape: &'t Tape<F>,
        x_t: &Var<'t, F>,
        steps: &[usize],
        cond: &Tensor<F>,
    ) -> Result<Var<'t, F>>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionBatchLoss {
    pub value: f64,
}

pub fn standard_normal<F: Float, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<F> {
    Tensor::from_fn(shape, |_| F::of(rng.sample::<f64, _>(StandardNormal)))
}

/// Mean squared ε-residual on a batch, recorded on `tape`.
///
/// Draws one step per element (in batch order) and then the noise tensor.
pub fn denoising_loss<'t, F: Float, M: NoisePredictor<F> + ?Sized, R: Rng + ?Sized>(
    model: &M,
    tape: &'t Tape<F>,
    x0: &Tensor<F>,
    cond: &Tensor<F>,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<(Var<'t, F>, DiffusionBatchLoss)> {
    if x0.ndim() != 3 || cond.ndim() != 2 || cond.dim(0) != x0.dim(0) {
        return Err(Error::InputShape(format!(
            "signal {:?} with condition {:?}",
            x0.shape(),
            cond.shape()
        )));
    }
    let steps: Vec<usize> = (0..x0.dim(0)).map(|_| rng.gen_range(0..sched.steps())).collect();
    let eps = standard_normal::<F, _>(x0.shape(), rng);
    let x_t = forward_sample_batch(x0, &steps, &eps, sched)?;
    let x_t = tape.constant(x_t);
    let pred = model.predict(tape, &x_t, &steps, cond)?;
    if !pred.value().all_finite() {
        return Err(Error::Diverged("non-finite noise prediction".into()));
    }
    let loss = pred.mse(&eps)?;
    let value = loss.value().item()?.as_f64();
    if !value.is_finite() {
        return Err(Error::Diverged("non-finite loss".into()));
    }
    Ok((loss, DiffusionBatchLoss { value }))
}

/// Runs the reverse chain from `x_T`; element `b` draws all of its noise
/// from `rng::stream(seed, b)`.
pub fn ancestral_sample<F: Float, M: NoisePredictor<F> + ?Sized>(
    model: &M,
    cond: &Tensor<F>,
    sched: &NoiseSchedule,
    shape: &[usize],
    seed: u64,
) -> Result<Tensor<F>> {
    let batch = shape.first().copied().unwrap_or(0);
    let seeds: Vec<u64> = (0..batch as u64).map(|b| rng::derive_seed(seed, b)).collect();
    ancestral_sample_seeded(model, cond, sched, shape, &seeds)
}

/// [`ancestral_sample`] with an explicit noise seed per batch element.
/// Elements sharing a seed share their whole noise trajectory.
pub fn ancestral_sample_seeded<F: Float, M: NoisePredictor<F> + ?Sized>(
    model: &M,
    cond: &Tensor<F>,
    sched: &NoiseSchedule,
    shape: &[usize],
    seeds: &[u64],
) -> Result<Tensor<F>> {
    if shape.len() != 3 || shape[0] != seeds.len() || cond.ndim() != 2 || cond.dim(0) != shape[0] {
        return Err(Error::InputShape(format!(
            "sample shape {shape:?}, condition {:?}, {} seeds",
            cond.shape(),
            seeds.len()
        )));
    }
    let per = shape[1] * shape[2];
    let mut rngs: Vec<rng::Rng> = seeds.iter().map(|&s| rng::seeded(s)).collect();
    let draw = |rngs: &mut [rng::Rng]| -> Vec<F> {
        let mut z = Vec::with_capacity(per * rngs.len());
        for r in rngs.iter_mut() {
            z.extend((0..per).map(|_| F::of(r.sample::<f64, _>(StandardNormal))));
        }
        z
    };
    let mut x = Tensor::new(shape, draw(&mut rngs))?;
    for t in (0..sched.steps()).rev() {
        let tape = Tape::inference();
        let steps = vec![t; shape[0]];
        let eps = model.predict(&tape, &tape.constant(x.clone()), &steps, cond)?;
        if eps.shape() != shape {
            return Err(Error::InputShape(format!("prediction {:?}", eps.shape())));
        }
        let beta = sched.betas[t];
        let c_out = F::of(1.0 / (1.0 - beta).sqrt());
        let c_eps = F::of(beta / (1.0 - sched.alphas_bar[t]).sqrt());
        let mut next = x.zip_map(eps.value(), move |xv, e| c_out * (xv - c_eps * e))?;
        if t > 0 {
            let sigma = F::of(beta.sqrt());
            let z = draw(&mut rngs);
            for (v, zv) in next.data_mut().iter_mut().zip(z) {
                *v += sigma * zv;
            }
        }
        if !next.all_finite() {
            return Err(Error::SamplerDiverged { step: t });
        }
        x = next;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_ranges() {
        for (t, a, b) in [(0, 1e-4, 0.02), (10, 0.0, 0.02), (10, 0.03, 0.02), (10, 1e-4, 1.0)] {
            assert!(matches!(build_schedule(t, a, b), Err(Error::Schedule(_))));
        }
    }

    #[test]
    fn single_step_schedule() {
        let s = build_schedule(1, 1e-4, 0.02).unwrap();
        assert_eq!(s.betas(), &[1e-4]);
        assert_eq!(s.alphas_bar(), &[1.0 - 1e-4]);
    }

    #[test]
    fn noise_shape_checked() {
        let s = build_schedule(10, 1e-4, 0.02).unwrap();
        let x = Tensor::<f64>::zeros(&[2, 3]);
        let e = Tensor::<f64>::zeros(&[3, 2]);
        assert!(matches!(forward_sample(&x, 0, &e, &s), Err(Error::NoiseShape(_))));
        assert!(matches!(forward_sample(&x, 10, &x, &s), Err(Error::NoiseShape(_))));
    }
}
