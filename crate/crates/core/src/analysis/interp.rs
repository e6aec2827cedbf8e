use serde::{Deserialize, Serialize};
use sssd_nn::{Float, Tensor};

use crate::data::LabelVector;
use crate::diffusion::{ancestral_sample, NoisePredictor, NoiseSchedule};
use crate::error::{Error, Result};

pub const DEFAULT_ALPHAS: [f64; 5] = [1.0, 0.75, 0.5, 0.25, 0.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterpolationRequest {
    pub a: LabelVector,
    pub b: LabelVector,
    pub alphas: Vec<f64>,
    pub seed: u64,
}

/// One `[1, 8, len]` sample per `α`, conditioned on `α a + (1 - α) b`.
///
/// Every sample is a separate single-element run of [`ancestral_sample`]
/// with `req.seed`, so all share `x_T` and every `z`, and the endpoints are
/// bit-identical to direct conditional generation.
pub fn interpolate_conditions<F: Float, M: NoisePredictor<F> + ?Sized>(
    model: &M,
    req: &InterpolationRequest,
    sched: &NoiseSchedule,
    len: usize,
) -> Result<Vec<Tensor<F>>> {
    if req.a.len() != req.b.len() {
        return Err(Error::ConditionShape(format!(
            "endpoints of length {} and {}",
            req.a.len(),
            req.b.len()
        )));
    }
    if !req.a.is_binary() || !req.b.is_binary() {
        return Err(Error::ConditionShape("interpolation endpoints must be binary".into()));
    }
    if let Some(a) = req.alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::ConditionShape(format!("alpha {a} outside [0, 1]")));
    }
    req.alphas
        .iter()
        .map(|&alpha| {
            let c = LabelVector::mix(&req.a, &req.b, alpha as f32)?;
            let cond = Tensor::new(&[1, c.len()], c.values().iter().map(|&v| F::of(v as f64)).collect())?;
            ancestral_sample(model, &cond, sched, &[1, 8, len], req.seed)
        })
        .collect()
}
