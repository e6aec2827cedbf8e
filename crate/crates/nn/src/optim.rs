use crate::error::Result;
use crate::float::Float;
use crate::params::{ParamId, ParamStore};
use crate::tape::Grads;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled (AdamW-style) weight decay coefficient.
    pub weight_decay: f64,
    /// Rescale the global gradient norm down to this value when exceeded.
    pub clip_norm: Option<f64>,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            clip_norm: None,
        }
    }
}

struct Moments<F> {
    m: Vec<F>,
    v: Vec<F>,
}

pub struct Adam<F: Float> {
    pub config: AdamConfig,
    state: Vec<Option<Moments<F>>>,
    steps: u64,
}

impl<F: Float> Adam<F> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            state: Vec::new(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update to every trainable parameter that has a gradient.
    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &Grads<F>) -> Result<()> {
        self.steps += 1;
        let c = self.config;
        let clip = match c.clip_norm {
            Some(max) => {
                let norm = grads.param_norm().as_f64();
                if norm > max && norm > 0.0 {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let t = self.steps as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let step_size = F::of(c.lr / bc1);
        let (b1, b2) = (F::of(c.beta1), F::of(c.beta2));
        let (eps, clip) = (F::of(c.eps), F::of(clip));
        let inv_bc2 = F::of(1.0 / bc2);
        let decay = F::of(1.0 - c.lr * c.weight_decay);
        let mut ids: Vec<ParamId> = grads.params().map(|(id, _)| id).collect();
        ids.sort();
        if self.state.len() < store.len() {
            self.state.resize_with(store.len(), || None);
        }
        for id in ids {
            if !store.param(id).trainable {
                continue;
            }
            let g: &Tensor<F> = match grads.param(id) {
                Some(g) => g,
                None => continue,
            };
            let n = g.len();
            let st = self.state[id.index()].get_or_insert_with(|| Moments {
                m: vec![F::zero(); n],
                v: vec![F::zero(); n],
            });
            let w = store.value_mut(id);
            for (((wi, &gi), mi), vi) in w
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(st.m.iter_mut())
                .zip(st.v.iter_mut())
            {
                let gi = gi * clip;
                *mi = b1 * *mi + (F::one() - b1) * gi;
                *vi = b2 * *vi + (F::one() - b2) * gi * gi;
                *wi = *wi * decay - step_size * *mi / ((*vi * inv_bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
