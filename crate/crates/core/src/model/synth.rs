use serde::{Deserialize, Serialize};
use sssd_nn::{Float, Tape, Tensor, Var};

use super::{ModelCache, SssdEcg};
use crate::data::{Dataset, EcgRecord, LabelVector, SAMPLING_RATE};
use crate::diffusion::{ancestral_sample_seeded, NoisePredictor, NoiseSchedule};
use crate::error::{Error, Result};
use crate::leads::{reconstruct_12_leads, EightLeadFrame};
use crate::rng;

/// Inference view of a model with every S4 kernel spectrum precomputed.
pub struct CachedSssd<'a, F: Float> {
    model: &'a SssdEcg<F>,
    cache: ModelCache<F>,
}

impl<'a, F: Float> CachedSssd<'a, F> {
    pub fn new(model: &'a SssdEcg<F>) -> Result<Self> {
        Ok(Self {
            model,
            cache: model.cache()?,
        })
    }
}

impl<F: Float> NoisePredictor<F> for CachedSssd<'_, F> {
    fn predict<'t>(
        &self,
        tape: &'t Tape<F>,
        x_t: &Var<'t, F>,
        steps: &[usize],
        cond: &Tensor<F>,
    ) -> Result<Var<'t, F>> {
        self.model.forward(tape, x_t, steps, cond, Some(&self.cache))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateOptions {
    /// Records per reverse-chain batch. Does not affect the output.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            batch_size: 16,
            seed: 0,
        }
    }
}

/// One synthetic 12-lead record per label vector. Record `i` draws its noise
/// from `rng::derive_seed(seed, i)` and gets `folds[i]` or `(i % 10) + 1`.
pub fn generate_dataset_copy<F: Float>(
    model: &SssdEcg<F>,
    labels: &[LabelVector],
    folds: Option<&[u8]>,
    vocabulary: &crate::data::LabelVocabulary,
    sched: &NoiseSchedule,
    opts: &GenerateOptions,
) -> Result<Dataset> {
    if opts.batch_size == 0 {
        return Err(Error::EmptyBatch);
    }
    if vocabulary.len() != model.config.n_labels {
        return Err(Error::ConditionShape(format!(
            "vocabulary {} for a model with {} labels",
            vocabulary.len(),
            model.config.n_labels
        )));
    }
    if let Some(f) = folds {
        if f.len() != labels.len() {
            return Err(Error::Schema(format!("{} folds for {} labels", f.len(), labels.len())));
        }
    }
    let predictor = CachedSssd::new(model)?;
    let (n_lab, len) = (model.config.n_labels, model.config.length);
    let mut records = Vec::with_capacity(labels.len());
    for start in (0..labels.len()).step_by(opts.batch_size) {
        let end = (start + opts.batch_size).min(labels.len());
        let chunk = &labels[start..end];
        let mut cond = Vec::with_capacity(chunk.len() * n_lab);
        for l in chunk {
            if l.len() != n_lab {
                return Err(Error::ConditionShape(format!("label vector of length {}", l.len())));
            }
            cond.extend(l.values().iter().map(|&v| F::of(v as f64)));
        }
        let cond = Tensor::new(&[chunk.len(), n_lab], cond)?;
        let seeds: Vec<u64> = (start..end).map(|i| rng::derive_seed(opts.seed, i as u64)).collect();
        let x = ancestral_sample_seeded(&predictor, &cond, sched, &[chunk.len(), 8, len], &seeds)
            .map_err(|e| Error::Record {
                index: start,
                source: Box::new(e),
            })?;
        for (j, frame) in x.data().chunks_exact(8 * len).enumerate() {
            let i = start + j;
            let frame = EightLeadFrame::new(frame.iter().map(|v| v.as_f64() as f32).collect())?;
            let leads = reconstruct_12_leads(&frame);
            let fold = folds.map_or((i % 10) as u8 + 1, |f| f[i]);
            records.push(EcgRecord::from_lead_major(
                &leads,
                12,
                SAMPLING_RATE,
                format!("synth-{i:05}"),
                fold,
            )?);
        }
    }
    Dataset::new(records, labels.to_vec(), vocabulary.clone())
}

/// Synthetic copy of `real`: same label vectors, same folds.
pub fn synth_copy<F: Float>(
    model: &SssdEcg<F>,
    real: &Dataset,
    sched: &NoiseSchedule,
    opts: &GenerateOptions,
) -> Result<Dataset> {
    let folds: Vec<u8> = real.records.iter().map(|r| r.fold).collect();
    generate_dataset_copy(model, &real.labels, Some(&folds), &real.vocabulary, sched, opts)
}
