use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use sssd_nn::{Adam, AdamConfig, Conv1dGeom, Float, ParamStore, PoolGeom, Tape, Tensor, Var};

use super::metrics::macro_auroc;
use crate::data::{Dataset, EcgRecord};
use crate::error::{Error, Result};
use crate::layers::{update_running_stats, BatchNorm1d, BnStat, Conv1d, ConvInit, Linear};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub stage_blocks: [usize; 4],
    /// Stage widths are `[64, 128, 256, 512] / width_div` before expansion.
    pub width_div: usize,
    pub expansion: usize,
    pub kernel_size: usize,
    pub in_leads: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub crop_len: usize,
    pub tta_crops: usize,
    pub tta_stride: usize,
}

impl ClassifierConfig {
    /// XResNet1d50 with the reference optimizer settings.
    pub fn full() -> Self {
        Self {
            stage_blocks: [3, 4, 6, 3],
            width_div: 1,
            expansion: 4,
            kernel_size: 5,
            in_leads: 12,
            lr: 1e-3,
            weight_decay: 1e-3,
            batch_size: 64,
            epochs: 100,
            crop_len: 250,
            tta_crops: 7,
            tta_stride: 125,
        }
    }

    /// One block per stage, a quarter of the width, 20 epochs.
    pub fn desk() -> Self {
        Self {
            stage_blocks: [1, 1, 1, 1],
            width_div: 4,
            epochs: 20,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.stage_blocks.iter().all(|&b| b > 0)
            && self.width_div > 0
            && 64 % self.width_div == 0
            && self.expansion > 0
            && self.kernel_size % 2 == 1
            && self.in_leads > 0
            && self.lr > 0.0
            && self.weight_decay >= 0.0
            && self.batch_size > 0
            && self.epochs > 0
            && self.crop_len >= 16
            && self.tta_crops > 0
            && self.tta_stride > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid classifier config {self:?}")))
        }
    }

    /// Crop starts `0, stride, ...` used for test-time averaging.
    pub fn tta_offsets(&self) -> Vec<usize> {
        (0..self.tta_crops).map(|i| i * self.tta_stride).collect()
    }

    /// Shortest record the averaging grid fits in.
    pub fn min_record_len(&self) -> usize {
        (self.tta_crops - 1) * self.tta_stride + self.crop_len
    }
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvBn {
    conv: Conv1d,
    bn: BatchNorm1d,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    fn new<F: Float, R: Rng + ?Sized>(
        st: &mut ParamStore<F>,
        name: &str,
        ni: usize,
        nf: usize,
        k: usize,
        stride: usize,
        zero_bn: bool,
        rng: &mut R,
    ) -> Self {
        let geom = Conv1dGeom {
            stride,
            pad_left: k / 2,
            pad_right: k / 2,
        };
        Self {
            conv: Conv1d::new(st, &format!("{name}.conv"), ni, nf, k, geom, false, ConvInit::Kaiming, rng),
            bn: BatchNorm1d::new(st, &format!("{name}.bn"), nf, zero_bn),
        }
    }

    fn forward<'t, F: Float>(
        &self,
        tape: &'t Tape<F>,
        st: &ParamStore<F>,
        x: &Var<'t, F>,
        stats: &mut Option<&mut Vec<BnStat<F>>>,
    ) -> Result<Var<'t, F>> {
        let y = self.conv.forward(tape, st, x)?;
        self.bn.forward(tape, st, &y, stats.as_deref_mut())
    }
}

/// Bottleneck block: 1×1 reduce, k-wide (strided) conv, 1×1 expand with a
/// zero-initialized final scale, plus an average-pooled / projected identity.
#[derive(Debug, Clone, Copy)]
struct Bottleneck {
    c1: ConvBn,
    c2: ConvBn,
    c3: ConvBn,
    proj: Option<ConvBn>,
    stride: usize,
}

impl Bottleneck {
    fn forward<'t, F: Float>(
        &self,
        tape: &'t Tape<F>,
        st: &ParamStore<F>,
        x: &Var<'t, F>,
        stats: &mut Option<&mut Vec<BnStat<F>>>,
    ) -> Result<Var<'t, F>> {
        let h = self.c1.forward(tape, st, x, stats)?.relu();
        let h = self.c2.forward(tape, st, &h, stats)?.relu();
        let h = self.c3.forward(tape, st, &h, stats)?;
        let mut id = x.clone();
        if self.stride > 1 {
            id = id.avg_pool(PoolGeom {
                kernel: self.stride,
                stride: self.stride,
                pad: 0,
                ceil: true,
            })?;
        }
        if let Some(p) = &self.proj {
            id = p.forward(tape, st, &id, stats)?;
        }
        Ok(h.add(&id)?.relu())
    }
}

/// Multi-label 1-D XResNet: three-conv stem, max pool, four bottleneck
/// stages, concatenated average and max pooling, linear head.
#[derive(Debug, Clone)]
pub struct XResNet1d<F: Float> {
    pub config: ClassifierConfig,
    pub n_labels: usize,
    pub store: ParamStore<F>,
    stem: [ConvBn; 3],
    blocks: Vec<Bottleneck>,
    head: Linear,
}

impl<F: Float> XResNet1d<F> {
    pub fn new(config: ClassifierConfig, n_labels: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let mut store = ParamStore::new();
        let st = &mut store;
        let k = config.kernel_size;
        let div = config.width_div;
        let s = [32 / div.min(32), 32 / div.min(32), 64 / div];
        let stem = [
            ConvBn::new(st, "stem.0", config.in_leads, s[0], k, 2, false, rng),
            ConvBn::new(st, "stem.1", s[0], s[1], k, 1, false, rng),
            ConvBn::new(st, "stem.2", s[1], s[2], k, 1, false, rng),
        ];
        let widths = [64 / div, 128 / div, 256 / div, 512 / div];
        let mut ni = s[2];
        let mut blocks = Vec::new();
        for (stage, (&nb, &nf)) in config.stage_blocks.iter().zip(&widths).enumerate() {
            for j in 0..nb {
                let stride = if stage > 0 && j == 0 { 2 } else { 1 };
                let out = nf * config.expansion;
                let p = format!("stage{stage}.{j}");
                blocks.push(Bottleneck {
                    c1: ConvBn::new(st, &format!("{p}.c1"), ni, nf, 1, 1, false, rng),
                    c2: ConvBn::new(st, &format!("{p}.c2"), nf, nf, k, stride, false, rng),
                    c3: ConvBn::new(st, &format!("{p}.c3"), nf, out, 1, 1, true, rng),
                    proj: (ni != out).then(|| ConvBn::new(st, &format!("{p}.proj"), ni, out, 1, 1, false, rng)),
                    stride,
                });
                ni = out;
            }
        }
        let head = Linear::new(st, "head", 2 * ni, n_labels, true, rng);
        Ok(Self {
            config,
            n_labels,
            store,
            stem,
            blocks,
            head,
        })
    }

    /// Logits `[B, n_labels]` for `x: [B, leads, len]`. `stats = Some(_)`
    /// selects training-mode batch normalization.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape<F>,
        x: &Var<'t, F>,
        mut stats: Option<&mut Vec<BnStat<F>>>,
    ) -> Result<Var<'t, F>> {
        let s = x.shape();
        if s.len() != 3 || s[1] != self.config.in_leads || s[0] == 0 {
            return Err(Error::InputShape(format!(
                "classifier input {s:?}, expected [B, {}, L]",
                self.config.in_leads
            )));
        }
        let st = &self.store;
        let mut h = x.clone();
        for c in &self.stem {
            h = c.forward(tape, st, &h, &mut stats)?.relu();
        }
        h = h.max_pool(PoolGeom {
            kernel: 3,
            stride: 2,
            pad: 1,
            ceil: false,
        })?;
        for b in &self.blocks {
            h = b.forward(tape, st, &h, &mut stats)?;
        }
        let (bsz, c) = (h.shape()[0], h.shape()[1]);
        let avg = h.mean_axis(2)?.reshape(&[bsz, c])?;
        let max = h.max_last()?.reshape(&[bsz, c])?;
        let pooled = Var::concat(&[&avg, &max], 1)?;
        self.head.forward(tape, st, &pooled)
    }

    /// Sigmoid outputs `[B, n_labels]` in inference mode.
    pub fn predict_batch(&self, x: &Tensor<F>) -> Result<Vec<f64>> {
        let tape = Tape::inference();
        let logits = self.forward(&tape, &tape.constant(x.clone()), None)?;
        Ok(logits
            .value()
            .data()
            .iter()
            .map(|&v| sssd_nn::ops::sigmoid(v).as_f64())
            .collect())
    }
}

/// Lead-major `[leads, crop_len]` window of `record` starting at `offset`.
fn crop<F: Float>(record: &EcgRecord, offset: usize, crop_len: usize, out: &mut Vec<F>) {
    let n = record.n_leads;
    for l in 0..n {
        out.extend((offset..offset + crop_len).map(|t| F::of(record.signal[t * n + l] as f64)));
    }
}

/// Mean sigmoid output over the averaging crops of one record.
pub fn predict_record<F: Float>(clf: &XResNet1d<F>, record: &EcgRecord) -> Result<Vec<f64>> {
    Ok(predict_records(clf, std::slice::from_ref(record))?.remove(0))
}

/// [`predict_record`] for many records, batched.
pub fn predict_records<F: Float>(clf: &XResNet1d<F>, records: &[EcgRecord]) -> Result<Vec<Vec<f64>>> {
    let cfg = &clf.config;
    let offsets = cfg.tta_offsets();
    let need = cfg.min_record_len();
    let chunk = (cfg.batch_size / offsets.len()).max(1);
    let mut out = Vec::with_capacity(records.len());
    for group in records.chunks(chunk) {
        let mut x = Vec::with_capacity(group.len() * offsets.len() * cfg.in_leads * cfg.crop_len);
        for r in group {
            if r.len() < need {
                return Err(Error::RecordTooShort { len: r.len(), need });
            }
            if r.n_leads != cfg.in_leads {
                return Err(Error::InputShape(format!("{} leads, classifier expects {}", r.n_leads, cfg.in_leads)));
            }
            for &o in &offsets {
                crop(r, o, cfg.crop_len, &mut x);
            }
        }
        let n = group.len() * offsets.len();
        let p = clf.predict_batch(&Tensor::new(&[n, cfg.in_leads, cfg.crop_len], x)?)?;
        let k = clf.n_labels;
        for rows in p.chunks(offsets.len() * k) {
            let mut mean = vec![0.0; k];
            for row in rows.chunks(k) {
                for (m, &v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            out.push(mean.into_iter().map(|m| m / offsets.len() as f64).collect());
        }
    }
    Ok(out)
}

/// Macro AUROC of averaged predictions on `data`.
pub fn evaluate_auroc<F: Float>(clf: &XResNet1d<F>, data: &Dataset) -> Result<(f64, Vec<Option<f64>>)> {
    let preds = predict_records(clf, &data.records)?;
    let scores: Vec<f64> = preds.into_iter().flatten().collect();
    let truth = data.label_matrix(&(0..data.len()).collect::<Vec<_>>());
    let k = data.vocabulary.len();
    let per = super::metrics::per_label_auroc(&scores, &truth, k)?;
    Ok((macro_auroc(&scores, &truth, k)?, per))
}

#[derive(Debug, Clone)]
pub struct TrainedClassifier<F: Float> {
    pub model: XResNet1d<F>,
    /// 0-based epoch whose parameters were kept.
    pub selected_epoch: usize,
    pub val_auroc: Vec<f64>,
}

/// Trains on random crops with BCE and keeps the epoch with the best
/// validation macro AUROC (first one on ties).
pub fn train_classifier<F: Float>(
    config: &ClassifierConfig,
    train: &Dataset,
    val: &Dataset,
    seed: u64,
) -> Result<TrainedClassifier<F>> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::NoTrainingData);
    }
    if train.vocabulary != val.vocabulary {
        return Err(Error::IncompatibleDatasets("train and validation vocabularies differ".into()));
    }
    let len = train.record_len().unwrap_or(0);
    if len < config.crop_len {
        return Err(Error::RecordTooShort {
            len,
            need: config.crop_len,
        });
    }
    let k = train.vocabulary.len();
    let mut rng = rng::seeded(seed);
    let mut model = XResNet1d::<F>::new(config.clone(), k, rng.gen())?;
    let mut adam = Adam::new(AdamConfig {
        weight_decay: config.weight_decay,
        ..AdamConfig::with_lr(config.lr)
    });
    let mut best: Option<(f64, usize, ParamStore<F>)> = None;
    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            // Batch norm needs more than one value per channel.
            if batch.len() < 2 && train.len() >= 2 {
                continue;
            }
            let mut x = Vec::with_capacity(batch.len() * config.in_leads * config.crop_len);
            for &i in batch {
                let off = rng.gen_range(0..=len - config.crop_len);
                crop(&train.records[i], off, config.crop_len, &mut x);
            }
            let x = Tensor::new(&[batch.len(), config.in_leads, config.crop_len], x)?;
            let y: Vec<F> = train.label_matrix(batch).into_iter().map(|v| F::of(v as f64)).collect();
            let y = Tensor::new(&[batch.len(), k], y)?;
            let tape = Tape::new();
            let mut stats = Vec::new();
            let logits = model.forward(&tape, &tape.constant(x), Some(&mut stats))?;
            let loss = logits.bce_with_logits(&y)?;
            if !loss.value().item()?.as_f64().is_finite() {
                return Err(Error::ClassifierDiverged(epoch));
            }
            let grads = tape.backward(&loss)?;
            adam.step(&mut model.store, &grads)?;
            update_running_stats(&mut model.store, &stats);
        }
        let score = match evaluate_auroc(&model, val) {
            Ok((s, _)) => s,
            Err(Error::AurocUndefined) => 0.5,
            Err(e) => return Err(e),
        };
        if !score.is_finite() {
            return Err(Error::ClassifierDiverged(epoch));
        }
        history.push(score);
        if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
            best = Some((score, epoch, model.store.clone()));
        }
    }
    let (_, selected_epoch, store) = best.expect("at least one epoch");
    model.store = store;
    Ok(TrainedClassifier {
        model,
        selected_epoch,
        val_auroc: history,
    })
}
