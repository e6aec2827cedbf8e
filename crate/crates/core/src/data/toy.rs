//! Deterministic quasi-ECG corpus with label-controlled morphology.
//!
//! Each beat is a sum of Gaussian bumps (P, Q, R, S, T) scaled per lead.
//! The first `n_labels` entries of [`TOY_STATEMENTS`] are drawn
//! independently with probability one half and alter the waveform:
//!
//! | statement | effect                                   |
//! |-----------|------------------------------------------|
//! | LVH       | R amplitude + [`TOY_LVH_MARGIN_MV`]      |
//! | STACH     | heart rate 1.8 Hz instead of 1 Hz        |
//! | INVT      | inverted T wave                          |
//! | CLBBB     | wide QRS                                 |
//! | AFIB      | irregular RR, no P wave, 6 Hz f-waves    |
//! | 1AVB      | PR interval 0.30 s instead of 0.16 s     |
//! | LVOLT     | all waves scaled by 0.4                  |
//! | QWAVE     | deep Q wave                              |
//!
//! Leads I, aVF and V1-V6 are synthesized; the remaining limb leads come
//! from [`reconstruct_12_leads`](crate::leads::reconstruct_12_leads).

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, EcgRecord, LabelVector, LabelVocabulary, SAMPLING_RATE};
use crate::error::{Error, Result};
use crate::leads::{reconstruct_12_leads, EightLeadFrame};
use crate::rng;

pub const TOY_STATEMENTS: [&str; 8] =
    ["LVH", "STACH", "INVT", "CLBBB", "AFIB", "1AVB", "LVOLT", "QWAVE"];

/// Mean R-wave amplitude difference (lead I, mV) between LVH-on and
/// LVH-off records.
pub const TOY_LVH_MARGIN_MV: f64 = 1.0;

const QRS_GAIN: [f64; 8] = [1.0, 0.7, -0.7, -0.3, 0.4, 1.1, 1.3, 1.0];
const P_GAIN: [f64; 8] = [0.8, 0.8, 0.4, 0.5, 0.6, 0.7, 0.8, 0.8];
const T_GAIN: [f64; 8] = [0.8, 0.6, -0.2, 0.5, 0.8, 1.0, 1.0, 0.8];
const NOISE_MV: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyConfig {
    pub n_records: usize,
    pub n_labels: usize,
    pub length: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            n_records: 1000,
            n_labels: 4,
            length: 1000,
            seed: 7,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_records < 10 {
            return Err(Error::ToyConfig(format!("n_records {} < 10", self.n_records)));
        }
        if !(2..=TOY_STATEMENTS.len()).contains(&self.n_labels) {
            return Err(Error::ToyConfig(format!(
                "n_labels {} outside 2..={}",
                self.n_labels,
                TOY_STATEMENTS.len()
            )));
        }
        if self.length < 100 {
            return Err(Error::ToyConfig(format!("length {} < 100", self.length)));
        }
        Ok(())
    }
}

/// Statement codes active in a toy corpus with `n_labels` labels.
pub fn toy_statements(n_labels: usize) -> &'static [&'static str] {
    &TOY_STATEMENTS[..n_labels.min(TOY_STATEMENTS.len())]
}

#[derive(Debug, Clone, Copy, Default)]
struct Morphology {
    lvh: bool,
    stach: bool,
    invt: bool,
    clbbb: bool,
    afib: bool,
    avb1: bool,
    lvolt: bool,
    qwave: bool,
}

impl Morphology {
    fn from_flags(on: &[bool]) -> Self {
        let f = |i: usize| on.get(i).copied().unwrap_or(false);
        Self {
            lvh: f(0),
            stach: f(1),
            invt: f(2),
            clbbb: f(3),
            afib: f(4),
            avb1: f(5),
            lvolt: f(6),
            qwave: f(7),
        }
    }
}

fn bump(t: f64, center: f64, sigma: f64) -> f64 {
    let z = (t - center) / sigma;
    (-0.5 * z * z).exp()
}

/// Lead-major `[8 × len]` waveform for one record.
fn synthesize(m: Morphology, len: usize, rng: &mut rng::Rng) -> Vec<f64> {
    let fs = SAMPLING_RATE as f64;
    let rate = if m.stach { 1.8 } else { 1.0 } * rng.gen_range(0.95..1.05);
    let rr = 1.0 / rate;
    let r_amp = rng.gen_range(0.9..1.1) + if m.lvh { TOY_LVH_MARGIN_MV } else { 0.0 };
    let scale = if m.lvolt { 0.4 } else { 1.0 };
    let (r_sigma, s_shift, s_sigma) = if m.clbbb { (0.035, 0.06, 0.03) } else { (0.012, 0.03, 0.012) };
    let (q_amp, q_sigma) = if m.qwave { (-0.5, 0.015) } else { (-0.1, 0.01) };
    let pr = if m.avb1 { 0.30 } else { 0.16 };
    let t_amp = if m.invt { -0.3 } else { 0.3 };
    let t_shift = if m.stach { 0.22 } else { 0.28 };

    // R peaks sit on integer samples so the sampled maximum is the amplitude.
    let mut beats = Vec::new();
    let mut t = rng.gen_range(0.2..0.2 + rr);
    let jitter = Normal::new(1.0, 0.02).expect("valid normal");
    while t < len as f64 / fs + 0.5 {
        beats.push((t * fs).round() / fs);
        let factor = if m.afib { rng.gen_range(0.6..1.4) } else { jitter.sample(rng) };
        t += rr * factor;
    }

    let noise = Normal::new(0.0, NOISE_MV).expect("valid normal");
    let f_phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut out = vec![0.0; 8 * len];
    for lead in 0..8 {
        let wander_phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let row = &mut out[lead * len..(lead + 1) * len];
        for (n, v) in row.iter_mut().enumerate() {
            let time = n as f64 / fs;
            let mut qrs = 0.0;
            let mut p = 0.0;
            let mut tw = 0.0;
            for &b in &beats {
                if (time - b).abs() > 0.8 {
                    continue;
                }
                qrs += q_amp * bump(time, b - 0.025, q_sigma)
                    + r_amp * bump(time, b, r_sigma)
                    - 0.25 * bump(time, b + s_shift, s_sigma);
                if !m.afib {
                    p += 0.15 * bump(time, b - pr, 0.025);
                }
                tw += t_amp * bump(time, b + t_shift, 0.045);
            }
            if m.afib {
                p += 0.05 * (std::f64::consts::TAU * 6.0 * time + f_phase).sin();
            }
            let wander = 0.05 * (std::f64::consts::TAU * 0.2 * time + wander_phase).sin();
            *v = scale * (QRS_GAIN[lead] * qrs + P_GAIN[lead] * p + T_GAIN[lead] * tw)
                + wander
                + noise.sample(rng);
        }
    }
    out
}

/// Builds a toy corpus over the full 71-statement vocabulary; only the first
/// `n_labels` toy statements are ever active.
pub fn make_toy_corpus(n_records: usize, n_labels: usize, length: usize, seed: u64) -> Result<Dataset> {
    let cfg = ToyConfig {
        n_records,
        n_labels,
        length,
        seed,
    };
    cfg.validate()?;
    let vocab = LabelVocabulary::ptbxl();
    let positions: Vec<usize> = toy_statements(n_labels)
        .iter()
        .map(|s| vocab.position(s).expect("toy statements are PTB-XL codes"))
        .collect();

    let items: Vec<(Vec<f32>, Vec<bool>)> = sssd_nn::par::map_indices(n_records, |i| {
        let mut r = rng::stream(seed, i as u64);
        let on: Vec<bool> = (0..n_labels).map(|_| r.gen_bool(0.5)).collect();
        let eight = synthesize(Morphology::from_flags(&on), length, &mut r);
        let eight: Vec<f32> = eight.into_iter().map(|v| v as f32).collect();
        let frame = EightLeadFrame::new(eight).expect("finite toy waveform");
        (reconstruct_12_leads(&frame), on)
    });

    let mut records = Vec::with_capacity(n_records);
    let mut labels = Vec::with_capacity(n_records);
    for (i, (leads, on)) in items.into_iter().enumerate() {
        let fold = (i % 10) as u8 + 1;
        records.push(EcgRecord::from_lead_major(
            &leads,
            12,
            SAMPLING_RATE,
            format!("toy-{i:05}"),
            fold,
        )?);
        let mut v = vec![0.0; vocab.len()];
        for (&p, &o) in positions.iter().zip(&on) {
            if o {
                v[p] = 1.0;
            }
        }
        labels.push(LabelVector::new(v)?);
    }
    Dataset::new(records, labels, vocab)
}
