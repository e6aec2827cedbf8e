use serde::{Deserialize, Serialize};

use crate::data::EcgRecord;
use crate::error::{Error, Result};

pub const BEAT_BEFORE: usize = 30;
pub const BEAT_AFTER: usize = 50;
pub const BEAT_LEN: usize = BEAT_BEFORE + BEAT_AFTER;

/// Beat windows `[p - 30, p + 50)` of one lead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeatMatrix {
    pub lead: usize,
    pub beats: Vec<Vec<f32>>,
}

impl BeatMatrix {
    pub fn len(&self) -> usize {
        self.beats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beats.is_empty()
    }
}

/// One matrix per lead; beats whose window leaves the record are dropped.
pub fn segment_beats(record: &EcgRecord, peaks: &[usize]) -> Vec<BeatMatrix> {
    let len = record.len();
    let kept: Vec<usize> = peaks
        .iter()
        .copied()
        .filter(|&p| p >= BEAT_BEFORE && p + BEAT_AFTER <= len)
        .collect();
    (0..record.n_leads)
        .map(|lead| {
            let signal = record.lead(lead);
            BeatMatrix {
                lead,
                beats: kept
                    .iter()
                    .map(|&p| signal[p - BEAT_BEFORE..p + BEAT_AFTER].to_vec())
                    .collect(),
            }
        })
        .collect()
}

/// Pointwise median and quartiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileBand {
    pub median: Vec<f64>,
    pub q25: Vec<f64>,
    pub q75: Vec<f64>,
}

/// Linear interpolation between order statistics of sorted `v`.
pub fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

pub fn beat_quantiles(beats: &BeatMatrix) -> Result<QuantileBand> {
    let first = beats.beats.first().ok_or(Error::NoBeats)?;
    let width = first.len();
    if beats.beats.iter().any(|b| b.len() != width) {
        return Err(Error::InputShape("beats of unequal length".into()));
    }
    let mut band = QuantileBand {
        median: Vec::with_capacity(width),
        q25: Vec::with_capacity(width),
        q75: Vec::with_capacity(width),
    };
    let mut col = Vec::with_capacity(beats.len());
    for t in 0..width {
        col.clear();
        col.extend(beats.beats.iter().map(|b| b[t] as f64));
        col.sort_by(f64::total_cmp);
        band.q25.push(quantile_sorted(&col, 0.25));
        band.median.push(quantile_sorted(&col, 0.5));
        band.q75.push(quantile_sorted(&col, 0.75));
    }
    Ok(band)
}
