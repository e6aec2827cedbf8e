use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, EcgRecord, LabelVector, LabelVocabulary, LEADS_12, N_STATEMENTS};
use crate::error::{Error, Result};

const SIGNALS: &str = "signals.f32le";
const LABELS: &str = "labels.u8";
const META: &str = "meta.json";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    n_records: usize,
    sampling_rate: u32,
    lead_order: Vec<String>,
    vocabulary: Vec<String>,
    folds: Vec<u8>,
    record_ids: Vec<String>,
}

/// Writes the three-file container. Records must have 12 leads.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    if ds.records.iter().any(|r| r.n_leads != 12) {
        return Err(Error::Schema("container stores 12-lead records only".into()));
    }
    if ds.vocabulary.len() != N_STATEMENTS {
        return Err(Error::Schema(format!(
            "vocabulary has {} codes, expected {N_STATEMENTS}",
            ds.vocabulary.len()
        )));
    }
    let rate = ds.records.first().map_or(super::SAMPLING_RATE, |r| r.sampling_rate);
    if ds.records.iter().any(|r| r.sampling_rate != rate) {
        return Err(Error::Schema("mixed sampling rates".into()));
    }
    fs::create_dir_all(dir)?;
    let mut signals = Vec::with_capacity(ds.records.iter().map(|r| r.signal.len() * 4).sum());
    for r in &ds.records {
        for v in &r.signal {
            signals.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut labels = Vec::with_capacity(ds.len() * N_STATEMENTS);
    for l in &ds.labels {
        if !l.is_binary() {
            return Err(Error::Schema("container labels must be binary".into()));
        }
        labels.extend(l.values().iter().map(|&v| v as u8));
    }
    let meta = Meta {
        n_records: ds.len(),
        sampling_rate: rate,
        lead_order: LEADS_12.iter().map(|s| s.to_string()).collect(),
        vocabulary: ds.vocabulary.codes().to_vec(),
        folds: ds.records.iter().map(|r| r.fold).collect(),
        record_ids: ds.records.iter().map(|r| r.record_id.clone()).collect(),
    };
    fs::write(dir.join(SIGNALS), signals)?;
    fs::write(dir.join(LABELS), labels)?;
    fs::write(dir.join(META), serde_json::to_vec_pretty(&meta)?)?;
    Ok(())
}

/// Reads a container written by [`save_dataset`] or an external exporter.
///
/// The record length is inferred from the size of the signal file.
pub fn load_dataset(dir: &Path, expected_rate: u32) -> Result<Dataset> {
    let read = |name: &str| {
        fs::read(dir.join(name)).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::CorpusNotFound(dir.join(name)),
            _ => Error::Io(e),
        })
    };
    let meta_bytes = read(META)?;
    let signals = read(SIGNALS)?;
    let labels = read(LABELS)?;
    let meta: Meta =
        serde_json::from_slice(&meta_bytes).map_err(|e| Error::Schema(format!("meta.json: {e}")))?;

    let n = meta.n_records;
    if n == 0 {
        return Err(Error::Schema("no records listed".into()));
    }
    if meta.sampling_rate != expected_rate {
        return Err(Error::Schema(format!(
            "sampling rate {} Hz, expected {expected_rate} Hz",
            meta.sampling_rate
        )));
    }
    if meta.lead_order.iter().map(String::as_str).ne(LEADS_12) {
        return Err(Error::Schema(format!("lead order {:?}", meta.lead_order)));
    }
    if meta.vocabulary.len() != N_STATEMENTS {
        return Err(Error::Schema(format!(
            "vocabulary has {} codes, expected {N_STATEMENTS}",
            meta.vocabulary.len()
        )));
    }
    let vocabulary = LabelVocabulary::new(meta.vocabulary)?;
    if meta.folds.len() != n || meta.record_ids.len() != n {
        return Err(Error::Schema("folds or record_ids do not match n_records".into()));
    }
    if labels.len() != n * N_STATEMENTS || labels.iter().any(|&b| b > 1) {
        return Err(Error::Schema("labels.u8 is not a binary [n, 71] array".into()));
    }
    let per_record = signals.len() / (4 * n);
    if per_record == 0 || signals.len() != per_record * 4 * n || per_record % 12 != 0 {
        return Err(Error::Schema(format!(
            "signals.f32le holds {} bytes for {n} records of 12 leads",
            signals.len()
        )));
    }

    let mut records = Vec::with_capacity(n);
    let mut label_vecs = Vec::with_capacity(n);
    for i in 0..n {
        let bytes = &signals[i * per_record * 4..(i + 1) * per_record * 4];
        let signal: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if signal.iter().any(|v| !v.is_finite()) {
            return Err(Error::CorruptSignal(format!("record {}", meta.record_ids[i])));
        }
        records.push(EcgRecord::new(
            signal,
            12,
            meta.sampling_rate,
            meta.record_ids[i].clone(),
            meta.folds[i],
        )?);
        let row = &labels[i * N_STATEMENTS..(i + 1) * N_STATEMENTS];
        label_vecs.push(LabelVector::new(row.iter().map(|&b| b as f32).collect())?);
    }
    Dataset::new(records, label_vecs, vocabulary)
}
