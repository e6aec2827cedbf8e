//! Records, label vectors, datasets and the on-disk container.

mod io;
mod toy;
mod vocab;

pub use io::{load_dataset, save_dataset};
pub use toy::{make_toy_corpus, toy_statements, ToyConfig, TOY_LVH_MARGIN_MV, TOY_STATEMENTS};
pub use vocab::{LabelVector, LabelVocabulary, N_STATEMENTS};

use crate::error::{Error, Result};

pub const SAMPLING_RATE: u32 = 100;
pub const RECORD_LEN: usize = 1000;

pub const LEADS_12: [&str; 12] = [
    "I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6",
];
pub const LEADS_8: [&str; 8] = ["I", "aVF", "V1", "V2", "V3", "V4", "V5", "V6"];

/// One recording, stored time-major: `signal[t * n_leads + lead]`, in mV.
#[derive(Debug, Clone, PartialEq)]
pub struct EcgRecord {
    pub signal: Vec<f32>,
    pub n_leads: usize,
    pub sampling_rate: u32,
    pub record_id: String,
    pub fold: u8,
}

impl EcgRecord {
    pub fn new(
        signal: Vec<f32>,
        n_leads: usize,
        sampling_rate: u32,
        record_id: impl Into<String>,
        fold: u8,
    ) -> Result<Self> {
        if n_leads != 8 && n_leads != 12 {
            return Err(Error::Schema(format!("{n_leads} leads")));
        }
        if signal.is_empty() || signal.len() % n_leads != 0 {
            return Err(Error::Schema(format!(
                "{} samples do not fill {n_leads} leads",
                signal.len()
            )));
        }
        if !(1..=10).contains(&fold) {
            return Err(Error::Schema(format!("fold {fold}")));
        }
        if signal.iter().any(|v| !v.is_finite()) {
            return Err(Error::CorruptSignal("non-finite sample".into()));
        }
        Ok(Self {
            signal,
            n_leads,
            sampling_rate,
            record_id: record_id.into(),
            fold,
        })
    }

    /// Builds a record from lead-major `[n_leads × len]` samples.
    pub fn from_lead_major(
        leads: &[f32],
        n_leads: usize,
        sampling_rate: u32,
        record_id: impl Into<String>,
        fold: u8,
    ) -> Result<Self> {
        let len = leads.len() / n_leads.max(1);
        let mut signal = vec![0.0; leads.len()];
        for (l, lead) in leads.chunks_exact(len.max(1)).enumerate() {
            for (t, &v) in lead.iter().enumerate() {
                signal[t * n_leads + l] = v;
            }
        }
        Self::new(signal, n_leads, sampling_rate, record_id, fold)
    }

    pub fn len(&self) -> usize {
        self.signal.len() / self.n_leads
    }

    pub fn is_empty(&self) -> bool {
        self.signal.is_empty()
    }

    pub fn lead(&self, lead: usize) -> Vec<f32> {
        self.signal.iter().skip(lead).step_by(self.n_leads).copied().collect()
    }

    /// Lead-major copy, `[n_leads × len]`.
    pub fn lead_major(&self) -> Vec<f32> {
        (0..self.n_leads).flat_map(|l| self.lead(l)).collect()
    }

    /// The eight independent leads `[I, aVF, V1..V6]`, lead-major.
    pub fn independent_leads(&self) -> Result<Vec<f32>> {
        match self.n_leads {
            8 => Ok(self.lead_major()),
            12 => Ok([0, 5, 6, 7, 8, 9, 10, 11].iter().flat_map(|&l| self.lead(l)).collect()),
            n => Err(Error::FrameShape(format!("{n} leads"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    /// Folds 1-8 train, 9 validation, 10 test.
    pub fn of_fold(fold: u8) -> Split {
        match fold {
            9 => Split::Validation,
            10 => Split::Test,
            _ => Split::Train,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<EcgRecord>,
    pub labels: Vec<LabelVector>,
    pub vocabulary: LabelVocabulary,
}

impl Dataset {
    pub fn new(
        records: Vec<EcgRecord>,
        labels: Vec<LabelVector>,
        vocabulary: LabelVocabulary,
    ) -> Result<Self> {
        if records.len() != labels.len() {
            return Err(Error::Schema(format!(
                "{} records but {} label vectors",
                records.len(),
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|l| l.len() != vocabulary.len()) {
            return Err(Error::Schema(format!(
                "label vector of length {} for a vocabulary of {}",
                l.len(),
                vocabulary.len()
            )));
        }
        if let Some(r) = records.first() {
            let (len, leads) = (r.len(), r.n_leads);
            if records.iter().any(|r| r.len() != len || r.n_leads != leads) {
                return Err(Error::Schema("records differ in length or lead count".into()));
            }
        }
        Ok(Self {
            records,
            labels,
            vocabulary,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn record_len(&self) -> Option<usize> {
        self.records.first().map(EcgRecord::len)
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| Split::of_fold(self.records[i].fold) == split)
            .collect()
    }

    pub fn split(&self, split: Split) -> Dataset {
        self.subset(&self.split_indices(split))
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i].clone()).collect(),
            vocabulary: self.vocabulary.clone(),
        }
    }

    /// Row-major `[indices.len() × vocabulary.len()]` label matrix.
    pub fn label_matrix(&self, indices: &[usize]) -> Vec<f32> {
        indices
            .iter()
            .flat_map(|&i| self.labels[i].values().iter().copied())
            .collect()
    }
}
