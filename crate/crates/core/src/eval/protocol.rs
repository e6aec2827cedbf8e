use std::path::Path;

use serde::{Deserialize, Serialize};

use super::classifier::{evaluate_auroc, train_classifier, ClassifierConfig, TrainedClassifier};
use crate::checkpoint::store_digest;
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::rng;

/// One train-source / test-source cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCell {
    /// `None` when every label of the test split has a single class.
    pub macro_auroc: Option<f64>,
    pub per_label: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSummary {
    pub selected_epoch: usize,
    pub val_auroc: Vec<f64>,
    pub params_sha256: String,
}

/// The 2×2 grid plus selection details, written as `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub real_real: MetricCell,
    pub real_synth: MetricCell,
    pub synth_real: MetricCell,
    pub synth_synth: MetricCell,
    pub vocabulary: Vec<String>,
    pub reference: ClassifierSummary,
    pub synthetic: ClassifierSummary,
    pub config: ClassifierConfig,
    pub seed: u64,
}

impl MetricTable {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

fn cell<F: sssd_nn::Float>(clf: &TrainedClassifier<F>, test: &Dataset) -> Result<MetricCell> {
    match evaluate_auroc(&clf.model, test) {
        Ok((m, per)) => Ok(MetricCell {
            macro_auroc: Some(m),
            per_label: per,
        }),
        Err(Error::AurocUndefined) => Ok(MetricCell {
            macro_auroc: None,
            per_label: vec![None; test.vocabulary.len()],
        }),
        Err(e) => Err(e),
    }
}

fn summary<F: sssd_nn::Float>(clf: &TrainedClassifier<F>) -> ClassifierSummary {
    ClassifierSummary {
        selected_epoch: clf.selected_epoch,
        val_auroc: clf.val_auroc.clone(),
        params_sha256: store_digest(&clf.model.store),
    }
}

/// Trains on the real train folds (selected on real validation) and on the
/// synthetic train folds (selected on synthetic validation), then scores
/// both on both test folds. Each classifier is trained once and reused.
pub fn three_way_protocol(
    real: &Dataset,
    synthetic: &Dataset,
    config: &ClassifierConfig,
    seed: u64,
) -> Result<MetricTable> {
    if real.vocabulary != synthetic.vocabulary {
        return Err(Error::IncompatibleDatasets("label vocabularies differ".into()));
    }
    if real.record_len() != synthetic.record_len() {
        return Err(Error::IncompatibleDatasets(format!(
            "record lengths {:?} and {:?}",
            real.record_len(),
            synthetic.record_len()
        )));
    }
    let reference = train_classifier::<f32>(
        config,
        &real.split(Split::Train),
        &real.split(Split::Validation),
        rng::derive_seed(seed, 0),
    )?;
    let synth_clf = train_classifier::<f32>(
        config,
        &synthetic.split(Split::Train),
        &synthetic.split(Split::Validation),
        rng::derive_seed(seed, 1),
    )?;
    let (real_test, synth_test) = (real.split(Split::Test), synthetic.split(Split::Test));
    Ok(MetricTable {
        real_real: cell(&reference, &real_test)?,
        real_synth: cell(&reference, &synth_test)?,
        synth_real: cell(&synth_clf, &real_test)?,
        synth_synth: cell(&synth_clf, &synth_test)?,
        vocabulary: real.vocabulary.codes().to_vec(),
        reference: summary(&reference),
        synthetic: summary(&synth_clf),
        config: config.clone(),
        seed,
    })
}
