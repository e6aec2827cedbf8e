//! Classifier-based evaluation of synthetic data against real data.

mod classifier;
mod metrics;
mod protocol;

pub use classifier::{
    evaluate_auroc, predict_record, predict_records, train_classifier, ClassifierConfig, TrainedClassifier,
    XResNet1d,
};
pub use metrics::{macro_auroc, per_label_auroc};
pub use protocol::{three_way_protocol, ClassifierSummary, MetricCell, MetricTable};
