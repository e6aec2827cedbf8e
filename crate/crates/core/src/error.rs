use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("corpus not found: {0}")]
    CorpusNotFound(PathBuf),
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("corrupt signal: {0}")]
    CorruptSignal(String),
    #[error("unknown statement: {0}")]
    UnknownStatement(String),
    #[error("toy config invalid: {0}")]
    ToyConfig(String),
    #[error("schedule invalid: {0}")]
    Schedule(String),
    #[error("noise shape invalid: {0}")]
    NoiseShape(String),
    #[error("diverged: {0}")]
    Diverged(String),
    #[error("sampler diverged at step {step}")]
    SamplerDiverged { step: usize },
    #[error("record {index}: {source}")]
    Record {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("state size invalid: {0}")]
    StateSize(usize),
    #[error("discretization singular (dt = {0})")]
    DiscretizationSingular(f64),
    #[error("kernel overflow")]
    KernelOverflow,
    #[error("layer diverged: {0}")]
    LayerDiverged(String),
    #[error("condition shape invalid: {0}")]
    ConditionShape(String),
    #[error("input shape invalid: {0}")]
    InputShape(String),
    #[error("frame shape invalid: {0}")]
    FrameShape(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("generator shape invalid: {0}")]
    GeneratorShape(String),
    #[error("GAN diverged: {0}")]
    GanDiverged(String),
    #[error("no training data")]
    NoTrainingData,
    #[error("classifier diverged at epoch {0}")]
    ClassifierDiverged(usize),
    #[error("record too short: {len} samples, need {need}")]
    RecordTooShort { len: usize, need: usize },
    #[error("AUROC undefined: every label has a single class")]
    AurocUndefined,
    #[error("incompatible datasets: {0}")]
    IncompatibleDatasets(String),
    #[error("no beats")]
    NoBeats,
    #[error("output path invalid: {0}")]
    OutputPath(String),
    #[error("checkpoint invalid: {0}")]
    Checkpoint(String),
    #[error("config invalid: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] sssd_nn::NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
