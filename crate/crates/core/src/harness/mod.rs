//! Training loops, the experiment grid and report emission.

mod config;
mod experiment;
mod pipeline;
mod seeds;
mod train;

pub use config::{DataConfig, ExperimentSettings, PretrainConfig, Preset, RunConfig, TrainConfig};
pub use experiment::{
    config_hash, emit_report, render_series, render_table, run_experiment, EmittedFiles, ExperimentInputs,
    ExperimentReport, NamedDataset, Provenance, ReportRow, RunRecord,
};
pub use pipeline::{prepare_data, resolve, run_pipeline, seeded_pretrain, PipelineOutcome, PreparedData, SYNTHETIC_NAME};
pub use seeds::{fnv1a, splitmix64, SeedSplitter, Stream};
pub use train::{
    corruption_loss, encode_corpus, encode_examples, evaluate, finetune, input_bound, predict, pretrain, run_finetune,
    run_pretrain, DevRecord, FinetuneOutcome, LossRecord, Model, PretrainOutcome, Prediction,
};

use std::path::PathBuf;

use thiserror::Error;

use crate::corruption::CorruptionError;
use crate::datasets::DatasetError;
use crate::decoding::DecodeError;
use crate::model::ModelError;
use crate::prompting::PromptError;
use crate::tokenizer::TokenizerError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("non-finite loss at step {step}{}", dump.as_ref().map(|p| format!("; batch written to {}", p.display())).unwrap_or_default())]
    NonFinite { step: usize, dump: Option<PathBuf> },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Corruption(#[from] CorruptionError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
