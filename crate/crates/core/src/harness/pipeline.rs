//! End-to-end runs shared by the command line and the acceptance suite.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::datasets::{gen_synthetic, load_mrqa};
use crate::tokenizer::Vocab;

use super::{
    config_hash, emit_report, run_experiment, run_pretrain, ExperimentInputs, ExperimentReport, HarnessError,
    NamedDataset, PretrainConfig, PretrainOutcome, RunConfig, SeedSplitter, Stream,
};

/// Words the prompt templates add on top of the data.
const TEMPLATE_TEXT: &str = "Question: Answer: Context: what";

/// Name of the built-in dataset.
pub const SYNTHETIC_NAME: &str = "synthetic";

/// QA datasets, the pretraining corpus and a vocabulary covering both.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub datasets: Vec<NamedDataset>,
    pub corpus: Vec<String>,
    pub vocab: Vocab,
}

/// Loads the configured data. Without MRQA files the synthetic task is
/// generated; otherwise every file is one dataset and their distinct
/// contexts form the corpus.
pub fn prepare_data(cfg: &RunConfig) -> Result<PreparedData, HarnessError> {
    let (datasets, corpus) = if cfg.data.mrqa.is_empty() {
        let (corpus, examples) = gen_synthetic(&cfg.data.synthetic)?;
        (
            vec![NamedDataset {
                name: SYNTHETIC_NAME.into(),
                examples,
            }],
            corpus,
        )
    } else {
        let mut datasets = Vec::new();
        let mut corpus = Vec::new();
        let mut seen = HashSet::new();
        for path in &cfg.data.mrqa {
            let loaded = load_mrqa(path)?;
            for ex in &loaded.examples {
                if seen.insert(ex.context.clone()) {
                    corpus.push(ex.context.clone());
                }
            }
            let name = path
                .file_stem()
                .and_then(|s| s.to_str())
                .map(|s| s.trim_end_matches(".jsonl").to_string())
                .unwrap_or_else(|| path.display().to_string());
            datasets.push(NamedDataset {
                name,
                examples: loaded.examples,
            });
        }
        (datasets, corpus)
    };
    let mut texts: Vec<&str> = corpus.iter().map(String::as_str).collect();
    for d in &datasets {
        for ex in &d.examples {
            texts.push(&ex.question);
            texts.push(&ex.context);
            texts.extend(ex.answers.iter().map(String::as_str));
        }
    }
    texts.push(TEMPLATE_TEXT);
    let vocab = Vocab::build(&texts, cfg.data.vocab_size)?;
    Ok(PreparedData {
        datasets,
        corpus,
        vocab,
    })
}

/// Sizes both model configs to the vocabulary.
pub fn resolve(cfg: &RunConfig, vocab: &Vocab) -> RunConfig {
    let mut cfg = cfg.clone();
    cfg.pretrain.model.vocab_size = vocab.len();
    cfg.finetune.model.vocab_size = vocab.len();
    cfg
}

/// Pretraining settings with the seed folded into the master seed.
pub fn seeded_pretrain(cfg: &RunConfig) -> PretrainConfig {
    let mut p = cfg.pretrain.clone();
    p.seed = SeedSplitter::new(cfg.master_seed).derive(Stream::Init, &[cfg.pretrain.seed]);
    p
}

/// Outputs of [`run_pipeline`].
#[derive(Debug)]
pub struct PipelineOutcome {
    pub report: ExperimentReport,
    pub checkpoint: PathBuf,
    pub pretrain: PretrainOutcome,
    pub vocab: Vocab,
}

/// Prepares data, pretrains once, runs the grid from that checkpoint and
/// writes the report files plus `vocab.txt` and `config.toml` to `out_dir`.
pub fn run_pipeline(cfg: &RunConfig, out_dir: &Path) -> Result<PipelineOutcome, HarnessError> {
    fs::create_dir_all(out_dir)?;
    let data = prepare_data(cfg)?;
    let cfg = resolve(cfg, &data.vocab);
    cfg.pretrain.validate()?;
    data.vocab.save(&out_dir.join("vocab.txt"))?;
    fs::write(out_dir.join("config.toml"), cfg.to_toml()?)?;
    log::info!(
        "{} dataset(s), {} corpus documents, vocabulary of {}",
        data.datasets.len(),
        data.corpus.len(),
        data.vocab.len()
    );
    let (checkpoint, pretrain) = run_pretrain(&data.corpus, &data.vocab, &seeded_pretrain(&cfg), out_dir)?;
    let report = run_experiment(&ExperimentInputs {
        datasets: &data.datasets,
        vocab: &data.vocab,
        pretrained: Some(&pretrain.model),
        pretrained_path: Some(checkpoint.clone()),
        base: &cfg.finetune,
        settings: &cfg.experiment,
        master_seed: cfg.master_seed,
        config_hash: config_hash(&cfg),
    });
    emit_report(&report, out_dir)?;
    Ok(PipelineOutcome {
        report,
        checkpoint,
        pretrain,
        vocab: data.vocab,
    })
}
