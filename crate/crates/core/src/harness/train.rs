//! Pretraining and fine-tuning loops, and test-set evaluation.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::autodiff::{AdamState, Graph};
use crate::corruption::{corrupt, CorruptionSample};
use crate::datasets::{compute_max_len, FewshotSplit, QAExample};
use crate::decoding::{answer_extract, default_max_steps, greedy_decode, predict_span};
use crate::metrics::EvalResult;
use crate::model::{Dropout, ModelError, Seq2SeqModel};
use crate::prompting::{batch_loss, build_pair, encode_input, seq2seq_batch_loss, ObjectiveKind, PromptError, PromptPair};
use crate::tokenizer::{TokenId, Vocab, EOS_ID};

use super::config::{PretrainConfig, TrainConfig};
use super::seeds::splitmix64;
use super::HarnessError;

/// Training models run in single precision.
pub type Model = Seq2SeqModel<f32>;

const INIT_STREAM: u64 = 0x11;
const ORDER_STREAM: u64 = 0x22;
const DROPOUT_STREAM: u64 = 0x33;
/// Room left for `Answer: x.` and EOS when the target restates the input.
const TARGET_MARGIN: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub model: Model,
    pub losses: Vec<LossRecord>,
}

/// Encodes corpus documents, truncated so that a target with EOS fits.
pub fn encode_corpus<S: AsRef<str>>(corpus: &[S], vocab: &Vocab, max_positions: usize) -> Result<Vec<Vec<TokenId>>, HarnessError> {
    corpus
        .iter()
        .map(|doc| {
            let mut ids = vocab.encode(doc.as_ref())?;
            ids.truncate(max_positions - 1);
            Ok(ids)
        })
        .filter(|r: &Result<Vec<TokenId>, HarnessError>| r.as_ref().map_or(true, |ids| !ids.is_empty()))
        .collect()
}

/// Model input and target of a corruption sample; denoising targets get EOS.
fn corruption_pair(sample: &CorruptionSample) -> (Vec<TokenId>, Vec<TokenId>) {
    let mut target = sample.target_ids.clone();
    if target.last() != Some(&EOS_ID) {
        target.push(EOS_ID);
    }
    (sample.corrupted_ids.clone(), target)
}

fn pairs_loss<'a>(
    g: &mut Graph<'a, f32>,
    model: &'a Model,
    bound: &crate::model::Bound,
    batch: &[(Vec<TokenId>, Vec<TokenId>)],
    dropout: &mut Dropout<'_>,
) -> Result<crate::autodiff::Var, HarnessError> {
    let pairs: Vec<PromptPair> = batch
        .iter()
        .map(|(input, target)| PromptPair {
            objective: ObjectiveKind::FullInputGeneration,
            input_ids: input.clone(),
            target_ids: Some(target.clone()),
            gold_span: None,
            context_start: 0,
            example_id: String::new(),
        })
        .collect();
    let refs: Vec<&PromptPair> = pairs.iter().collect();
    Ok(seq2seq_batch_loss(g, model, bound, &refs, dropout)?)
}

/// Mean per-sequence loss of `samples` without updating the model.
pub fn corruption_loss(model: &Model, samples: &[CorruptionSample]) -> Result<f64, HarnessError> {
    let batch: Vec<_> = samples.iter().map(corruption_pair).collect();
    let mut g = Graph::new();
    let b = model.bind(&mut g);
    let loss = pairs_loss(&mut g, model, &b, &batch, &mut Dropout::off())?;
    Ok(f64::from(g.value(loss)[0]))
}

/// Trains a fresh model on corrupted documents. A non-finite loss aborts the
/// run; when `dump_dir` is given the offending batch is written there first.
pub fn pretrain(docs: &[Vec<TokenId>], cfg: &PretrainConfig, dump_dir: Option<&Path>) -> Result<PretrainOutcome, HarnessError> {
    cfg.validate()?;
    if docs.is_empty() {
        return Err(HarnessError::Config("pretraining corpus is empty".into()));
    }
    let mut model = Model::new(cfg.model.clone(), splitmix64(cfg.seed ^ INIT_STREAM))?;
    let mut opt = AdamState::new(model.parameters(), cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(splitmix64(cfg.seed ^ DROPOUT_STREAM));
    let rate = cfg.model.dropout_rate;
    let mut losses = Vec::new();
    let mut window = 0.0;
    for step in 1..=cfg.steps {
        let batch = (0..cfg.batch_size)
            .map(|_| {
                let doc = &docs[rng.random_range(0..docs.len())];
                corrupt(doc, cfg.style, &cfg.corruption, &mut rng).map(|s| corruption_pair(&s))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let loss = model.accumulate_gradients(|g, m, b| {
            let mut dropout = Dropout::new(rate, &mut dropout_rng);
            pairs_loss(g, m, b, &batch, &mut dropout)
        })?;
        if !loss.is_finite() {
            return Err(non_finite(step, &batch, dump_dir));
        }
        opt.step(model.parameters_mut()).map_err(ModelError::from)?;
        window += loss;
        if step % cfg.log_every == 0 || step == cfg.steps {
            let n = if step % cfg.log_every == 0 { cfg.log_every } else { step % cfg.log_every };
            losses.push(LossRecord {
                step,
                loss: window / n as f64,
            });
            log::debug!("pretrain step {step}: loss {:.4}", window / n as f64);
            window = 0.0;
        }
    }
    Ok(PretrainOutcome { model, losses })
}

fn non_finite(step: usize, batch: &[(Vec<TokenId>, Vec<TokenId>)], dump_dir: Option<&Path>) -> HarnessError {
    let dump = dump_dir.map(|dir| dir.join("nonfinite_batch.json"));
    if let Some(path) = &dump {
        let record = json!({
            "step": step,
            "inputs": batch.iter().map(|(i, _)| i).collect::<Vec<_>>(),
            "targets": batch.iter().map(|(_, t)| t).collect::<Vec<_>>(),
        });
        if let Err(e) = fs::write(path, record.to_string()) {
            log::error!("could not write diagnostic dump {}: {e}", path.display());
        }
    }
    HarnessError::NonFinite { step, dump }
}

/// Pretrains, then writes `pretrained.ckpt` and `pretrain_loss.jsonl` under
/// `out_dir`. Returns the checkpoint path.
pub fn run_pretrain<S: AsRef<str>>(
    corpus: &[S],
    vocab: &Vocab,
    cfg: &PretrainConfig,
    out_dir: &Path,
) -> Result<(PathBuf, PretrainOutcome), HarnessError> {
    fs::create_dir_all(out_dir)?;
    let docs = encode_corpus(corpus, vocab, cfg.model.max_positions)?;
    let outcome = pretrain(&docs, cfg, Some(out_dir))?;
    let mut log = fs::File::create(out_dir.join("pretrain_loss.jsonl"))?;
    for r in &outcome.losses {
        writeln!(log, "{}", serde_json::to_string(r).expect("plain record"))?;
    }
    let path = out_dir.join("pretrained.ckpt");
    outcome.model.save(&path)?;
    Ok((path, outcome))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DevRecord {
    pub step: usize,
    pub f1: f64,
    pub exact_match: f64,
    pub train_loss: f64,
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    /// Snapshot with the highest dev F1, earliest on ties.
    pub model: Model,
    pub best_step: usize,
    pub best_dev_f1: f64,
    pub history: Vec<DevRecord>,
    pub train_losses: Vec<LossRecord>,
    pub steps_run: usize,
    pub n_train_pairs: usize,
    pub skipped: usize,
    pub max_input_len: usize,
}

/// Input bound for a split: the configured value or the 99th-percentile dev
/// input length, capped so every target fits the model.
pub fn input_bound(split: &FewshotSplit, vocab: &Vocab, cfg: &TrainConfig) -> Result<usize, HarnessError> {
    let cap = cfg.model.max_positions.saturating_sub(TARGET_MARGIN).max(1);
    let len = match cfg.max_input_len {
        Some(n) => n,
        None => compute_max_len(&split.dev, vocab, cfg.objective)?,
    };
    Ok(len.min(cap))
}

/// Encodes examples for `objective`, dropping unanswerable span-selection
/// examples and over-long targets. Returns the pairs and the drop count.
pub fn encode_examples(
    examples: &[QAExample],
    vocab: &Vocab,
    objective: ObjectiveKind,
    max_input_len: usize,
    max_positions: usize,
) -> Result<(Vec<PromptPair>, usize), HarnessError> {
    let mut pairs = Vec::new();
    let mut skipped = 0;
    for ex in examples {
        match build_pair(vocab, &ex.id, &ex.question, &ex.answers, &ex.context, objective, max_input_len) {
            Ok(p) if p.target_ids.as_ref().is_some_and(|t| t.len() > max_positions) => skipped += 1,
            Ok(p) => pairs.push(p),
            Err(PromptError::Unanswerable { .. }) => skipped += 1,
            Err(e) => return Err(e.into()),
        }
    }
    if skipped > 0 {
        log::info!("{objective}: skipped {skipped} of {} examples", examples.len());
    }
    Ok((pairs, skipped))
}

fn initial_model(cfg: &TrainConfig, base: Option<&Model>) -> Result<Model, HarnessError> {
    let init_seed = splitmix64(cfg.seed ^ INIT_STREAM);
    let mut model = match base {
        Some(m) => {
            if !m.config().same_backbone(&cfg.model) {
                return Err(HarnessError::Config(
                    "pretrained checkpoint architecture differs from the fine-tuning model config".into(),
                ));
            }
            m.clone()
        }
        None => Model::new(cfg.model.clone(), init_seed)?,
    };
    if cfg.objective == ObjectiveKind::SpanSelection {
        model.enable_span_head(init_seed);
    }
    Ok(model)
}

/// Fine-tunes on `split.train`, scoring `split.dev` every `eval_every` steps
/// and after the last step.
pub fn finetune(split: &FewshotSplit, vocab: &Vocab, cfg: &TrainConfig, base: Option<&Model>) -> Result<FinetuneOutcome, HarnessError> {
    cfg.validate()?;
    let max_input_len = input_bound(split, vocab, cfg)?;
    let (pairs, skipped) = encode_examples(&split.train, vocab, cfg.objective, max_input_len, cfg.model.max_positions)?;
    if pairs.is_empty() {
        return Err(HarnessError::Config("no usable training examples".into()));
    }
    let mut model = initial_model(cfg, base)?;
    let mut opt = AdamState::new(model.parameters(), cfg.learning_rate);
    let mut order_rng = ChaCha8Rng::seed_from_u64(splitmix64(cfg.seed ^ ORDER_STREAM));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(splitmix64(cfg.seed ^ DROPOUT_STREAM));
    let rate = cfg.model.dropout_rate;

    let total = cfg.total_steps(pairs.len());
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut order_rng);
    let mut cursor = 0;
    let mut best: Option<(f64, usize, Model)> = None;
    let mut history = Vec::new();
    let mut train_losses = Vec::new();
    let mut window = (0.0, 0usize);
    for step in 1..=total {
        if cursor == order.len() {
            order.shuffle(&mut order_rng);
            cursor = 0;
        }
        let end = (cursor + cfg.batch_size).min(order.len());
        let batch: Vec<&PromptPair> = order[cursor..end].iter().map(|&i| &pairs[i]).collect();
        cursor = end;
        let loss = model.accumulate_gradients(|g, m, b| {
            let mut dropout = Dropout::new(rate, &mut dropout_rng);
            Ok::<_, HarnessError>(batch_loss(g, m, b, &batch, &mut dropout)?)
        })?;
        if !loss.is_finite() {
            return Err(HarnessError::NonFinite { step, dump: None });
        }
        opt.step(model.parameters_mut()).map_err(ModelError::from)?;
        window = (window.0 + loss, window.1 + 1);
        if step % cfg.eval_every == 0 || step == total {
            let mean_loss = window.0 / window.1 as f64;
            window = (0.0, 0);
            train_losses.push(LossRecord { step, loss: mean_loss });
            let (dev, _) = evaluate(&model, vocab, &split.dev, cfg.objective, max_input_len)?;
            log::debug!("{} step {step}: loss {mean_loss:.4} dev F1 {:.1}", cfg.objective, dev.f1);
            history.push(DevRecord {
                step,
                f1: dev.f1,
                exact_match: dev.exact_match,
                train_loss: mean_loss,
            });
            if best.as_ref().is_none_or(|(f1, _, _)| dev.f1 > *f1) {
                best = Some((dev.f1, step, model.clone()));
            }
        }
    }
    let (best_dev_f1, best_step, model) = best.expect("at least one evaluation runs");
    Ok(FinetuneOutcome {
        model,
        best_step,
        best_dev_f1,
        history,
        train_losses,
        steps_run: total,
        n_train_pairs: pairs.len(),
        skipped,
        max_input_len,
    })
}

/// Loads the configured checkpoint (if any), fine-tunes, and writes
/// `best.ckpt` and `dev_history.jsonl` under `out_dir`.
pub fn run_finetune(split: &FewshotSplit, vocab: &Vocab, cfg: &TrainConfig, out_dir: &Path) -> Result<FinetuneOutcome, HarnessError> {
    fs::create_dir_all(out_dir)?;
    let base = match &cfg.pretrained_checkpoint {
        Some(p) => Some(Model::load(p)?),
        None => None,
    };
    let outcome = finetune(split, vocab, cfg, base.as_ref())?;
    let mut log = fs::File::create(out_dir.join("dev_history.jsonl"))?;
    for r in &outcome.history {
        writeln!(log, "{}", serde_json::to_string(r).expect("plain record"))?;
    }
    outcome.model.save(&out_dir.join("best.ckpt"))?;
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub generated: String,
    pub answer: String,
    pub steps_used: usize,
}

/// Predicted answer for one example plus the raw generated text.
pub fn predict(model: &Model, vocab: &Vocab, ex: &QAExample, objective: ObjectiveKind, max_input_len: usize) -> Result<Prediction, HarnessError> {
    let (ids, context_start) = encode_input(vocab, &ex.question, &ex.context, objective, max_input_len)?;
    match default_max_steps(objective) {
        Some(max_steps) => {
            let out = greedy_decode(model, vocab, &ids, max_steps)?;
            Ok(Prediction {
                id: ex.id.clone(),
                answer: answer_extract(&out.text, objective),
                generated: out.text,
                steps_used: out.steps_used,
            })
        }
        None => {
            let (start, end) = model.span_head_forward(&ids)?;
            let answer = match predict_span(&start, &end, context_start..ids.len(), None) {
                Some((s, e)) => vocab.decode(&ids[s..=e])?,
                None => String::new(),
            };
            Ok(Prediction {
                id: ex.id.clone(),
                generated: answer.clone(),
                answer,
                steps_used: 0,
            })
        }
    }
}

/// Scores `examples`. An empty set scores zero over zero examples.
pub fn evaluate(
    model: &Model,
    vocab: &Vocab,
    examples: &[QAExample],
    objective: ObjectiveKind,
    max_input_len: usize,
) -> Result<(EvalResult, Vec<Prediction>), HarnessError> {
    let preds = examples
        .iter()
        .map(|ex| predict(model, vocab, ex, objective, max_input_len))
        .collect::<Result<Vec<_>, _>>()?;
    let scored = EvalResult::score(preds.iter().zip(examples).map(|(p, ex)| (p.answer.as_str(), ex.answers.as_slice())));
    let result = scored.unwrap_or(EvalResult {
        exact_match: 0.0,
        f1: 0.0,
        n_examples: 0,
    });
    Ok((result, preds))
}
