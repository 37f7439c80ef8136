//! Fine-tuning inputs, targets and losses for every objective.
//!
//! The aligned objectives phrase QA as mask filling: the question comes first,
//! then `Answer: <mask>.`, then the context, so a decoder that reproduces the
//! input reaches the answer after only a few tokens.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Graph, Scalar, Tensor, Var};
use crate::model::{Bound, Dropout, ModelError, Seq2SeqModel};
use crate::tokenizer::{sentinel_marker, TokenId, TokenizerError, Vocab, EOS_ID, MASK_MARKER, PAD_ID, SEP_MARKER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    SpanSelection,
    FullInputGeneration,
    QuestionThenAnswer,
    AnswerThenQuestion,
    AnswerOnlyGeneration,
    SentinelAnswer,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 6] = [
        ObjectiveKind::SpanSelection,
        ObjectiveKind::FullInputGeneration,
        ObjectiveKind::QuestionThenAnswer,
        ObjectiveKind::AnswerThenQuestion,
        ObjectiveKind::AnswerOnlyGeneration,
        ObjectiveKind::SentinelAnswer,
    ];

    pub const GENERATIVE: [ObjectiveKind; 5] = [
        ObjectiveKind::FullInputGeneration,
        ObjectiveKind::QuestionThenAnswer,
        ObjectiveKind::AnswerThenQuestion,
        ObjectiveKind::AnswerOnlyGeneration,
        ObjectiveKind::SentinelAnswer,
    ];

    pub fn is_generative(self) -> bool {
        self != ObjectiveKind::SpanSelection
    }

    /// Whether the input carries a mask (or sentinel) in the answer slot.
    pub fn has_mask(self) -> bool {
        !matches!(self, ObjectiveKind::SpanSelection | ObjectiveKind::AnswerOnlyGeneration)
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::SpanSelection => "span-selection",
            ObjectiveKind::FullInputGeneration => "full-input-generation",
            ObjectiveKind::QuestionThenAnswer => "question-then-answer",
            ObjectiveKind::AnswerThenQuestion => "answer-then-question",
            ObjectiveKind::AnswerOnlyGeneration => "answer-only-generation",
            ObjectiveKind::SentinelAnswer => "sentinel-answer",
        }
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectiveKind {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ObjectiveKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| PromptError::UnknownObjective(s.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("unknown objective {0:?}")]
    UnknownObjective(String),
    #[error("answer {answer:?} does not occur in the context of example {example_id}")]
    Unanswerable { example_id: String, answer: String },
    #[error("{0}")]
    Contract(String),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One encoded fine-tuning example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptPair {
    pub objective: ObjectiveKind,
    pub input_ids: Vec<TokenId>,
    /// Target ids ending in EOS; absent for span selection.
    pub target_ids: Option<Vec<TokenId>>,
    /// Inclusive `(start, end)` token positions into `input_ids`.
    pub gold_span: Option<(usize, usize)>,
    /// Positions `start..input_ids.len()` hold the context.
    pub context_start: usize,
    pub example_id: String,
}

/// Everything before the context, including the trailing `Context:`.
fn input_prefix(q: &str, objective: ObjectiveKind) -> String {
    match objective {
        ObjectiveKind::SpanSelection => format!("Question: {q} {SEP_MARKER} Context:"),
        ObjectiveKind::AnswerOnlyGeneration => format!("Question: {q} Context:"),
        ObjectiveKind::SentinelAnswer => format!("Question: {q} Answer: {}. Context:", sentinel_marker(0)),
        _ => format!("Question: {q} Answer: {MASK_MARKER}. Context:"),
    }
}

/// Input text for `objective`. The span-infilling objective carries the
/// first sentinel where the others carry `<mask>`.
pub fn build_input(q: &str, c: &str, objective: ObjectiveKind) -> String {
    format!("{} {c}", input_prefix(q, objective))
}

/// Target text, or `None` for span selection, whose target is a position pair.
pub fn target_text(q: &str, a: &str, c: &str, objective: ObjectiveKind) -> Option<String> {
    Some(match objective {
        ObjectiveKind::SpanSelection => return None,
        ObjectiveKind::QuestionThenAnswer => format!("Question: {q} Answer: {a}."),
        ObjectiveKind::AnswerThenQuestion => format!("Answer: {a}. Question: {q}"),
        ObjectiveKind::FullInputGeneration => format!("Question: {q} Answer: {a}. Context: {c}"),
        ObjectiveKind::AnswerOnlyGeneration => a.to_string(),
        ObjectiveKind::SentinelAnswer => format!("{} Answer: {a}.", sentinel_marker(0)),
    })
}

/// Target of one example: generated text or an inclusive gold token span.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    Text(String),
    Span(usize, usize),
}

/// Target for `objective`. The span is the first token-aligned occurrence of
/// the answer inside the context segment of the span-selection input.
pub fn build_target(vocab: &Vocab, q: &str, a: &str, c: &str, objective: ObjectiveKind) -> Result<Target, PromptError> {
    match target_text(q, a, c, objective) {
        Some(t) => Ok(Target::Text(t)),
        None => {
            let prefix = vocab.encode(&input_prefix(q, objective))?;
            let context = vocab.encode(c)?;
            let answer = vocab.encode(a)?;
            let (s, e) = find_span(&context, &answer).ok_or_else(|| PromptError::Unanswerable {
                example_id: String::new(),
                answer: a.to_string(),
            })?;
            Ok(Target::Span(prefix.len() + s, prefix.len() + e))
        }
    }
}

fn find_span(haystack: &[TokenId], needle: &[TokenId]) -> Option<(usize, usize)> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return None;
    }
    haystack
        .windows(needle.len())
        .position(|w| w == needle)
        .map(|s| (s, s + needle.len() - 1))
}

/// Encodes one example, truncating the context so the input holds at most
/// `max_input_len` tokens. The first answer is the generation target; span
/// selection uses the first answer found in the (truncated) context.
pub fn build_pair(
    vocab: &Vocab,
    example_id: &str,
    question: &str,
    answers: &[String],
    context: &str,
    objective: ObjectiveKind,
    max_input_len: usize,
) -> Result<PromptPair, PromptError> {
    let first = answers
        .first()
        .ok_or_else(|| PromptError::Contract(format!("example {example_id} has no answers")))?;
    let prefix = vocab.encode(&input_prefix(question, objective))?;
    let mut context_ids = vocab.encode(context)?;
    if prefix.len() >= max_input_len {
        return Err(PromptError::Contract(format!(
            "question of example {example_id} leaves no room for context within {max_input_len} tokens"
        )));
    }
    let truncated = context_ids.len() > max_input_len - prefix.len();
    context_ids.truncate(max_input_len - prefix.len());
    let context_text = if truncated {
        vocab.decode(&context_ids)?
    } else {
        context.to_string()
    };
    let mut input_ids = prefix.clone();
    input_ids.extend_from_slice(&context_ids);
    let context_start = prefix.len();

    let (target_ids, gold_span) = match target_text(question, first, &context_text, objective) {
        Some(text) => {
            let mut ids = vocab.encode(&text)?;
            ids.push(EOS_ID);
            (Some(ids), None)
        }
        None => {
            let mut found = None;
            for a in answers {
                if let Some((s, e)) = find_span(&context_ids, &vocab.encode(a)?) {
                    found = Some((context_start + s, context_start + e));
                    break;
                }
            }
            let span = found.ok_or_else(|| PromptError::Unanswerable {
                example_id: example_id.to_string(),
                answer: first.clone(),
            })?;
            (None, Some(span))
        }
    };
    Ok(PromptPair {
        objective,
        input_ids,
        target_ids,
        gold_span,
        context_start,
        example_id: example_id.to_string(),
    })
}

/// Encoded prompt input only, for inference.
pub fn encode_input(
    vocab: &Vocab,
    question: &str,
    context: &str,
    objective: ObjectiveKind,
    max_input_len: usize,
) -> Result<(Vec<TokenId>, usize), PromptError> {
    let prefix = vocab.encode(&input_prefix(question, objective))?;
    if prefix.len() >= max_input_len {
        return Err(PromptError::Contract(format!(
            "question leaves no room for context within {max_input_len} tokens"
        )));
    }
    let mut ids = prefix.clone();
    let context_ids = vocab.encode(context)?;
    ids.extend(context_ids.into_iter().take(max_input_len - prefix.len()));
    Ok((ids, prefix.len()))
}

fn targets_of<'p>(pairs: &[&'p PromptPair]) -> Result<Vec<&'p [TokenId]>, PromptError> {
    pairs
        .iter()
        .map(|p| {
            p.target_ids
                .as_deref()
                .ok_or_else(|| PromptError::Contract(format!("example {} has no target ids", p.example_id)))
        })
        .collect()
}

/// Σ over pairs of summed token negative log-likelihood, divided by the
/// number of pairs.
pub fn seq2seq_batch_loss<'a, T: Scalar>(
    g: &mut Graph<'a, T>,
    model: &'a Seq2SeqModel<T>,
    bound: &Bound,
    pairs: &[&PromptPair],
    dropout: &mut Dropout<'_>,
) -> Result<Var, PromptError> {
    let targets = targets_of(pairs)?;
    let inputs: Vec<&[TokenId]> = pairs.iter().map(|p| p.input_ids.as_slice()).collect();
    let (memory, mp) = model.encode_packed(g, bound, &inputs, dropout)?;
    let (logits, _) = model.decode_packed(g, bound, memory, &mp, &targets, dropout)?;
    let flat: Vec<usize> = targets.iter().flat_map(|t| t.iter().map(|&x| x as usize)).collect();
    let total = g.cross_entropy_logits(logits, &flat, Some(PAD_ID as usize)).map_err(ModelError::from)?;
    Ok(g.scale(total, T::lit(1.0 / pairs.len() as f64)))
}

/// Mean over pairs of start plus end cross-entropy over all input positions.
pub fn span_batch_loss<'a, T: Scalar>(
    g: &mut Graph<'a, T>,
    model: &'a Seq2SeqModel<T>,
    bound: &Bound,
    pairs: &[&PromptPair],
    dropout: &mut Dropout<'_>,
) -> Result<Var, PromptError> {
    let spans: Vec<(usize, usize)> = pairs
        .iter()
        .map(|p| {
            p.gold_span
                .ok_or_else(|| PromptError::Contract(format!("example {} has no gold span", p.example_id)))
        })
        .collect::<Result<_, _>>()?;
    let inputs: Vec<&[TokenId]> = pairs.iter().map(|p| p.input_ids.as_slice()).collect();
    let (memory, packing) = model.encode_packed(g, bound, &inputs, dropout)?;
    let (start, end) = model.span_logits_packed(g, bound, memory)?;
    let mut terms = Vec::with_capacity(2 * pairs.len());
    for (i, &(s, e)) in spans.iter().enumerate() {
        let (off, len) = (packing.offsets[i], packing.lens[i]);
        for (logits, gold) in [(start, s), (end, e)] {
            let rows = g.slice_rows(logits, off, len).map_err(ModelError::from)?;
            let row = g.reshape(rows, vec![1, len]).map_err(ModelError::from)?;
            terms.push(g.cross_entropy_logits(row, &[gold], None).map_err(ModelError::from)?);
        }
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = g.add(total, t).map_err(ModelError::from)?;
    }
    Ok(g.scale(total, T::lit(1.0 / pairs.len() as f64)))
}

/// Dispatches on the objective of the first pair; all pairs must share it.
pub fn batch_loss<'a, T: Scalar>(
    g: &mut Graph<'a, T>,
    model: &'a Seq2SeqModel<T>,
    bound: &Bound,
    pairs: &[&PromptPair],
    dropout: &mut Dropout<'_>,
) -> Result<Var, PromptError> {
    let first = pairs
        .first()
        .ok_or_else(|| PromptError::Contract("empty batch".into()))?
        .objective;
    if pairs.iter().any(|p| p.objective != first) {
        return Err(PromptError::Contract("batch mixes objectives".into()));
    }
    if first.is_generative() {
        seq2seq_batch_loss(g, model, bound, pairs, dropout)
    } else {
        span_batch_loss(g, model, bound, pairs, dropout)
    }
}

/// Summed teacher-forced negative log-likelihood of the pair's target.
pub fn compute_seq2seq_loss<T: Scalar>(model: &Seq2SeqModel<T>, pair: &PromptPair) -> Result<Tensor<T>, PromptError> {
    if !pair.objective.is_generative() {
        return Err(PromptError::Contract("span selection has no sequence target".into()));
    }
    let mut g = Graph::new();
    let b = model.bind(&mut g);
    let loss = seq2seq_batch_loss(&mut g, model, &b, &[pair], &mut Dropout::off())?;
    Ok(g.tensor(loss))
}

/// Start plus end cross-entropy at the gold span.
pub fn compute_span_loss<T: Scalar>(model: &Seq2SeqModel<T>, pair: &PromptPair) -> Result<Tensor<T>, PromptError> {
    let mut g = Graph::new();
    let b = model.bind(&mut g);
    let loss = span_batch_loss(&mut g, model, &b, &[pair], &mut Dropout::off())?;
    Ok(g.tensor(loss))
}
