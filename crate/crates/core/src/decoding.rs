//! Greedy generation, answer extraction and span prediction.

use crate::autodiff::Scalar;
use crate::model::{DecoderCache, ModelError, Seq2SeqModel};
use crate::prompting::ObjectiveKind;
use crate::tokenizer::{TokenId, TokenizerError, Vocab, BOS_ID, EOS_ID};

/// Incremental next-token scorer. Implemented by the model and by test stubs.
pub trait StepDecoder {
    type State;
    type Logit: PartialOrd + Copy;

    fn start(&self, input_ids: &[TokenId]) -> Result<Self::State, ModelError>;

    /// Consumes `token` and returns logits for the next position.
    fn step(&self, state: &mut Self::State, token: TokenId) -> Result<Vec<Self::Logit>, ModelError>;
}

impl<T: Scalar> StepDecoder for Seq2SeqModel<T> {
    type State = DecoderCache<T>;
    type Logit = T;

    fn start(&self, input_ids: &[TokenId]) -> Result<Self::State, ModelError> {
        self.start_decoding(input_ids)
    }

    fn step(&self, state: &mut Self::State, token: TokenId) -> Result<Vec<T>, ModelError> {
        self.decode_step(state, token)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Eos,
    MaxSteps,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeResult {
    /// Generated tokens, including a final EOS when one was produced.
    pub generated_ids: Vec<TokenId>,
    pub text: String,
    pub steps_used: usize,
    pub stopped_by: StopReason,
}

#[derive(Debug, thiserror::Error)]
pub enum DecodeError {
    #[error("max_steps must be at least 1")]
    ZeroSteps,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
}

/// Index of the largest value; ties go to the lowest index and NaN never wins.
pub fn argmax<L: PartialOrd + Copy>(xs: &[L]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] || xs[best].partial_cmp(&xs[best]).is_none() {
            best = i;
        }
    }
    best
}

/// Greedy decoding from `<s>` until EOS or `max_steps` tokens.
pub fn greedy_decode<M: StepDecoder>(
    model: &M,
    vocab: &Vocab,
    input_ids: &[TokenId],
    max_steps: usize,
) -> Result<DecodeResult, DecodeError> {
    if max_steps == 0 {
        return Err(DecodeError::ZeroSteps);
    }
    let mut state = model.start(input_ids)?;
    let mut generated = Vec::new();
    let mut prev = BOS_ID;
    let mut stopped_by = StopReason::MaxSteps;
    while generated.len() < max_steps {
        let logits = model.step(&mut state, prev)?;
        let next = argmax(&logits) as TokenId;
        generated.push(next);
        if next == EOS_ID {
            stopped_by = StopReason::Eos;
            break;
        }
        prev = next;
    }
    Ok(DecodeResult {
        text: vocab.decode(&generated)?,
        steps_used: generated.len(),
        generated_ids: generated,
        stopped_by,
    })
}

/// Generation budget per objective: 50 for targets that restate the question,
/// 25 for the short answer-only targets.
pub fn default_max_steps(objective: ObjectiveKind) -> Option<usize> {
    match objective {
        ObjectiveKind::SpanSelection => None,
        ObjectiveKind::QuestionThenAnswer | ObjectiveKind::FullInputGeneration | ObjectiveKind::AnswerThenQuestion => {
            Some(50)
        }
        ObjectiveKind::SentinelAnswer | ObjectiveKind::AnswerOnlyGeneration => Some(25),
    }
}

const ANSWER_MARKER: &str = "Answer:";
const SECTION_MARKERS: [&str; 2] = ["Context:", "Question:"];

/// Pulls the answer out of generated text.
///
/// Takes the text after the last `Answer:` and cuts it at the first period
/// that is followed by the end of text or by `Context:` / `Question:`.
/// Answer-only generation returns the whole trimmed text. Returns an empty
/// string when no marker exists.
pub fn answer_extract(text: &str, objective: ObjectiveKind) -> String {
    if matches!(objective, ObjectiveKind::AnswerOnlyGeneration | ObjectiveKind::SpanSelection) {
        return text.trim().to_string();
    }
    let Some(pos) = text.rfind(ANSWER_MARKER) else {
        return String::new();
    };
    let rest = &text[pos + ANSWER_MARKER.len()..];
    for (i, _) in rest.match_indices('.') {
        let after = rest[i + 1..].trim_start();
        if after.is_empty() || SECTION_MARKERS.iter().any(|m| after.starts_with(m)) {
            return rest[..i].trim().to_string();
        }
    }
    rest.trim().to_string()
}

/// Highest-scoring `(start, end)` with `start ≤ end`, both in `range`,
/// maximizing `start_logits[s] + end_logits[e]`. Ties go to the earliest pair.
/// `max_len` optionally bounds `end - start + 1`.
pub fn predict_span<T: Scalar>(
    start_logits: &[T],
    end_logits: &[T],
    range: std::ops::Range<usize>,
    max_len: Option<usize>,
) -> Option<(usize, usize)> {
    let range = range.start..range.end.min(start_logits.len()).min(end_logits.len());
    let mut best: Option<((usize, usize), T)> = None;
    for s in range.clone() {
        let stop = max_len.map_or(range.end, |m| (s + m).min(range.end));
        for e in s..stop {
            let score = start_logits[s] + end_logits[e];
            if best.is_none_or(|(_, b)| score > b) {
                best = Some(((s, e), score));
            }
        }
    }
    best.map(|(p, _)| p)
}
