//! Self-supervised corruption for the two pretraining styles.
//!
//! Whole-sequence denoising replaces each selected span with one `<mask>` and
//! asks for the original sequence back. Span infilling replaces the k-th span
//! with sentinel k and asks only for the removed spans, each introduced by its
//! sentinel.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenizer::{is_special, sentinel_id, TokenId, EOS_ID, MASK_ID, NUM_SENTINELS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CorruptionStyle {
    BartDenoise,
    T5SpanInfill,
}

#[derive(Debug, Error, PartialEq)]
pub enum CorruptionError {
    #[error("{count} spans exceed the {NUM_SENTINELS} available sentinels")]
    TooManySpans { count: usize },
    #[error("invalid spans: {0}")]
    InvalidSpans(String),
    #[error("corruption parameters: {0}")]
    Config(String),
}

/// `(start, length)` over the sequence that was corrupted.
pub type Span = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorruptionSample {
    pub style: CorruptionStyle,
    pub corrupted_ids: Vec<TokenId>,
    pub target_ids: Vec<TokenId>,
    pub masked_spans: Vec<Span>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionConfig {
    pub corruption_rate: f64,
    pub mean_span_len: f64,
    /// Shuffles sentences before masking (denoising style only).
    pub shuffle_sentences: bool,
    /// Token that closes a sentence, used when shuffling.
    pub sentence_end: Option<TokenId>,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            corruption_rate: 0.15,
            mean_span_len: 3.0,
            shuffle_sentences: false,
            sentence_end: None,
        }
    }
}

fn check_params(rate: f64, mean_span_len: f64) -> Result<(), CorruptionError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(CorruptionError::Config(format!("corruption_rate {rate} outside [0, 1)")));
    }
    if !(mean_span_len >= 1.0) {
        return Err(CorruptionError::Config(format!("mean_span_len {mean_span_len} below 1")));
    }
    Ok(())
}

/// Chooses non-overlapping spans of non-special tokens covering about
/// `rate` of the eligible tokens.
///
/// The token budget is `rate · eligible`, rounded stochastically so the
/// expected masked fraction is exact. Span lengths are geometric with mean
/// `mean_span_len`, clipped to the remaining budget and sequence. Spans are
/// placed by rejection and always keep at least one unmasked token between
/// them. Returned spans are sorted by start.
pub fn select_spans<R: Rng + ?Sized>(
    ids: &[TokenId],
    rate: f64,
    mean_span_len: f64,
    rng: &mut R,
) -> Result<Vec<Span>, CorruptionError> {
    check_params(rate, mean_span_len)?;
    let eligible = ids.iter().filter(|&&t| !is_special(t)).count();
    let exact = rate * eligible as f64;
    let mut budget = exact.floor() as usize;
    if rng.random::<f64>() < exact - exact.floor() {
        budget += 1;
    }
    let geometric = Geometric::new(1.0 / mean_span_len).expect("p in (0, 1]");
    let mut taken = vec![false; ids.len()];
    let mut spans = Vec::new();
    let mut attempts = 0;
    while budget > 0 && attempts < 64 * ids.len().max(1) {
        attempts += 1;
        let want = (geometric.sample(rng) as usize + 1).min(budget);
        let start = rng.random_range(0..ids.len());
        let len = want.min(ids.len() - start);
        let end = start + len;
        let blocked = |i: usize| taken[i] || is_special(ids[i]);
        if (start..end).any(blocked) {
            continue;
        }
        if (start > 0 && taken[start - 1]) || (end < ids.len() && taken[end]) {
            continue;
        }
        taken[start..end].iter_mut().for_each(|t| *t = true);
        spans.push((start, len));
        budget -= len;
    }
    spans.sort_unstable();
    Ok(spans)
}

fn validate_spans(ids: &[TokenId], spans: &[Span]) -> Result<(), CorruptionError> {
    let mut prev_end = None;
    for &(start, len) in spans {
        if len == 0 || start + len > ids.len() {
            return Err(CorruptionError::InvalidSpans(format!(
                "span ({start}, {len}) outside sequence of length {}",
                ids.len()
            )));
        }
        if prev_end.is_some_and(|e| start < e) {
            return Err(CorruptionError::InvalidSpans("spans overlap or are unsorted".into()));
        }
        prev_end = Some(start + len);
    }
    Ok(())
}

/// Replaces each span with the token produced by `marker(k)`.
fn replace_spans(ids: &[TokenId], spans: &[Span], marker: impl Fn(usize) -> TokenId) -> Vec<TokenId> {
    let mut out = Vec::with_capacity(ids.len());
    let mut i = 0;
    for (k, &(start, len)) in spans.iter().enumerate() {
        out.extend_from_slice(&ids[i..start]);
        out.push(marker(k));
        i = start + len;
    }
    out.extend_from_slice(&ids[i..]);
    out
}

/// Denoising sample for fixed spans. The target is the sequence itself.
pub fn apply_bart(ids: &[TokenId], spans: &[Span]) -> Result<CorruptionSample, CorruptionError> {
    validate_spans(ids, spans)?;
    Ok(CorruptionSample {
        style: CorruptionStyle::BartDenoise,
        corrupted_ids: replace_spans(ids, spans, |_| MASK_ID),
        target_ids: ids.to_vec(),
        masked_spans: spans.to_vec(),
    })
}

/// Infilling sample for fixed spans.
pub fn apply_t5(ids: &[TokenId], spans: &[Span]) -> Result<CorruptionSample, CorruptionError> {
    validate_spans(ids, spans)?;
    if spans.len() > NUM_SENTINELS {
        return Err(CorruptionError::TooManySpans { count: spans.len() });
    }
    let sentinel = |k: usize| sentinel_id(k).expect("checked against NUM_SENTINELS");
    let mut target = Vec::new();
    for (k, &(start, len)) in spans.iter().enumerate() {
        target.push(sentinel(k));
        target.extend_from_slice(&ids[start..start + len]);
    }
    target.push(EOS_ID);
    Ok(CorruptionSample {
        style: CorruptionStyle::T5SpanInfill,
        corrupted_ids: replace_spans(ids, spans, sentinel),
        target_ids: target,
        masked_spans: spans.to_vec(),
    })
}

/// Splits after every `end` token and shuffles the pieces.
fn shuffle_sentences<R: Rng + ?Sized>(ids: &[TokenId], end: TokenId, rng: &mut R) -> Vec<TokenId> {
    let mut sentences: Vec<&[TokenId]> = ids.split_inclusive(|&t| t == end).collect();
    sentences.shuffle(rng);
    sentences.concat()
}

pub fn corrupt_bart<R: Rng + ?Sized>(
    ids: &[TokenId],
    corruption_rate: f64,
    mean_span_len: f64,
    rng: &mut R,
) -> Result<CorruptionSample, CorruptionError> {
    let spans = select_spans(ids, corruption_rate, mean_span_len, rng)?;
    apply_bart(ids, &spans)
}

pub fn corrupt_t5<R: Rng + ?Sized>(
    ids: &[TokenId],
    corruption_rate: f64,
    mean_span_len: f64,
    rng: &mut R,
) -> Result<CorruptionSample, CorruptionError> {
    let spans = select_spans(ids, corruption_rate, mean_span_len, rng)?;
    apply_t5(ids, &spans)
}

/// Corrupts `ids` in the given style. With sentence shuffling enabled the
/// denoising input is built from the shuffled sequence, so its spans index
/// that sequence, while the target stays the original order.
pub fn corrupt<R: Rng + ?Sized>(
    ids: &[TokenId],
    style: CorruptionStyle,
    config: &CorruptionConfig,
    rng: &mut R,
) -> Result<CorruptionSample, CorruptionError> {
    match style {
        CorruptionStyle::T5SpanInfill => corrupt_t5(ids, config.corruption_rate, config.mean_span_len, rng),
        CorruptionStyle::BartDenoise => match (config.shuffle_sentences, config.sentence_end) {
            (true, Some(end)) => {
                let shuffled = shuffle_sentences(ids, end, rng);
                let spans = select_spans(&shuffled, config.corruption_rate, config.mean_span_len, rng)?;
                let mut sample = apply_bart(&shuffled, &spans)?;
                sample.target_ids = ids.to_vec();
                Ok(sample)
            }
            (true, None) => Err(CorruptionError::Config("sentence shuffling needs sentence_end".into())),
            (false, _) => corrupt_bart(ids, config.corruption_rate, config.mean_span_len, rng),
        },
    }
}

/// Rebuilds the uncorrupted sequence from a sample.
pub fn reconstruct(sample: &CorruptionSample) -> Result<Vec<TokenId>, CorruptionError> {
    match sample.style {
        CorruptionStyle::BartDenoise => Ok(sample.target_ids.clone()),
        CorruptionStyle::T5SpanInfill => {
            let body = match sample.target_ids.split_last() {
                Some((&EOS_ID, body)) => body,
                _ => return Err(CorruptionError::InvalidSpans("target lacks final EOS".into())),
            };
            let mut fills = Vec::new();
            let mut rest = body;
            for k in 0..sample.masked_spans.len() {
                let (&head, tail) = rest
                    .split_first()
                    .ok_or_else(|| CorruptionError::InvalidSpans("target ends early".into()))?;
                if Some(head) != sentinel_id(k) {
                    return Err(CorruptionError::InvalidSpans(format!("expected sentinel {k}")));
                }
                let len = sample.masked_spans[k].1;
                if tail.len() < len {
                    return Err(CorruptionError::InvalidSpans("span body truncated".into()));
                }
                fills.push(&tail[..len]);
                rest = &tail[len..];
            }
            let mut out = Vec::new();
            for &id in &sample.corrupted_ids {
                match (0..fills.len()).find(|&k| sentinel_id(k) == Some(id)) {
                    Some(k) => out.extend_from_slice(fills[k]),
                    None => out.push(id),
                }
            }
            Ok(out)
        }
    }
}
