//! QA data: the synthetic fact-lookup task, MRQA-style files and the
//! few-shot split protocol.

mod mrqa;
mod synthetic;

pub use mrqa::{load_mrqa, parse_mrqa, write_mrqa, LoadReport, SkippedRecord};
pub use synthetic::{gen_synthetic, SyntheticConfig};

use std::collections::HashSet;
use std::io::{BufRead, Write};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompting::{encode_input, ObjectiveKind, PromptError};
use crate::tokenizer::Vocab;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("format: {0}")]
    Format(String),
    #[error("need at least {needed} examples, have {available}")]
    Size { needed: usize, available: usize },
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAExample {
    pub id: String,
    pub question: String,
    pub context: String,
    pub answers: Vec<String>,
}

impl QAExample {
    /// Builds an example, deduplicating answers; `None` if a field is empty.
    pub fn new(id: String, question: String, context: String, answers: Vec<String>) -> Option<Self> {
        let mut seen = HashSet::new();
        let answers: Vec<String> = answers
            .into_iter()
            .filter(|a| !a.trim().is_empty() && seen.insert(a.clone()))
            .collect();
        let ok = !id.is_empty() && !question.trim().is_empty() && !context.trim().is_empty() && !answers.is_empty();
        ok.then_some(Self {
            id,
            question,
            context,
            answers,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FewshotSplit {
    pub train: Vec<QAExample>,
    pub dev: Vec<QAExample>,
    pub test: Vec<QAExample>,
    pub seed: u64,
    pub source_name: String,
}

impl FewshotSplit {
    /// Checks equal train/dev sizes and pairwise id disjointness.
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.train.len() != self.dev.len() || self.train.is_empty() {
            return Err(DatasetError::Format(format!(
                "train has {} examples, dev {}",
                self.train.len(),
                self.dev.len()
            )));
        }
        let mut seen = HashSet::new();
        for ex in self.train.iter().chain(&self.dev).chain(&self.test) {
            if !seen.insert(ex.id.as_str()) {
                return Err(DatasetError::Format(format!("id {} appears twice in the split", ex.id)));
            }
        }
        Ok(())
    }
}

/// Samples `2n` examples without replacement: the first `n` train, the next
/// `n` dev; all remaining examples form the test set in their original order.
pub fn sample_fewshot(data: &[QAExample], n: usize, seed: u64, source_name: &str) -> Result<FewshotSplit, DatasetError> {
    if n == 0 {
        return Err(DatasetError::Config("few-shot size must be positive".into()));
    }
    if data.len() < 2 * n + 1 {
        return Err(DatasetError::Size {
            needed: 2 * n + 1,
            available: data.len(),
        });
    }
    let mut ids = HashSet::new();
    if let Some(dup) = data.iter().find(|e| !ids.insert(e.id.as_str())) {
        return Err(DatasetError::Format(format!("duplicate example id {}", dup.id)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = index::sample(&mut rng, data.len(), 2 * n).into_vec();
    let mut used = vec![false; data.len()];
    picked.iter().for_each(|&i| used[i] = true);
    let take = |idx: &[usize]| idx.iter().map(|&i| data[i].clone()).collect::<Vec<_>>();
    Ok(FewshotSplit {
        train: take(&picked[..n]),
        dev: take(&picked[n..]),
        test: data.iter().zip(&used).filter(|(_, &u)| !u).map(|(e, _)| e.clone()).collect(),
        seed,
        source_name: source_name.to_string(),
    })
}

/// Golden-file form of a split: `train`/`dev` section lines followed by ids.
pub fn write_split_ids<W: Write>(mut w: W, split: &FewshotSplit) -> std::io::Result<()> {
    for (name, part) in [("train", &split.train), ("dev", &split.dev)] {
        writeln!(w, "# {name}")?;
        for ex in part {
            writeln!(w, "{}", ex.id)?;
        }
    }
    Ok(())
}

/// Reads a file written by [`write_split_ids`] into `(train ids, dev ids)`.
pub fn read_split_ids<R: BufRead>(r: R) -> Result<(Vec<String>, Vec<String>), DatasetError> {
    let (mut train, mut dev) = (Vec::new(), Vec::new());
    let mut section = None;
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        match line {
            "" => {}
            "# train" => section = Some(0),
            "# dev" => section = Some(1),
            id => match section {
                Some(0) => train.push(id.to_string()),
                Some(_) => dev.push(id.to_string()),
                None => {
                    return Err(DatasetError::Parse {
                        line: i + 1,
                        message: "id before any section header".into(),
                    })
                }
            },
        }
    }
    Ok((train, dev))
}

/// Nearest-rank percentile: the value at 1-based rank `ceil(p · N)` of the
/// sorted data. `None` for empty input.
pub fn percentile_nearest_rank(values: &[usize], p: f64) -> Option<usize> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let rank = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Some(sorted[rank - 1])
}

/// 99th-percentile tokenized input length over `dev` for `objective`.
pub fn compute_max_len(dev: &[QAExample], vocab: &Vocab, objective: ObjectiveKind) -> Result<usize, DatasetError> {
    let lengths = dev
        .iter()
        .map(|ex| encode_input(vocab, &ex.question, &ex.context, objective, usize::MAX).map(|(ids, _)| ids.len()))
        .collect::<Result<Vec<_>, _>>()?;
    percentile_nearest_rank(&lengths, 0.99).ok_or_else(|| DatasetError::Size {
        needed: 1,
        available: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(n: usize) -> Vec<QAExample> {
        (0..n)
            .map(|i| QAExample::new(format!("q{i}"), "what".into(), "ctx".into(), vec!["a".into()]).unwrap())
            .collect()
    }

    #[test]
    fn nearest_rank() {
        let v: Vec<usize> = (1..=100).collect();
        assert_eq!(percentile_nearest_rank(&v, 0.99), Some(99));
        assert_eq!(percentile_nearest_rank(&[7; 13], 0.99), Some(7));
        assert_eq!(percentile_nearest_rank(&[42], 0.99), Some(42));
        assert_eq!(percentile_nearest_rank(&[], 0.99), None);
    }

    #[test]
    fn sampling_contract() {
        let d = data(40);
        let s = sample_fewshot(&d, 16, 7, "toy").unwrap();
        assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (16, 16, 8));
        s.validate().unwrap();
        assert_eq!(s, sample_fewshot(&d, 16, 7, "toy").unwrap());
        assert!(matches!(sample_fewshot(&d, 20, 7, "toy"), Err(DatasetError::Size { .. })));
        assert!(sample_fewshot(&d, 0, 7, "toy").is_err());
    }

    #[test]
    fn examples_enforce_invariants() {
        assert!(QAExample::new("x".into(), "q".into(), "c".into(), vec![]).is_none());
        assert!(QAExample::new("x".into(), " ".into(), "c".into(), vec!["a".into()]).is_none());
        let e = QAExample::new("x".into(), "q".into(), "c".into(), vec!["a".into(), "a".into(), "b".into()]).unwrap();
        assert_eq!(e.answers, vec!["a", "b"]);
    }

    #[test]
    fn split_id_file_round_trip() {
        let s = sample_fewshot(&data(10), 3, 1, "toy").unwrap();
        let mut buf = Vec::new();
        write_split_ids(&mut buf, &s).unwrap();
        let (train, dev) = read_split_ids(buf.as_slice()).unwrap();
        assert_eq!(train, s.train.iter().map(|e| e.id.clone()).collect::<Vec<_>>());
        assert_eq!(dev, s.dev.iter().map(|e| e.id.clone()).collect::<Vec<_>>());
    }
}
