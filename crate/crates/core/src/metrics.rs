//! SQuAD-style answer scoring and seed aggregation.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// Lowercases, strips ASCII punctuation, drops the articles a/an/the and
/// collapses whitespace.
pub fn normalize_text(s: &str) -> String {
    let lower = s.to_lowercase();
    let no_punct: String = lower.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    no_punct
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn f1_single(prediction: &str, gold: &str) -> f64 {
    let p = normalize_text(prediction);
    let g = normalize_text(gold);
    let pt: Vec<&str> = p.split_whitespace().collect();
    let gt: Vec<&str> = g.split_whitespace().collect();
    if pt.is_empty() || gt.is_empty() {
        return if pt.is_empty() && gt.is_empty() { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gt {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &pt {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pt.len() as f64;
    let recall = common as f64 / gt.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Best token F1 in `[0, 1]` against any gold answer. Returns 0 when `golds`
/// is empty.
pub fn token_f1<S: AsRef<str>>(prediction: &str, golds: &[S]) -> f64 {
    golds
        .iter()
        .map(|g| f1_single(prediction, g.as_ref()))
        .fold(0.0, f64::max)
}

/// 1 when the normalized prediction equals some normalized gold answer.
pub fn exact_match<S: AsRef<str>>(prediction: &str, golds: &[S]) -> u8 {
    let p = normalize_text(prediction);
    u8::from(golds.iter().any(|g| normalize_text(g.as_ref()) == p))
}

/// Corpus-level scores in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub exact_match: f64,
    pub f1: f64,
    pub n_examples: usize,
}

impl EvalResult {
    /// Averages `(prediction, golds)` scores; `None` for an empty set.
    pub fn score<'a, S, I>(items: I) -> Option<Self>
    where
        S: AsRef<str> + 'a,
        I: IntoIterator<Item = (&'a str, &'a [S])>,
    {
        let (mut em, mut f1, mut n) = (0.0, 0.0, 0usize);
        for (pred, golds) in items {
            em += f64::from(exact_match(pred, golds));
            f1 += token_f1(pred, golds);
            n += 1;
        }
        (n > 0).then(|| Self {
            exact_match: 100.0 * em / n as f64,
            f1: 100.0 * f1 / n as f64,
            n_examples: n,
        })
    }
}

/// Mean and population standard deviation over runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateCell {
    pub mean: f64,
    pub std: f64,
    pub n_runs: usize,
}

impl AggregateCell {
    /// `mean±std` with one decimal each.
    pub fn render(&self) -> String {
        format!("{:.1}±{:.1}", self.mean, self.std)
    }
}

/// `None` for an empty list.
pub fn aggregate(scores: &[f64]) -> Option<AggregateCell> {
    if scores.is_empty() {
        return None;
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    Some(AggregateCell {
        mean,
        std: var.sqrt(),
        n_runs: scores.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization() {
        assert_eq!(normalize_text("The Cat."), "cat");
        assert_eq!(normalize_text(""), "");
        assert_eq!(normalize_text("a  an the x"), "x");
        assert_eq!(normalize_text("Theory, and\tthem!"), "theory and them");
    }

    #[test]
    fn f1_cases() {
        // "the" is dropped by normalization, so precision is 1 and recall 2/3.
        assert!((token_f1("the cat sat", &["cat sat down"]) - 0.8).abs() < 1e-12);
        assert!((token_f1("cat sat mat", &["cat sat down"]) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(token_f1("x y", &["x y"]), 1.0);
        assert_eq!(token_f1("x", &["y"]), 0.0);
        assert_eq!(token_f1("the", &["a"]), 1.0);
        assert_eq!(token_f1("", &["cat"]), 0.0);
        assert_eq!(token_f1("cat cat", &["cat"]), 2.0 / 3.0);
        assert_eq!(token_f1("dog", &["cat", "dog"]), 1.0);
    }

    #[test]
    fn em_cases() {
        assert_eq!(exact_match("The Cat", &["the cat"]), 1);
        assert_eq!(exact_match("a cat", &["cat"]), 1);
        assert_eq!(exact_match("dog", &["cat"]), 0);
    }

    #[test]
    fn aggregation() {
        let c = aggregate(&[10.0, 10.0, 10.0]).unwrap();
        assert_eq!((c.mean, c.std, c.n_runs), (10.0, 0.0, 3));
        let c = aggregate(&[0.0, 10.0]).unwrap();
        assert_eq!((c.mean, c.std), (5.0, 5.0));
        assert_eq!(aggregate(&[4.5]).unwrap().std, 0.0);
        assert!(aggregate(&[]).is_none());
        let cell = AggregateCell {
            mean: 55.5,
            std: 2.0,
            n_runs: 5,
        };
        assert_eq!(cell.render(), "55.5±2.0");
    }

    #[test]
    fn corpus_scores() {
        let golds = [vec!["cat".to_string()], vec!["dog".to_string()]];
        let preds = ["cat", "the dog barked"];
        let r = EvalResult::score(preds.iter().copied().zip(golds.iter().map(Vec::as_slice))).unwrap();
        assert_eq!(r.n_examples, 2);
        assert_eq!(r.exact_match, 50.0);
        assert!((r.f1 - 100.0 * (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-9);
    }
}
