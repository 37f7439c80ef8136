//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use fewshot_qa::autodiff::gradcheck::{check_gradients, GradCheckReport};
use fewshot_qa::autodiff::{AutodiffError, Graph, Segment, Tensor, Var};
use fewshot_qa::datasets::QAExample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let values = (0..n).map(|_| scale * (rng.random::<f64>() * 2.0 - 1.0)).collect();
    Tensor::parameter(shape.to_vec(), values).unwrap()
}

/// Non-uniform scalar readout so every output element gets its own upstream
/// gradient: `Σ out ⊙ w` with a fixed random `w`.
fn readout(g: &mut Graph<'_, f64>, out: Var, seed: u64) -> Result<Var, AutodiffError> {
    let shape = g.shape(out).to_vec();
    let w = randn(&mut rng(seed ^ 0x5eed), &shape, 1.0).with_requires_grad(false);
    let w = g.constant(w);
    let prod = g.mul(out, w)?;
    Ok(g.sum(prod))
}

/// One randomized finite-difference case of an operation.
pub type OpCase = fn(u64) -> GradCheckReport;

fn dims(r: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (r.random_range(1..5), r.random_range(1..6), r.random_range(1..5))
}

fn case_matmul(seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let (m, k, n) = dims(&mut r);
    let inputs = [randn(&mut r, &[m, k], 1.0), randn(&mut r, &[k, n], 1.0)];
    check_gradients(&inputs, H, |g, v| {
        let y = g.matmul(v[0], v[1])?;
        readout(g, y, seed)
    })
    .unwrap()
}

fn case_matmul_nt(seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let (m, k, n) = dims(&mut r);
    let inputs = [randn(&mut r, &[m, k], 1.0), randn(&mut r, &[n, k], 1.0)];
    check_gradients(&inputs, H, |g, v| {
        let y = g.matmul_nt(v[0], v[1])?;
        readout(g, y, seed)
    })
    .unwrap()
}

fn case_add(seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let (m, n, _) = dims(&mut r);
    let inputs = [randn(&mut r, &[m, n], 1.0), randn(&mut r, &[m, n], 1.0)];
    check_gradients(&inputs, H, |g, v| {
        let y = g.add(v[0], v[1])?;
        readout(g, y, seed)
    })
    .unwrap()
}

fn case_mul(seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let (m, n, _) = dims(&mut r);
    let inputs = [randn(&mut r, &[m, n], 1.0), randn(&mut r, &[m, n], 1.0)];
    check_gradients(&inputs, H, |g, v| {
        let y = g.mul(v[0], v[1])?;
        readout(g, y, seed)
    })
    .unwrap()
}

fn case_add_bias(seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let (m, n, _) = dims(&mut r);
    let inputs = [randn(&mut r, &[m, n], 1.0), randn(&mut r, &[n], 1.0)];
    check_gradients(&inputs, H, |g, v| {
        let y = g.add_bias(v[0], v[1])?;
        readout(g, y, seed)
    })
    .unwrap()
}

fn case_scale(seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let (m, n, _) = dims(&mut r);
    let c = r.random::<f64>() * 4.0 - 2.0;
    let inputs = [randn(&mut r, &[m, n], 1.0)];
    check_gradients(&inputs, H, |g, v| {
        let y = g.scale(v[0], c);
        readout(g, y, seed)
    })
    .unwrap()
}

fn case_gelu(seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let (m, n, _) = dims(&mut r);
    let inputs = [randn(&mut r, &[m, n], 3.0)];
    check_gradients(&inputs, H, |g, v| {
        let y = g.gelu(v[0]);
        readout(g, y, seed)
    })
    .unwrap()
}

fn case_layer_norm(seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let m = r.random_range(1..5);
    let n = r.random_range(2..7);
    let inputs = [randn(&mut r, &[m, n], 2.0), randn(&mut r, &[n], 1.0), randn(&mut r, &[n], 1.0)];
    check_gradients(&inputs, H, |g, v| {
        let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
        readout(g, y, seed)
    })
    .unwrap()
}

fn case_embedding(seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let vocab = r.random_range(2..8);
    let d = r.random_range(1..5);
    let n = r.random_range(1..7);
    // Repeated ids exercise gradient accumulation into one row.
    let ids: Vec<usize> = (0..n).map(|_| r.random_range(0..vocab)).collect();
    let inputs = [randn(&mut r, &[vocab, d], 1.0)];
    check_gradients(&inputs, H, |g, v| {
        let y = g.embedding(v[0], &ids)?;
        readout(g, y, seed)
    })
    .unwrap()
}

fn case_softmax_rows(seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let (m, n, _) = dims(&mut r);
    let inputs = [randn(&mut r, &[m, n + 1], 3.0)];
    check_gradients(&inputs, H, |g, v| {
        let y = g.softmax_rows(v[0]);
        readout(g, y, seed)
    })
    .unwrap()
}

/// Random segment layout over `n` rows: square blocks, optionally causal, or
/// rectangular cross blocks against `nk` keys.
fn case_attention_with(seed: u64, causal: bool, cross: bool) -> GradCheckReport {
    let mut r = rng(seed);
    let heads = r.random_range(1..3);
    let d = heads * r.random_range(1..4);
    let n_segments = r.random_range(1..3);
    let mut segments = Vec::new();
    let (mut nq, mut nk) = (0, 0);
    for _ in 0..n_segments {
        let lq = r.random_range(1..4);
        let lk = if cross { r.random_range(1..5) } else { lq };
        segments.push(Segment::new(nq, lq, nk, lk));
        nq += lq;
        nk += lk;
    }
    let inputs = [
        randn(&mut r, &[nq, d], 1.0),
        randn(&mut r, &[nk, d], 1.0),
        randn(&mut r, &[nk, d], 1.0),
    ];
    check_gradients(&inputs, H, |g, v| {
        let y = g.attention(v[0], v[1], v[2], heads, &segments, causal)?;
        readout(g, y, seed)
    })
    .unwrap()
}

fn case_attention(seed: u64) -> GradCheckReport {
    case_attention_with(seed, false, false)
}

fn case_attention_causal(seed: u64) -> GradCheckReport {
    case_attention_with(seed, true, false)
}

fn case_attention_cross(seed: u64) -> GradCheckReport {
    case_attention_with(seed, false, true)
}

fn case_cross_entropy(seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let n = r.random_range(1..6);
    let vocab = r.random_range(2..7);
    let mut targets: Vec<usize> = (0..n).map(|_| r.random_range(0..vocab)).collect();
    // Some cases ignore one class; at least one row must stay live.
    let ignore = (seed % 2 == 0).then_some(0usize);
    if ignore.is_some() && targets.iter().all(|&t| t == 0) {
        targets[0] = vocab - 1;
    }
    let inputs = [randn(&mut r, &[n, vocab], 3.0)];
    check_gradients(&inputs, H, |g, v| g.cross_entropy_logits(v[0], &targets, ignore)).unwrap()
}

fn case_slice_rows(seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let m = r.random_range(2..7);
    let n = r.random_range(1..5);
    let start = r.random_range(0..m);
    let len = r.random_range(1..=m - start);
    let inputs = [randn(&mut r, &[m, n], 1.0)];
    check_gradients(&inputs, H, |g, v| {
        let y = g.slice_rows(v[0], start, len)?;
        readout(g, y, seed)
    })
    .unwrap()
}

fn case_reshape(seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let (m, n, _) = dims(&mut r);
    let inputs = [randn(&mut r, &[m, n], 1.0)];
    check_gradients(&inputs, H, |g, v| {
        let y = g.reshape(v[0], vec![n, m])?;
        // A following matmul makes the reshaped layout matter.
        let sq = g.matmul(y, v[0])?;
        readout(g, sq, seed)
    })
    .unwrap()
}

fn case_sum(seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let (m, n, _) = dims(&mut r);
    let inputs = [randn(&mut r, &[m, n], 1.0)];
    check_gradients(&inputs, H, |g, v| {
        let sq = g.mul(v[0], v[0])?;
        Ok(g.sum(sq))
    })
    .unwrap()
}

fn case_dropout(seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let (m, n, _) = dims(&mut r);
    let inputs = [randn(&mut r, &[m, n], 1.0)];
    // The mask is redrawn from the same seed on every evaluation.
    check_gradients(&inputs, H, |g, v| {
        let y = g.dropout(v[0], 0.3, &mut rng(seed ^ 0xd0));
        readout(g, y, seed)
    })
    .unwrap()
}

/// A small composite: linear, GELU, layer norm and cross entropy.
fn case_composite(seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let n = r.random_range(1..4);
    let d = r.random_range(2..5);
    let vocab = r.random_range(2..6);
    let targets: Vec<usize> = (0..n).map(|_| r.random_range(0..vocab)).collect();
    let inputs = [
        randn(&mut r, &[n, d], 1.0),
        randn(&mut r, &[d, d], 1.0),
        randn(&mut r, &[d], 0.5),
        randn(&mut r, &[d], 1.0),
        randn(&mut r, &[d], 0.5),
        randn(&mut r, &[vocab, d], 1.0),
    ];
    check_gradients(&inputs, H, |g, v| {
        let h = g.matmul(v[0], v[1])?;
        let h = g.add_bias(h, v[2])?;
        let h = g.gelu(h);
        let h = g.layer_norm(h, v[3], v[4], 1e-5)?;
        let logits = g.matmul_nt(h, v[5])?;
        g.cross_entropy_logits(logits, &targets, None)
    })
    .unwrap()
}

pub const OPS: &[(&str, OpCase)] = &[
    ("matmul", case_matmul),
    ("matmul_nt", case_matmul_nt),
    ("add", case_add),
    ("mul", case_mul),
    ("add_bias", case_add_bias),
    ("scale", case_scale),
    ("gelu", case_gelu),
    ("layer_norm", case_layer_norm),
    ("embedding", case_embedding),
    ("softmax_rows", case_softmax_rows),
    ("attention", case_attention),
    ("attention_causal", case_attention_causal),
    ("attention_cross", case_attention_cross),
    ("cross_entropy_logits", case_cross_entropy),
    ("slice_rows", case_slice_rows),
    ("reshape", case_reshape),
    ("sum", case_sum),
    ("dropout", case_dropout),
    ("composite", case_composite),
];

/// Worst relative error of one op over `cases` seeds.
pub fn worst_error(case: OpCase, cases: u64) -> f64 {
    (0..cases).map(|s| case(1000 + s).max_relative_error()).fold(0.0, f64::max)
}

/// Independent SQuAD-style scorer: normalizes character by character and
/// counts overlap by brute-force matching instead of a count table.
pub mod oracle {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub fn normalize(s: &str) -> Vec<String> {
        let mut cleaned = String::new();
        for ch in s.chars() {
            let lower = ch.to_lowercase().collect::<String>();
            if !ch.is_ascii_punctuation() {
                cleaned.push_str(&lower);
            }
        }
        cleaned
            .split(char::is_whitespace)
            .filter(|w| !w.is_empty() && *w != "a" && *w != "an" && *w != "the")
            .map(str::to_string)
            .collect()
    }

    fn overlap(pred: &[String], gold: &[String]) -> usize {
        let mut used = vec![false; gold.len()];
        let mut hits = 0;
        for p in pred {
            for (j, g) in gold.iter().enumerate() {
                if !used[j] && p == g {
                    used[j] = true;
                    hits += 1;
                    break;
                }
            }
        }
        hits
    }

    pub fn f1(pred: &str, golds: &[String]) -> f64 {
        let p = normalize(pred);
        let mut best = 0.0f64;
        for gold in golds {
            let g = normalize(gold);
            let score = if p.is_empty() || g.is_empty() {
                if p.is_empty() && g.is_empty() {
                    1.0
                } else {
                    0.0
                }
            } else {
                let common = overlap(&p, &g) as f64;
                if common == 0.0 {
                    0.0
                } else {
                    let precision = common / p.len() as f64;
                    let recall = common / g.len() as f64;
                    2.0 * precision * recall / (precision + recall)
                }
            };
            best = best.max(score);
        }
        best
    }

    pub fn em(pred: &str, golds: &[String]) -> u8 {
        let p = normalize(pred);
        u8::from(golds.iter().any(|g| normalize(g) == p))
    }

    const POOL: &[&str] = &["the", "The", "a", "an", "cat", "Cat", "sat", "down", "mat", "dog.", "dog", "on,", "(x)", "42", "sat!"];

    fn phrase(rng: &mut ChaCha8Rng) -> String {
        let n = rng.random_range(0..6);
        let sep = if rng.random_bool(0.2) { "  " } else { " " };
        (0..n).map(|_| POOL[rng.random_range(0..POOL.len())]).collect::<Vec<_>>().join(sep)
    }

    /// 48 random cases plus the two fixed worked cases.
    pub fn cases() -> Vec<(String, Vec<String>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut out = vec![
            ("cat sat mat".to_string(), vec!["cat sat down".to_string()]),
            ("the cat sat".to_string(), vec!["cat sat down".to_string()]),
        ];
        while out.len() < 50 {
            let golds = (0..rng.random_range(1..4)).map(|_| phrase(&mut rng)).collect();
            out.push((phrase(&mut rng), golds));
        }
        out
    }
}

/// Random QA examples over a small lowercase word list. Answers are one to
/// three context words and never contain `Answer:`-style markers.
pub fn random_examples(n: usize, seed: u64) -> Vec<QAExample> {
    const WORDS: &[&str] = &[
        "alpha", "beta", "gamma", "delta", "river", "stone", "city", "north", "blue", "seven", "tower", "lake", "x",
        "y", "z", "42", "1990", "cat", "dog", "paris",
    ];
    let mut r = rng(seed);
    let pick = |r: &mut ChaCha8Rng, k: usize| (0..k).map(|_| WORDS[r.random_range(0..WORDS.len())]).collect::<Vec<_>>();
    (0..n)
        .map(|i| {
            let q = format!("who is {}", { let k = r.random_range(1..4); pick(&mut r, k) }.join(" "));
            let mut context_words = { let k = r.random_range(4..12); pick(&mut r, k) };
            let a_len = r.random_range(1..4).min(context_words.len());
            let a_start = r.random_range(0..=context_words.len() - a_len);
            let answer = context_words[a_start..a_start + a_len].join(" ");
            context_words.push(".");
            let context = context_words.join(" ").replace(" .", ".");
            QAExample::new(format!("ex{i}"), q, context, vec![answer]).unwrap()
        })
        .collect()
}

/// Outcome of fitting a fresh desk model to four prompt pairs.
pub struct Overfit {
    /// First step whose loss fell below the threshold.
    pub reached_at: Option<usize>,
    pub final_loss: f64,
    pub seconds: f64,
}

/// Trains the desk model from scratch on four synthetic pairs with the desk
/// learning rate, one full batch per step, for at most `max_steps` steps.
/// The loss is the summed target negative log-likelihood per pair.
pub fn overfit_four_pairs(objective: fewshot_qa::prompting::ObjectiveKind, threshold: f64, max_steps: usize) -> Overfit {
    use fewshot_qa::autodiff::AdamState;
    use fewshot_qa::datasets::{gen_synthetic, SyntheticConfig};
    use fewshot_qa::harness::{Model, Preset};
    use fewshot_qa::model::{Dropout, ModelConfig};
    use fewshot_qa::prompting::{batch_loss, build_pair};
    use fewshot_qa::tokenizer::Vocab;

    let t0 = std::time::Instant::now();
    let cfg = SyntheticConfig {
        n_examples: 4,
        n_pretrain_docs: 1,
        ..SyntheticConfig::default()
    };
    let (_, examples) = gen_synthetic(&cfg).unwrap();
    let mut texts: Vec<&str> = vec!["Question: Answer: Context: what"];
    for ex in &examples {
        texts.extend([ex.question.as_str(), ex.context.as_str()]);
    }
    let vocab = Vocab::build(&texts, 600).unwrap();
    let train = Preset::Desk.train_config(objective, ModelConfig::desk(vocab.len()));
    let pairs: Vec<_> = examples
        .iter()
        .map(|ex| build_pair(&vocab, &ex.id, &ex.question, &ex.answers, &ex.context, objective, 128).unwrap())
        .collect();
    let refs: Vec<_> = pairs.iter().collect();
    let mut model = Model::new(train.model.clone(), 1).unwrap();
    let mut opt = AdamState::new(model.parameters(), train.learning_rate);
    let mut out = Overfit {
        reached_at: None,
        final_loss: f64::NAN,
        seconds: 0.0,
    };
    for step in 1..=max_steps {
        model.zero_grads();
        let loss = model
            .accumulate_gradients(|g, m, b| batch_loss(g, m, b, &refs, &mut Dropout::off()))
            .unwrap();
        out.final_loss = loss;
        if loss < threshold {
            out.reached_at = Some(step);
            break;
        }
        opt.step(model.parameters_mut()).unwrap();
    }
    out.seconds = t0.elapsed().as_secs_f64();
    out
}
