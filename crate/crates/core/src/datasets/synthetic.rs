//! Key-value fact lookup with distractors.
//!
//! A seeded knowledge base maps every (entity, relation) pair to a value
//! entity. A context lists several facts `e r v.` about distinct subjects;
//! the question `what is e r?` asks for one of them. Pretraining documents
//! are short lists of facts from the same knowledge base, with no questions,
//! so span infilling teaches the facts and the `e r v.` surface form that QA
//! contexts reuse.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetError, QAExample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_examples: usize,
    pub n_entities: usize,
    pub n_relations: usize,
    pub context_facts: usize,
    pub n_pretrain_docs: usize,
    /// Facts per pretraining document.
    pub doc_facts: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_examples: 1200,
            n_entities: 24,
            n_relations: 3,
            context_facts: 6,
            n_pretrain_docs: 4000,
            doc_facts: 2,
            seed: 17,
        }
    }
}

fn entity(i: usize) -> String {
    format!("e{i}")
}

fn relation(k: usize) -> String {
    format!("r{k}")
}

struct KnowledgeBase {
    n_relations: usize,
    values: Vec<usize>,
}

impl KnowledgeBase {
    fn new(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Self {
        let values = (0..cfg.n_entities * cfg.n_relations)
            .map(|pair| {
                let subject = pair / cfg.n_relations;
                // Uniform over entities other than the subject.
                let v = rng.random_range(0..cfg.n_entities - 1);
                if v >= subject {
                    v + 1
                } else {
                    v
                }
            })
            .collect();
        Self {
            n_relations: cfg.n_relations,
            values,
        }
    }

    fn fact(&self, pair: usize) -> (usize, usize, usize) {
        (pair / self.n_relations, pair % self.n_relations, self.values[pair])
    }

    /// `k` facts with distinct subjects, each under a random relation.
    fn sample_pairs(&self, rng: &mut ChaCha8Rng, k: usize) -> Vec<usize> {
        let n_entities = self.values.len() / self.n_relations;
        index::sample(rng, n_entities, k)
            .into_iter()
            .map(|e| e * self.n_relations + rng.random_range(0..self.n_relations))
            .collect()
    }

    fn render(&self, pairs: &[usize]) -> String {
        pairs
            .iter()
            .map(|&p| {
                let (e, r, v) = self.fact(p);
                format!("{} {} {}.", entity(e), relation(r), entity(v))
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Returns `(pretraining corpus, QA examples)`. Independent random streams
/// drive the knowledge base, the QA set and the corpus, so changing one size
/// leaves the others unchanged.
pub fn gen_synthetic(cfg: &SyntheticConfig) -> Result<(Vec<String>, Vec<QAExample>), DatasetError> {
    if cfg.context_facts < 2 {
        return Err(DatasetError::Config("context_facts must be at least 2".into()));
    }
    if cfg.n_entities < 2 || cfg.n_relations == 0 {
        return Err(DatasetError::Config(
            "need at least 2 entities and 1 relation for distinct subject and value".into(),
        ));
    }
    if cfg.doc_facts == 0 {
        return Err(DatasetError::Config("doc_facts must be at least 1".into()));
    }
    if cfg.context_facts.max(cfg.doc_facts) > cfg.n_entities {
        return Err(DatasetError::Config(format!(
            "{} facts per context or document exceed the {} distinct subjects",
            cfg.context_facts.max(cfg.doc_facts),
            cfg.n_entities
        )));
    }
    let stream = |k: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(k);
        rng
    };
    let kb = KnowledgeBase::new(cfg, &mut stream(0));

    let mut rng = stream(1);
    let qa = (0..cfg.n_examples)
        .map(|i| {
            let pairs = kb.sample_pairs(&mut rng, cfg.context_facts);
            let asked = pairs[rng.random_range(0..pairs.len())];
            let (e, r, v) = kb.fact(asked);
            QAExample {
                id: format!("syn-{}-{i}", cfg.seed),
                question: format!("what is {} {}?", entity(e), relation(r)),
                context: kb.render(&pairs),
                answers: vec![entity(v)],
            }
        })
        .collect();

    let mut rng = stream(2);
    let corpus = (0..cfg.n_pretrain_docs)
        .map(|_| kb.render(&kb.sample_pairs(&mut rng, cfg.doc_facts)))
        .collect();
    Ok((corpus, qa))
}
