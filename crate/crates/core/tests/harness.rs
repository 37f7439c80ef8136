use std::fs;
use std::path::PathBuf;

use fewshot_qa::corruption::{corrupt, CorruptionConfig, CorruptionStyle};
use fewshot_qa::datasets::{gen_synthetic, load_mrqa, sample_fewshot, SyntheticConfig};
use fewshot_qa::harness::{
    corruption_loss, emit_report, encode_corpus, finetune, pretrain, render_table, run_experiment, ExperimentInputs,
    ExperimentSettings, NamedDataset, PretrainConfig, Preset, RunConfig, TrainConfig,
};
use fewshot_qa::metrics::AggregateCell;
use fewshot_qa::model::ModelConfig;
use fewshot_qa::prompting::ObjectiveKind;
use fewshot_qa::tokenizer::{is_sentinel, Vocab};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_model(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        n_encoder_layers: 1,
        n_decoder_layers: 1,
        d_model: 16,
        n_heads: 2,
        d_ff: 32,
        vocab_size,
        max_positions: 96,
        dropout_rate: 0.0,
        span_head: false,
        init_std: 0.25,
    }
}

struct Fixture {
    corpus: Vec<String>,
    datasets: Vec<NamedDataset>,
    vocab: Vocab,
}

fn fixture() -> Fixture {
    let cfg = SyntheticConfig {
        n_examples: 60,
        n_pretrain_docs: 200,
        ..SyntheticConfig::default()
    };
    let (corpus, examples) = gen_synthetic(&cfg).unwrap();
    let mini = load_mrqa(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/mini.jsonl")).unwrap();
    let mut texts: Vec<&str> = corpus.iter().map(String::as_str).collect();
    for ex in examples.iter().chain(&mini.examples) {
        texts.extend([ex.question.as_str(), ex.context.as_str()]);
    }
    texts.push("Question: Answer: Context: what");
    let vocab = Vocab::build(&texts, 600).unwrap();
    Fixture {
        corpus,
        datasets: vec![
            NamedDataset {
                name: "synthetic".into(),
                examples,
            },
            NamedDataset {
                name: "mini".into(),
                examples: mini.examples,
            },
        ],
        vocab,
    }
}

fn train_config(objective: ObjectiveKind, vocab: &Vocab) -> TrainConfig {
    let mut cfg = Preset::Desk.train_config(objective, tiny_model(vocab.len()));
    cfg.max_steps = 6;
    cfg.max_epochs = 1;
    cfg.eval_every = 2;
    cfg.batch_size = 2;
    cfg
}

#[test]
fn step_budget_is_the_larger_of_epochs_and_steps() {
    let f = fixture();
    let split = sample_fewshot(&f.datasets[0].examples, 5, 3, "synthetic").unwrap();
    for (epochs, max_steps, batch) in [(4, 3, 2), (1, 7, 2), (2, 2, 5), (0, 4, 3)] {
        let mut cfg = train_config(ObjectiveKind::AnswerOnlyGeneration, &f.vocab);
        (cfg.max_epochs, cfg.max_steps, cfg.batch_size) = (epochs, max_steps, batch);
        let out = finetune(&split, &f.vocab, &cfg, None).unwrap();
        let want = (epochs * 5usize.div_ceil(batch)).max(max_steps);
        assert_eq!(out.steps_run, want, "epochs {epochs} steps {max_steps} batch {batch}");
        assert_eq!(out.history.last().unwrap().step, want);
        // The kept snapshot is the first maximum of the recorded dev F1.
        let best = out.history.iter().map(|h| h.f1).fold(f64::NEG_INFINITY, f64::max);
        let first = out.history.iter().find(|h| h.f1 == best).unwrap();
        assert_eq!((out.best_step, out.best_dev_f1), (first.step, best));
    }
}

#[test]
fn finetuning_is_deterministic() {
    let f = fixture();
    let split = sample_fewshot(&f.datasets[0].examples, 4, 9, "synthetic").unwrap();
    for o in [ObjectiveKind::QuestionThenAnswer, ObjectiveKind::SpanSelection] {
        let cfg = train_config(o, &f.vocab);
        let a = finetune(&split, &f.vocab, &cfg, None).unwrap();
        let b = finetune(&split, &f.vocab, &cfg, None).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.model.to_bytes().unwrap(), b.model.to_bytes().unwrap());
    }
}

#[test]
fn pretraining_learns_and_repeats_exactly() {
    let f = fixture();
    let docs = encode_corpus(&f.corpus, &f.vocab, 96).unwrap();
    let (train, held_out) = docs.split_at(180);
    for style in [CorruptionStyle::T5SpanInfill, CorruptionStyle::BartDenoise] {
        let mut cfg = PretrainConfig::desk(style, tiny_model(f.vocab.len()));
        cfg.steps = 120;
        cfg.seed = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let samples: Vec<_> = held_out
            .iter()
            .map(|d| corrupt(d, style, &CorruptionConfig::default(), &mut rng).unwrap())
            .collect();
        for s in &samples {
            let has_sentinel = s.target_ids.iter().any(|&t| is_sentinel(t));
            assert_eq!(has_sentinel, style == CorruptionStyle::T5SpanInfill && !s.masked_spans.is_empty());
        }
        let fresh = fewshot_qa::harness::Model::new(cfg.model.clone(), 1).unwrap();
        let before = corruption_loss(&fresh, &samples).unwrap();
        let a = pretrain(train, &cfg, None).unwrap();
        let after = corruption_loss(&a.model, &samples).unwrap();
        assert!(after < before, "{style:?}: {after} !< {before}");
        let b = pretrain(train, &cfg, None).unwrap();
        assert_eq!(a.model.to_bytes().unwrap(), b.model.to_bytes().unwrap());
        assert_eq!(a.losses, b.losses);
    }
}

fn small_grid(f: &Fixture, base: &TrainConfig, settings: &ExperimentSettings) -> fewshot_qa::harness::ExperimentReport {
    run_experiment(&ExperimentInputs {
        datasets: &f.datasets,
        vocab: &f.vocab,
        pretrained: None,
        pretrained_path: None,
        base,
        settings,
        master_seed: 5,
        config_hash: "test".into(),
    })
}

#[test]
fn grid_report_is_complete_and_reproducible() {
    let f = fixture();
    let base = train_config(ObjectiveKind::QuestionThenAnswer, &f.vocab);
    let settings = ExperimentSettings {
        // Size 6 needs 13 mini examples and fails there without stopping the grid.
        sizes: vec![2, 6],
        objectives: vec![ObjectiveKind::QuestionThenAnswer, ObjectiveKind::SpanSelection],
        n_seeds: 3,
        test_cap: 6,
        workers: 1,
    };
    let report = small_grid(&f, &base, &settings);
    assert_eq!(report.rows.len(), 2 * 2 * 2);
    for row in &report.rows {
        assert_eq!(row.runs.len(), 3);
        let failed = row.dataset == "mini" && row.train_size == 6;
        assert_eq!(row.f1.is_none(), failed, "{} n={} {}", row.dataset, row.train_size, row.objective);
        if let Some(cell) = row.f1 {
            assert_eq!(cell.n_runs, 3);
            let scores: Vec<f64> = row.runs.iter().map(|r| r.test_f1.unwrap()).collect();
            let mean = scores.iter().sum::<f64>() / 3.0;
            let std = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
            assert!((cell.mean - mean).abs() < 1e-9 && (cell.std - std).abs() < 1e-9);
        }
    }
    assert_eq!(report.failed_runs(), 2 * 3);
    let table = render_table(&report);
    assert!(table.contains("—[1]") && table.contains("# [1] mini n=6"), "{table}");

    let again = small_grid(&f, &base, &settings);
    assert_eq!(again.rows, report.rows);
    let dir = tempfile::tempdir().unwrap();
    let first = emit_report(&report, &dir.path().join("a")).unwrap();
    let second = emit_report(&again, &dir.path().join("b")).unwrap();
    assert_eq!(fs::read(first.table).unwrap(), fs::read(second.table).unwrap());
    assert_eq!(fs::read(first.series).unwrap(), fs::read(second.series).unwrap());
}

#[test]
fn cells_render_like_the_published_table() {
    let cell = AggregateCell {
        mean: 55.5,
        std: 2.0,
        n_runs: 5,
    };
    assert_eq!(cell.render(), "55.5±2.0");
}

#[test]
fn presets_and_config_round_trip() {
    let mirror = Preset::PaperMirror.train_config(ObjectiveKind::QuestionThenAnswer, ModelConfig::desk(600));
    assert_eq!((mirror.learning_rate, mirror.batch_size, mirror.max_epochs, mirror.max_steps), (2e-5, 4, 35, 1000));
    let desk = RunConfig::desk();
    assert_eq!(desk.finetune.learning_rate, 1e-3);
    assert_eq!((desk.finetune.batch_size, desk.finetune.max_steps, desk.finetune.eval_every), (16, 300, 20));
    let text = desk.to_toml().unwrap();
    assert_eq!(RunConfig::from_toml(&text).unwrap(), desk);
    let tuned = desk
        .with_overrides(&["finetune.learning_rate=3e-4".into(), "experiment.sizes=[16]".into()])
        .unwrap();
    assert_eq!(tuned.finetune.learning_rate, 3e-4);
    assert_eq!(tuned.experiment.sizes, vec![16]);
    assert!(desk.with_overrides(&["finetune.nope=1".into()]).is_err());
}
