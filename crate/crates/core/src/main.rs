use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use fewshot_qa::datasets::{sample_fewshot, write_split_ids, FewshotSplit};
use fewshot_qa::harness::{
    emit_report, evaluate, input_bound, prepare_data, render_table, resolve, run_finetune, run_pipeline,
    run_pretrain, seeded_pretrain, ExperimentReport, Model, PreparedData, RunConfig, SeedSplitter, Stream,
};
use fewshot_qa::prompting::ObjectiveKind;

#[derive(Parser)]
#[command(name = "fsqa", version, about = "Few-shot QA with objective-aligned fine-tuning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML config; unset keys keep the desk defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set finetune.learning_rate=1e-3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain on the corpus with the configured corruption style.
    Pretrain(Common),
    /// Fine-tune on one few-shot split.
    Finetune {
        #[command(flatten)]
        common: Common,
        /// Dataset name; defaults to the first one.
        #[arg(long)]
        dataset: Option<String>,
    },
    /// Score a fine-tuned checkpoint on the test part of its split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: Option<String>,
    },
    /// Pretrain once, then run the full grid and write the report.
    Experiment(Common),
    /// Re-render the table and series from a saved `report.json`.
    Report {
        input: PathBuf,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Print the effective config as TOML.
    ShowConfig(Common),
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            RunConfig::from_toml(&text)?
        }
        None => RunConfig::desk(),
    };
    cfg = cfg.with_overrides(&c.overrides)?;
    if let Some(seed) = c.seed {
        cfg.master_seed = seed;
    }
    Ok(cfg)
}

/// Data plus the config resized to its vocabulary.
fn prepare(c: &Common) -> Result<(RunConfig, PreparedData)> {
    let cfg = load_config(c)?;
    let data = prepare_data(&cfg)?;
    let cfg = resolve(&cfg, &data.vocab);
    fs::create_dir_all(&c.out)?;
    data.vocab.save(&c.out.join("vocab.txt"))?;
    fs::write(c.out.join("config.toml"), cfg.to_toml()?)?;
    Ok((cfg, data))
}

/// The split the `finetune` and `eval` commands share: seed index 0 of the
/// grid for the configured train size.
fn split_for(cfg: &RunConfig, data: &PreparedData, dataset: Option<&str>) -> Result<FewshotSplit> {
    let d = match dataset {
        Some(name) => data
            .datasets
            .iter()
            .find(|d| d.name == name)
            .with_context(|| format!("no dataset named {name}"))?,
        None => data.datasets.first().context("no datasets loaded")?,
    };
    let seed = SeedSplitter::new(cfg.master_seed).run_seed(Stream::Sampling, &d.name, cfg.train_size, 0);
    let mut split = sample_fewshot(&d.examples, cfg.train_size, seed, &d.name)?;
    split.test.truncate(cfg.experiment.test_cap);
    Ok(split)
}

fn write_jsonl<T: serde::Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for item in items {
        writeln!(f, "{}", serde_json::to_string(item)?)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pretrain(c) => {
            let (cfg, data) = prepare(&c)?;
            let (path, outcome) = run_pretrain(&data.corpus, &data.vocab, &seeded_pretrain(&cfg), &c.out)?;
            let last = outcome.losses.last().map(|r| r.loss).unwrap_or(f64::NAN);
            println!("wrote {} (final loss {last:.3})", path.display());
        }
        Command::Finetune { common, dataset } => {
            let (mut cfg, data) = prepare(&common)?;
            let split = split_for(&cfg, &data, dataset.as_deref())?;
            write_split_ids(fs::File::create(common.out.join("split.txt"))?, &split)?;
            cfg.finetune.model.span_head |= cfg.finetune.objective == ObjectiveKind::SpanSelection;
            cfg.finetune.seed = SeedSplitter::new(cfg.master_seed).run_seed(Stream::Init, &split.source_name, cfg.train_size, 0);
            let outcome = run_finetune(&split, &data.vocab, &cfg.finetune, &common.out)?;
            println!(
                "best dev F1 {:.1} at step {} of {}; checkpoint {}",
                outcome.best_dev_f1,
                outcome.best_step,
                outcome.steps_run,
                common.out.join("best.ckpt").display()
            );
        }
        Command::Eval {
            common,
            checkpoint,
            dataset,
        } => {
            let (cfg, data) = prepare(&common)?;
            let split = split_for(&cfg, &data, dataset.as_deref())?;
            let model = Model::load(&checkpoint)?;
            if model.config().vocab_size != data.vocab.len() {
                bail!(
                    "checkpoint expects {} tokens but the vocabulary has {}",
                    model.config().vocab_size,
                    data.vocab.len()
                );
            }
            let bound = input_bound(&split, &data.vocab, &cfg.finetune)?;
            let (result, preds) = evaluate(&model, &data.vocab, &split.test, cfg.finetune.objective, bound)?;
            write_jsonl(&common.out.join("predictions.jsonl"), &preds)?;
            fs::write(common.out.join("metrics.json"), serde_json::to_string_pretty(&result)?)?;
            println!(
                "{}: F1 {:.1} EM {:.1} over {} examples",
                cfg.finetune.objective, result.f1, result.exact_match, result.n_examples
            );
        }
        Command::Experiment(c) => {
            let cfg = load_config(&c)?;
            let outcome = run_pipeline(&cfg, &c.out)?;
            print!("{}", render_table(&outcome.report));
            let failed = outcome.report.failed_runs();
            if failed > 0 {
                bail!("{failed} run(s) failed; see {}", c.out.join("report.json").display());
            }
        }
        Command::Report { input, out } => {
            let text = fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
            let report: ExperimentReport = serde_json::from_str(&text)?;
            emit_report(&report, &out)?;
            print!("{}", render_table(&report));
        }
        Command::ShowConfig(c) => print!("{}", load_config(&c)?.to_toml()?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
