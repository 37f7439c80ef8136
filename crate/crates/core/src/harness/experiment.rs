//! The few-shot grid and its reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datasets::{sample_fewshot, QAExample};
use crate::metrics::{aggregate, AggregateCell};
use crate::prompting::ObjectiveKind;
use crate::tokenizer::Vocab;

use super::config::{ExperimentSettings, TrainConfig};
use super::seeds::{SeedSplitter, Stream};
use super::train::{evaluate, finetune, DevRecord, Model};
use super::HarnessError;

#[derive(Debug, Clone)]
pub struct NamedDataset {
    pub name: String,
    pub examples: Vec<QAExample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed_index: usize,
    pub sampling_seed: u64,
    pub init_seed: u64,
    pub test_f1: Option<f64>,
    pub test_em: Option<f64>,
    pub n_test: usize,
    pub best_step: Option<usize>,
    pub best_dev_f1: Option<f64>,
    pub dev_history: Vec<DevRecord>,
    /// Fraction of generated test outputs that ended before the step budget.
    pub eos_rate: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub train_size: usize,
    pub objective: ObjectiveKind,
    /// `None` when any run of the cell failed.
    pub f1: Option<AggregateCell>,
    pub em: Option<AggregateCell>,
    pub runs: Vec<RunRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub master_seed: u64,
    pub n_seeds: usize,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub pretrained_checkpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    pub provenance: Provenance,
}

impl ExperimentReport {
    pub fn row(&self, dataset: &str, train_size: usize, objective: ObjectiveKind) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.dataset == dataset && r.train_size == train_size && r.objective == objective)
    }

    pub fn failed_runs(&self) -> usize {
        self.rows.iter().flat_map(|r| &r.runs).filter(|r| r.error.is_some()).count()
    }
}

/// Hex SHA-256 of any serializable configuration.
pub fn config_hash<C: Serialize>(config: &C) -> String {
    let bytes = serde_json::to_vec(config).expect("configs serialize");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

struct Job {
    dataset: usize,
    size: usize,
    objective: ObjectiveKind,
    seed_index: usize,
}

/// Everything a grid run shares.
pub struct ExperimentInputs<'a> {
    pub datasets: &'a [NamedDataset],
    pub vocab: &'a Vocab,
    pub pretrained: Option<&'a Model>,
    pub pretrained_path: Option<PathBuf>,
    pub base: &'a TrainConfig,
    pub settings: &'a ExperimentSettings,
    pub master_seed: u64,
    pub config_hash: String,
}

fn run_one(inputs: &ExperimentInputs<'_>, job: &Job) -> RunRecord {
    let data = &inputs.datasets[job.dataset];
    let seeds = SeedSplitter::new(inputs.master_seed);
    let sampling_seed = seeds.run_seed(Stream::Sampling, &data.name, job.size, job.seed_index);
    let init_seed = seeds.run_seed(Stream::Init, &data.name, job.size, job.seed_index);
    let mut record = RunRecord {
        seed_index: job.seed_index,
        sampling_seed,
        init_seed,
        test_f1: None,
        test_em: None,
        n_test: 0,
        best_step: None,
        best_dev_f1: None,
        dev_history: Vec::new(),
        eos_rate: None,
        error: None,
    };
    let result = catch_unwind(AssertUnwindSafe(|| -> Result<(), HarnessError> {
        let mut split = sample_fewshot(&data.examples, job.size, sampling_seed, &data.name)?;
        split.test.truncate(inputs.settings.test_cap);
        let mut cfg = inputs.base.clone();
        cfg.objective = job.objective;
        cfg.seed = init_seed;
        cfg.model.span_head = job.objective == ObjectiveKind::SpanSelection;
        let outcome = finetune(&split, inputs.vocab, &cfg, inputs.pretrained)?;
        let (test, preds) = evaluate(&outcome.model, inputs.vocab, &split.test, job.objective, outcome.max_input_len)?;
        record.test_f1 = Some(test.f1);
        record.test_em = Some(test.exact_match);
        record.n_test = test.n_examples;
        record.best_step = Some(outcome.best_step);
        record.best_dev_f1 = Some(outcome.best_dev_f1);
        record.dev_history = outcome.history;
        if job.objective.is_generative() && !preds.is_empty() {
            let budget = crate::decoding::default_max_steps(job.objective).unwrap_or(usize::MAX);
            let ended = preds.iter().filter(|p| p.steps_used < budget).count();
            record.eos_rate = Some(ended as f64 / preds.len() as f64);
        }
        Ok(())
    }));
    match result {
        Ok(Ok(())) => {}
        Ok(Err(e)) => record.error = Some(e.to_string()),
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            record.error = Some(format!("panic: {msg}"));
        }
    }
    record
}

/// Runs every (dataset, size, objective, seed) cell. Failed runs are
/// recorded, never propagated. Up to `settings.workers` runs execute at once.
pub fn run_experiment(inputs: &ExperimentInputs<'_>) -> ExperimentReport {
    let started_unix = unix_now();
    let settings = inputs.settings;
    let mut jobs = Vec::new();
    for dataset in 0..inputs.datasets.len() {
        for &size in &settings.sizes {
            for &objective in &settings.objectives {
                for seed_index in 0..settings.n_seeds {
                    jobs.push(Job {
                        dataset,
                        size,
                        objective,
                        seed_index,
                    });
                }
            }
        }
    }
    let results: Mutex<Vec<Option<RunRecord>>> = Mutex::new(vec![None; jobs.len()]);
    let next = AtomicUsize::new(0);
    let workers = settings.workers.clamp(1, jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(i) else { break };
                let record = run_one(inputs, job);
                match (&record.error, record.test_f1) {
                    (Some(e), _) => log::warn!(
                        "{} n={} {} seed {}: failed: {e}",
                        inputs.datasets[job.dataset].name,
                        job.size,
                        job.objective,
                        job.seed_index
                    ),
                    (None, f1) => log::info!(
                        "{} n={} {} seed {}: test F1 {:.1}",
                        inputs.datasets[job.dataset].name,
                        job.size,
                        job.objective,
                        job.seed_index,
                        f1.unwrap_or(f64::NAN)
                    ),
                }
                results.lock().expect("no poisoned lock")[i] = Some(record);
            });
        }
    });
    let mut records = results.into_inner().expect("no poisoned lock").into_iter();
    let mut rows = Vec::new();
    for data in inputs.datasets {
        for &size in &settings.sizes {
            for &objective in &settings.objectives {
                let runs: Vec<RunRecord> = (0..settings.n_seeds)
                    .map(|_| records.next().flatten().expect("every job reports"))
                    .collect();
                let all_ok = runs.iter().all(|r| r.error.is_none());
                let collect = |f: fn(&RunRecord) -> Option<f64>| -> Option<AggregateCell> {
                    if !all_ok {
                        return None;
                    }
                    aggregate(&runs.iter().filter_map(f).collect::<Vec<_>>())
                };
                let f1 = collect(|r| r.test_f1);
                let em = collect(|r| r.test_em);
                rows.push(ReportRow {
                    dataset: data.name.clone(),
                    train_size: size,
                    objective,
                    f1,
                    em,
                    runs,
                });
            }
        }
    }
    ExperimentReport {
        rows,
        provenance: Provenance {
            config_hash: inputs.config_hash.clone(),
            master_seed: inputs.master_seed,
            n_seeds: settings.n_seeds,
            started_unix,
            finished_unix: unix_now(),
            pretrained_checkpoint: inputs.pretrained_path.as_ref().map(|p| p.display().to_string()),
        },
    }
}

const FAILED_CELL: &str = "—";

/// F1 table: one row per objective, one column per (dataset, size).
/// Contains no timestamps, so unchanged results give identical bytes.
pub fn render_table(report: &ExperimentReport) -> String {
    let mut columns: Vec<(String, usize)> = Vec::new();
    let mut objectives: Vec<ObjectiveKind> = Vec::new();
    for r in &report.rows {
        if !columns.contains(&(r.dataset.clone(), r.train_size)) {
            columns.push((r.dataset.clone(), r.train_size));
        }
        if !objectives.contains(&r.objective) {
            objectives.push(r.objective);
        }
    }
    let mut out = String::from("objective");
    for (d, n) in &columns {
        let _ = write!(out, "\t{d} n={n}");
    }
    out.push('\n');
    let mut footnotes = Vec::new();
    for &objective in &objectives {
        out.push_str(objective.name());
        for (d, n) in &columns {
            let cell = match report.row(d, *n, objective) {
                Some(ReportRow { f1: Some(c), .. }) => c.render(),
                Some(row) => {
                    footnotes.push(row);
                    format!("{FAILED_CELL}[{}]", footnotes.len())
                }
                None => String::new(),
            };
            let _ = write!(out, "\t{cell}");
        }
        out.push('\n');
    }
    for (i, row) in footnotes.iter().enumerate() {
        let failed: Vec<&RunRecord> = row.runs.iter().filter(|r| r.error.is_some()).collect();
        let first = failed.first().and_then(|r| r.error.as_deref()).unwrap_or("no score");
        let _ = writeln!(
            out,
            "# [{}] {} n={} {}: {} of {} runs failed; first error: {}",
            i + 1,
            row.dataset,
            row.train_size,
            row.objective,
            failed.len(),
            row.runs.len(),
            first.replace(['\n', '\t'], " ")
        );
    }
    out
}

/// Plot series: train size against F1 per objective.
pub fn render_series(report: &ExperimentReport) -> String {
    let mut out = String::from("dataset,objective,train_size,f1_mean,f1_std,em_mean,em_std,n_runs\n");
    let mut sorted: BTreeMap<(String, ObjectiveKind, usize), &ReportRow> = BTreeMap::new();
    for r in &report.rows {
        sorted.insert((r.dataset.clone(), r.objective, r.train_size), r);
    }
    for ((dataset, objective, size), row) in sorted {
        let cell = |c: Option<AggregateCell>| c.map_or(",".to_string(), |c| format!("{:.4},{:.4}", c.mean, c.std));
        let _ = writeln!(
            out,
            "{dataset},{objective},{size},{},{},{}",
            cell(row.f1),
            cell(row.em),
            row.runs.len()
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmittedFiles {
    pub json: PathBuf,
    pub table: PathBuf,
    pub series: PathBuf,
}

/// Writes `report.json`, `table.tsv` and `series.csv` into `dir`.
pub fn emit_report(report: &ExperimentReport, dir: &Path) -> Result<EmittedFiles, HarnessError> {
    if report.rows.is_empty() {
        return Err(HarnessError::Config("report has no rows".into()));
    }
    fs::create_dir_all(dir)?;
    let files = EmittedFiles {
        json: dir.join("report.json"),
        table: dir.join("table.tsv"),
        series: dir.join("series.csv"),
    };
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    fs::write(&files.json, json)?;
    fs::write(&files.table, render_table(report))?;
    fs::write(&files.series, render_series(report))?;
    Ok(files)
}
