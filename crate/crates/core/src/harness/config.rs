use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::corruption::{CorruptionConfig, CorruptionStyle};
use crate::datasets::SyntheticConfig;
use crate::model::ModelConfig;
use crate::prompting::ObjectiveKind;

use super::HarnessError;

/// Fine-tuning hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub objective: ObjectiveKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub max_steps: usize,
    pub seed: u64,
    pub eval_every: usize,
    pub model: ModelConfig,
    pub pretrained_checkpoint: Option<PathBuf>,
    /// Input length bound; `None` uses the 99th-percentile dev input length.
    #[serde(default)]
    pub max_input_len: Option<usize>,
}

impl TrainConfig {
    /// Larger of the epoch-derived and the fixed step budget.
    pub fn total_steps(&self, n_train: usize) -> usize {
        let per_epoch = n_train.div_ceil(self.batch_size.max(1));
        (self.max_epochs * per_epoch).max(self.max_steps)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.batch_size == 0 {
            return Err(HarnessError::Config("batch_size must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(HarnessError::Config("eval_every must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(HarnessError::Config(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        if self.objective == ObjectiveKind::SpanSelection && !self.model.span_head {
            return Err(HarnessError::Config("span-selection needs a model with a span head".into()));
        }
        self.model.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// The published recipe: lr 2e-5, batch 4, 35 epochs or 1000 steps.
    PaperMirror,
    /// Tiny model: lr 1e-3 (best of 1e-4, 3e-4 and 1e-3 on the synthetic
    /// task for both objectives), batch 16, 300 steps.
    Desk,
}

impl Preset {
    pub fn train_config(self, objective: ObjectiveKind, model: ModelConfig) -> TrainConfig {
        let model = ModelConfig {
            span_head: objective == ObjectiveKind::SpanSelection,
            ..model
        };
        let (learning_rate, batch_size, max_steps, eval_every) = match self {
            Preset::PaperMirror => (2e-5, 4, 1000, 100),
            Preset::Desk => (1e-3, 16, 300, 20),
        };
        TrainConfig {
            objective,
            learning_rate,
            batch_size,
            max_epochs: 35,
            max_steps,
            seed: 0,
            eval_every,
            model,
            pretrained_checkpoint: None,
            max_input_len: None,
        }
    }
}

/// Pretraining hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub style: CorruptionStyle,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub log_every: usize,
    pub corruption: CorruptionConfig,
    pub model: ModelConfig,
}

impl PretrainConfig {
    pub fn desk(style: CorruptionStyle, model: ModelConfig) -> Self {
        Self {
            style,
            learning_rate: 1e-3,
            batch_size: 16,
            steps: 6000,
            seed: 0,
            log_every: 50,
            corruption: CorruptionConfig::default(),
            model: ModelConfig {
                span_head: false,
                ..model
            },
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.batch_size == 0 || self.steps == 0 || self.log_every == 0 {
            return Err(HarnessError::Config("batch_size, steps and log_every must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(HarnessError::Config(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        self.model.validate()?;
        Ok(())
    }
}

/// Where QA data and the pretraining corpus come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    /// Generated fact-lookup task; used when `mrqa` is empty.
    pub synthetic: SyntheticConfig,
    /// MRQA-style files, one dataset each. Their contexts form the corpus.
    #[serde(default)]
    pub mrqa: Vec<PathBuf>,
    pub vocab_size: usize,
}

/// Grid and evaluation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSettings {
    pub sizes: Vec<usize>,
    pub objectives: Vec<ObjectiveKind>,
    pub n_seeds: usize,
    pub test_cap: usize,
    pub workers: usize,
}

/// Everything one CLI invocation needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub master_seed: u64,
    pub data: DataConfig,
    pub pretrain: PretrainConfig,
    pub finetune: TrainConfig,
    /// Few-shot size for the single `finetune` command.
    pub train_size: usize,
    pub experiment: ExperimentSettings,
}

impl RunConfig {
    pub fn desk() -> Self {
        let model = ModelConfig::desk(600);
        Self {
            master_seed: 1,
            data: DataConfig {
                synthetic: SyntheticConfig::default(),
                mrqa: Vec::new(),
                vocab_size: 600,
            },
            pretrain: PretrainConfig::desk(CorruptionStyle::T5SpanInfill, model.clone()),
            finetune: Preset::Desk.train_config(ObjectiveKind::QuestionThenAnswer, model),
            train_size: 16,
            experiment: ExperimentSettings {
                sizes: vec![16, 32, 64, 128],
                objectives: ObjectiveKind::ALL.to_vec(),
                n_seeds: 5,
                test_cap: 2000,
                workers: 1,
            },
        }
    }

    /// Applies `a.b.c=value` overrides to the serialized config. Values parse
    /// as TOML scalars or arrays; anything else is taken as a string.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self, HarnessError> {
        let mut tree = toml::Value::try_from(self).map_err(|e| HarnessError::Config(e.to_string()))?;
        for item in overrides {
            let (path, raw) = item
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("override {item:?} is not key=value")))?;
            let value = parse_override_value(raw.trim());
            set_path(&mut tree, path.trim(), value)?;
        }
        tree.try_into().map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        // Start from the desk defaults so config files only list changes.
        let mut base = toml::Value::try_from(Self::desk()).map_err(|e| HarnessError::Config(e.to_string()))?;
        let user: toml::Value = text.parse().map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        merge(&mut base, user);
        base.try_into().map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, HarnessError> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }
}

fn parse_override_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(tree: &mut toml::Value, path: &str, value: toml::Value) -> Result<(), HarnessError> {
    let mut node = tree;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| HarnessError::Config(format!("{path}: {} is not a table", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            if !table.contains_key(*part) && !matches!(*part, "pretrained_checkpoint" | "max_input_len") {
                return Err(HarnessError::Config(format!("unknown config key {path}")));
            }
            table.insert(part.to_string(), value);
            return Ok(());
        }
        node = table
            .get_mut(*part)
            .ok_or_else(|| HarnessError::Config(format!("unknown config key {path}")))?;
    }
    Err(HarnessError::Config("empty override path".into()))
}

fn merge(base: &mut toml::Value, user: toml::Value) {
    match (base, user) {
        (toml::Value::Table(b), toml::Value::Table(u)) => {
            for (k, v) in u {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_table() && v.is_table() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, u) => *b = u,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_rule_takes_the_larger_budget() {
        let mut c = Preset::PaperMirror.train_config(ObjectiveKind::QuestionThenAnswer, ModelConfig::desk(500));
        assert_eq!(c.total_steps(16), 1000);
        c.max_steps = 10;
        assert_eq!(c.total_steps(16), 35 * 4);
        assert_eq!(c.total_steps(17), 35 * 5);
    }

    #[test]
    fn presets() {
        let p = Preset::PaperMirror.train_config(ObjectiveKind::QuestionThenAnswer, ModelConfig::desk(500));
        assert_eq!((p.learning_rate, p.batch_size, p.max_epochs, p.max_steps), (2e-5, 4, 35, 1000));
        let d = Preset::Desk.train_config(ObjectiveKind::SpanSelection, ModelConfig::desk(500));
        assert_eq!((d.learning_rate, d.batch_size, d.max_steps, d.eval_every), (1e-3, 16, 300, 20));
        assert!(d.model.span_head);
        d.validate().unwrap();
        let mut bad = d.clone();
        bad.model.span_head = false;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn overrides_and_toml() {
        let c = RunConfig::desk();
        let o = c
            .with_overrides(&[
                "finetune.learning_rate=1e-3".into(),
                "experiment.sizes=[16]".into(),
                "finetune.objective=span-selection".into(),
                "finetune.pretrained_checkpoint=\"x.ckpt\"".into(),
            ])
            .unwrap();
        assert_eq!(o.finetune.learning_rate, 1e-3);
        assert_eq!(o.experiment.sizes, vec![16]);
        assert_eq!(o.finetune.objective, ObjectiveKind::SpanSelection);
        assert_eq!(o.finetune.pretrained_checkpoint, Some(PathBuf::from("x.ckpt")));
        assert!(c.with_overrides(&["finetune.nope=1".into()]).is_err());
        assert!(c.with_overrides(&["finetune".into()]).is_err());

        let text = c.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), c);
        let partial = RunConfig::from_toml("master_seed = 9\n[finetune]\nbatch_size = 2\n").unwrap();
        assert_eq!((partial.master_seed, partial.finetune.batch_size), (9, 2));
        assert_eq!(partial.pretrain, c.pretrain);
    }
}
