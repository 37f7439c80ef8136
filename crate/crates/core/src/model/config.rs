use serde::{Deserialize, Serialize};

use super::ModelError;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_encoder_layers: usize,
    pub n_decoder_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    #[serde(default)]
    pub dropout_rate: f64,
    /// Adds start/end projection vectors for extractive span selection.
    #[serde(default)]
    pub span_head: bool,
    /// Standard deviation of the normal initializer for weights and
    /// embeddings.
    #[serde(default = "default_init_std")]
    pub init_std: f64,
}

fn default_init_std() -> f64 {
    0.02
}

impl ModelConfig {
    /// Two encoder and two decoder layers, width 64, four heads. Weights
    /// start at std `1/sqrt(d_model)`: at this width 0.02 leaves attention
    /// logits so flat that content-based lookups take thousands of steps to
    /// appear.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            n_encoder_layers: 2,
            n_decoder_layers: 2,
            d_model: 64,
            n_heads: 4,
            d_ff: 256,
            vocab_size,
            max_positions: 256,
            dropout_rate: 0.0,
            span_head: false,
            init_std: 0.125,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("n_encoder_layers", self.n_encoder_layers),
            ("n_decoder_layers", self.n_decoder_layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("max_positions", self.max_positions),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be positive")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(ModelError::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(ModelError::Config(format!("init_std {} must be positive", self.init_std)));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::Config(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    /// True when both configs describe the same parameter tensors, ignoring
    /// the optional span head, dropout and the initializer.
    pub fn same_backbone(&self, other: &Self) -> bool {
        let strip = |c: &Self| Self {
            dropout_rate: 0.0,
            span_head: false,
            init_std: 0.0,
            ..c.clone()
        };
        strip(self) == strip(other)
    }

    /// Closed-form number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        let d = self.d_model;
        let ln = 2 * d;
        let attn = 4 * (d * d + d);
        let ff = d * self.d_ff + self.d_ff + self.d_ff * d + d;
        let embeddings = self.vocab_size * d + 2 * self.max_positions * d;
        let encoder = self.n_encoder_layers * (2 * ln + attn + ff) + ln;
        let decoder = self.n_decoder_layers * (3 * ln + 2 * attn + ff) + ln;
        let span = if self.span_head { 2 * d } else { 0 };
        embeddings + encoder + decoder + span
    }
}
