//! Few-shot question answering with miniature encoder-decoder models.
//!
//! The crate pretrains a small text-to-text transformer with either
//! whole-sequence denoising or sentinel span infilling, then fine-tunes it on
//! a handful of QA examples with one of six objectives. The aligned
//! objectives phrase QA as filling a mask in `Question: q Answer: <mask>.
//! Context: c`, the same task the model saw during pretraining.

pub mod autodiff;
pub mod corruption;
pub mod datasets;
pub mod harness;
pub mod decoding;
pub mod metrics;
pub mod model;
pub mod prompting;
pub mod tokenizer;
