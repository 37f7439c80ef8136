//! Miniature encoder-decoder transformer.
//!
//! Pre-norm layers, learned absolute positions for both stacks, GELU
//! feed-forward blocks and an output projection tied to the token embedding.
//! Sequences of a batch are packed row-wise into one matrix; attention is
//! restricted to per-sequence blocks, so packing changes no result.

mod checkpoint;
mod config;

pub use config::ModelConfig;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, Scalar, Segment, Tensor, Var};
use crate::tokenizer::{TokenId, BOS_ID};

const LN_EPS: f64 = 1e-5;
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model configuration: {0}")]
    Config(String),
    #[error("sequence of length {len} exceeds max_positions {max}")]
    Length { len: usize, max: usize },
    #[error("{0}")]
    Contract(String),
    #[error("token id {id} out of range for vocabulary of size {size}")]
    Token { id: TokenId, size: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy)]
struct AttnIdx {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
}

#[derive(Debug, Clone, Copy)]
struct NormIdx {
    gain: usize,
    bias: usize,
}

#[derive(Debug, Clone, Copy)]
struct FfIdx {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone, Copy)]
struct EncoderLayer {
    ln_attn: NormIdx,
    attn: AttnIdx,
    ln_ff: NormIdx,
    ff: FfIdx,
}

#[derive(Debug, Clone, Copy)]
struct DecoderLayer {
    ln_self: NormIdx,
    self_attn: AttnIdx,
    ln_cross: NormIdx,
    cross_attn: AttnIdx,
    ln_ff: NormIdx,
    ff: FfIdx,
}

#[derive(Debug, Clone)]
struct Layout {
    tok_emb: usize,
    enc_pos: usize,
    dec_pos: usize,
    encoder: Vec<EncoderLayer>,
    enc_norm: NormIdx,
    decoder: Vec<DecoderLayer>,
    dec_norm: NormIdx,
    span: Option<(usize, usize)>,
}

enum Init {
    Normal,
    Zeros,
    Ones,
}

struct Builder<'r, T> {
    names: Vec<String>,
    params: Vec<Tensor<T>>,
    rng: &'r mut ChaCha8Rng,
    std: f64,
}

impl<T: Scalar> Builder<'_, T> {
    fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        let n: usize = shape.iter().product();
        let values: Vec<T> = match init {
            Init::Zeros => vec![T::zero(); n],
            Init::Ones => vec![T::one(); n],
            Init::Normal => {
                let normal = Normal::new(0.0, self.std).expect("validated std");
                (0..n).map(|_| T::lit(normal.sample(self.rng))).collect()
            }
        };
        self.params
            .push(Tensor::parameter(shape, values).expect("builder shapes are consistent"));
        self.names.push(name);
        self.params.len() - 1
    }

    fn norm(&mut self, prefix: &str, d: usize) -> NormIdx {
        NormIdx {
            gain: self.add(format!("{prefix}.gain"), vec![d], Init::Ones),
            bias: self.add(format!("{prefix}.bias"), vec![d], Init::Zeros),
        }
    }

    fn attn(&mut self, prefix: &str, d: usize) -> AttnIdx {
        let w = |b: &mut Self, n: &str| b.add(format!("{prefix}.{n}"), vec![d, d], Init::Normal);
        let wq = w(self, "wq");
        let bq = self.add(format!("{prefix}.bq"), vec![d], Init::Zeros);
        let wk = w(self, "wk");
        let bk = self.add(format!("{prefix}.bk"), vec![d], Init::Zeros);
        let wv = w(self, "wv");
        let bv = self.add(format!("{prefix}.bv"), vec![d], Init::Zeros);
        let wo = w(self, "wo");
        let bo = self.add(format!("{prefix}.bo"), vec![d], Init::Zeros);
        AttnIdx {
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            wo,
            bo,
        }
    }

    fn ff(&mut self, prefix: &str, d: usize, d_ff: usize) -> FfIdx {
        FfIdx {
            w1: self.add(format!("{prefix}.w1"), vec![d, d_ff], Init::Normal),
            b1: self.add(format!("{prefix}.b1"), vec![d_ff], Init::Zeros),
            w2: self.add(format!("{prefix}.w2"), vec![d_ff, d], Init::Normal),
            b2: self.add(format!("{prefix}.b2"), vec![d], Init::Zeros),
        }
    }

    fn span_head(&mut self, d: usize) -> (usize, usize) {
        (
            self.add("span.start".into(), vec![d, 1], Init::Normal),
            self.add("span.end".into(), vec![d, 1], Init::Normal),
        )
    }
}

/// Parameter handles of a model bound into one graph.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Dropout switch for a forward pass. Inference passes use [`Dropout::off`].
pub struct Dropout<'r> {
    rate: f64,
    rng: Option<&'r mut dyn RngCore>,
}

impl<'r> Dropout<'r> {
    pub fn off() -> Self {
        Self { rate: 0.0, rng: None }
    }

    pub fn new(rate: f64, rng: &'r mut dyn RngCore) -> Self {
        Self { rate, rng: Some(rng) }
    }

    fn apply<T: Scalar>(&mut self, g: &mut Graph<'_, T>, x: Var) -> Var {
        match self.rng.as_deref_mut() {
            Some(rng) if self.rate > 0.0 => g.dropout(x, self.rate, rng),
            _ => x,
        }
    }
}

/// Row offsets of sequences packed into one matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packing {
    pub offsets: Vec<usize>,
    pub lens: Vec<usize>,
}

impl Packing {
    fn new(lens: Vec<usize>) -> Self {
        let mut offsets = Vec::with_capacity(lens.len());
        let mut acc = 0;
        for &l in &lens {
            offsets.push(acc);
            acc += l;
        }
        Self { offsets, lens }
    }

    pub fn total(&self) -> usize {
        self.lens.iter().sum()
    }

    fn self_segments(&self) -> Vec<Segment> {
        self.offsets
            .iter()
            .zip(&self.lens)
            .map(|(&o, &l)| Segment::square(o, l))
            .collect()
    }

    fn cross_segments(&self, memory: &Packing) -> Vec<Segment> {
        (0..self.lens.len())
            .map(|i| Segment::new(self.offsets[i], self.lens[i], memory.offsets[i], memory.lens[i]))
            .collect()
    }
}

/// Encoder-decoder transformer with parameters stored as named tensors.
#[derive(Debug, Clone)]
pub struct Seq2SeqModel<T> {
    config: ModelConfig,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
    layout: Layout,
}

impl<T: Scalar> Seq2SeqModel<T> {
    /// Fresh model: N(0, init_std) weights and embeddings, zero biases, unit
    /// layer-norm gains.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder {
            names: Vec::new(),
            params: Vec::new(),
            rng: &mut rng,
            std: config.init_std,
        };
        let d = config.d_model;
        let tok_emb = b.add("embed.tokens".into(), vec![config.vocab_size, d], Init::Normal);
        let enc_pos = b.add("embed.encoder_positions".into(), vec![config.max_positions, d], Init::Normal);
        let dec_pos = b.add("embed.decoder_positions".into(), vec![config.max_positions, d], Init::Normal);
        let encoder = (0..config.n_encoder_layers)
            .map(|l| {
                let p = format!("encoder.{l}");
                EncoderLayer {
                    ln_attn: b.norm(&format!("{p}.ln_attn"), d),
                    attn: b.attn(&format!("{p}.attn"), d),
                    ln_ff: b.norm(&format!("{p}.ln_ff"), d),
                    ff: b.ff(&format!("{p}.ff"), d, config.d_ff),
                }
            })
            .collect();
        let enc_norm = b.norm("encoder.ln_final", d);
        let decoder = (0..config.n_decoder_layers)
            .map(|l| {
                let p = format!("decoder.{l}");
                DecoderLayer {
                    ln_self: b.norm(&format!("{p}.ln_self"), d),
                    self_attn: b.attn(&format!("{p}.self_attn"), d),
                    ln_cross: b.norm(&format!("{p}.ln_cross"), d),
                    cross_attn: b.attn(&format!("{p}.cross_attn"), d),
                    ln_ff: b.norm(&format!("{p}.ln_ff"), d),
                    ff: b.ff(&format!("{p}.ff"), d, config.d_ff),
                }
            })
            .collect();
        let dec_norm = b.norm("decoder.ln_final", d);
        let span = config.span_head.then(|| b.span_head(d));
        let Builder { names, params, .. } = b;
        Ok(Self {
            config,
            names,
            params,
            layout: Layout {
                tok_emb,
                enc_pos,
                dec_pos,
                encoder,
                enc_norm,
                decoder,
                dec_norm,
                span,
            },
        })
    }

    /// Adds a freshly initialised span head if the model has none.
    pub fn enable_span_head(&mut self, seed: u64) {
        if self.layout.span.is_some() {
            return;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder {
            names: std::mem::take(&mut self.names),
            params: std::mem::take(&mut self.params),
            rng: &mut rng,
            std: self.config.init_std,
        };
        let span = b.span_head(self.config.d_model);
        self.names = b.names;
        self.params = b.params;
        self.layout.span = Some(span);
        self.config.span_head = true;
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn parameters(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn parameter_names(&self) -> &[String] {
        &self.names
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn has_span_head(&self) -> bool {
        self.layout.span.is_some()
    }

    /// Output projection weight; the same tensor as the token embedding.
    pub fn output_projection(&self) -> &Tensor<T> {
        &self.params[self.layout.tok_emb]
    }

    pub fn token_embedding(&self) -> &Tensor<T> {
        &self.params[self.layout.tok_emb]
    }

    /// Binds every parameter as a leaf of `g`.
    pub fn bind<'a>(&'a self, g: &mut Graph<'a, T>) -> Bound {
        Bound {
            vars: self.params.iter().map(|p| g.leaf(p)).collect(),
        }
    }

    /// Builds a loss on a fresh graph, backpropagates and adds the parameter
    /// gradients into the model. Returns the loss value.
    pub fn accumulate_gradients<E, F>(&mut self, loss_fn: F) -> Result<f64, E>
    where
        E: From<ModelError>,
        F: for<'a> FnOnce(&mut Graph<'a, T>, &'a Self, &Bound) -> Result<Var, E>,
    {
        let (loss, grads) = {
            let mut g = Graph::new();
            let b = self.bind(&mut g);
            let loss = loss_fn(&mut g, self, &b)?;
            g.backward(loss).map_err(ModelError::from)?;
            let value = g.value(loss)[0].to_f64().unwrap_or(f64::NAN);
            (value, b.vars.iter().map(|&v| g.grad(v)).collect::<Vec<_>>())
        };
        for (p, grad) in self.params.iter_mut().zip(&grads) {
            p.accumulate_grad(grad).map_err(ModelError::from)?;
        }
        Ok(loss)
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(Tensor::clear_grad);
    }

    fn check_ids(&self, ids: &[TokenId]) -> Result<(), ModelError> {
        if ids.is_empty() {
            return Err(ModelError::Contract("empty token sequence".into()));
        }
        if ids.len() > self.config.max_positions {
            return Err(ModelError::Length {
                len: ids.len(),
                max: self.config.max_positions,
            });
        }
        if let Some(&id) = ids.iter().find(|&&id| id as usize >= self.config.vocab_size) {
            return Err(ModelError::Token {
                id,
                size: self.config.vocab_size,
            });
        }
        Ok(())
    }

    fn norm(&self, g: &mut Graph<'_, T>, b: &Bound, idx: NormIdx, x: Var) -> Result<Var, ModelError> {
        Ok(g.layer_norm(x, b.vars[idx.gain], b.vars[idx.bias], LN_EPS)?)
    }

    fn linear(&self, g: &mut Graph<'_, T>, b: &Bound, w: usize, bias: usize, x: Var) -> Result<Var, ModelError> {
        let y = g.matmul(x, b.vars[w])?;
        Ok(g.add_bias(y, b.vars[bias])?)
    }

    #[allow(clippy::too_many_arguments)]
    fn attention(
        &self,
        g: &mut Graph<'_, T>,
        b: &Bound,
        idx: AttnIdx,
        xq: Var,
        xkv: Var,
        segments: &[Segment],
        causal: bool,
    ) -> Result<Var, ModelError> {
        let q = self.linear(g, b, idx.wq, idx.bq, xq)?;
        let k = self.linear(g, b, idx.wk, idx.bk, xkv)?;
        let v = self.linear(g, b, idx.wv, idx.bv, xkv)?;
        let a = g.attention(q, k, v, self.config.n_heads, segments, causal)?;
        self.linear(g, b, idx.wo, idx.bo, a)
    }

    fn feed_forward(&self, g: &mut Graph<'_, T>, b: &Bound, idx: FfIdx, x: Var) -> Result<Var, ModelError> {
        let h = self.linear(g, b, idx.w1, idx.b1, x)?;
        let h = g.gelu(h);
        self.linear(g, b, idx.w2, idx.b2, h)
    }

    fn embed(&self, g: &mut Graph<'_, T>, b: &Bound, pos_table: usize, seqs: &[&[TokenId]]) -> Result<Var, ModelError> {
        let ids: Vec<usize> = seqs.iter().flat_map(|s| s.iter().map(|&t| t as usize)).collect();
        let pos: Vec<usize> = seqs.iter().flat_map(|s| 0..s.len()).collect();
        let tok = g.embedding(b.vars[self.layout.tok_emb], &ids)?;
        let p = g.embedding(b.vars[pos_table], &pos)?;
        Ok(g.add(tok, p)?)
    }

    /// Encodes packed sequences; returns `Σn × d_model` states.
    pub fn encode_packed(
        &self,
        g: &mut Graph<'_, T>,
        b: &Bound,
        seqs: &[&[TokenId]],
        dropout: &mut Dropout<'_>,
    ) -> Result<(Var, Packing), ModelError> {
        if seqs.is_empty() {
            return Err(ModelError::Contract("empty batch".into()));
        }
        for s in seqs {
            self.check_ids(s)?;
        }
        let packing = Packing::new(seqs.iter().map(|s| s.len()).collect());
        let segments = packing.self_segments();
        let mut x = self.embed(g, b, self.layout.enc_pos, seqs)?;
        x = dropout.apply(g, x);
        for layer in &self.layout.encoder {
            let h = self.norm(g, b, layer.ln_attn, x)?;
            let a = self.attention(g, b, layer.attn, h, h, &segments, false)?;
            let a = dropout.apply(g, a);
            x = g.add(x, a)?;
            let h = self.norm(g, b, layer.ln_ff, x)?;
            let f = self.feed_forward(g, b, layer.ff, h)?;
            let f = dropout.apply(g, f);
            x = g.add(x, f)?;
        }
        let x = self.norm(g, b, self.layout.enc_norm, x)?;
        Ok((x, packing))
    }

    /// Teacher-forced decoder over packed targets. The decoder input for each
    /// target is `<s>` followed by the target shifted right by one. Returns
    /// `Σn × vocab_size` logits and the target packing.
    pub fn decode_packed(
        &self,
        g: &mut Graph<'_, T>,
        b: &Bound,
        memory: Var,
        memory_packing: &Packing,
        targets: &[&[TokenId]],
        dropout: &mut Dropout<'_>,
    ) -> Result<(Var, Packing), ModelError> {
        if targets.len() != memory_packing.lens.len() {
            return Err(ModelError::Contract(format!(
                "{} targets for {} encoded sequences",
                targets.len(),
                memory_packing.lens.len()
            )));
        }
        for t in targets {
            self.check_ids(t)?;
        }
        let shifted: Vec<Vec<TokenId>> = targets
            .iter()
            .map(|t| std::iter::once(BOS_ID).chain(t[..t.len() - 1].iter().copied()).collect())
            .collect();
        let shifted_refs: Vec<&[TokenId]> = shifted.iter().map(Vec::as_slice).collect();
        let packing = Packing::new(targets.iter().map(|t| t.len()).collect());
        let self_segments = packing.self_segments();
        let cross_segments = packing.cross_segments(memory_packing);
        let mut y = self.embed(g, b, self.layout.dec_pos, &shifted_refs)?;
        y = dropout.apply(g, y);
        for layer in &self.layout.decoder {
            let h = self.norm(g, b, layer.ln_self, y)?;
            let a = self.attention(g, b, layer.self_attn, h, h, &self_segments, true)?;
            let a = dropout.apply(g, a);
            y = g.add(y, a)?;
            let h = self.norm(g, b, layer.ln_cross, y)?;
            let c = self.attention(g, b, layer.cross_attn, h, memory, &cross_segments, false)?;
            let c = dropout.apply(g, c);
            y = g.add(y, c)?;
            let h = self.norm(g, b, layer.ln_ff, y)?;
            let f = self.feed_forward(g, b, layer.ff, h)?;
            let f = dropout.apply(g, f);
            y = g.add(y, f)?;
        }
        let y = self.norm(g, b, self.layout.dec_norm, y)?;
        let logits = g.matmul_nt(y, b.vars[self.layout.tok_emb])?;
        Ok((logits, packing))
    }

    /// Start and end logits (`Σn × 1` each) over packed encoder states.
    pub fn span_logits_packed(&self, g: &mut Graph<'_, T>, b: &Bound, memory: Var) -> Result<(Var, Var), ModelError> {
        let (start, end) = self
            .layout
            .span
            .ok_or_else(|| ModelError::Config("model has no span head".into()))?;
        Ok((g.matmul(memory, b.vars[start])?, g.matmul(memory, b.vars[end])?))
    }

    /// Encoder states `n × d_model` of one sequence.
    pub fn encode(&self, input_ids: &[TokenId]) -> Result<Tensor<T>, ModelError> {
        let mut g = Graph::new();
        let b = self.bind(&mut g);
        let (x, _) = self.encode_packed(&mut g, &b, &[input_ids], &mut Dropout::off())?;
        Ok(g.tensor(x))
    }

    /// Teacher-forced logits `n × vocab_size` for one pair.
    pub fn forward_teacher_forced(&self, input_ids: &[TokenId], target_ids: &[TokenId]) -> Result<Tensor<T>, ModelError> {
        let mut g = Graph::new();
        let b = self.bind(&mut g);
        let (mem, mp) = self.encode_packed(&mut g, &b, &[input_ids], &mut Dropout::off())?;
        let (logits, _) = self.decode_packed(&mut g, &b, mem, &mp, &[target_ids], &mut Dropout::off())?;
        Ok(g.tensor(logits))
    }

    /// Start and end logits over the input positions.
    pub fn span_head_forward(&self, input_ids: &[TokenId]) -> Result<(Vec<T>, Vec<T>), ModelError> {
        if !self.has_span_head() {
            return Err(ModelError::Config("model has no span head".into()));
        }
        let mut g = Graph::new();
        let b = self.bind(&mut g);
        let (mem, _) = self.encode_packed(&mut g, &b, &[input_ids], &mut Dropout::off())?;
        let (s, e) = self.span_logits_packed(&mut g, &b, mem)?;
        Ok((g.value(s).to_vec(), g.value(e).to_vec()))
    }

    /// Encodes the source once and precomputes cross-attention keys and values
    /// for incremental decoding.
    pub fn start_decoding(&self, input_ids: &[TokenId]) -> Result<DecoderCache<T>, ModelError> {
        let mut g = Graph::new();
        let b = self.bind(&mut g);
        let (mem, packing) = self.encode_packed(&mut g, &b, &[input_ids], &mut Dropout::off())?;
        let mut cross_k = Vec::new();
        let mut cross_v = Vec::new();
        for layer in &self.layout.decoder {
            let idx = layer.cross_attn;
            let k = self.linear(&mut g, &b, idx.wk, idx.bk, mem)?;
            let v = self.linear(&mut g, &b, idx.wv, idx.bv, mem)?;
            cross_k.push(g.value(k).to_vec());
            cross_v.push(g.value(v).to_vec());
        }
        let n_layers = self.layout.decoder.len();
        Ok(DecoderCache {
            source_len: packing.total(),
            cross_k,
            cross_v,
            self_k: vec![Vec::new(); n_layers],
            self_v: vec![Vec::new(); n_layers],
            position: 0,
        })
    }

    /// Feeds one decoder token and returns next-token logits. Equivalent to
    /// the last row of [`Seq2SeqModel::forward_teacher_forced`] on the prefix.
    pub fn decode_step(&self, cache: &mut DecoderCache<T>, token: TokenId) -> Result<Vec<T>, ModelError> {
        if cache.position >= self.config.max_positions {
            return Err(ModelError::Length {
                len: cache.position + 1,
                max: self.config.max_positions,
            });
        }
        if token as usize >= self.config.vocab_size {
            return Err(ModelError::Token {
                id: token,
                size: self.config.vocab_size,
            });
        }
        let d = self.config.d_model;
        let t = cache.position + 1;
        let mut g = Graph::new();
        let b = self.bind(&mut g);
        let tok = g.embedding(b.vars[self.layout.tok_emb], &[token as usize])?;
        let pos = g.embedding(b.vars[self.layout.dec_pos], &[cache.position])?;
        let mut y = g.add(tok, pos)?;
        let self_seg = [Segment::new(0, 1, 0, t)];
        let cross_seg = [Segment::new(0, 1, 0, cache.source_len)];
        for (l, layer) in self.layout.decoder.iter().enumerate() {
            let h = self.norm(&mut g, &b, layer.ln_self, y)?;
            let idx = layer.self_attn;
            let q = self.linear(&mut g, &b, idx.wq, idx.bq, h)?;
            let k = self.linear(&mut g, &b, idx.wk, idx.bk, h)?;
            let v = self.linear(&mut g, &b, idx.wv, idx.bv, h)?;
            cache.self_k[l].extend_from_slice(g.value(k));
            cache.self_v[l].extend_from_slice(g.value(v));
            let ks = g.input(vec![t, d], cache.self_k[l].clone(), false)?;
            let vs = g.input(vec![t, d], cache.self_v[l].clone(), false)?;
            let a = g.attention(q, ks, vs, self.config.n_heads, &self_seg, false)?;
            let a = self.linear(&mut g, &b, idx.wo, idx.bo, a)?;
            y = g.add(y, a)?;

            let h = self.norm(&mut g, &b, layer.ln_cross, y)?;
            let idx = layer.cross_attn;
            let q = self.linear(&mut g, &b, idx.wq, idx.bq, h)?;
            let ks = g.input(vec![cache.source_len, d], cache.cross_k[l].clone(), false)?;
            let vs = g.input(vec![cache.source_len, d], cache.cross_v[l].clone(), false)?;
            let c = g.attention(q, ks, vs, self.config.n_heads, &cross_seg, false)?;
            let c = self.linear(&mut g, &b, idx.wo, idx.bo, c)?;
            y = g.add(y, c)?;

            let h = self.norm(&mut g, &b, layer.ln_ff, y)?;
            let f = self.feed_forward(&mut g, &b, layer.ff, h)?;
            y = g.add(y, f)?;
        }
        let y = self.norm(&mut g, &b, self.layout.dec_norm, y)?;
        let logits = g.matmul_nt(y, b.vars[self.layout.tok_emb])?;
        cache.position += 1;
        Ok(g.value(logits).to_vec())
    }
}

/// Incremental decoding state for one source sequence.
#[derive(Debug, Clone)]
pub struct DecoderCache<T> {
    source_len: usize,
    cross_k: Vec<Vec<T>>,
    cross_v: Vec<Vec<T>>,
    self_k: Vec<Vec<T>>,
    self_v: Vec<Vec<T>>,
    position: usize,
}

impl<T> DecoderCache<T> {
    /// Number of decoder tokens consumed so far.
    pub fn position(&self) -> usize {
        self.position
    }
}
