//! A small BERT-style transformer encoder with hand-written backpropagation.
//!
//! Block layout (post-layer-norm):
//!
//! ```text
//! x0 = token_emb[ids] (· projection) + position_emb + segment_emb
//! x  = LayerNorm(x0)
//! repeat num_layers times:
//!     a = MultiHeadAttention(x)            masked keys get -inf logits
//!     y = LayerNorm(x + a)
//!     x = LayerNorm(y + W2 · gelu(W1 · y))
//! ```
//!
//! Optional ALBERT-style features: `share_layers` makes every layer apply the
//! same parameter block, and `embed_dim < hidden` stores token embeddings at
//! `embed_dim` and projects them up to `hidden` with a bias-free matrix.
//! `freeze_embeddings` marks the token, position and segment tables and the
//! embedding layer norm as not trainable.
//!
//! Parameter names (also used in checkpoints):
//!
//! | name | shape |
//! |------|-------|
//! | `embeddings.token` | vocab_size × embed_dim |
//! | `embeddings.projection` | embed_dim × hidden (only when factorized) |
//! | `embeddings.position` | max_len × hidden |
//! | `embeddings.segment` | 2 × hidden |
//! | `embeddings.norm.scale`, `embeddings.norm.shift` | 1 × hidden |
//! | `layer.{i}.attn.{q,k,v,o}` | hidden × hidden |
//! | `layer.{i}.attn.{q,k,v,o}.bias` | 1 × hidden |
//! | `layer.{i}.attn.norm.{scale,shift}` | 1 × hidden |
//! | `layer.{i}.ffn.up`, `layer.{i}.ffn.up.bias` | hidden × ffn, 1 × ffn |
//! | `layer.{i}.ffn.down`, `layer.{i}.ffn.down.bias` | ffn × hidden, 1 × hidden |
//! | `layer.{i}.ffn.norm.{scale,shift}` | 1 × hidden |
//!
//! With shared layers only `layer.0.*` exists.

mod gradcheck;
mod model;
pub mod tensor;

use serde::{Deserialize, Serialize};

use crate::rng::SplitMix64;
pub use gradcheck::{
    check_gradients, check_gradients_with, CoordinateReport, GradCheckOptions, GradCheckReport,
    GradientFault, PipelineReport,
};
pub use model::{backward, forward, GradientSet, SequenceOutput, SequenceTape, Tape};
pub(crate) use model::{backward_sequence, run_sequence};
pub use tensor::{Scalar, Tensor};

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EncoderError {
    #[error("invalid encoder config: {0}")]
    Config(String),
    #[error("token id {id} at position {position} is out of range for vocab_size {vocab_size}")]
    IdOutOfRange {
        id: u32,
        position: usize,
        vocab_size: usize,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("tape was recorded against parameters that have since changed")]
    StaleTape,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub hidden: usize,
    pub ffn: usize,
    pub embed_dim: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub share_layers: bool,
    pub freeze_embeddings: bool,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            num_layers: 2,
            num_heads: 4,
            hidden: 64,
            ffn: 256,
            embed_dim: 64,
            vocab_size: 8000,
            max_len: 128,
            share_layers: false,
            freeze_embeddings: false,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    /// Desk-scale ALBERT analogue: shared layers and 32-wide token embeddings.
    pub fn albert() -> Self {
        EncoderConfig {
            embed_dim: 32,
            share_layers: true,
            ..EncoderConfig::default()
        }
    }

    /// Smallest useful shape, for gradient checks.
    pub fn tiny() -> Self {
        EncoderConfig {
            num_layers: 1,
            num_heads: 2,
            hidden: 8,
            ffn: 16,
            embed_dim: 8,
            vocab_size: 16,
            max_len: 6,
            share_layers: false,
            freeze_embeddings: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let fail = |msg: String| Err(EncoderError::Config(msg));
        for (name, value) in [
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("hidden", self.hidden),
            ("ffn", self.ffn),
            ("embed_dim", self.embed_dim),
            ("vocab_size", self.vocab_size),
            ("max_len", self.max_len),
        ] {
            if value == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if !self.hidden.is_multiple_of(self.num_heads) {
            return fail(format!(
                "hidden {} is not divisible by num_heads {}",
                self.hidden, self.num_heads
            ));
        }
        if self.embed_dim > self.hidden {
            return fail(format!(
                "embed_dim {} exceeds hidden {}",
                self.embed_dim, self.hidden
            ));
        }
        Ok(())
    }

    pub fn is_factorized(&self) -> bool {
        self.embed_dim < self.hidden
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.num_heads
    }

    /// Number of distinct parameter blocks in the stack.
    pub fn stored_blocks(&self) -> usize {
        if self.share_layers {
            1
        } else {
            self.num_layers
        }
    }

    /// Index of the parameter block applied at `layer`.
    pub fn block_for_layer(&self, layer: usize) -> usize {
        if self.share_layers {
            0
        } else {
            layer
        }
    }
}

/// Parameters of one transformer block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<T> {
    pub q: Tensor<T>,
    pub q_bias: Tensor<T>,
    pub k: Tensor<T>,
    pub k_bias: Tensor<T>,
    pub v: Tensor<T>,
    pub v_bias: Tensor<T>,
    pub o: Tensor<T>,
    pub o_bias: Tensor<T>,
    pub attn_norm_scale: Tensor<T>,
    pub attn_norm_shift: Tensor<T>,
    pub ffn_up: Tensor<T>,
    pub ffn_up_bias: Tensor<T>,
    pub ffn_down: Tensor<T>,
    pub ffn_down_bias: Tensor<T>,
    pub ffn_norm_scale: Tensor<T>,
    pub ffn_norm_shift: Tensor<T>,
}

impl<T: Scalar> BlockParams<T> {
    fn zeros(hidden: usize, ffn: usize) -> Self {
        let square = || Tensor::zeros(hidden, hidden);
        let row = || Tensor::zeros(1, hidden);
        BlockParams {
            q: square(),
            q_bias: row(),
            k: square(),
            k_bias: row(),
            v: square(),
            v_bias: row(),
            o: square(),
            o_bias: row(),
            attn_norm_scale: row(),
            attn_norm_shift: row(),
            ffn_up: Tensor::zeros(hidden, ffn),
            ffn_up_bias: Tensor::zeros(1, ffn),
            ffn_down: Tensor::zeros(ffn, hidden),
            ffn_down_bias: row(),
            ffn_norm_scale: row(),
            ffn_norm_shift: row(),
        }
    }

    fn named(&self, prefix: &str) -> Vec<(String, &Tensor<T>)> {
        let p = |suffix: &str| format!("{prefix}.{suffix}");
        vec![
            (p("attn.q"), &self.q),
            (p("attn.q.bias"), &self.q_bias),
            (p("attn.k"), &self.k),
            (p("attn.k.bias"), &self.k_bias),
            (p("attn.v"), &self.v),
            (p("attn.v.bias"), &self.v_bias),
            (p("attn.o"), &self.o),
            (p("attn.o.bias"), &self.o_bias),
            (p("attn.norm.scale"), &self.attn_norm_scale),
            (p("attn.norm.shift"), &self.attn_norm_shift),
            (p("ffn.up"), &self.ffn_up),
            (p("ffn.up.bias"), &self.ffn_up_bias),
            (p("ffn.down"), &self.ffn_down),
            (p("ffn.down.bias"), &self.ffn_down_bias),
            (p("ffn.norm.scale"), &self.ffn_norm_scale),
            (p("ffn.norm.shift"), &self.ffn_norm_shift),
        ]
    }

    fn named_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor<T>)> {
        let p = |suffix: &str| format!("{prefix}.{suffix}");
        let BlockParams {
            q,
            q_bias,
            k,
            k_bias,
            v,
            v_bias,
            o,
            o_bias,
            attn_norm_scale,
            attn_norm_shift,
            ffn_up,
            ffn_up_bias,
            ffn_down,
            ffn_down_bias,
            ffn_norm_scale,
            ffn_norm_shift,
        } = self;
        vec![
            (p("attn.q"), q),
            (p("attn.q.bias"), q_bias),
            (p("attn.k"), k),
            (p("attn.k.bias"), k_bias),
            (p("attn.v"), v),
            (p("attn.v.bias"), v_bias),
            (p("attn.o"), o),
            (p("attn.o.bias"), o_bias),
            (p("attn.norm.scale"), attn_norm_scale),
            (p("attn.norm.shift"), attn_norm_shift),
            (p("ffn.up"), ffn_up),
            (p("ffn.up.bias"), ffn_up_bias),
            (p("ffn.down"), ffn_down),
            (p("ffn.down.bias"), ffn_down_bias),
            (p("ffn.norm.scale"), ffn_norm_scale),
            (p("ffn.norm.shift"), ffn_norm_shift),
        ]
    }
}

/// Embedding sublayer parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingParams<T> {
    pub token: Tensor<T>,
    pub projection: Option<Tensor<T>>,
    pub position: Tensor<T>,
    pub segment: Tensor<T>,
    pub norm_scale: Tensor<T>,
    pub norm_shift: Tensor<T>,
}

/// Every encoder parameter, in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T> {
    pub embeddings: EmbeddingParams<T>,
    pub blocks: Vec<BlockParams<T>>,
}

impl<T: Scalar> EncoderParams<T> {
    /// All-zero parameters shaped for `config` (the gradient accumulator shape).
    pub fn zeros(config: &EncoderConfig) -> Self {
        let h = config.hidden;
        EncoderParams {
            embeddings: EmbeddingParams {
                token: Tensor::zeros(config.vocab_size, config.embed_dim),
                projection: config
                    .is_factorized()
                    .then(|| Tensor::zeros(config.embed_dim, h)),
                position: Tensor::zeros(config.max_len, h),
                segment: Tensor::zeros(2, h),
                norm_scale: Tensor::zeros(1, h),
                norm_shift: Tensor::zeros(1, h),
            },
            blocks: (0..config.stored_blocks())
                .map(|_| BlockParams::zeros(h, config.ffn))
                .collect(),
        }
    }

    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let e = &self.embeddings;
        let mut out = vec![("embeddings.token".to_string(), &e.token)];
        if let Some(p) = &e.projection {
            out.push(("embeddings.projection".to_string(), p));
        }
        out.push(("embeddings.position".to_string(), &e.position));
        out.push(("embeddings.segment".to_string(), &e.segment));
        out.push(("embeddings.norm.scale".to_string(), &e.norm_scale));
        out.push(("embeddings.norm.shift".to_string(), &e.norm_shift));
        for (i, block) in self.blocks.iter().enumerate() {
            out.extend(block.named(&format!("layer.{i}")));
        }
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let EmbeddingParams {
            token,
            projection,
            position,
            segment,
            norm_scale,
            norm_shift,
        } = &mut self.embeddings;
        let mut out = vec![("embeddings.token".to_string(), token)];
        if let Some(p) = projection {
            out.push(("embeddings.projection".to_string(), p));
        }
        out.push(("embeddings.position".to_string(), position));
        out.push(("embeddings.segment".to_string(), segment));
        out.push(("embeddings.norm.scale".to_string(), norm_scale));
        out.push(("embeddings.norm.shift".to_string(), norm_shift));
        for (i, block) in self.blocks.iter_mut().enumerate() {
            out.extend(block.named_mut(&format!("layer.{i}")));
        }
        out
    }

    pub fn fill_zero(&mut self) {
        for (_, t) in self.named_mut() {
            t.fill_zero();
        }
    }

    pub fn cast<U: Scalar>(&self) -> EncoderParams<U> {
        let e = &self.embeddings;
        EncoderParams {
            embeddings: EmbeddingParams {
                token: e.token.cast(),
                projection: e.projection.as_ref().map(Tensor::cast),
                position: e.position.cast(),
                segment: e.segment.cast(),
                norm_scale: e.norm_scale.cast(),
                norm_shift: e.norm_shift.cast(),
            },
            blocks: self
                .blocks
                .iter()
                .map(|b| {
                    let mut out = BlockParams::zeros(b.q.rows, b.ffn_up.cols);
                    for ((_, dst), (_, src)) in out.named_mut("").into_iter().zip(b.named("")) {
                        *dst = src.cast();
                    }
                    out
                })
                .collect(),
        }
    }
}

/// Names excluded from training when `freeze_embeddings` is set.
pub fn is_embedding_param(name: &str) -> bool {
    matches!(
        name,
        "embeddings.token"
            | "embeddings.position"
            | "embeddings.segment"
            | "embeddings.norm.scale"
            | "embeddings.norm.shift"
    )
}

fn is_norm_scale(name: &str) -> bool {
    name.ends_with("norm.scale")
}

fn is_bias_or_shift(name: &str) -> bool {
    name.ends_with(".bias") || name.ends_with("norm.shift")
}

/// Encoder parameters plus configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderState<T> {
    config: EncoderConfig,
    params: EncoderParams<T>,
    version: u64,
}

impl<T: Scalar> EncoderState<T> {
    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &EncoderParams<T> {
        &self.params
    }

    /// Mutable access; invalidates any outstanding [`Tape`].
    pub fn params_mut(&mut self) -> &mut EncoderParams<T> {
        self.version += 1;
        &mut self.params
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        !(self.config.freeze_embeddings && is_embedding_param(name))
    }

    /// Per-parameter trainable mask, in parameter order.
    pub fn trainable_mask(&self) -> Vec<(String, bool)> {
        self.params
            .named()
            .into_iter()
            .map(|(name, _)| {
                let trainable = self.is_trainable(&name);
                (name, trainable)
            })
            .collect()
    }

    /// Rebuilds a state from stored parameters, checking every shape.
    pub fn from_params(config: EncoderConfig, params: EncoderParams<T>) -> Result<Self, EncoderError> {
        config.validate()?;
        let expected = EncoderParams::<T>::zeros(&config);
        let want = expected.named();
        let have = params.named();
        if want.len() != have.len() {
            return Err(EncoderError::Shape(format!(
                "expected {} parameter tensors, found {}",
                want.len(),
                have.len()
            )));
        }
        for ((wn, wt), (hn, ht)) in want.iter().zip(&have) {
            if wn != hn || wt.rows != ht.rows || wt.cols != ht.cols {
                return Err(EncoderError::Shape(format!(
                    "{hn} is {}x{}, expected {wn} {}x{}",
                    ht.rows, ht.cols, wt.rows, wt.cols
                )));
            }
        }
        Ok(EncoderState {
            config,
            params,
            version: 0,
        })
    }

    pub fn cast<U: Scalar>(&self) -> EncoderState<U> {
        EncoderState {
            config: self.config.clone(),
            params: self.params.cast(),
            version: 0,
        }
    }
}

/// Fresh encoder: weights from a ±2σ-truncated Normal(0, 0.02) stream seeded
/// by `config.seed`, layer-norm scales 1, biases and shifts 0.
pub fn init_encoder<T: Scalar>(config: &EncoderConfig) -> Result<EncoderState<T>, EncoderError> {
    config.validate()?;
    let mut params = EncoderParams::<T>::zeros(config);
    let mut rng = SplitMix64::derived(config.seed, 0xE7C0);
    for (name, tensor) in params.named_mut() {
        if is_norm_scale(&name) {
            tensor.data.iter_mut().for_each(|x| *x = T::one());
        } else if !is_bias_or_shift(&name) {
            for x in tensor.data.iter_mut() {
                *x = T::of(rng.truncated_normal(INIT_STD));
            }
        }
    }
    Ok(EncoderState {
        config: config.clone(),
        params,
        version: 0,
    })
}

/// Exact number of encoder parameters (trainable and frozen).
pub fn param_count(config: &EncoderConfig) -> Result<usize, EncoderError> {
    config.validate()?;
    let h = config.hidden;
    let embeddings = config.vocab_size * config.embed_dim
        + if config.is_factorized() {
            config.embed_dim * h
        } else {
            0
        }
        + config.max_len * h
        + 2 * h
        + 2 * h;
    Ok(embeddings + config.stored_blocks() * block_param_count(config))
}

/// Parameters in one transformer block.
pub fn block_param_count(config: &EncoderConfig) -> usize {
    let h = config.hidden;
    let f = config.ffn;
    4 * (h * h + h) + 2 * h + (h * f + f) + (f * h + h) + 2 * h
}
