use super::tensor::{
    gelu, gelu_grad, layer_norm, layer_norm_backward, linear, linear_backward, matmul_acc,
    matmul_at_b_acc, matmul_a_bt_acc, NormCache, Scalar, Tensor,
};
use super::{BlockParams, EncoderError, EncoderParams, EncoderState};
use crate::tokenizer::Encoding;

/// Encoder output for one input sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceOutput<T> {
    /// `len × hidden`
    pub hidden_states: Tensor<T>,
}

impl<T: Scalar> SequenceOutput<T> {
    /// Representation at position 0 (`[CLS]`).
    pub fn cls_vector(&self) -> &[T] {
        self.hidden_states.row(0)
    }
}

#[derive(Debug, Clone)]
struct LayerTape<T> {
    input: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// heads × len × len attention weights
    probs: Vec<T>,
    context: Vec<T>,
    attn_norm: NormCache<T>,
    mid: Vec<T>,
    up: Vec<T>,
    act: Vec<T>,
    ffn_norm: NormCache<T>,
}

/// Intermediate values of one sequence's forward pass.
#[derive(Debug, Clone)]
pub struct SequenceTape<T> {
    len: usize,
    ids: Vec<u32>,
    segments: Vec<u8>,
    token_rows: Vec<T>,
    emb_norm: NormCache<T>,
    layers: Vec<LayerTape<T>>,
}

impl<T: Scalar> SequenceTape<T> {
    /// Attention weights of `layer` as `heads × len × len` (row = query).
    pub fn attention(&self, layer: usize) -> &[T] {
        &self.layers[layer].probs
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Record of a batched [`forward`] call, consumed by [`backward`].
#[derive(Debug, Clone)]
pub struct Tape<T> {
    version: u64,
    pub sequences: Vec<SequenceTape<T>>,
}

/// Gradients of the trainable parameters, in parameter order. Frozen
/// parameters have no entry.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet<T> {
    pub entries: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> GradientSet<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub(crate) fn from_full(state: &EncoderState<T>, full: EncoderParams<T>) -> Self {
        let mut full = full;
        GradientSet {
            entries: full
                .named_mut()
                .into_iter()
                .filter(|(name, _)| state.is_trainable(name))
                .map(|(name, t)| (name, std::mem::replace(t, Tensor::zeros(0, 0))))
                .collect(),
        }
    }
}

fn attention<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    len: usize,
    hidden: usize,
    heads: usize,
    key_mask: Option<&[bool]>,
) -> (Vec<T>, Vec<T>) {
    let d = hidden / heads;
    let scale = T::one() / T::of(d as f64).sqrt();
    let mut probs = vec![T::zero(); heads * len * len];
    let mut context = vec![T::zero(); len * hidden];
    for h in 0..heads {
        let off = h * d;
        for i in 0..len {
            let row = &mut probs[(h * len + i) * len..(h * len + i + 1) * len];
            let qi = &q[i * hidden + off..i * hidden + off + d];
            let mut max = T::neg_infinity();
            for (j, p) in row.iter_mut().enumerate() {
                if key_mask.is_some_and(|m| !m[j]) {
                    *p = T::neg_infinity();
                    continue;
                }
                let kj = &k[j * hidden + off..j * hidden + off + d];
                let s = super::tensor::dot(qi, kj) * scale;
                *p = s;
                if s > max {
                    max = s;
                }
            }
            let mut sum = T::zero();
            for p in row.iter_mut() {
                *p = if *p == T::neg_infinity() {
                    T::zero()
                } else {
                    (*p - max).exp()
                };
                sum += *p;
            }
            for p in row.iter_mut() {
                *p /= sum;
            }
            let ctx = &mut context[i * hidden + off..i * hidden + off + d];
            for (j, &p) in row.iter().enumerate() {
                if p == T::zero() {
                    continue;
                }
                let vj = &v[j * hidden + off..j * hidden + off + d];
                for (c, &x) in ctx.iter_mut().zip(vj) {
                    *c += p * x;
                }
            }
        }
    }
    (probs, context)
}

#[allow(clippy::too_many_arguments)]
fn attention_backward<T: Scalar>(
    d_context: &[T],
    tape: &LayerTape<T>,
    len: usize,
    hidden: usize,
    heads: usize,
    d_q: &mut [T],
    d_k: &mut [T],
    d_v: &mut [T],
) {
    let d = hidden / heads;
    let scale = T::one() / T::of(d as f64).sqrt();
    let mut d_p = vec![T::zero(); len];
    for h in 0..heads {
        let off = h * d;
        for i in 0..len {
            let p_row = &tape.probs[(h * len + i) * len..(h * len + i + 1) * len];
            let dc = &d_context[i * hidden + off..i * hidden + off + d];
            let mut weighted = T::zero();
            for j in 0..len {
                if p_row[j] == T::zero() {
                    d_p[j] = T::zero();
                    continue;
                }
                let vj = &tape.v[j * hidden + off..j * hidden + off + d];
                d_p[j] = super::tensor::dot(dc, vj);
                weighted += p_row[j] * d_p[j];
                let dvj = &mut d_v[j * hidden + off..j * hidden + off + d];
                for (g, &x) in dvj.iter_mut().zip(dc) {
                    *g += p_row[j] * x;
                }
            }
            for j in 0..len {
                let p = p_row[j];
                if p == T::zero() {
                    continue;
                }
                let ds = p * (d_p[j] - weighted) * scale;
                let qi = &tape.q[i * hidden + off..i * hidden + off + d];
                let kj = &tape.k[j * hidden + off..j * hidden + off + d];
                let dqi = &mut d_q[i * hidden + off..i * hidden + off + d];
                for (g, &x) in dqi.iter_mut().zip(kj) {
                    *g += ds * x;
                }
                let dkj = &mut d_k[j * hidden + off..j * hidden + off + d];
                for (g, &x) in dkj.iter_mut().zip(qi) {
                    *g += ds * x;
                }
            }
        }
    }
}

fn block_forward<T: Scalar>(
    p: &BlockParams<T>,
    x: Vec<T>,
    len: usize,
    hidden: usize,
    heads: usize,
    ffn: usize,
    key_mask: Option<&[bool]>,
) -> (Vec<T>, LayerTape<T>) {
    let q = linear(&x, len, &p.q, &p.q_bias);
    let k = linear(&x, len, &p.k, &p.k_bias);
    let v = linear(&x, len, &p.v, &p.v_bias);
    let (probs, context) = attention(&q, &k, &v, len, hidden, heads, key_mask);
    let mut attn_sum = linear(&context, len, &p.o, &p.o_bias);
    for (a, &r) in attn_sum.iter_mut().zip(&x) {
        *a += r;
    }
    let (mid, attn_norm) = layer_norm(&attn_sum, hidden, &p.attn_norm_scale, &p.attn_norm_shift);
    let up = linear(&mid, len, &p.ffn_up, &p.ffn_up_bias);
    let act: Vec<T> = up.iter().map(|&u| gelu(u)).collect();
    let mut ffn_sum = linear(&act, len, &p.ffn_down, &p.ffn_down_bias);
    debug_assert_eq!(ffn_sum.len(), len * hidden);
    for (f, &r) in ffn_sum.iter_mut().zip(&mid) {
        *f += r;
    }
    let (out, ffn_norm) = layer_norm(&ffn_sum, hidden, &p.ffn_norm_scale, &p.ffn_norm_shift);
    debug_assert_eq!(up.len(), len * ffn);
    (
        out,
        LayerTape {
            input: x,
            q,
            k,
            v,
            probs,
            context,
            attn_norm,
            mid,
            up,
            act,
            ffn_norm,
        },
    )
}

fn block_backward<T: Scalar>(
    p: &BlockParams<T>,
    g: &mut BlockParams<T>,
    tape: &LayerTape<T>,
    d_out: &[T],
    len: usize,
    hidden: usize,
    heads: usize,
) -> Vec<T> {
    let d_ffn_sum = layer_norm_backward(
        d_out,
        hidden,
        &p.ffn_norm_scale,
        &tape.ffn_norm,
        &mut g.ffn_norm_scale,
        &mut g.ffn_norm_shift,
    );
    let mut d_act = linear_backward(
        &tape.act,
        len,
        &p.ffn_down,
        &d_ffn_sum,
        &mut g.ffn_down,
        &mut g.ffn_down_bias,
    );
    for (da, &u) in d_act.iter_mut().zip(&tape.up) {
        *da *= gelu_grad(u);
    }
    let mut d_mid = linear_backward(
        &tape.mid,
        len,
        &p.ffn_up,
        &d_act,
        &mut g.ffn_up,
        &mut g.ffn_up_bias,
    );
    for (dm, &r) in d_mid.iter_mut().zip(&d_ffn_sum) {
        *dm += r;
    }
    let d_attn_sum = layer_norm_backward(
        &d_mid,
        hidden,
        &p.attn_norm_scale,
        &tape.attn_norm,
        &mut g.attn_norm_scale,
        &mut g.attn_norm_shift,
    );
    let d_context = linear_backward(
        &tape.context,
        len,
        &p.o,
        &d_attn_sum,
        &mut g.o,
        &mut g.o_bias,
    );
    let mut d_q = vec![T::zero(); len * hidden];
    let mut d_k = vec![T::zero(); len * hidden];
    let mut d_v = vec![T::zero(); len * hidden];
    attention_backward(&d_context, tape, len, hidden, heads, &mut d_q, &mut d_k, &mut d_v);
    let mut d_x = d_attn_sum;
    for (proj, grad_w, grad_b, d) in [
        (&p.q, &mut g.q, &mut g.q_bias, &d_q),
        (&p.k, &mut g.k, &mut g.k_bias, &d_k),
        (&p.v, &mut g.v, &mut g.v_bias, &d_v),
    ] {
        let dx = linear_backward(&tape.input, len, proj, d, grad_w, grad_b);
        for (acc, x) in d_x.iter_mut().zip(dx) {
            *acc += x;
        }
    }
    d_x
}

/// Runs one sequence of `ids.len()` positions. `key_mask[j] == false` hides
/// position `j` from every query.
pub(crate) fn run_sequence<T: Scalar>(
    state: &EncoderState<T>,
    ids: &[u32],
    segments: &[u8],
    key_mask: Option<&[bool]>,
) -> Result<(Tensor<T>, SequenceTape<T>), EncoderError> {
    let config = state.config();
    let params = state.params();
    let len = ids.len();
    let hidden = config.hidden;
    if len == 0 || len > config.max_len {
        return Err(EncoderError::Shape(format!(
            "sequence length {len} outside 1..={}",
            config.max_len
        )));
    }
    if segments.len() != len || key_mask.is_some_and(|m| m.len() != len) {
        return Err(EncoderError::Shape(
            "ids, segments and mask lengths differ".into(),
        ));
    }
    for (position, &id) in ids.iter().enumerate() {
        if id as usize >= config.vocab_size {
            return Err(EncoderError::IdOutOfRange {
                id,
                position,
                vocab_size: config.vocab_size,
            });
        }
    }
    if let Some(&s) = segments.iter().find(|&&s| s > 1) {
        return Err(EncoderError::Shape(format!("segment id {s} is not 0 or 1")));
    }

    let emb = &params.embeddings;
    let mut token_rows = Vec::with_capacity(len * config.embed_dim);
    for &id in ids {
        token_rows.extend_from_slice(emb.token.row(id as usize));
    }
    let mut x0 = match &emb.projection {
        Some(proj) => {
            let mut out = vec![T::zero(); len * hidden];
            matmul_acc(&mut out, &token_rows, &proj.data, len, config.embed_dim, hidden);
            out
        }
        None => token_rows.clone(),
    };
    for i in 0..len {
        let pos = emb.position.row(i);
        let seg = emb.segment.row(segments[i] as usize);
        for ((x, &p), &s) in x0[i * hidden..(i + 1) * hidden].iter_mut().zip(pos).zip(seg) {
            *x += p + s;
        }
    }
    let (mut x, emb_norm) = layer_norm(&x0, hidden, &emb.norm_scale, &emb.norm_shift);

    let mut layers = Vec::with_capacity(config.num_layers);
    for layer in 0..config.num_layers {
        let block = &params.blocks[config.block_for_layer(layer)];
        let (out, tape) = block_forward(
            block,
            x,
            len,
            hidden,
            config.num_heads,
            config.ffn,
            key_mask,
        );
        layers.push(tape);
        x = out;
    }
    Ok((
        Tensor::from_vec(len, hidden, x),
        SequenceTape {
            len,
            ids: ids.to_vec(),
            segments: segments.to_vec(),
            token_rows,
            emb_norm,
            layers,
        },
    ))
}

/// Accumulates parameter gradients for one sequence into `grads`.
pub(crate) fn backward_sequence<T: Scalar>(
    state: &EncoderState<T>,
    tape: &SequenceTape<T>,
    d_hidden: &[T],
    grads: &mut EncoderParams<T>,
) {
    let config = state.config();
    let params = state.params();
    let hidden = config.hidden;
    let len = tape.len;
    let mut d_x = d_hidden.to_vec();
    for layer in (0..config.num_layers).rev() {
        let idx = config.block_for_layer(layer);
        d_x = block_backward(
            &params.blocks[idx],
            &mut grads.blocks[idx],
            &tape.layers[layer],
            &d_x,
            len,
            hidden,
            config.num_heads,
        );
    }
    let emb = &params.embeddings;
    let g = &mut grads.embeddings;
    let d_x0 = layer_norm_backward(
        &d_x,
        hidden,
        &emb.norm_scale,
        &tape.emb_norm,
        &mut g.norm_scale,
        &mut g.norm_shift,
    );
    for i in 0..len {
        let row = &d_x0[i * hidden..(i + 1) * hidden];
        for (acc, &d) in g.position.row_mut(i).iter_mut().zip(row) {
            *acc += d;
        }
        for (acc, &d) in g.segment.row_mut(tape.segments[i] as usize).iter_mut().zip(row) {
            *acc += d;
        }
    }
    let d_tokens = match (&emb.projection, &mut g.projection) {
        (Some(proj), Some(g_proj)) => {
            matmul_at_b_acc(
                &mut g_proj.data,
                &tape.token_rows,
                &d_x0,
                len,
                config.embed_dim,
                hidden,
            );
            let mut d = vec![T::zero(); len * config.embed_dim];
            matmul_a_bt_acc(&mut d, &d_x0, &proj.data, len, hidden, config.embed_dim);
            d
        }
        _ => d_x0,
    };
    if state.is_trainable("embeddings.token") {
        let e = config.embed_dim;
        for (i, &id) in tape.ids.iter().enumerate() {
            for (acc, &d) in g.token.row_mut(id as usize).iter_mut().zip(&d_tokens[i * e..(i + 1) * e]) {
                *acc += d;
            }
        }
    }
}

/// Batched forward pass over full-length encodings (padding included).
/// Padded positions are masked out as attention keys.
pub fn forward<T: Scalar>(
    state: &EncoderState<T>,
    batch: &[Encoding],
) -> Result<(Vec<SequenceOutput<T>>, Tape<T>), EncoderError> {
    let max_len = state.config().max_len;
    let mut outputs = Vec::with_capacity(batch.len());
    let mut sequences = Vec::with_capacity(batch.len());
    for (b, enc) in batch.iter().enumerate() {
        if enc.ids.len() != max_len || enc.segments.len() != max_len || enc.mask.len() != max_len {
            return Err(EncoderError::Shape(format!(
                "batch item {b} has length {} but max_len is {max_len}",
                enc.ids.len()
            )));
        }
        let mask: Vec<bool> = enc.mask.iter().map(|&m| m == 1).collect();
        let (hidden_states, tape) = run_sequence(state, &enc.ids, &enc.segments, Some(&mask))?;
        outputs.push(SequenceOutput { hidden_states });
        sequences.push(tape);
    }
    Ok((
        outputs,
        Tape {
            version: state.version(),
            sequences,
        },
    ))
}

/// Reverse pass for a [`forward`] call. `output_gradients[b]` is the loss
/// gradient with respect to sequence `b`'s hidden states (`len × hidden`,
/// row-major). Gradients from every application of a shared block are summed.
pub fn backward<T: Scalar>(
    state: &EncoderState<T>,
    tape: Tape<T>,
    output_gradients: &[Vec<T>],
) -> Result<GradientSet<T>, EncoderError> {
    if tape.version != state.version() {
        return Err(EncoderError::StaleTape);
    }
    if output_gradients.len() != tape.sequences.len() {
        return Err(EncoderError::Shape(format!(
            "{} output gradients for {} sequences",
            output_gradients.len(),
            tape.sequences.len()
        )));
    }
    let hidden = state.config().hidden;
    let mut grads = EncoderParams::zeros(state.config());
    for (seq, d_out) in tape.sequences.iter().zip(output_gradients) {
        if d_out.len() != seq.len * hidden {
            return Err(EncoderError::Shape(format!(
                "output gradient has {} values, expected {}",
                d_out.len(),
                seq.len * hidden
            )));
        }
        backward_sequence(state, seq, d_out, &mut grads);
    }
    Ok(GradientSet::from_full(state, grads))
}
