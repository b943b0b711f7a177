//! Self-attention encoder producing globally contextualized item vectors
//! for the allocation task.
//!
//! An input sequence is embedded as item embedding plus learnable position
//! embedding, then passed through `num_blocks` single-head attention blocks
//! (scaled dot product, layer norm) followed by a two-layer ReLU
//! feed-forward with a residual connection and a final layer norm.
//!
//! Three modes support the ablation variants: `bidirectional` (default)
//! attends over all positions, `causal` masks keys after the query
//! position, and `zero` bypasses the blocks entirely and returns the raw
//! embeddings.

use crate::autodiff::{Tape, TensorId};
use crate::error::{Error, Result};
use crate::model::{Model, TapeBinding};

/// Additive mask value; exp(x - max) underflows to exactly zero.
const MASK_NEG: f64 = -1e30;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderMode {
    Bidirectional,
    Causal,
    Zero,
}

impl EncoderMode {
    pub fn name(&self) -> &'static str {
        match self {
            EncoderMode::Bidirectional => "bidirectional",
            EncoderMode::Causal => "causal",
            EncoderMode::Zero => "zero",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bidirectional" => Ok(EncoderMode::Bidirectional),
            "causal" => Ok(EncoderMode::Causal),
            "zero" => Ok(EncoderMode::Zero),
            other => Err(Error::Config(format!(
                "unknown encoder mode '{other}' (expected bidirectional, causal, zero)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderConfig {
    pub dim: usize,
    pub num_blocks: usize,
    pub mode: EncoderMode,
    pub max_len: usize,
}

/// Per-position encoded vectors (`l x d`) plus the user embedding (`1 x d`).
pub struct EncodedSequence {
    pub vectors: TensorId,
    pub user_vec: TensorId,
    pub len: usize,
}

/// Item embedding plus learnable position embedding, and the user vector.
pub fn embed_sequence(
    tape: &mut Tape,
    model: &Model,
    bound: &TapeBinding,
    items: &[usize],
    user: usize,
) -> (TensorId, TensorId) {
    assert!(
        items.len() <= model.dims.max_len,
        "sequence length {} exceeds max_len {}",
        items.len(),
        model.dims.max_len
    );
    let item_table = bound.get(model, "item_embedding");
    let pos_table = bound.get(model, "position_embedding");
    let user_table = bound.get(model, "user_embedding");
    let item_rows = tape.gather(item_table, items);
    let positions: Vec<usize> = (0..items.len()).collect();
    let pos_rows = tape.gather(pos_table, &positions);
    let embedded = tape.add(item_rows, pos_rows);
    let user_vec = tape.gather(user_table, &[user]);
    (embedded, user_vec)
}

/// One attention block: layer norm of the softmax-weighted value sum.
/// In causal mode key positions after the query are masked out before the
/// softmax.
pub fn attention_block(
    tape: &mut Tape,
    model: &Model,
    bound: &TapeBinding,
    block: usize,
    input: TensorId,
    causal: bool,
) -> TensorId {
    let (len, dim) = tape.shape(input);
    let w_q = bound.get(model, &format!("encoder.b{block}.w_q"));
    let w_k = bound.get(model, &format!("encoder.b{block}.w_k"));
    let w_v = bound.get(model, &format!("encoder.b{block}.w_v"));
    let q = tape.matmul(input, w_q);
    let k = tape.matmul(input, w_k);
    let v = tape.matmul(input, w_v);
    let logits = tape.matmul_bt(q, k);
    let scaled = tape.scale(logits, 1.0 / (dim as f64).sqrt());
    let masked = if causal {
        let mut mask = vec![0.0; len * len];
        for row in 0..len {
            for col in row + 1..len {
                mask[row * len + col] = MASK_NEG;
            }
        }
        let mask = tape.constant(mask, len, len);
        tape.add(scaled, mask)
    } else {
        scaled
    };
    let weights = tape.softmax(masked);
    let mixed = tape.matmul(weights, v);
    tape.layer_norm(mixed)
}

/// Full encoder forward pass.
pub fn encode(
    tape: &mut Tape,
    model: &Model,
    bound: &TapeBinding,
    items: &[usize],
    user: usize,
    config: &EncoderConfig,
) -> EncodedSequence {
    let (embedded, user_vec) = embed_sequence(tape, model, bound, items, user);
    if config.mode == EncoderMode::Zero {
        return EncodedSequence {
            vectors: embedded,
            user_vec,
            len: items.len(),
        };
    }
    let causal = config.mode == EncoderMode::Causal;
    let mut x = embedded;
    for block in 0..config.num_blocks {
        let s = attention_block(tape, model, bound, block, x, causal);
        let w1 = bound.get(model, &format!("encoder.b{block}.ffn_w1"));
        let b1 = bound.get(model, &format!("encoder.b{block}.ffn_b1"));
        let w2 = bound.get(model, &format!("encoder.b{block}.ffn_w2"));
        let b2 = bound.get(model, &format!("encoder.b{block}.ffn_b2"));
        let h = tape.matmul(s, w1);
        let h = tape.add(h, b1);
        let h = tape.relu(h);
        let f = tape.matmul(h, w2);
        let f = tape.add(f, b2);
        let res = tape.add(f, s);
        x = tape.layer_norm(res);
    }
    EncodedSequence {
        vectors: x,
        user_vec,
        len: items.len(),
    }
}
