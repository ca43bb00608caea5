//! Text encoding for region descriptions.
//!
//! Stands in for a pretrained language tower: tokens are lowercased
//! alphanumeric runs, mapped into a fixed vocabulary by a seeded FNV-1a
//! hash, and embedded through a trainable table. Token sequences are
//! truncated or zero-padded to a fixed length; pooling averages only the
//! real tokens, so padding rows never leak into the pooled vector.

use crate::error::{Error, Result};
use crate::tape::{Tape, Value};
use crate::tensor::Tensor;

/// Sequence, embedding, and vocabulary extents for the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct EncoderConfig {
    /// Fixed token count after truncation / padding.
    pub t: usize,
    /// Embedding width.
    pub d: usize,
    /// Hashed vocabulary size.
    pub v: usize,
    /// Hash seed, folded into the FNV-1a state.
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { t: 16, d: 32, v: 4096, seed: 0 }
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Seeded 64-bit FNV-1a. Seed 0 reproduces the reference hash.
pub fn fnv1a64(bytes: &[u8], seed: u64) -> u64 {
    let mut h = FNV_OFFSET ^ seed;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Lowercased alphanumeric runs; everything else separates tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

/// Hashes tokens into vocabulary ids. Errors on text with no tokens.
pub fn token_ids(text: &str, cfg: &EncoderConfig) -> Result<Vec<usize>> {
    let toks = tokenize(text);
    if toks.is_empty() {
        return Err(Error::EmptyText);
    }
    Ok(toks.iter().map(|t| (fnv1a64(t.as_bytes(), cfg.seed) % cfg.v as u64) as usize).collect())
}

/// Embeds `text` through the `[V, d]` table on the tape, producing the padded
/// token matrix `[T, d]` and the number of real (non-padding) rows.
pub fn embed_tokens(
    tape: &mut Tape,
    table: Value,
    text: &str,
    cfg: &EncoderConfig,
) -> Result<(Value, usize)> {
    let ts = tape.value(table).shape().to_vec();
    if ts != [cfg.v, cfg.d] {
        return Err(Error::ShapeMismatch {
            op: "embed_tokens",
            detail: format!("table {:?} vs configured [{}, {}]", ts, cfg.v, cfg.d),
        });
    }
    let mut ids = token_ids(text, cfg)?;
    ids.truncate(cfg.t);
    let k = ids.len();
    let rows = tape.gather_rows(table, &ids)?;
    let padded = if k == cfg.t {
        rows
    } else {
        // Zero-pad to the fixed length; padding rows carry exact zeros.
        let dest: Vec<usize> = (0..k).collect();
        tape.scatter_rows(rows, &dest, cfg.t)?
    };
    Ok((padded, k))
}

/// Mean-pools the first `k` rows of a `[T, d]` token matrix into `[1, d]`
/// using a constant-weight matmul, so padding rows contribute nothing.
pub fn pool_tokens(tape: &mut Tape, tokens: Value, k: usize) -> Result<Value> {
    let shape = tape.value(tokens).shape().to_vec();
    if shape.len() != 2 {
        return Err(Error::ShapeMismatch {
            op: "pool_tokens",
            detail: format!("expected [T, d], got {:?}", shape),
        });
    }
    let t = shape[0];
    if k == 0 || k > t {
        return Err(Error::ShapeMismatch {
            op: "pool_tokens",
            detail: format!("{k} real rows in a {t}-row matrix"),
        });
    }
    let mut weights = vec![0.0; t];
    for w in weights.iter_mut().take(k) {
        *w = 1.0 / k as f64;
    }
    let wrow = tape.leaf(Tensor::new(vec![1, t], weights)?);
    tape.matmul(wrow, tokens)
}

/// Embeds and pools in one step: `[1, d]` mean of the real token embeddings.
pub fn encode_pooled(
    tape: &mut Tape,
    table: Value,
    text: &str,
    cfg: &EncoderConfig,
) -> Result<Value> {
    let (tokens, k) = embed_tokens(tape, table, text, cfg)?;
    pool_tokens(tape, tokens, k)
}
