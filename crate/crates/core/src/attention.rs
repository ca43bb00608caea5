//! Scaled dot-product attention over token matrices, shared by the fusion
//! and region-attention stages.

use crate::error::{Error, Result};
use crate::tape::{Tape, Value};
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Query/key/value projection weights for one attention block, all
/// `[d_model, d_model]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnProjParams {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
}

impl AttnProjParams {
    pub fn init(d_model: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (1.0 / d_model as f64).sqrt();
        let mut mk = || {
            let data = (0..d_model * d_model).map(|_| rng.random_range(-limit..limit)).collect();
            Tensor::new(vec![d_model, d_model], data).expect("square matrix")
        };
        AttnProjParams { wq: mk(), wk: mk(), wv: mk() }
    }

    pub fn fields(&self) -> [(&'static str, &Tensor); 3] {
        [("wq", &self.wq), ("wk", &self.wk), ("wv", &self.wv)]
    }

    pub fn fields_mut(&mut self) -> [(&'static str, &mut Tensor); 3] {
        [("wq", &mut self.wq), ("wk", &mut self.wk), ("wv", &mut self.wv)]
    }
}

/// Tape handles for one projection set.
#[derive(Debug, Clone, Copy)]
pub struct AttnProjBound {
    pub wq: Value,
    pub wk: Value,
    pub wv: Value,
}

pub fn bind(tape: &mut Tape, p: &AttnProjParams) -> AttnProjBound {
    AttnProjBound {
        wq: tape.leaf(p.wq.clone()),
        wk: tape.leaf(p.wk.clone()),
        wv: tape.leaf(p.wv.clone()),
    }
}

/// Scaled dot-product attention on already-projected tokens:
/// `softmax(bias + Q K^T / sqrt(d_head)) V`, split over `heads` equal
/// column groups. The optional bias `[Nq, Nk]` is added to every head's
/// logits before the softmax.
pub fn scaled_attention(
    tape: &mut Tape,
    q: Value,
    k: Value,
    v: Value,
    bias: Option<Value>,
    heads: usize,
) -> Result<Value> {
    let (nq, dk) = dims(tape, q, "scaled_attention q")?;
    let (nk, dk2) = dims(tape, k, "scaled_attention k")?;
    let (nv, dv) = dims(tape, v, "scaled_attention v")?;
    if dk != dk2 || nk != nv {
        return Err(Error::ShapeMismatch {
            op: "scaled_attention",
            detail: format!("q [{nq},{dk}] k [{nk},{dk2}] v [{nv},{dv}]"),
        });
    }
    if heads == 0 || dk % heads != 0 || dv % heads != 0 {
        return Err(Error::InvalidConfig {
            detail: format!("{heads} heads do not divide widths {dk}/{dv}"),
        });
    }
    if let Some(b) = bias {
        let bs = tape.value(b).shape();
        if bs != [nq, nk] {
            return Err(Error::ShapeMismatch {
                op: "scaled_attention",
                detail: format!("bias {:?} vs logits [{nq}, {nk}]", bs),
            });
        }
    }
    let (hk, hv) = (dk / heads, dv / heads);
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = if heads == 1 { q } else { tape.slice_cols(q, h * hk, hk)? };
        let kh = if heads == 1 { k } else { tape.slice_cols(k, h * hk, hk)? };
        let vh = if heads == 1 { v } else { tape.slice_cols(v, h * hv, hv)? };
        let kt = tape.transpose(kh)?;
        let logits = tape.matmul(qh, kt)?;
        let scaled = tape.scale(logits, 1.0 / (hk as f64).sqrt())?;
        let biased = match bias {
            Some(b) => tape.add(b, scaled)?,
            None => scaled,
        };
        let weights = tape.softmax(biased, 1)?;
        outs.push(tape.matmul(weights, vh)?);
    }
    if heads == 1 {
        Ok(outs[0])
    } else {
        tape.concat_cols(&outs)
    }
}

/// Projects `q_in`/`kv_in` through the block's weights and attends:
/// `softmax((q_in Wq)(kv_in Wk)^T / sqrt(d_head)) (kv_in Wv)`.
pub fn attention_block(
    tape: &mut Tape,
    proj: &AttnProjBound,
    q_in: Value,
    kv_in: Value,
    heads: usize,
) -> Result<Value> {
    let q = tape.matmul(q_in, proj.wq)?;
    let k = tape.matmul(kv_in, proj.wk)?;
    let v = tape.matmul(kv_in, proj.wv)?;
    scaled_attention(tape, q, k, v, None, heads)
}

fn dims(tape: &Tape, v: Value, op: &'static str) -> Result<(usize, usize)> {
    let s = tape.value(v).shape();
    if s.len() != 2 {
        return Err(Error::ShapeMismatch {
            op: "scaled_attention",
            detail: format!("{op} expects a token matrix, got {:?}", s),
        });
    }
    Ok((s[0], s[1]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tokens(tape: &mut Tape, r: usize, c: usize, v: &[f64]) -> Value {
        tape.leaf(Tensor::new(vec![r, c], v.to_vec()).unwrap())
    }

    #[test]
    fn attention_rows_are_convex_combinations_of_values() {
        let mut tape = Tape::new();
        let q = tokens(&mut tape, 2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let k = tokens(&mut tape, 3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let v = tokens(&mut tape, 3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let out = scaled_attention(&mut tape, q, k, v, None, 1).unwrap();
        let o = tape.value(out).data();
        // Each output coordinate stays inside the value column's range.
        for row in 0..2 {
            assert!(o[row * 2] >= 1.0 && o[row * 2] <= 5.0);
            assert!(o[row * 2 + 1] >= 2.0 && o[row * 2 + 1] <= 6.0);
        }
    }

    #[test]
    fn uniform_keys_average_the_values() {
        // Identical keys make every attention weight 1/Nk.
        let mut tape = Tape::new();
        let q = tokens(&mut tape, 1, 2, &[0.3, -0.7]);
        let k = tokens(&mut tape, 2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let v = tokens(&mut tape, 2, 2, &[0.0, 2.0, 4.0, 6.0]);
        let out = scaled_attention(&mut tape, q, k, v, None, 1).unwrap();
        let o = tape.value(out).data();
        assert!((o[0] - 2.0).abs() < 1e-12);
        assert!((o[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn two_heads_with_blockwise_inputs_match_per_head_runs() {
        // With block-structured q/k/v, the two-head result is the column
        // concatenation of two single-head runs on the halves.
        let qd = [1.0, 0.0, 0.5, 1.0, 0.0, 1.0, -0.5, 0.25];
        let kd = [0.2, 0.4, 0.1, 0.9, 0.8, 0.6, 0.3, 0.7];
        let vd = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        let mut tape = Tape::new();
        let q = tokens(&mut tape, 2, 4, &qd);
        let k = tokens(&mut tape, 2, 4, &kd);
        let v = tokens(&mut tape, 2, 4, &vd);
        let multi = scaled_attention(&mut tape, q, k, v, None, 2).unwrap();
        let multi = tape.value(multi).data().to_vec();

        let mut per_head = vec![vec![], vec![]];
        for h in 0..2 {
            let take = |src: &[f64]| -> Vec<f64> {
                (0..2).flat_map(|r| src[r * 4 + h * 2..r * 4 + h * 2 + 2].to_vec()).collect()
            };
            let mut t2 = Tape::new();
            let qh = tokens(&mut t2, 2, 2, &take(&qd));
            let kh = tokens(&mut t2, 2, 2, &take(&kd));
            let vh = tokens(&mut t2, 2, 2, &take(&vd));
            let out = scaled_attention(&mut t2, qh, kh, vh, None, 1).unwrap();
            per_head[h] = t2.value(out).data().to_vec();
        }
        for r in 0..2 {
            for c in 0..2 {
                assert!((multi[r * 4 + c] - per_head[0][r * 2 + c]).abs() < 1e-12);
                assert!((multi[r * 4 + 2 + c] - per_head[1][r * 2 + c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bias_shifts_attention_toward_favored_keys() {
        let mut tape = Tape::new();
        let q = tokens(&mut tape, 1, 2, &[0.0, 0.0]);
        let k = tokens(&mut tape, 2, 2, &[0.0, 0.0, 0.0, 0.0]);
        let v = tokens(&mut tape, 2, 2, &[0.0, 0.0, 10.0, 10.0]);
        let bias = tokens(&mut tape, 1, 2, &[0.0, 5.0]);
        let out = scaled_attention(&mut tape, q, k, v, Some(bias), 1).unwrap();
        // Without bias the result would be 5; the bias pulls it toward 10.
        assert!(tape.value(out).data()[0] > 9.0);
    }

    #[test]
    fn zero_bias_changes_nothing() {
        let mk = |with_bias: bool| {
            let mut tape = Tape::new();
            let q = tokens(&mut tape, 2, 2, &[0.1, 0.2, 0.3, 0.4]);
            let k = tokens(&mut tape, 2, 2, &[0.5, 0.6, 0.7, 0.8]);
            let v = tokens(&mut tape, 2, 2, &[1.0, -1.0, 2.0, -2.0]);
            let bias = with_bias.then(|| tape.leaf(Tensor::zeros(vec![2, 2])));
            let out = scaled_attention(&mut tape, q, k, v, bias, 1).unwrap();
            tape.value(out).data().to_vec()
        };
        assert_eq!(mk(true), mk(false));
    }

    #[test]
    fn invalid_head_split_is_rejected() {
        let mut tape = Tape::new();
        let q = tape.leaf(Tensor::zeros(vec![2, 3]));
        let err = scaled_attention(&mut tape, q, q, q, None, 2).unwrap_err();
        assert_eq!(err.category(), "InvalidConfig");
    }

    #[test]
    fn projection_init_is_deterministic() {
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(AttnProjParams::init(4, &mut r1), AttnProjParams::init(4, &mut r2));
    }
}
