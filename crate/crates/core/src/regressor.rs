//! Score head: self-attention aggregation, average pooling, a two-layer
//! MLP, and a sigmoid squash onto [0, 1]. Also the batch MSE loss and the
//! min-max score normalizer whose constants persist with checkpoints.

use crate::attention::{attention_block, bind as bind_attn, AttnProjBound, AttnProjParams};
use crate::error::{Error, Result};
use crate::tape::{Tape, Value};
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone)]
pub struct HeadParams {
    pub attn: AttnProjParams,
    /// First MLP layer, `[C, hidden]` plus `[hidden]` bias.
    pub w1: Tensor,
    pub b1: Tensor,
    /// Output layer, `[hidden, 1]` plus `[1]` bias.
    pub w2: Tensor,
    pub b2: Tensor,
}

impl HeadParams {
    pub fn init(c: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if c == 0 || hidden == 0 {
            return Err(Error::InvalidConfig { detail: "head widths must be positive".into() });
        }
        let uniform = |rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
            let limit = (1.0 / rows as f64).sqrt();
            Tensor::new(
                vec![rows, cols],
                (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect(),
            )
            .expect("buffer matches shape")
        };
        let w1 = uniform(c, hidden, rng);
        let b1 = Tensor::zeros(vec![hidden]);
        let w2 = uniform(hidden, 1, rng);
        let b2 = Tensor::zeros(vec![1]);
        Ok(HeadParams { attn: AttnProjParams::init(c, rng), w1, b1, w2, b2 })
    }

    pub fn fields(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (f, t) in self.attn.fields() {
            out.push((format!("attn.{f}"), t));
        }
        out.push(("w1".to_string(), &self.w1));
        out.push(("b1".to_string(), &self.b1));
        out.push(("w2".to_string(), &self.w2));
        out.push(("b2".to_string(), &self.b2));
        out
    }

    pub fn fields_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (f, t) in self.attn.fields_mut() {
            out.push((format!("attn.{f}"), t));
        }
        out.push(("w1".to_string(), &mut self.w1));
        out.push(("b1".to_string(), &mut self.b1));
        out.push(("w2".to_string(), &mut self.w2));
        out.push(("b2".to_string(), &mut self.b2));
        out
    }
}

#[derive(Debug, Clone)]
pub struct HeadBound {
    pub attn: AttnProjBound,
    pub w1: Value,
    pub b1: Value,
    pub w2: Value,
    pub b2: Value,
}

impl HeadBound {
    /// Leaf handles in `HeadParams::fields` order.
    pub fn values(&self) -> Vec<Value> {
        vec![self.attn.wq, self.attn.wk, self.attn.wv, self.w1, self.b1, self.w2, self.b2]
    }
}

/// Leaf order matches `HeadParams::fields`.
pub fn bind(tape: &mut Tape, p: &HeadParams) -> HeadBound {
    HeadBound {
        attn: bind_attn(tape, &p.attn),
        w1: tape.leaf(p.w1.clone()),
        b1: tape.leaf(p.b1.clone()),
        w2: tape.leaf(p.w2.clone()),
        b2: tape.leaf(p.b2.clone()),
    }
}

/// Mean over token rows via a constant `[1, S]` weight row.
pub fn mean_pool_rows(tape: &mut Tape, tokens: Value) -> Result<Value> {
    let s = tape.value(tokens).shape().to_vec();
    if s.len() != 2 {
        return Err(Error::ShapeMismatch {
            op: "mean_pool_rows",
            detail: format!("expected [S, C], got {:?}", s),
        });
    }
    let weights = tape.leaf(Tensor::full(vec![1, s[0]], 1.0 / s[0] as f64));
    tape.matmul(weights, tokens)
}

/// `sigmoid(MLP(pool(self_attention(tokens))))`, a `[1, 1]` score.
pub fn predict(tape: &mut Tape, bound: &HeadBound, tokens: Value, heads: usize) -> Result<Value> {
    let attended = attention_block(tape, &bound.attn, tokens, tokens, heads)?;
    let pooled = mean_pool_rows(tape, attended)?;
    let h = tape.matmul(pooled, bound.w1)?;
    let h = tape.add_bias_rows(h, bound.b1)?;
    let h = tape.relu(h)?;
    let y = tape.matmul(h, bound.w2)?;
    let y = tape.add_bias_rows(y, bound.b2)?;
    tape.sigmoid(y)
}

/// Batch MSE over scalar predictions against constant targets.
pub fn mse_loss(tape: &mut Tape, preds: &[Value], targets: &[f64]) -> Result<Value> {
    if preds.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if preds.len() != targets.len() {
        return Err(Error::LengthMismatch { left: preds.len(), right: targets.len() });
    }
    let mut acc: Option<Value> = None;
    for (&p, &t) in preds.iter().zip(targets) {
        if tape.value(p).len() != 1 {
            return Err(Error::NonScalarLoss { len: tape.value(p).len() });
        }
        let target = tape.leaf(Tensor::new(vec![1, 1], vec![t])?);
        let diff = tape.sub(p, target)?;
        let sq = tape.mul(diff, diff)?;
        acc = Some(match acc {
            None => sq,
            Some(a) => tape.add(a, sq)?,
        });
    }
    tape.scale(acc.expect("nonempty checked above"), 1.0 / preds.len() as f64)
}

/// Min-max normalization fitted on the training split; the constants ride
/// along in checkpoints so inference can map predictions back.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreNormalizer {
    pub min: f64,
    pub max: f64,
}

impl ScoreNormalizer {
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput { what: "scores to normalize" });
        }
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(max > min) {
            return Err(Error::DegenerateRange);
        }
        Ok(ScoreNormalizer { min, max })
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.min) / (self.max - self.min)
    }

    pub fn apply_all(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|&v| self.apply(v)).collect()
    }

    pub fn invert(&self, y: f64) -> f64 {
        self.min + y * (self.max - self.min)
    }
}
