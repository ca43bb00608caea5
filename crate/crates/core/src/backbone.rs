//! Convolutional feature pyramid.
//!
//! A stack of stride-2 3x3 conv + ReLU blocks. Block `i` halves the spatial
//! extent, so input `H x W` must be divisible by `2^n` for `n` blocks. The
//! forward pass returns every intermediate level, shallowest first, for the
//! fusion stage.

use crate::error::{Error, Result};
use crate::tape::{Tape, Value};
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// One convolution's weights: kernel `[C_out, C_in, kh, kw]` and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub w: Tensor,
    pub b: Tensor,
}

impl ConvParams {
    /// Uniform init with the usual `1/sqrt(fan_in)` limit.
    pub fn init(c_out: usize, c_in: usize, kh: usize, kw: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = (c_in * kh * kw) as f64;
        let limit = (1.0 / fan_in).sqrt();
        let w = Tensor::new(
            vec![c_out, c_in, kh, kw],
            (0..c_out * c_in * kh * kw).map(|_| rng.random_range(-limit..limit)).collect(),
        )
        .expect("kernel buffer matches shape");
        let b = Tensor::new(vec![c_out], (0..c_out).map(|_| rng.random_range(-limit..limit)).collect())
            .expect("bias buffer matches shape");
        ConvParams { w, b }
    }

    pub fn fields(&self) -> [(&'static str, &Tensor); 2] {
        [("w", &self.w), ("b", &self.b)]
    }

    pub fn fields_mut(&mut self) -> [(&'static str, &mut Tensor); 2] {
        [("w", &mut self.w), ("b", &mut self.b)]
    }
}

/// Tape handles for one convolution.
#[derive(Debug, Clone, Copy)]
pub struct ConvBound {
    pub w: Value,
    pub b: Value,
}

pub fn bind_conv(tape: &mut Tape, p: &ConvParams) -> ConvBound {
    ConvBound { w: tape.leaf(p.w.clone()), b: tape.leaf(p.b.clone()) }
}

/// Output channel widths, one per stride-2 block.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BackboneConfig {
    pub channels: Vec<usize>,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig { channels: vec![8, 16, 32, 32] }
    }
}

impl BackboneConfig {
    pub fn levels(&self) -> usize {
        self.channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(Error::InvalidConfig { detail: "backbone needs at least one block".into() });
        }
        if self.channels.contains(&0) {
            return Err(Error::InvalidConfig { detail: "zero-width backbone channel".into() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneParams {
    pub blocks: Vec<ConvParams>,
}

impl BackboneParams {
    pub fn init(cfg: &BackboneConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let mut blocks = Vec::with_capacity(cfg.channels.len());
        let mut c_in = 3;
        for &c_out in &cfg.channels {
            blocks.push(ConvParams::init(c_out, c_in, 3, 3, rng));
            c_in = c_out;
        }
        Ok(BackboneParams { blocks })
    }

    /// Named tensors in declaration order; `bind` mirrors it.
    pub fn fields(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, blk) in self.blocks.iter().enumerate() {
            for (f, t) in blk.fields() {
                out.push((format!("block{i}.{f}"), t));
            }
        }
        out
    }

    pub fn fields_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, blk) in self.blocks.iter_mut().enumerate() {
            for (f, t) in blk.fields_mut() {
                out.push((format!("block{i}.{f}"), t));
            }
        }
        out
    }
}

pub struct BackboneBound {
    pub blocks: Vec<ConvBound>,
}

impl BackboneBound {
    /// Leaf handles in `BackboneParams::fields` order.
    pub fn values(&self) -> Vec<Value> {
        self.blocks.iter().flat_map(|b| [b.w, b.b]).collect()
    }
}

pub fn bind(tape: &mut Tape, p: &BackboneParams) -> BackboneBound {
    BackboneBound { blocks: p.blocks.iter().map(|b| bind_conv(tape, b)).collect() }
}

/// Runs the pyramid on a `[3, H, W]` image already on the tape. Returns the
/// per-level feature maps `[C_i, H/2^i, W/2^i]`, shallowest first.
pub fn forward(tape: &mut Tape, bound: &BackboneBound, image: Value) -> Result<Vec<Value>> {
    let s = tape.value(image).shape().to_vec();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::ShapeMismatch {
            op: "backbone",
            detail: format!("expected [3, H, W], got {:?}", s),
        });
    }
    let n = bound.blocks.len();
    let (h, w) = (s[1], s[2]);
    let div = 1usize << n;
    if h % div != 0 || w % div != 0 || h / div == 0 || w / div == 0 {
        return Err(Error::IndivisibleInput { h, w, blocks: n });
    }
    let mut levels = Vec::with_capacity(n);
    let mut x = image;
    for block in &bound.blocks {
        let conv = tape.conv2d(x, block.w, block.b, 2, 1)?;
        x = tape.relu(conv)?;
        levels.push(x);
    }
    Ok(levels)
}
