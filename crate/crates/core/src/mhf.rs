//! Multi-scale fusion of backbone pyramid levels.
//!
//! Each level is gated by a bottleneck branch, pooled to the coarsest
//! extent, squashed into (0,1), enhanced with self-attention over its
//! spatial tokens, then folded into one map by a cross-attention cascade
//! that walks from the deepest level outward.

use crate::attention::{attention_block, bind as bind_attn, AttnProjBound, AttnProjParams};
use crate::backbone::{bind_conv, ConvBound, ConvParams};
use crate::error::{Error, Result};
use crate::tape::{Tape, Value};
use rand_chacha::ChaCha8Rng;

/// Fusion width and attention head count.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct MhfConfig {
    pub c: usize,
    pub heads: usize,
}

impl Default for MhfConfig {
    fn default() -> Self {
        MhfConfig { c: 32, heads: 1 }
    }
}

impl MhfConfig {
    pub fn validate(&self) -> Result<()> {
        // The bottleneck halves the width, so C must be even.
        if self.c < 2 || self.c % 2 != 0 {
            return Err(Error::InvalidConfig {
                detail: format!("fusion width must be even and at least 2, got {}", self.c),
            });
        }
        if self.heads == 0 || self.c % self.heads != 0 {
            return Err(Error::InvalidConfig {
                detail: format!("head count {} must divide width {}", self.heads, self.c),
            });
        }
        Ok(())
    }
}

/// Convolutions and the self-attention projections for one pyramid level.
#[derive(Debug, Clone)]
pub struct MhfLevelParams {
    /// 1x1 reduce, C_i -> C/2.
    pub phi1: ConvParams,
    /// 3x3 keep, C/2 -> C/2, same padding.
    pub phi2: ConvParams,
    /// 1x1 expand, C/2 -> C.
    pub phi3: ConvParams,
    /// 1x1 gate projection, C_i -> C.
    pub gate: ConvParams,
    /// 3x3 post-pool mix, C -> C, same padding.
    pub post: ConvParams,
    pub attn: AttnProjParams,
}

#[derive(Debug, Clone)]
pub struct MhfParams {
    pub levels: Vec<MhfLevelParams>,
    /// One projection set per cascade boundary; `cross[i]` fuses level i
    /// into the running deep-side summary.
    pub cross: Vec<AttnProjParams>,
}

impl MhfParams {
    pub fn init(cfg: &MhfConfig, in_channels: &[usize], rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        if in_channels.is_empty() {
            return Err(Error::EmptyInput { what: "fusion levels" });
        }
        let half = cfg.c / 2;
        let mut levels = Vec::with_capacity(in_channels.len());
        for &ci in in_channels {
            levels.push(MhfLevelParams {
                phi1: ConvParams::init(half, ci, 1, 1, rng),
                phi2: ConvParams::init(half, half, 3, 3, rng),
                phi3: ConvParams::init(cfg.c, half, 1, 1, rng),
                gate: ConvParams::init(cfg.c, ci, 1, 1, rng),
                post: ConvParams::init(cfg.c, cfg.c, 3, 3, rng),
                attn: AttnProjParams::init(cfg.c, rng),
            });
        }
        let cross = (1..in_channels.len()).map(|_| AttnProjParams::init(cfg.c, rng)).collect();
        Ok(MhfParams { levels, cross })
    }

    /// Named tensors in declaration order; the binding below must mirror it.
    pub fn fields(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, lvl) in self.levels.iter().enumerate() {
            for (conv_name, conv) in [
                ("phi1", &lvl.phi1),
                ("phi2", &lvl.phi2),
                ("phi3", &lvl.phi3),
                ("gate", &lvl.gate),
                ("post", &lvl.post),
            ] {
                for (f, t) in conv.fields() {
                    out.push((format!("level{i}.{conv_name}.{f}"), t));
                }
            }
            for (f, t) in lvl.attn.fields() {
                out.push((format!("level{i}.attn.{f}"), t));
            }
        }
        for (i, proj) in self.cross.iter().enumerate() {
            for (f, t) in proj.fields() {
                out.push((format!("cross{i}.{f}"), t));
            }
        }
        out
    }

    pub fn fields_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, lvl) in self.levels.iter_mut().enumerate() {
            for (conv_name, conv) in [
                ("phi1", &mut lvl.phi1),
                ("phi2", &mut lvl.phi2),
                ("phi3", &mut lvl.phi3),
                ("gate", &mut lvl.gate),
                ("post", &mut lvl.post),
            ] {
                for (f, t) in conv.fields_mut() {
                    out.push((format!("level{i}.{conv_name}.{f}"), t));
                }
            }
            for (f, t) in lvl.attn.fields_mut() {
                out.push((format!("level{i}.attn.{f}"), t));
            }
        }
        for (i, proj) in self.cross.iter_mut().enumerate() {
            for (f, t) in proj.fields_mut() {
                out.push((format!("cross{i}.{f}"), t));
            }
        }
        out
    }
}

use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct MhfLevelBound {
    pub phi1: ConvBound,
    pub phi2: ConvBound,
    pub phi3: ConvBound,
    pub gate: ConvBound,
    pub post: ConvBound,
    pub attn: AttnProjBound,
}

#[derive(Debug, Clone)]
pub struct MhfBound {
    pub levels: Vec<MhfLevelBound>,
    pub cross: Vec<AttnProjBound>,
}

impl MhfBound {
    /// Leaf handles in `MhfParams::fields` order.
    pub fn values(&self) -> Vec<Value> {
        let mut out = Vec::new();
        for lvl in &self.levels {
            for conv in [&lvl.phi1, &lvl.phi2, &lvl.phi3, &lvl.gate, &lvl.post] {
                out.push(conv.w);
                out.push(conv.b);
            }
            out.extend([lvl.attn.wq, lvl.attn.wk, lvl.attn.wv]);
        }
        for proj in &self.cross {
            out.extend([proj.wq, proj.wk, proj.wv]);
        }
        out
    }
}

/// Leaf order matches `MhfParams::fields`.
pub fn bind(tape: &mut Tape, p: &MhfParams) -> MhfBound {
    let levels = p
        .levels
        .iter()
        .map(|lvl| MhfLevelBound {
            phi1: bind_conv(tape, &lvl.phi1),
            phi2: bind_conv(tape, &lvl.phi2),
            phi3: bind_conv(tape, &lvl.phi3),
            gate: bind_conv(tape, &lvl.gate),
            post: bind_conv(tape, &lvl.post),
            attn: bind_attn(tape, &lvl.attn),
        })
        .collect();
    let cross = p.cross.iter().map(|c| bind_attn(tape, c)).collect();
    MhfBound { levels, cross }
}

/// Gates one level and pools it to `out_h x out_w`:
/// `sigmoid(post(pool(sigmoid(phi(F)) * gate(F))))`. The bottleneck chain
/// carries no inner activations; only the written sigmoids apply.
pub fn gated_downsample(
    tape: &mut Tape,
    lvl: &MhfLevelBound,
    f: Value,
    out_h: usize,
    out_w: usize,
) -> Result<Value> {
    let s = tape.value(f).shape().to_vec();
    if s.len() != 3 {
        return Err(Error::ShapeMismatch {
            op: "gated_downsample",
            detail: format!("expected [C_i, H, W], got {:?}", s),
        });
    }
    if s[1] % out_h != 0 || s[2] % out_w != 0 {
        return Err(Error::ShapeMismatch {
            op: "gated_downsample",
            detail: format!("extents {}x{} are not multiples of {out_h}x{out_w}", s[1], s[2]),
        });
    }
    let a = tape.conv2d(f, lvl.phi1.w, lvl.phi1.b, 1, 0)?;
    let a = tape.conv2d(a, lvl.phi2.w, lvl.phi2.b, 1, 1)?;
    let a = tape.conv2d(a, lvl.phi3.w, lvl.phi3.b, 1, 0)?;
    let g = tape.sigmoid(a)?;
    let proj = tape.conv2d(f, lvl.gate.w, lvl.gate.b, 1, 0)?;
    let gated = tape.mul(g, proj)?;
    let pooled = tape.adaptive_avg_pool(gated, out_h, out_w)?;
    let mixed = tape.conv2d(pooled, lvl.post.w, lvl.post.b, 1, 1)?;
    tape.sigmoid(mixed)
}

/// `[C, H, W]` map to a `[H*W, C]` token matrix.
pub fn map_to_tokens(tape: &mut Tape, x: Value) -> Result<Value> {
    let s = tape.value(x).shape().to_vec();
    if s.len() != 3 {
        return Err(Error::ShapeMismatch {
            op: "map_to_tokens",
            detail: format!("expected [C, H, W], got {:?}", s),
        });
    }
    let flat = tape.reshape(x, vec![s[0], s[1] * s[2]])?;
    tape.transpose(flat)
}

/// Residual self-attention over one level's tokens.
pub fn self_enhance(
    tape: &mut Tape,
    proj: &AttnProjBound,
    tokens: Value,
    heads: usize,
) -> Result<Value> {
    let attended = attention_block(tape, proj, tokens, tokens, heads)?;
    tape.add(attended, tokens)
}

/// Cascade from the deepest level outward: the running summary queries each
/// shallower level and keeps a residual. A single level passes through.
pub fn cross_fuse(
    tape: &mut Tape,
    cross: &[AttnProjBound],
    enhanced: &[Value],
    heads: usize,
) -> Result<Value> {
    if enhanced.is_empty() {
        return Err(Error::EmptyInput { what: "fusion cascade" });
    }
    if cross.len() + 1 != enhanced.len() {
        return Err(Error::LengthMismatch { left: cross.len() + 1, right: enhanced.len() });
    }
    let mut cur = *enhanced.last().expect("nonempty checked above");
    for i in (0..enhanced.len() - 1).rev() {
        let attended = attention_block(tape, &cross[i], cur, enhanced[i], heads)?;
        cur = tape.add(attended, cur)?;
    }
    Ok(cur)
}

/// Full fusion pass: per-level gated downsample to the deepest level's
/// extents, token flatten, self-enhancement, then the cross cascade.
/// Returns a `[H_n*W_n, C]` token matrix.
pub fn forward(
    tape: &mut Tape,
    cfg: &MhfConfig,
    bound: &MhfBound,
    features: &[Value],
) -> Result<Value> {
    if features.is_empty() {
        return Err(Error::EmptyInput { what: "fusion levels" });
    }
    if features.len() != bound.levels.len() {
        return Err(Error::LengthMismatch { left: features.len(), right: bound.levels.len() });
    }
    let deepest = tape.value(*features.last().expect("nonempty checked above")).shape().to_vec();
    let (out_h, out_w) = (deepest[1], deepest[2]);
    let mut enhanced = Vec::with_capacity(features.len());
    for (lvl, &f) in bound.levels.iter().zip(features) {
        let d = gated_downsample(tape, lvl, f, out_h, out_w)?;
        let tokens = map_to_tokens(tape, d)?;
        enhanced.push(self_enhance(tape, &lvl.attn, tokens, cfg.heads)?);
    }
    cross_fuse(tape, &bound.cross, &enhanced, cfg.heads)
}
