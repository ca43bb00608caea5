//! Whole-model assembly: configuration, parameter aggregation in a stable
//! order, tape binding, and the image-to-score forward pass.
//!
//! Ablation toggles reduce the graph structurally: with fusion off the
//! deepest backbone level is gate-projected straight to tokens, with the
//! bias off the region path is skipped entirely, and with descriptions off
//! every region reads the fixed placeholder text.

use crate::backbone::{self, BackboneBound, BackboneConfig, BackboneParams};
use crate::description::{compose_description, PromptFields, RegionDescription};
use crate::encoder::{embed_tokens, EncoderConfig};
use crate::error::{Error, Result};
use crate::mhf::{self, map_to_tokens, MhfBound, MhfConfig, MhfParams};
use crate::regressor::{self, HeadBound, HeadParams};
use crate::rsa::{self, RsaBound, RsaParams};
use crate::segmentation::MaskSet;
use crate::tape::{Tape, Value};
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Input image extents.
    pub h: usize,
    pub w: usize,
    pub backbone: BackboneConfig,
    pub mhf: MhfConfig,
    /// Region-guide width.
    pub c_g: usize,
    pub lambda_init: f64,
    pub encoder: EncoderConfig,
    pub mlp_hidden: usize,
    /// Fusion cascade on, or a plain gate projection of the deepest level.
    pub use_mhf: bool,
    /// Gram bias path on, or plain attention.
    pub use_rsa_bias: bool,
    /// Region descriptions on, or the placeholder text.
    pub use_descriptions: bool,
    pub prompt_fields: PromptFields,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            h: 32,
            w: 32,
            backbone: BackboneConfig::default(),
            mhf: MhfConfig::default(),
            c_g: 16,
            lambda_init: 0.1,
            encoder: EncoderConfig::default(),
            mlp_hidden: 64,
            use_mhf: true,
            use_rsa_bias: true,
            use_descriptions: true,
            prompt_fields: PromptFields::default(),
        }
    }
}

impl ModelConfig {
    pub fn levels(&self) -> usize {
        self.backbone.levels()
    }

    /// Spatial extents of the deepest feature level.
    pub fn deep_extents(&self) -> (usize, usize) {
        let div = 1usize << self.levels();
        (self.h / div, self.w / div)
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.mhf.validate()?;
        if self.c_g == 0 {
            return Err(Error::InvalidConfig { detail: "guide width must be positive".into() });
        }
        if self.mlp_hidden == 0 {
            return Err(Error::InvalidConfig { detail: "MLP hidden width must be positive".into() });
        }
        if self.encoder.t == 0 || self.encoder.d == 0 || self.encoder.v == 0 {
            return Err(Error::InvalidConfig { detail: "encoder extents must be positive".into() });
        }
        if !(self.lambda_init >= 0.0) {
            return Err(Error::InvalidConfig {
                detail: format!("bias coefficient must be nonnegative, got {}", self.lambda_init),
            });
        }
        let div = 1usize << self.levels();
        if self.h % div != 0 || self.w % div != 0 || self.h / div == 0 || self.w / div == 0 {
            return Err(Error::InvalidConfig {
                detail: format!(
                    "extents {}x{} do not survive {} halvings",
                    self.h,
                    self.w,
                    self.levels()
                ),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ModelParams {
    pub backbone: BackboneParams,
    pub mhf: MhfParams,
    pub rsa: RsaParams,
    pub head: HeadParams,
    /// Text embedding table, `[V, d]`.
    pub embed: Tensor,
}

impl ModelParams {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let backbone = BackboneParams::init(&cfg.backbone, &mut rng)?;
        let mhf = MhfParams::init(&cfg.mhf, &cfg.backbone.channels, &mut rng)?;
        let rsa =
            RsaParams::init(cfg.mhf.c, cfg.c_g, cfg.encoder.d, cfg.lambda_init, &mut rng)?;
        let head = HeadParams::init(cfg.mhf.c, cfg.mlp_hidden, &mut rng)?;
        let limit = (1.0 / cfg.encoder.d as f64).sqrt();
        let embed = Tensor::new(
            vec![cfg.encoder.v, cfg.encoder.d],
            (0..cfg.encoder.v * cfg.encoder.d).map(|_| rng.random_range(-limit..limit)).collect(),
        )
        .expect("table buffer matches shape");
        Ok(ModelParams { backbone, mhf, rsa, head, embed })
    }

    /// Every trainable tensor with a stable dotted name, in a fixed order
    /// shared by `flatten`, `assign_flat`, and `bind`.
    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (n, t) in self.backbone.fields() {
            out.push((format!("backbone.{n}"), t));
        }
        for (n, t) in self.mhf.fields() {
            out.push((format!("mhf.{n}"), t));
        }
        for (n, t) in self.rsa.fields() {
            out.push((format!("rsa.{n}"), t));
        }
        for (n, t) in self.head.fields() {
            out.push((format!("head.{n}"), t));
        }
        out.push(("embed.table".to_string(), &self.embed));
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (n, t) in self.backbone.fields_mut() {
            out.push((format!("backbone.{n}"), t));
        }
        for (n, t) in self.mhf.fields_mut() {
            out.push((format!("mhf.{n}"), t));
        }
        for (n, t) in self.rsa.fields_mut() {
            out.push((format!("rsa.{n}"), t));
        }
        for (n, t) in self.head.fields_mut() {
            out.push((format!("head.{n}"), t));
        }
        out.push(("embed.table".to_string(), &mut self.embed));
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (_, t) in self.params() {
            out.extend_from_slice(t.data());
        }
        out
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::LengthMismatch { left: flat.len(), right: self.param_count() });
        }
        let mut off = 0;
        for (_, t) in self.params_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Flat offset of the first element of the named tensor.
    pub fn flat_index_of(&self, name: &str) -> Option<usize> {
        let mut off = 0;
        for (n, t) in self.params() {
            if n == name {
                return Some(off);
            }
            off += t.len();
        }
        None
    }
}

pub struct ModelBound {
    pub backbone: BackboneBound,
    pub mhf: MhfBound,
    pub rsa: RsaBound,
    pub head: HeadBound,
    pub embed: Value,
}

impl ModelBound {
    /// Leaf handles in `ModelParams::params` order.
    pub fn values(&self) -> Vec<Value> {
        let mut out = self.backbone.values();
        out.extend(self.mhf.values());
        out.extend(self.rsa.values());
        out.extend(self.head.values());
        out.push(self.embed);
        out
    }
}

/// Leaf order matches `ModelParams::params`.
pub fn bind(tape: &mut Tape, p: &ModelParams) -> ModelBound {
    ModelBound {
        backbone: backbone::bind(tape, &p.backbone),
        mhf: mhf::bind(tape, &p.mhf),
        rsa: rsa::bind(tape, &p.rsa),
        head: regressor::bind(tape, &p.head),
        embed: tape.leaf(p.embed.clone()),
    }
}

/// Text fed to the encoder for region `r` under the current toggles.
pub fn region_text(cfg: &ModelConfig, descs: &[RegionDescription], r: usize) -> String {
    if cfg.use_descriptions {
        compose_description(&descs[r], cfg.prompt_fields)
    } else {
        "Answer.".to_string()
    }
}

/// Full forward pass to a `[1, 1]` sigmoid score on the tape.
pub fn forward(
    tape: &mut Tape,
    cfg: &ModelConfig,
    bound: &ModelBound,
    image: &Tensor,
    mask: &MaskSet,
    descs: &[RegionDescription],
) -> Result<Value> {
    if image.shape() != [3, cfg.h, cfg.w] {
        return Err(Error::ShapeMismatch {
            op: "model forward",
            detail: format!("image {:?} vs configured [3, {}, {}]", image.shape(), cfg.h, cfg.w),
        });
    }
    if mask.h != cfg.h || mask.w != cfg.w {
        return Err(Error::ShapeMismatch {
            op: "model forward",
            detail: format!("mask {}x{} vs image {}x{}", mask.h, mask.w, cfg.h, cfg.w),
        });
    }
    if cfg.use_descriptions && descs.len() != mask.l_eff {
        return Err(Error::LengthMismatch { left: descs.len(), right: mask.l_eff });
    }
    let img = tape.leaf(image.clone());
    let features = backbone::forward(tape, &bound.backbone, img)?;
    let (h_n, w_n) = cfg.deep_extents();
    let fused = if cfg.use_mhf {
        mhf::forward(tape, &cfg.mhf, &bound.mhf, &features)?
    } else {
        let deepest = *features.last().expect("backbone always yields levels");
        let gate = &bound.mhf.levels[cfg.levels() - 1].gate;
        let projected = tape.conv2d(deepest, gate.w, gate.b, 1, 0)?;
        map_to_tokens(tape, projected)?
    };
    let bias = if cfg.use_rsa_bias {
        let px_rows = rsa::image_pixel_rows(tape, img)?;
        let mut reprs = Vec::with_capacity(mask.l_eff);
        for r in 0..mask.l_eff {
            let text = region_text(cfg, descs, r);
            let (emb, valid) = embed_tokens(tape, bound.embed, &text, &cfg.encoder)?;
            let region = mask.region_pixels(r);
            let g = rsa::region_guided_repr(
                tape, &bound.rsa, px_rows, cfg.h, cfg.w, &region, r, emb, valid,
            )?;
            reprs.push(rsa::resample_repr(tape, g, h_n, w_n, h_n * w_n)?);
        }
        Some(rsa::attention_bias(tape, &reprs, bound.rsa.lambda)?)
    } else {
        None
    };
    let attended = rsa::rsa_attention(tape, &bound.rsa, fused, bias, cfg.mhf.heads)?;
    regressor::predict(tape, &bound.head, attended, cfg.mhf.heads)
}
