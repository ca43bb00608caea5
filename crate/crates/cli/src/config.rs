//! Run configuration: TOML file plus flag overrides.
//!
//! Every field has a default, so an empty file (or no file) is a valid
//! configuration, and every field can be overridden from the command line.

use rsfiqa_core::backbone::BackboneConfig;
use rsfiqa_core::description::PromptFields;
use rsfiqa_core::encoder::EncoderConfig;
use rsfiqa_core::mhf::MhfConfig;
use rsfiqa_core::model::ModelConfig;
use rsfiqa_core::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Cosine-annealing schedule bounds. `eta_max = None` tracks the run's
/// learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerConfig {
    pub t_max: usize,
    pub eta_min: f64,
    pub eta_max: Option<f64>,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig { t_max: 50, eta_min: 0.0, eta_max: None }
    }
}

/// Train/val/test fractions; must sum to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios { train: 0.7, val: 0.1, test: 0.2 }
    }
}

/// Provider selections; unknown names are rejected when instantiated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Providers {
    pub segmenter: String,
    pub describer: String,
    pub encoder: String,
}

impl Default for Providers {
    fn default() -> Self {
        Providers {
            segmenter: "kmeans".into(),
            describer: "heuristic".into(),
            encoder: "hashed".into(),
        }
    }
}

/// Full run configuration. Field names double as TOML keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Input image extents.
    pub height: usize,
    pub width: usize,
    /// Backbone channel widths, one per level; length fixes the level count.
    pub channels: Vec<usize>,
    /// Region budget L passed to segmentation.
    pub regions: usize,
    /// Fused token width C.
    pub fused_channels: usize,
    /// Region-guide width C_G.
    pub guide_channels: usize,
    /// Text embedding width d.
    pub embed_dim: usize,
    /// Token count T per description.
    pub tokens: usize,
    /// Hashed vocabulary size V.
    pub vocab: usize,
    pub lambda_init: f64,
    pub heads: usize,
    pub mlp_hidden: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub scheduler: SchedulerConfig,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub split: SplitRatios,
    pub providers: Providers,
    /// Fusion cascade on, or a plain projection of the deepest level.
    pub use_mhf: bool,
    /// Gram bias path on, or plain attention.
    pub use_rsa_bias: bool,
    /// Region descriptions on, or the placeholder text.
    pub use_descriptions: bool,
    /// Per-dimension switches, order color / noise / artifact / blur / overall.
    pub dims: [bool; 5],
    /// Prompt field switches.
    pub prompt_content: bool,
    pub prompt_levels: bool,
    pub prompt_scores: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            height: 32,
            width: 32,
            channels: vec![8, 16, 32],
            regions: 5,
            fused_channels: 32,
            guide_channels: 16,
            embed_dim: 32,
            tokens: 16,
            vocab: 4096,
            lambda_init: 0.1,
            heads: 1,
            mlp_hidden: 64,
            batch_size: 8,
            lr: 3e-4,
            weight_decay: 1e-5,
            scheduler: SchedulerConfig::default(),
            epochs: 200,
            patience: 50,
            seed: 0,
            split: SplitRatios::default(),
            providers: Providers::default(),
            use_mhf: true,
            use_rsa_bias: true,
            use_descriptions: true,
            dims: [true; 5],
            prompt_content: true,
            prompt_levels: true,
            prompt_scores: true,
        }
    }
}

impl RunConfig {
    /// Parses a TOML file. Unknown keys are rejected so typos surface
    /// instead of silently falling back to defaults.
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_toml_str(&raw)
    }

    pub fn from_toml_str(raw: &str) -> Result<Self> {
        toml::from_str(raw).map_err(|e| Error::InvalidConfig { detail: e.to_string() })
    }

    pub fn validate(&self) -> Result<()> {
        let ratio_sum = self.split.train + self.split.val + self.split.test;
        if (ratio_sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig {
                detail: format!("split ratios sum to {ratio_sum}, expected 1"),
            });
        }
        if self.split.train < 0.0 || self.split.val < 0.0 || self.split.test < 0.0 {
            return Err(Error::InvalidConfig { detail: "split ratios must be nonnegative".into() });
        }
        if self.regions < 2 {
            return Err(Error::InvalidL { l: self.regions });
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig { detail: "batch size must be positive".into() });
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig { detail: "epoch count must be positive".into() });
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig {
                detail: "learning rate and weight decay must be nonnegative".into(),
            });
        }
        if self.scheduler.t_max == 0 {
            return Err(Error::InvalidConfig { detail: "scheduler period must be positive".into() });
        }
        if self.providers.encoder != "hashed" {
            return Err(Error::InvalidConfig {
                detail: format!("unknown text encoder {:?}", self.providers.encoder),
            });
        }
        self.model_config().validate()
    }

    /// Peak learning rate for the cosine schedule.
    pub fn eta_max(&self) -> f64 {
        self.scheduler.eta_max.unwrap_or(self.lr)
    }

    pub fn prompt_fields(&self) -> PromptFields {
        PromptFields {
            content: self.prompt_content,
            levels: self.prompt_levels,
            scores: self.prompt_scores,
            dims: self.dims,
        }
    }

    /// The model-side view of this configuration.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            h: self.height,
            w: self.width,
            backbone: BackboneConfig { channels: self.channels.clone() },
            mhf: MhfConfig { c: self.fused_channels, heads: self.heads },
            c_g: self.guide_channels,
            lambda_init: self.lambda_init,
            encoder: EncoderConfig {
                t: self.tokens,
                d: self.embed_dim,
                v: self.vocab,
                seed: self.seed,
            },
            mlp_hidden: self.mlp_hidden,
            use_mhf: self.use_mhf,
            use_rsa_bias: self.use_rsa_bias,
            use_descriptions: self.use_descriptions,
            prompt_fields: self.prompt_fields(),
        }
    }
}

/// Optional command-line overrides, one per configuration key. `None`
/// leaves the file (or default) value in place.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    #[arg(long, help = "Input image height")]
    pub height: Option<usize>,
    #[arg(long, help = "Input image width")]
    pub width: Option<usize>,
    #[arg(long, value_delimiter = ',', help = "Backbone channels, comma separated")]
    pub channels: Option<Vec<usize>>,
    #[arg(long, help = "Region budget L")]
    pub regions: Option<usize>,
    #[arg(long, help = "Fused token width C")]
    pub fused_channels: Option<usize>,
    #[arg(long, help = "Region-guide width")]
    pub guide_channels: Option<usize>,
    #[arg(long, help = "Text embedding width")]
    pub embed_dim: Option<usize>,
    #[arg(long, help = "Tokens kept per description")]
    pub tokens: Option<usize>,
    #[arg(long, help = "Hashed vocabulary size")]
    pub vocab: Option<usize>,
    #[arg(long, help = "Initial bias coefficient")]
    pub lambda_init: Option<f64>,
    #[arg(long, help = "Attention head count")]
    pub heads: Option<usize>,
    #[arg(long, help = "Regression MLP hidden width")]
    pub mlp_hidden: Option<usize>,
    #[arg(long, help = "Training batch size")]
    pub batch_size: Option<usize>,
    #[arg(long, help = "Peak learning rate")]
    pub lr: Option<f64>,
    #[arg(long, help = "Decoupled weight decay")]
    pub weight_decay: Option<f64>,
    #[arg(long, help = "Cosine schedule period")]
    pub t_max: Option<usize>,
    #[arg(long, help = "Cosine schedule floor")]
    pub eta_min: Option<f64>,
    #[arg(long, help = "Cosine schedule peak (defaults to lr)")]
    pub eta_max: Option<f64>,
    #[arg(long, help = "Maximum training epochs")]
    pub epochs: Option<usize>,
    #[arg(long, help = "Early-stop patience in epochs")]
    pub patience: Option<usize>,
    #[arg(long, help = "Run seed")]
    pub seed: Option<u64>,
    #[arg(long, help = "Training split fraction")]
    pub train_ratio: Option<f64>,
    #[arg(long, help = "Validation split fraction")]
    pub val_ratio: Option<f64>,
    #[arg(long, help = "Test split fraction")]
    pub test_ratio: Option<f64>,
    #[arg(long, help = "Segmenter provider name")]
    pub segmenter: Option<String>,
    #[arg(long, help = "Describer provider name")]
    pub describer: Option<String>,
    #[arg(long, help = "Text encoder provider name")]
    pub encoder: Option<String>,
    #[arg(long, help = "Multi-scale fusion on/off")]
    pub use_mhf: Option<bool>,
    #[arg(long, help = "Region bias on/off")]
    pub use_rsa_bias: Option<bool>,
    #[arg(long, help = "Region descriptions on/off")]
    pub use_descriptions: Option<bool>,
    #[arg(long, value_delimiter = ',', help = "Dimension switches: color,noise,artifact,blur,overall")]
    pub dims: Option<Vec<bool>>,
    #[arg(long, help = "Content sentence in composed text on/off")]
    pub prompt_content: Option<bool>,
    #[arg(long, help = "Quality levels in composed text on/off")]
    pub prompt_levels: Option<bool>,
    #[arg(long, help = "Numeric scores in composed text on/off")]
    pub prompt_scores: Option<bool>,
}

impl Overrides {
    /// Applies every present override onto `cfg`.
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        macro_rules! set {
            ($field:ident) => {
                if let Some(v) = &self.$field {
                    cfg.$field = v.clone();
                }
            };
        }
        set!(height);
        set!(width);
        set!(channels);
        set!(regions);
        set!(fused_channels);
        set!(guide_channels);
        set!(embed_dim);
        set!(tokens);
        set!(vocab);
        set!(lambda_init);
        set!(heads);
        set!(mlp_hidden);
        set!(batch_size);
        set!(lr);
        set!(weight_decay);
        set!(epochs);
        set!(patience);
        set!(seed);
        set!(use_mhf);
        set!(use_rsa_bias);
        set!(use_descriptions);
        set!(prompt_content);
        set!(prompt_levels);
        set!(prompt_scores);
        if let Some(v) = self.t_max {
            cfg.scheduler.t_max = v;
        }
        if let Some(v) = self.eta_min {
            cfg.scheduler.eta_min = v;
        }
        if let Some(v) = self.eta_max {
            cfg.scheduler.eta_max = Some(v);
        }
        if let Some(v) = self.train_ratio {
            cfg.split.train = v;
        }
        if let Some(v) = self.val_ratio {
            cfg.split.val = v;
        }
        if let Some(v) = self.test_ratio {
            cfg.split.test = v;
        }
        if let Some(v) = &self.segmenter {
            cfg.providers.segmenter = v.clone();
        }
        if let Some(v) = &self.describer {
            cfg.providers.describer = v.clone();
        }
        if let Some(v) = &self.encoder {
            cfg.providers.encoder = v.clone();
        }
        if let Some(v) = &self.dims {
            if v.len() != 5 {
                return Err(Error::InvalidConfig {
                    detail: format!("expected 5 dimension switches, got {}", v.len()),
                });
            }
            cfg.dims = [v[0], v[1], v[2], v[3], v[4]];
        }
        Ok(())
    }
}

/// Loads the optional file, applies overrides, validates.
pub fn resolve(config_path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig> {
    let mut cfg = match config_path {
        Some(p) => RunConfig::from_toml_file(p)?,
        None => RunConfig::default(),
    };
    overrides.apply(&mut cfg)?;
    cfg.validate()?;
    Ok(cfg)
}
