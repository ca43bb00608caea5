//! Subcommand definitions and dispatch.

use clap::{Args, Parser, Subcommand};
use rsfiqa_core::Error;
use std::fmt;
use std::path::{Path, PathBuf};

use crate::ablate::{Toggle, ablate};
use crate::checkpoint::{Checkpoint, load_checkpoint, save_checkpoint};
use crate::config::{Overrides, resolve};
use crate::data::{load_dataset, make_synthetic_dataset, split, write_predictions};
use crate::evaluate::evaluate_many;
use crate::prepare::{descriptions_for, make_describer, make_segmenter, mask_for, prepare};
use crate::train::{predict_raw, train};
use crate::verify::{full_model_gradcheck, gradcheck_preset};

/// Domain failures plus CLI-only outcomes; everything maps to a stable
/// one-token category for scripting.
#[derive(Debug)]
pub enum CliError {
    Core(Error),
    /// The finite-difference sweep exceeded its tolerance.
    GradCheckFailed { max_rel_err: f64, tol: f64 },
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.category(),
            CliError::GradCheckFailed { .. } => "GradCheckFailed",
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => e.fmt(f),
            CliError::GradCheckFailed { max_rel_err, tol } => {
                write!(f, "max relative error {max_rel_err:e} exceeds tolerance {tol:e}")
            }
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "rsfiqa",
    version,
    about = "Region-aware no-reference image quality assessment pipeline"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML configuration file; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

impl ConfigArgs {
    fn resolve(&self) -> CliResult<crate::config::RunConfig> {
        Ok(resolve(self.config.as_deref(), &self.overrides)?)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labeled dataset of distorted region scenes.
    Synth {
        /// Number of images (at least 2).
        #[arg(long)]
        count: usize,
        /// Output directory for images and labels.csv.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        height: usize,
        #[arg(long, default_value_t = 32)]
        width: usize,
    },
    /// Segment every dataset image into regions and save the masks.
    Segment {
        /// Dataset CSV with header image_path,mos.
        #[arg(long)]
        dataset: PathBuf,
        /// Directory receiving mask PNGs and sidecars.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Produce region descriptions and store them in a cache file.
    Describe {
        #[arg(long)]
        dataset: PathBuf,
        /// Description cache (JSON lines), created when absent.
        #[arg(long)]
        cache: PathBuf,
        /// Mask directory; masks are computed on demand when missing.
        #[arg(long)]
        masks: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train a model and write the best-validation checkpoint.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        masks: Option<PathBuf>,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score correlations of prediction files against labels.
    Eval {
        /// One or more image_id,score CSV files.
        #[arg(long, num_args = 1.., required = true)]
        predictions: Vec<PathBuf>,
        /// image_id,mos CSV file.
        #[arg(long)]
        labels: PathBuf,
    },
    /// Score a dataset with a trained checkpoint.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Predictions CSV output path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        masks: Option<PathBuf>,
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Verify analytic gradients against finite differences.
    Gradcheck {
        /// Minimum number of probed coordinates.
        #[arg(long, default_value_t = 200)]
        coords: usize,
        /// Maximum acceptable relative error.
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train and evaluate a grid of toggle settings and region budgets.
    Ablate {
        #[arg(long)]
        dataset: PathBuf,
        /// Toggle axes to sweep, comma separated: mhf, rsa_bias, descriptions.
        #[arg(long, value_delimiter = ',')]
        toggles: Vec<String>,
        /// Region budgets to sweep, comma separated.
        #[arg(long, value_delimiter = ',')]
        regions_list: Vec<usize>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

/// Runs one parsed command, writing human-readable progress to stdout.
pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth { count, out, seed, height, width } => {
            let index = make_synthetic_dataset(count, seed, &out, height, width)?;
            println!("wrote {} images and labels.csv to {}", index.len(), out.display());
            Ok(())
        }
        Command::Segment { dataset, out, cfg } => {
            let cfg = cfg.resolve()?;
            let index = load_dataset(&dataset)?;
            let segmenter = make_segmenter(&cfg.providers.segmenter)?;
            for rec in &index.records {
                let image = rsfiqa_core::image_data::load_rgb_tensor(&rec.path)?;
                let mask = mask_for(&rec.image_id, &image, &cfg, segmenter.as_ref(), Some(&out))?;
                println!("{}: {} regions", rec.image_id, mask.l_eff);
            }
            println!("wrote {} masks to {}", index.len(), out.display());
            Ok(())
        }
        Command::Describe { dataset, cache, masks, cfg } => {
            let cfg = cfg.resolve()?;
            let index = load_dataset(&dataset)?;
            let segmenter = make_segmenter(&cfg.providers.segmenter)?;
            let describer = make_describer(&cfg.providers.describer)?;
            let mut cache = rsfiqa_core::description::DescriptionCache::open(&cache)?;
            let mut written = 0usize;
            for rec in &index.records {
                let image = rsfiqa_core::image_data::load_rgb_tensor(&rec.path)?;
                let mask =
                    mask_for(&rec.image_id, &image, &cfg, segmenter.as_ref(), masks.as_deref())?;
                let descs = descriptions_for(
                    &rec.image_id,
                    &image,
                    &mask,
                    &describer,
                    Some(&mut cache),
                )?;
                written += descs.len();
            }
            println!("cached descriptions for {written} regions of {} images", index.len());
            Ok(())
        }
        Command::Train { dataset, out, masks, cache, cfg } => {
            let cfg = cfg.resolve()?;
            let index = load_dataset(&dataset)?;
            let s = split(&index, &cfg.split, cfg.seed)?;
            let prep = prepare(&index, &cfg, masks.as_deref(), cache.as_deref())?;
            let outcome = train(&cfg, &index, &prep, &s, |e| println!("{}", e.line()))?;
            save_checkpoint(&out, &outcome.best)?;
            println!(
                "best epoch {} of {}; checkpoint written to {}",
                outcome.best_epoch,
                outcome.log.len(),
                out.display()
            );
            Ok(())
        }
        Command::Eval { predictions, labels } => {
            let paths: Vec<&Path> = predictions.iter().map(|p| p.as_path()).collect();
            let report = evaluate_many(&paths, &labels)?;
            for (path, r) in predictions.iter().zip(&report.per_file) {
                println!("{}: plcc={:.6} srcc={:.6} n={}", path.display(), r.plcc, r.srcc, r.n);
            }
            if report.per_file.len() > 1 {
                println!(
                    "mean plcc={:.6} std={:.6}; mean srcc={:.6} std={:.6}",
                    report.plcc_mean, report.plcc_std, report.srcc_mean, report.srcc_std
                );
            }
            Ok(())
        }
        Command::Predict { checkpoint, dataset, out, masks, cache } => {
            let ckpt: Checkpoint = load_checkpoint(&checkpoint)?;
            let index = load_dataset(&dataset)?;
            let prep = prepare(&index, &ckpt.config, masks.as_deref(), cache.as_deref())?;
            let mcfg = ckpt.config.model_config();
            let all: Vec<usize> = (0..index.len()).collect();
            let raw = predict_raw(&mcfg, &ckpt.params, &prep, &all)?;
            let rows: Vec<(String, f64)> = index
                .records
                .iter()
                .zip(&raw)
                .map(|(rec, &r)| (rec.image_id.clone(), ckpt.normalizer.invert(r)))
                .collect();
            write_predictions(&out, &rows)?;
            println!("wrote {} predictions to {}", rows.len(), out.display());
            Ok(())
        }
        Command::Gradcheck { coords, tol, cfg } => {
            let run_cfg = match &cfg.config {
                Some(path) => resolve(Some(path), &cfg.overrides)?,
                None => {
                    let mut preset = gradcheck_preset();
                    cfg.overrides.apply(&mut preset)?;
                    preset.validate()?;
                    preset
                }
            };
            let run = full_model_gradcheck(&run_cfg, coords)?;
            println!(
                "checked={} groups={} max_rel_err={:.3e} secs={:.2}",
                run.report.checked, run.groups, run.report.max_rel_err, run.secs
            );
            if run.report.passes(tol) {
                Ok(())
            } else {
                Err(CliError::GradCheckFailed { max_rel_err: run.report.max_rel_err, tol })
            }
        }
        Command::Ablate { dataset, toggles, regions_list, cfg } => {
            let cfg = cfg.resolve()?;
            let index = load_dataset(&dataset)?;
            let toggles: Vec<Toggle> = toggles
                .iter()
                .map(|t| Toggle::parse(t))
                .collect::<rsfiqa_core::Result<_>>()?;
            println!("{:<44} {:>9} {:>9} {:>14}", "configuration", "plcc", "srcc", "secs/image");
            ablate(&cfg, &index, &toggles, &regions_list, |row| {
                println!(
                    "{:<44} {:>9.4} {:>9.4} {:>14.6}",
                    row.label, row.plcc, row.srcc, row.secs_per_image
                );
            })?;
            Ok(())
        }
    }
}
