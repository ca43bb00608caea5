//! Whole-model gradient verification against central finite differences.
//!
//! The sweep probes coordinates in every named parameter tensor, so a wiring
//! mistake anywhere between the backbone and the regression head surfaces as
//! a relative-error spike.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use rsfiqa_core::description::Describer;
use rsfiqa_core::description::HeuristicDescriber;
use rsfiqa_core::encoder::token_ids;
use rsfiqa_core::gradcheck::{Coord, GradCheckReport, check_gradients};
use rsfiqa_core::image_data::make_synthetic_image;
use rsfiqa_core::model::{ModelParams, bind, forward, region_text};
use rsfiqa_core::segmentation::{KMeansSegmenter, segment_image};
use rsfiqa_core::tape::Tape;
use rsfiqa_core::{Result, Tensor};
use std::collections::BTreeSet;
use std::time::Instant;

use crate::config::RunConfig;

/// The small probe configuration the bare `gradcheck` command runs:
/// 16x16 input, three backbone levels, three regions, narrow widths.
pub fn gradcheck_preset() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.height = 16;
    cfg.width = 16;
    cfg.channels = vec![4, 8, 8];
    cfg.regions = 3;
    cfg.fused_channels = 8;
    cfg.guide_channels = 8;
    cfg.embed_dim = 8;
    cfg.tokens = 8;
    cfg.vocab = 256;
    cfg.mlp_hidden = 8;
    cfg
}

/// Outcome of one verification sweep.
pub struct GradCheckRun {
    pub report: GradCheckReport,
    /// Number of distinct parameter tensors probed.
    pub groups: usize,
    pub secs: f64,
}

/// Verifies the analytic gradient of the score with respect to every
/// parameter group on one synthetic probe image. At least `min_coords`
/// coordinates are probed, spread round-robin over the groups; embedding
/// rows are restricted to tokens the probe text actually uses.
pub fn full_model_gradcheck(cfg: &RunConfig, min_coords: usize) -> Result<GradCheckRun> {
    cfg.validate()?;
    let start = Instant::now();
    let mcfg = cfg.model_config();
    let record = make_synthetic_image(cfg.seed, 0, cfg.height, cfg.width);
    let mask = segment_image(&KMeansSegmenter::default(), &record.image, cfg.regions, cfg.seed)?;
    let describer = HeuristicDescriber::default();
    let descs: Vec<_> = (0..mask.l_eff)
        .map(|r| describer.describe(&record.image, &mask, r))
        .collect::<Result<_>>()?;

    let params = ModelParams::init(&mcfg, cfg.seed)?;
    let named = params.params();
    let names: Vec<String> = named.iter().map(|(n, _)| n.clone()).collect();
    let inputs: Vec<Tensor> = named.iter().map(|(_, t)| (*t).clone()).collect();

    // Embedding gradients exist only for rows the probe text touches.
    let mut used_embed: BTreeSet<usize> = BTreeSet::new();
    for r in 0..mask.l_eff {
        let text = region_text(&mcfg, &descs, r);
        for id in token_ids(&text, &mcfg.encoder)? {
            for j in 0..mcfg.encoder.d {
                used_embed.insert(id * mcfg.encoder.d + j);
            }
        }
    }
    let used_embed: Vec<usize> = used_embed.into_iter().collect();

    let per_group = min_coords.div_ceil(names.len()).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6772_6164);
    let mut coords = Vec::new();
    for (i, t) in inputs.iter().enumerate() {
        let pool: Vec<usize> = if names[i] == "embed.table" {
            used_embed.clone()
        } else {
            (0..t.len()).collect()
        };
        let take = per_group.min(pool.len());
        let mut chosen = BTreeSet::new();
        while chosen.len() < take {
            chosen.insert(pool[rng.random_range(0..pool.len())]);
        }
        coords.extend(chosen.into_iter().map(|elem| Coord { input: i, elem }));
    }

    // Analytic gradients from one taped pass.
    let mut tape = Tape::new();
    let bound = bind(&mut tape, &params);
    let y = forward(&mut tape, &mcfg, &bound, &record.image, &mask, &descs)?;
    tape.backward(y)?;
    let analytic: Vec<Tensor> = bound.values().iter().map(|&v| tape.grad(v).clone()).collect();

    let mut work = params.clone();
    let f = |xs: &[Tensor]| -> Result<f64> {
        for (slot, t) in work.params_mut().into_iter().zip(xs) {
            *slot.1 = t.clone();
        }
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &work);
        let y = forward(&mut tape, &mcfg, &bound, &record.image, &mask, &descs)?;
        tape.value(y).item()
    };
    let report = check_gradients(f, &inputs, &analytic, 1e-4, &coords)?;
    Ok(GradCheckRun { report, groups: names.len(), secs: start.elapsed().as_secs_f64() })
}
