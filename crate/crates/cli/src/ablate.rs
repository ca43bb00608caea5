//! Ablation harness: trains and evaluates a grid of toggle settings and
//! region budgets, reporting correlations and inference time per row.

use rsfiqa_core::{Error, Result, metrics};
use std::time::Instant;

use crate::config::RunConfig;
use crate::data::{DatasetIndex, split};
use crate::prepare::{Prepared, prepare};
use crate::train::{predict_raw, train};

/// One switchable model component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Toggle {
    Mhf,
    RsaBias,
    Descriptions,
}

impl Toggle {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "mhf" => Ok(Toggle::Mhf),
            "rsa_bias" => Ok(Toggle::RsaBias),
            "descriptions" => Ok(Toggle::Descriptions),
            other => Err(Error::InvalidConfig { detail: format!("unknown toggle {other:?}") }),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Toggle::Mhf => "mhf",
            Toggle::RsaBias => "rsa_bias",
            Toggle::Descriptions => "descriptions",
        }
    }

    fn apply(self, cfg: &mut RunConfig, on: bool) {
        match self {
            Toggle::Mhf => cfg.use_mhf = on,
            Toggle::RsaBias => cfg.use_rsa_bias = on,
            Toggle::Descriptions => cfg.use_descriptions = on,
        }
    }
}

/// One evaluated grid cell.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub label: String,
    pub regions: usize,
    pub plcc: f64,
    pub srcc: f64,
    pub secs_per_image: f64,
}

/// All on/off combinations of `toggles` crossed with `region_counts`.
/// An empty region list keeps the base budget for every row.
fn grid(
    base: &RunConfig,
    toggles: &[Toggle],
    region_counts: &[usize],
) -> Result<Vec<(RunConfig, String)>> {
    if toggles.is_empty() && region_counts.is_empty() {
        return Err(Error::InvalidGrid);
    }
    let regions: Vec<usize> =
        if region_counts.is_empty() { vec![base.regions] } else { region_counts.to_vec() };
    let mut rows = Vec::new();
    for &l in &regions {
        for combo in 0..(1usize << toggles.len()) {
            let mut cfg = base.clone();
            cfg.regions = l;
            let mut parts = Vec::new();
            for (bit, &t) in toggles.iter().enumerate() {
                let on = combo & (1 << bit) != 0;
                t.apply(&mut cfg, on);
                parts.push(format!("{}={}", t.name(), if on { "on" } else { "off" }));
            }
            if !region_counts.is_empty() {
                parts.push(format!("L={l}"));
            }
            let label = if parts.is_empty() { "base".to_string() } else { parts.join(" ") };
            cfg.validate()?;
            rows.push((cfg, label));
        }
    }
    Ok(rows)
}

/// Minimum over a few repeats of the mean per-image forward time; the
/// minimum filters scheduler noise out of the wall clock.
fn time_per_image(
    cfg: &RunConfig,
    params: &rsfiqa_core::model::ModelParams,
    prep: &Prepared,
    idx: &[usize],
) -> Result<f64> {
    let mcfg = cfg.model_config();
    let mut best = f64::INFINITY;
    for _ in 0..3 {
        let start = Instant::now();
        predict_raw(&mcfg, params, prep, idx)?;
        let secs = start.elapsed().as_secs_f64() / idx.len() as f64;
        if secs < best {
            best = secs;
        }
    }
    Ok(best)
}

/// Trains and evaluates every grid cell. Each row retrains from the run
/// seed on the train split and reports test-split correlations.
pub fn ablate(
    base: &RunConfig,
    index: &DatasetIndex,
    toggles: &[Toggle],
    region_counts: &[usize],
    mut on_row: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    let rows = grid(base, toggles, region_counts)?;
    let s = split(index, &base.split, base.seed)?;
    if s.test.len() < 2 {
        return Err(Error::TooFewSamples { have: s.test.len(), need: 2 });
    }
    let test_mos: Vec<f64> = s.test.iter().map(|&i| index.records[i].mos).collect();
    // Preparation depends only on the region budget; reuse across rows.
    let mut prepared: Vec<(usize, Prepared)> = Vec::new();
    let mut out = Vec::with_capacity(rows.len());
    for (cfg, label) in rows {
        if !prepared.iter().any(|(l, _)| *l == cfg.regions) {
            prepared.push((cfg.regions, prepare(index, &cfg, None, None)?));
        }
        let prep = &prepared.iter().find(|(l, _)| *l == cfg.regions).expect("just inserted").1;
        let outcome = train(&cfg, index, prep, &s, |_| {})?;
        let mcfg = cfg.model_config();
        let raw = predict_raw(&mcfg, &outcome.best.params, prep, &s.test)?;
        let preds: Vec<f64> = raw.iter().map(|&r| outcome.best.normalizer.invert(r)).collect();
        let row = AblationRow {
            label,
            regions: cfg.regions,
            plcc: metrics::plcc(&preds, &test_mos)?,
            srcc: metrics::srcc(&preds, &test_mos)?,
            secs_per_image: time_per_image(&cfg, &outcome.best.params, prep, &s.test)?,
        };
        on_row(&row);
        out.push(row);
    }
    Ok(out)
}
