//! Per-image preparation: load pixels, segment, describe.
//!
//! Masks and descriptions are computed on demand through the configured
//! providers and reused from disk when a mask directory or description
//! cache is supplied.

use rsfiqa_core::description::{
    CacheRecord, Describer, DescriptionCache, HeuristicDescriber, RegionDescription,
    RemoteDescriber, unix_timestamp,
};
use rsfiqa_core::image_data::load_rgb_tensor;
use rsfiqa_core::segmentation::{
    KMeansSegmenter, MaskSet, Segmenter, load_mask_set, save_mask_set, segment_image,
};
use rsfiqa_core::{Error, Result, Tensor};
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::data::DatasetIndex;

/// Environment variables selecting the remote description service.
pub const ENDPOINT_VAR: &str = "RSFIQA_MLLM_ENDPOINT";
pub const API_KEY_VAR: &str = "RSFIQA_MLLM_API_KEY";

/// Instantiates the configured segmenter.
pub fn make_segmenter(name: &str) -> Result<Box<dyn Segmenter>> {
    match name {
        "kmeans" => Ok(Box::new(KMeansSegmenter::default())),
        other => Err(Error::InvalidConfig { detail: format!("unknown segmenter {other:?}") }),
    }
}

/// A describer that may need the image id (remote) or the pixels (local).
pub enum AnyDescriber {
    Heuristic(HeuristicDescriber),
    Remote(RemoteDescriber),
}

impl AnyDescriber {
    pub fn id(&self) -> &'static str {
        match self {
            AnyDescriber::Heuristic(_) => "heuristic",
            AnyDescriber::Remote(_) => "remote",
        }
    }

    pub fn describe(
        &self,
        image_id: &str,
        image: &Tensor,
        mask: &MaskSet,
        region: usize,
    ) -> Result<RegionDescription> {
        match self {
            AnyDescriber::Heuristic(h) => h.describe(image, mask, region),
            AnyDescriber::Remote(r) => r.describe_region(image_id, region),
        }
    }
}

/// Instantiates the configured describer; the remote one reads its endpoint
/// and credential from the environment.
pub fn make_describer(name: &str) -> Result<AnyDescriber> {
    match name {
        "heuristic" => Ok(AnyDescriber::Heuristic(HeuristicDescriber::default())),
        "remote" => {
            let endpoint = std::env::var(ENDPOINT_VAR).map_err(|_| Error::InvalidConfig {
                detail: format!("remote describer selected but {ENDPOINT_VAR} is unset"),
            })?;
            let api_key = std::env::var(API_KEY_VAR).ok();
            Ok(AnyDescriber::Remote(RemoteDescriber::new(endpoint, api_key)))
        }
        other => Err(Error::InvalidConfig { detail: format!("unknown describer {other:?}") }),
    }
}

/// Everything the training loop needs, in index order.
#[derive(Debug)]
pub struct Prepared {
    pub images: Vec<Tensor>,
    pub masks: Vec<MaskSet>,
    pub descs: Vec<Vec<RegionDescription>>,
}

/// Stable mask filename for an image id: the id's file stem plus `.png`.
pub fn mask_path(masks_dir: &Path, image_id: &str) -> PathBuf {
    let stem = Path::new(image_id)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| image_id.replace('/', "_"));
    masks_dir.join(format!("{stem}_mask.png"))
}

/// Segments one image, preferring an existing mask file when the extents
/// and region budget still match.
pub fn mask_for(
    image_id: &str,
    image: &Tensor,
    cfg: &RunConfig,
    segmenter: &dyn Segmenter,
    masks_dir: Option<&Path>,
) -> Result<MaskSet> {
    if let Some(dir) = masks_dir {
        let path = mask_path(dir, image_id);
        if path.is_file() {
            let (set, _) = load_mask_set(&path)?;
            let s = image.shape();
            if set.h == s[1] && set.w == s[2] && set.l_eff <= cfg.regions {
                return Ok(set);
            }
        }
    }
    let set = segment_image(segmenter, image, cfg.regions, cfg.seed)?;
    if let Some(dir) = masks_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        save_mask_set(&mask_path(dir, image_id), &set, segmenter.id(), cfg.seed)?;
    }
    Ok(set)
}

/// Describes every region of one image, reading and filling the cache when
/// one is supplied.
pub fn descriptions_for(
    image_id: &str,
    image: &Tensor,
    mask: &MaskSet,
    describer: &AnyDescriber,
    cache: Option<&mut DescriptionCache>,
) -> Result<Vec<RegionDescription>> {
    let mut out = Vec::with_capacity(mask.l_eff);
    match cache {
        Some(cache) => {
            for r in 0..mask.l_eff {
                if let Some(rec) = cache.get(image_id, r, describer.id()) {
                    out.push(RegionDescription::new(rec.content.clone(), rec.scores)?);
                    continue;
                }
                let d = describer.describe(image_id, image, mask, r)?;
                cache.put(CacheRecord {
                    image_id: image_id.to_string(),
                    region: r,
                    provider_id: describer.id().to_string(),
                    timestamp: unix_timestamp(),
                    content: d.content.clone(),
                    scores: d.scores,
                })?;
                out.push(d);
            }
        }
        None => {
            for r in 0..mask.l_eff {
                out.push(describer.describe(image_id, image, mask, r)?);
            }
        }
    }
    Ok(out)
}

/// Loads and prepares every record of the index, in order.
pub fn prepare(
    index: &DatasetIndex,
    cfg: &RunConfig,
    masks_dir: Option<&Path>,
    cache_path: Option<&Path>,
) -> Result<Prepared> {
    let segmenter = make_segmenter(&cfg.providers.segmenter)?;
    let describer = make_describer(&cfg.providers.describer)?;
    let mut cache = match cache_path {
        Some(p) => Some(DescriptionCache::open(p)?),
        None => None,
    };
    let mut images = Vec::with_capacity(index.len());
    let mut masks = Vec::with_capacity(index.len());
    let mut descs = Vec::with_capacity(index.len());
    for rec in &index.records {
        let image = load_rgb_tensor(&rec.path)?;
        let s = image.shape();
        if s != [3, cfg.height, cfg.width] {
            return Err(Error::ShapeMismatch {
                op: "prepare",
                detail: format!(
                    "{} is {}x{}, configured run is {}x{}",
                    rec.image_id, s[1], s[2], cfg.height, cfg.width
                ),
            });
        }
        let mask = mask_for(&rec.image_id, &image, cfg, segmenter.as_ref(), masks_dir)?;
        let d = descriptions_for(&rec.image_id, &image, &mask, &describer, cache.as_mut())?;
        images.push(image);
        masks.push(mask);
        descs.push(d);
    }
    Ok(Prepared { images, masks, descs })
}
