//! Region segmentation: proposal postprocessing, a deterministic clustering
//! fallback, and mask persistence.
//!
//! Proposal sources are pluggable behind [`Segmenter`]. Raw proposals may
//! overlap or leave pixels uncovered; [`postprocess`] resolves both into a
//! dense label map with at most `L` regions where uncovered pixels form a
//! trailing background region. Degenerate inputs (for example a constant
//! image) simply yield fewer regions; that is not an error.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// One binary mask proposal with the proposer's confidence score.
#[derive(Debug, Clone)]
pub struct RawMask {
    /// Row-major `H*W` membership indicator.
    pub indicator: Vec<bool>,
    /// Proposer confidence; higher wins overlaps.
    pub predicted_iou: f64,
}

impl RawMask {
    pub fn area(&self) -> usize {
        self.indicator.iter().filter(|&&b| b).count()
    }
}

/// A resolved segmentation: every pixel carries exactly one region label in
/// `0..l_eff`. When any pixel was left uncovered by the proposals, those
/// pixels form the background region, always the last label.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub h: usize,
    pub w: usize,
    /// Row-major region label per pixel, each `< l_eff`.
    pub labels: Vec<u8>,
    pub l_eff: usize,
    /// Per-region confidence in label order; background carries 0.0.
    pub scores: Vec<f64>,
    /// Label of the background region, `None` when every pixel was covered.
    pub background_index: Option<usize>,
}

impl MaskSet {
    /// Flat pixel indices belonging to region `r`.
    pub fn region_pixels(&self, r: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l as usize == r).then_some(i))
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.labels.len() != self.h * self.w {
            return Err(Error::ShapeMismatch {
                op: "MaskSet",
                detail: format!("{} labels for {}x{}", self.labels.len(), self.h, self.w),
            });
        }
        if self.l_eff == 0 || self.scores.len() != self.l_eff {
            return Err(Error::ShapeMismatch {
                op: "MaskSet",
                detail: format!("{} scores for l_eff {}", self.scores.len(), self.l_eff),
            });
        }
        if let Some(bad) = self.labels.iter().find(|&&l| l as usize >= self.l_eff) {
            return Err(Error::ShapeMismatch {
                op: "MaskSet",
                detail: format!("label {bad} out of range for l_eff {}", self.l_eff),
            });
        }
        if let Some(b) = self.background_index {
            if b != self.l_eff - 1 {
                return Err(Error::ShapeMismatch {
                    op: "MaskSet",
                    detail: format!("background {b} must be the last label {}", self.l_eff - 1),
                });
            }
        }
        Ok(())
    }
}

/// Source of raw mask proposals for an image.
pub trait Segmenter {
    /// Proposes up to `l - 1` region masks for a `[3, H, W]` image.
    fn propose(&self, image: &Tensor, l: usize, seed: u64) -> Result<Vec<RawMask>>;

    /// Stable identifier recorded in mask sidecars.
    fn id(&self) -> &'static str;
}

/// Proposes and resolves in one step.
pub fn segment_image(
    segmenter: &dyn Segmenter,
    image: &Tensor,
    l: usize,
    seed: u64,
) -> Result<MaskSet> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::ShapeMismatch {
            op: "segment_image",
            detail: format!("expected [3, H, W], got {:?}", s),
        });
    }
    let proposals = segmenter.propose(image, l, seed)?;
    postprocess(&proposals, s[1], s[2], l)
}

/// Resolves raw proposals into a [`MaskSet`].
///
/// Rules, applied in order:
/// 1. Proposals are ranked by confidence descending, then area descending,
///    then submission order.
/// 2. The top `l - 1` survive.
/// 3. Each pixel goes to the highest-ranked surviving proposal covering it.
/// 4. Uncovered pixels become the background region, labeled last.
/// 5. Regions that end up with zero pixels are dropped and labels are
///    renumbered, so `l_eff` can fall below `l`.
pub fn postprocess(proposals: &[RawMask], h: usize, w: usize, l: usize) -> Result<MaskSet> {
    if !(2..=256).contains(&l) {
        return Err(Error::InvalidL { l });
    }
    if h == 0 || w == 0 {
        return Err(Error::EmptyInput { what: "mask extent" });
    }
    let n = h * w;
    for (i, p) in proposals.iter().enumerate() {
        if p.indicator.len() != n {
            return Err(Error::ShapeMismatch {
                op: "postprocess",
                detail: format!("proposal {i} has {} pixels, image has {n}", p.indicator.len()),
            });
        }
    }
    let mut order: Vec<usize> = (0..proposals.len()).collect();
    order.sort_by(|&a, &b| {
        proposals[b]
            .predicted_iou
            .total_cmp(&proposals[a].predicted_iou)
            .then(proposals[b].area().cmp(&proposals[a].area()))
            .then(a.cmp(&b))
    });
    order.truncate(l - 1);

    const UNASSIGNED: usize = usize::MAX;
    let mut owner = vec![UNASSIGNED; n];
    for (rank, &pi) in order.iter().enumerate() {
        for (px, &inside) in proposals[pi].indicator.iter().enumerate() {
            if inside && owner[px] == UNASSIGNED {
                owner[px] = rank;
            }
        }
    }

    // Renumber surviving non-empty regions in rank order.
    let mut counts = vec![0usize; order.len()];
    let mut uncovered = 0usize;
    for &o in &owner {
        if o == UNASSIGNED {
            uncovered += 1;
        } else {
            counts[o] += 1;
        }
    }
    let mut relabel = vec![UNASSIGNED; order.len()];
    let mut scores = Vec::new();
    for (rank, &pi) in order.iter().enumerate() {
        if counts[rank] > 0 {
            relabel[rank] = scores.len();
            scores.push(proposals[pi].predicted_iou);
        }
    }
    let background_index = if uncovered > 0 {
        scores.push(0.0);
        Some(scores.len() - 1)
    } else {
        None
    };
    let l_eff = scores.len();
    if l_eff == 0 {
        // No proposals and no pixels is ruled out above, so this only
        // happens with zero proposals; everything is background then.
        unreachable!("uncovered pixels always produce a background region");
    }
    let labels: Vec<u8> = owner
        .iter()
        .map(|&o| {
            let lab = if o == UNASSIGNED { l_eff - 1 } else { relabel[o] };
            lab as u8
        })
        .collect();
    let set = MaskSet { h, w, labels, l_eff, scores, background_index };
    set.validate()?;
    Ok(set)
}

/// Clustering fallback segmenter: k-means over per-pixel features
/// `(r, g, b, 0.5*x/W, 0.5*y/H)` with deterministic farthest-point seeding.
/// Produces `l - 1` tiling proposals (or fewer on degenerate images), so the
/// resolved set normally has no background region.
#[derive(Debug, Clone)]
pub struct KMeansSegmenter {
    pub iters: usize,
}

impl Default for KMeansSegmenter {
    fn default() -> Self {
        KMeansSegmenter { iters: 10 }
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

impl Segmenter for KMeansSegmenter {
    fn propose(&self, image: &Tensor, l: usize, seed: u64) -> Result<Vec<RawMask>> {
        if !(2..=256).contains(&l) {
            return Err(Error::InvalidL { l });
        }
        let s = image.shape();
        if s.len() != 3 || s[0] != 3 {
            return Err(Error::ShapeMismatch {
                op: "KMeansSegmenter::propose",
                detail: format!("expected [3, H, W], got {:?}", s),
            });
        }
        let (h, w) = (s[1], s[2]);
        let n = h * w;
        let d = image.data();
        let feat: Vec<[f64; 5]> = (0..n)
            .map(|i| {
                let (y, x) = (i / w, i % w);
                [
                    d[i],
                    d[n + i],
                    d[2 * n + i],
                    0.5 * x as f64 / w.max(1) as f64,
                    0.5 * y as f64 / h.max(1) as f64,
                ]
            })
            .collect();
        let k = (l - 1).min(n);

        // Farthest-point init: seeded first pick, then greedy max-min
        // distance with lowest index on ties.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut centers: Vec<[f64; 5]> = vec![feat[rng.random_range(0..n)]];
        let mut nearest: Vec<f64> = feat.iter().map(|f| dist2(f, &centers[0])).collect();
        while centers.len() < k {
            let mut best = 0;
            for i in 1..n {
                if nearest[i] > nearest[best] {
                    best = i;
                }
            }
            centers.push(feat[best]);
            for i in 0..n {
                let dd = dist2(&feat[i], centers.last().unwrap());
                if dd < nearest[i] {
                    nearest[i] = dd;
                }
            }
        }

        let mut assign = vec![0usize; n];
        for _ in 0..self.iters.max(1) {
            let mut changed = false;
            for i in 0..n {
                let mut best = 0;
                let mut bd = dist2(&feat[i], &centers[0]);
                for (c, center) in centers.iter().enumerate().skip(1) {
                    let dd = dist2(&feat[i], center);
                    if dd < bd {
                        bd = dd;
                        best = c;
                    }
                }
                if assign[i] != best {
                    assign[i] = best;
                    changed = true;
                }
            }
            let mut sums = vec![[0.0f64; 5]; centers.len()];
            let mut cnt = vec![0usize; centers.len()];
            for i in 0..n {
                cnt[assign[i]] += 1;
                for j in 0..5 {
                    sums[assign[i]][j] += feat[i][j];
                }
            }
            for c in 0..centers.len() {
                if cnt[c] > 0 {
                    for j in 0..5 {
                        centers[c][j] = sums[c][j] / cnt[c] as f64;
                    }
                }
            }
            if !changed {
                break;
            }
        }

        // Score each non-empty cluster by compactness in (0, 1].
        let mut out = Vec::new();
        for c in 0..centers.len() {
            let members: Vec<usize> = (0..n).filter(|&i| assign[i] == c).collect();
            if members.is_empty() {
                continue;
            }
            let mean_dist = members
                .iter()
                .map(|&i| dist2(&feat[i], &centers[c]).sqrt())
                .sum::<f64>()
                / members.len() as f64;
            let mut indicator = vec![false; n];
            for &i in &members {
                indicator[i] = true;
            }
            out.push(RawMask { indicator, predicted_iou: 1.0 / (1.0 + mean_dist) });
        }
        Ok(out)
    }

    fn id(&self) -> &'static str {
        "kmeans"
    }
}

/// Sidecar metadata stored beside the label PNG.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskSidecar {
    pub l_eff: usize,
    pub scores: Vec<f64>,
    pub background_index: Option<usize>,
    pub segmenter_id: String,
    pub seed: u64,
}

fn sidecar_path(png_path: &Path) -> std::path::PathBuf {
    png_path.with_extension("json")
}

/// Writes labels as an 8-bit grayscale PNG (pixel value = region label) plus
/// a JSON sidecar next to it with the same stem.
pub fn save_mask_set(
    png_path: &Path,
    set: &MaskSet,
    segmenter_id: &str,
    seed: u64,
) -> Result<()> {
    set.validate()?;
    let img = image::GrayImage::from_raw(set.w as u32, set.h as u32, set.labels.clone())
        .expect("label buffer matches extent");
    img.save(png_path)
        .map_err(|e| Error::IoError { path: png_path.display().to_string(), detail: e.to_string() })?;
    let sidecar = MaskSidecar {
        l_eff: set.l_eff,
        scores: set.scores.clone(),
        background_index: set.background_index,
        segmenter_id: segmenter_id.to_string(),
        seed,
    };
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    std::fs::write(sidecar_path(png_path), json)
        .map_err(|e| Error::io(sidecar_path(png_path).display().to_string(), e))
}

/// Loads and validates a mask PNG with its sidecar.
pub fn load_mask_set(png_path: &Path) -> Result<(MaskSet, MaskSidecar)> {
    let disp = png_path.display().to_string();
    let img = image::open(png_path)
        .map_err(|e| Error::CorruptMaskFile { path: disp.clone(), detail: e.to_string() })?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let labels: Vec<u8> = img.into_raw();
    let sc_path = sidecar_path(png_path);
    let raw = std::fs::read_to_string(&sc_path)
        .map_err(|e| Error::CorruptMaskFile { path: sc_path.display().to_string(), detail: e.to_string() })?;
    let sidecar: MaskSidecar = serde_json::from_str(&raw)
        .map_err(|e| Error::CorruptMaskFile { path: sc_path.display().to_string(), detail: e.to_string() })?;
    let set = MaskSet {
        h,
        w,
        labels,
        l_eff: sidecar.l_eff,
        scores: sidecar.scores.clone(),
        background_index: sidecar.background_index,
    };
    set.validate().map_err(|e| Error::CorruptMaskFile { path: disp, detail: e.to_string() })?;
    Ok((set, sidecar))
}
