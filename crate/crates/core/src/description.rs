//! Per-region quality descriptions.
//!
//! A [`Describer`] assesses one region of an image along five quality
//! dimensions (color, noise, artifact, blur, overall) plus a free-text
//! content sentence. The question/answer text follows fixed templates so a
//! formatted answer always parses back to the same values; remote providers
//! are expected to reply in exactly this answer format.
//!
//! The bundled [`HeuristicDescriber`] replaces a multimodal model with
//! classical statistics computed over the region's pixels. The absolute
//! numbers are calibrated stand-ins; what matters is that each score moves
//! the right way as its distortion gets worse.

use crate::error::{Error, Result};
use crate::image_data::luma_plane;
use crate::segmentation::MaskSet;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;
use std::path::{Path, PathBuf};

/// Quality dimensions in their canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QualityDimension {
    Color,
    Noise,
    Artifact,
    Blur,
    Overall,
}

impl QualityDimension {
    pub const ALL: [QualityDimension; 5] = [
        QualityDimension::Color,
        QualityDimension::Noise,
        QualityDimension::Artifact,
        QualityDimension::Blur,
        QualityDimension::Overall,
    ];

    pub fn name(self) -> &'static str {
        match self {
            QualityDimension::Color => "color",
            QualityDimension::Noise => "noise",
            QualityDimension::Artifact => "artifact",
            QualityDimension::Blur => "blur",
            QualityDimension::Overall => "overall",
        }
    }
}

impl fmt::Display for QualityDimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Five-step quality scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum QualityLevel {
    Bad,
    Poor,
    Fair,
    Good,
    Excellent,
}

impl QualityLevel {
    pub const ALL: [QualityLevel; 5] = [
        QualityLevel::Bad,
        QualityLevel::Poor,
        QualityLevel::Fair,
        QualityLevel::Good,
        QualityLevel::Excellent,
    ];

    pub fn name(self) -> &'static str {
        match self {
            QualityLevel::Bad => "bad",
            QualityLevel::Poor => "poor",
            QualityLevel::Fair => "fair",
            QualityLevel::Good => "good",
            QualityLevel::Excellent => "excellent",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.name() == s)
    }
}

impl fmt::Display for QualityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Maps a score in `[0, 100]` to its quintile level; 100 stays `excellent`.
pub fn level_for_score(score: f64) -> Result<QualityLevel> {
    if !score.is_finite() || !(0.0..=100.0).contains(&score) {
        return Err(Error::UnparseableResponse {
            detail: format!("score {score} outside [0, 100]"),
        });
    }
    Ok(match score {
        s if s < 20.0 => QualityLevel::Bad,
        s if s < 40.0 => QualityLevel::Poor,
        s if s < 60.0 => QualityLevel::Fair,
        s if s < 80.0 => QualityLevel::Good,
        _ => QualityLevel::Excellent,
    })
}

// ---- question / answer templates --------------------------------------

pub fn content_question() -> &'static str {
    "Please describe the content of the highlighted area in the mask image based on the original image context."
}

pub fn level_question(dim: QualityDimension) -> String {
    format!("From the {dim} dimension, please provide the quality level for highlighted area in the mask image.")
}

pub fn score_question(dim: QualityDimension) -> String {
    format!("From the {dim} dimension, please provide the quality score for highlighted area in the mask image.")
}

pub fn content_answer(content: &str) -> String {
    format!("{content}.")
}

pub fn level_answer(dim: QualityDimension, level: QualityLevel) -> String {
    format!("From the {dim} dimension, the image quality level is {level}.")
}

pub fn score_answer(dim: QualityDimension, score: f64) -> String {
    format!("From the {dim} dimension, the image quality score is {score}.")
}

fn strip_template<'a>(text: &'a str, prefix: &str, what: &str) -> Result<&'a str> {
    let body = text.strip_prefix(prefix).and_then(|rest| rest.strip_suffix('.'));
    body.ok_or_else(|| Error::UnparseableResponse {
        detail: format!("{what} answer {text:?} does not match the template"),
    })
}

/// Strict inverse of [`content_answer`].
pub fn parse_content_answer(text: &str) -> Result<String> {
    let body = text.strip_suffix('.').ok_or_else(|| Error::UnparseableResponse {
        detail: format!("content answer {text:?} lacks the closing period"),
    })?;
    if body.is_empty() {
        return Err(Error::UnparseableResponse { detail: "empty content answer".into() });
    }
    Ok(body.to_string())
}

/// Strict inverse of [`level_answer`] for the given dimension.
pub fn parse_level_answer(dim: QualityDimension, text: &str) -> Result<QualityLevel> {
    let prefix = format!("From the {dim} dimension, the image quality level is ");
    let body = strip_template(text, &prefix, "level")?;
    QualityLevel::from_name(body).ok_or_else(|| Error::UnparseableResponse {
        detail: format!("unknown quality level {body:?}"),
    })
}

/// Strict inverse of [`score_answer`] for the given dimension.
pub fn parse_score_answer(dim: QualityDimension, text: &str) -> Result<f64> {
    let prefix = format!("From the {dim} dimension, the image quality score is ");
    let body = strip_template(text, &prefix, "score")?;
    let score: f64 = body.parse().map_err(|_| Error::UnparseableResponse {
        detail: format!("score {body:?} is not a number"),
    })?;
    if !score.is_finite() || !(0.0..=100.0).contains(&score) {
        return Err(Error::UnparseableResponse {
            detail: format!("score {score} outside [0, 100]"),
        });
    }
    Ok(score)
}

// ---- region descriptions ----------------------------------------------

/// Scores for one region across the five dimensions, canonical order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionDescription {
    pub content: String,
    pub scores: [f64; 5],
}

impl RegionDescription {
    pub fn new(content: impl Into<String>, scores: [f64; 5]) -> Result<Self> {
        let content = content.into();
        if content.is_empty() {
            return Err(Error::EmptyText);
        }
        for &s in &scores {
            // Reuse the range check; the level itself is discarded here.
            level_for_score(s)?;
        }
        Ok(RegionDescription { content, scores })
    }

    pub fn score(&self, dim: QualityDimension) -> f64 {
        self.scores[QualityDimension::ALL.iter().position(|&d| d == dim).unwrap()]
    }

    pub fn level(&self, dim: QualityDimension) -> QualityLevel {
        level_for_score(self.score(dim)).expect("scores validated at construction")
    }

    /// The full question/answer transcript for this region: the content pair
    /// first, then a level and a score pair per dimension.
    pub fn conversation(&self) -> Vec<(String, String)> {
        let mut out = vec![(content_question().to_string(), content_answer(&self.content))];
        for dim in QualityDimension::ALL {
            out.push((level_question(dim), level_answer(dim, self.level(dim))));
            out.push((score_question(dim), score_answer(dim, self.score(dim))));
        }
        out
    }
}

/// Which parts of a description are rendered into encoder text.
///
/// `dims` follows the canonical dimension order; a false entry drops that
/// dimension's level/score pieces entirely.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptFields {
    #[serde(default = "bool_true")]
    pub content: bool,
    #[serde(default = "bool_true")]
    pub levels: bool,
    #[serde(default = "bool_true")]
    pub scores: bool,
    #[serde(default = "dims_all")]
    pub dims: [bool; 5],
}

fn bool_true() -> bool {
    true
}

fn dims_all() -> [bool; 5] {
    [true; 5]
}

impl Default for PromptFields {
    fn default() -> Self {
        PromptFields { content: true, levels: true, scores: true, dims: [true; 5] }
    }
}

impl PromptFields {
    pub const NONE: PromptFields =
        PromptFields { content: false, levels: false, scores: false, dims: [false; 5] };
}

/// Renders a description into the single string fed to the text encoder.
///
/// With everything enabled: the content sentence, then per dimension
/// `"<dim>: <level> (<score>)"`. Disabled fields are omitted; when the
/// toggles leave nothing to render the placeholder `"Answer."` stands in so
/// ablations still have a token stream.
pub fn compose_description(desc: &RegionDescription, fields: PromptFields) -> String {
    let mut parts: Vec<String> = Vec::new();
    if fields.content {
        parts.push(format!("{}.", desc.content));
    }
    if fields.levels || fields.scores {
        for (i, dim) in QualityDimension::ALL.into_iter().enumerate() {
            if !fields.dims[i] {
                continue;
            }
            let piece = match (fields.levels, fields.scores) {
                (true, true) => format!("{dim}: {} ({})", desc.level(dim), desc.score(dim)),
                (true, false) => format!("{dim}: {}", desc.level(dim)),
                (false, true) => format!("{dim}: {}", desc.score(dim)),
                (false, false) => unreachable!(),
            };
            parts.push(piece);
        }
    }
    if parts.is_empty() {
        return "Answer.".to_string();
    }
    parts.join(" ")
}

/// Produces descriptions for regions of an image.
pub trait Describer {
    fn describe(&self, image: &Tensor, mask: &MaskSet, region: usize) -> Result<RegionDescription>;

    /// Stable identifier recorded in cache entries.
    fn id(&self) -> &'static str;
}

// ---- heuristic describer ----------------------------------------------

/// Calibration constants mapping raw statistics onto `[0, 100]` scores.
/// Frozen after tuning against the synthetic distortion sweeps.
#[derive(Debug, Clone)]
pub struct HeuristicCalibration {
    /// Laplacian-variance scale for sharpness.
    pub blur_scale: f64,
    /// Median-residual scale for noise energy.
    pub noise_scale: f64,
    /// Colorfulness value mapped to a full score.
    pub color_scale: f64,
    /// Block-boundary gradient ratio decay.
    pub block_scale: f64,
}

impl Default for HeuristicCalibration {
    fn default() -> Self {
        HeuristicCalibration {
            blur_scale: 0.004,
            noise_scale: 0.06,
            color_scale: 0.35,
            block_scale: 2.0,
        }
    }
}

/// Statistics-based stand-in for a multimodal describer: sharpness from
/// Laplacian variance, noise from median residuals, color from the
/// rg/yb colorfulness statistic, artifacts from gradient concentration at
/// 8-pixel block boundaries. Overall is the mean of the other four.
#[derive(Debug, Clone, Default)]
pub struct HeuristicDescriber {
    pub calibration: HeuristicCalibration,
}

fn size_word(frac: f64) -> &'static str {
    if frac < 0.1 {
        "small"
    } else if frac < 0.35 {
        "medium-sized"
    } else {
        "large"
    }
}

fn position_word(cy: f64, cx: f64) -> String {
    let row = if cy < 1.0 / 3.0 {
        "top"
    } else if cy < 2.0 / 3.0 {
        "middle"
    } else {
        "bottom"
    };
    let col = if cx < 1.0 / 3.0 {
        "left"
    } else if cx < 2.0 / 3.0 {
        "center"
    } else {
        "right"
    };
    if row == "middle" && col == "center" {
        "center".to_string()
    } else {
        format!("{row} {col}")
    }
}

impl HeuristicDescriber {
    fn region_stats(
        &self,
        image: &Tensor,
        mask: &MaskSet,
        pixels: &[usize],
    ) -> Result<[f64; 4]> {
        let (l, h, w) = luma_plane(image)?;
        let d = image.data();
        let n = h * w;
        let at = |y: isize, x: isize| -> f64 {
            let y = y.clamp(0, h as isize - 1) as usize;
            let x = x.clamp(0, w as isize - 1) as usize;
            l[y * w + x]
        };
        debug_assert_eq!(mask.h * mask.w, n);

        // Sharpness: variance of the 4-neighbor Laplacian response.
        let lap: Vec<f64> = pixels
            .iter()
            .map(|&p| {
                let (y, x) = ((p / w) as isize, (p % w) as isize);
                4.0 * at(y, x) - at(y - 1, x) - at(y + 1, x) - at(y, x - 1) - at(y, x + 1)
            })
            .collect();
        let lm = lap.iter().sum::<f64>() / lap.len() as f64;
        let lap_var = lap.iter().map(|v| (v - lm) * (v - lm)).sum::<f64>() / lap.len() as f64;
        let blur_score = 100.0 * (1.0 - (-lap_var / self.calibration.blur_scale).exp());

        // Noise: mean absolute deviation from the 3x3 median.
        let mut resid = 0.0;
        for &p in pixels {
            let (y, x) = ((p / w) as isize, (p % w) as isize);
            let mut win = [0.0; 9];
            let mut k = 0;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    win[k] = at(y + dy, x + dx);
                    k += 1;
                }
            }
            win.sort_by(|a, b| a.partial_cmp(b).expect("finite luma"));
            resid += (at(y, x) - win[4]).abs();
        }
        resid /= pixels.len() as f64;
        let noise_score = 100.0 * (-resid / self.calibration.noise_scale).exp();

        // Color: rg/yb opponent statistics (std + 0.3 * mean magnitude).
        let mut rg = Vec::with_capacity(pixels.len());
        let mut yb = Vec::with_capacity(pixels.len());
        for &p in pixels {
            let (r, g, b) = (d[p], d[n + p], d[2 * n + p]);
            rg.push(r - g);
            yb.push(0.5 * (r + g) - b);
        }
        let stats = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
            (m, var)
        };
        let (mrg, vrg) = stats(&rg);
        let (myb, vyb) = stats(&yb);
        let colorfulness = (vrg + vyb).sqrt() + 0.3 * (mrg * mrg + myb * myb).sqrt();
        let color_score = 100.0 * (colorfulness / self.calibration.color_scale).min(1.0);

        // Artifacts: gradient energy concentrated on the 8-pixel block grid
        // relative to everywhere else.
        let mut boundary = (0.0, 0usize);
        let mut interior = (0.0, 0usize);
        for &p in pixels {
            let (y, x) = (p / w, p % w);
            if x > 0 {
                let diff = (l[y * w + x] - l[y * w + x - 1]).abs();
                let bucket = if x % 8 == 0 { &mut boundary } else { &mut interior };
                bucket.0 += diff;
                bucket.1 += 1;
            }
            if y > 0 {
                let diff = (l[y * w + x] - l[(y - 1) * w + x]).abs();
                let bucket = if y % 8 == 0 { &mut boundary } else { &mut interior };
                bucket.0 += diff;
                bucket.1 += 1;
            }
        }
        let artifact_score = if boundary.1 == 0 || interior.1 == 0 {
            100.0
        } else {
            let ratio = (boundary.0 / boundary.1 as f64)
                / (interior.0 / interior.1 as f64 + 1e-6);
            100.0 * (-(ratio - 1.0).max(0.0) / self.calibration.block_scale).exp()
        };

        Ok([
            color_score.clamp(0.0, 100.0),
            noise_score.clamp(0.0, 100.0),
            artifact_score.clamp(0.0, 100.0),
            blur_score.clamp(0.0, 100.0),
        ])
    }
}

impl Describer for HeuristicDescriber {
    fn describe(&self, image: &Tensor, mask: &MaskSet, region: usize) -> Result<RegionDescription> {
        let pixels = mask.region_pixels(region);
        if pixels.is_empty() {
            return Err(Error::EmptyRegion { region });
        }
        let [color, noise, artifact, blur] = self.region_stats(image, mask, &pixels)?;
        let overall = (color + noise + artifact + blur) / 4.0;

        let frac = pixels.len() as f64 / (mask.h * mask.w) as f64;
        let cy = pixels.iter().map(|&p| (p / mask.w) as f64).sum::<f64>()
            / pixels.len() as f64
            / mask.h as f64;
        let cx = pixels.iter().map(|&p| (p % mask.w) as f64).sum::<f64>()
            / pixels.len() as f64
            / mask.w as f64;
        let content = if mask.background_index == Some(region) {
            "the residual background area of the image".to_string()
        } else {
            format!("a {} region in the {} of the image", size_word(frac), position_word(cy, cx))
        };
        RegionDescription::new(content, [color, noise, artifact, blur, overall])
    }

    fn id(&self) -> &'static str {
        "heuristic"
    }
}

// ---- description cache ------------------------------------------------

/// One cached description, keyed by image, region, and provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub image_id: String,
    pub region: usize,
    pub provider_id: String,
    pub timestamp: u64,
    pub content: String,
    pub scores: [f64; 5],
}

/// Append-only JSON-lines cache of region descriptions. Unreadable lines
/// are skipped (and counted) rather than failing the load, so a torn write
/// cannot poison the whole cache.
pub struct DescriptionCache {
    path: PathBuf,
    map: HashMap<(String, usize, String), CacheRecord>,
    pub skipped_lines: usize,
}

impl DescriptionCache {
    /// Opens a cache file, creating an empty cache when the file is absent.
    pub fn open(path: &Path) -> Result<Self> {
        let mut map = HashMap::new();
        let mut skipped_lines = 0;
        if path.exists() {
            let file = std::fs::File::open(path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheRecord>(&line) {
                    Ok(rec) => {
                        map.insert(
                            (rec.image_id.clone(), rec.region, rec.provider_id.clone()),
                            rec,
                        );
                    }
                    Err(e) => {
                        log::warn!(
                            "skipping corrupt cache line {} in {}: {e}",
                            lineno + 1,
                            path.display()
                        );
                        skipped_lines += 1;
                    }
                }
            }
        }
        Ok(DescriptionCache { path: path.to_path_buf(), map, skipped_lines })
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn get(&self, image_id: &str, region: usize, provider_id: &str) -> Option<&CacheRecord> {
        self.map.get(&(image_id.to_string(), region, provider_id.to_string()))
    }

    /// Appends to the file and the in-memory index. Later records for the
    /// same key win, matching replay order on reload.
    pub fn put(&mut self, rec: CacheRecord) -> Result<()> {
        use std::io::Write;
        let line = serde_json::to_string(&rec).expect("record serializes");
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(self.path.display().to_string(), e))?;
        writeln!(file, "{line}").map_err(|e| Error::io(self.path.display().to_string(), e))?;
        self.map.insert((rec.image_id.clone(), rec.region, rec.provider_id.clone()), rec);
        Ok(())
    }
}

/// Current unix time in seconds, for cache record stamps.
pub fn unix_timestamp() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

// ---- remote describer -------------------------------------------------

/// JSON request sent to a remote description endpoint.
#[derive(Debug, Serialize)]
struct RemoteRequest<'a> {
    image_id: &'a str,
    region: usize,
    questions: Vec<String>,
}

/// JSON response expected back: one answer per question, in order, each in
/// the strict answer template.
#[derive(Debug, Deserialize)]
struct RemoteResponse {
    answers: Vec<String>,
}

/// HTTP client for an external description service. The service receives
/// the content question plus a score question per dimension and must answer
/// each in the exact answer template; anything else is rejected rather than
/// repaired.
pub struct RemoteDescriber {
    endpoint: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    max_attempts: usize,
}

impl RemoteDescriber {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>) -> Self {
        RemoteDescriber {
            endpoint: endpoint.into(),
            api_key,
            client: reqwest::blocking::Client::new(),
            max_attempts: 3,
        }
    }

    /// Asks the service about one region of one image. `image_id` names the
    /// image on the service side; pixels are not shipped.
    pub fn describe_region(&self, image_id: &str, region: usize) -> Result<RegionDescription> {
        let mut questions = vec![content_question().to_string()];
        for dim in QualityDimension::ALL {
            questions.push(score_question(dim));
        }
        let req = RemoteRequest { image_id, region, questions };

        let mut last_transport = String::new();
        for attempt in 0..self.max_attempts {
            if attempt > 0 {
                std::thread::sleep(std::time::Duration::from_millis(50 << attempt));
            }
            let mut builder = self.client.post(&self.endpoint).json(&req);
            if let Some(key) = &self.api_key {
                builder = builder.bearer_auth(key);
            }
            let resp = match builder.send() {
                Ok(r) => r,
                Err(e) => {
                    last_transport = e.to_string();
                    continue;
                }
            };
            let status = resp.status();
            if status.as_u16() == 401 || status.as_u16() == 403 {
                return Err(Error::AuthError { detail: format!("endpoint returned {status}") });
            }
            if status.is_server_error() {
                last_transport = format!("endpoint returned {status}");
                continue;
            }
            if !status.is_success() {
                return Err(Error::TransportError {
                    detail: format!("endpoint returned {status}"),
                });
            }
            let body: RemoteResponse = resp.json().map_err(|e| Error::UnparseableResponse {
                detail: format!("response body is not the expected JSON: {e}"),
            })?;
            return Self::parse_answers(&body.answers);
        }
        Err(Error::TransportError {
            detail: format!("gave up after {} attempts: {last_transport}", self.max_attempts),
        })
    }

    fn parse_answers(answers: &[String]) -> Result<RegionDescription> {
        if answers.len() != 1 + QualityDimension::ALL.len() {
            return Err(Error::UnparseableResponse {
                detail: format!("expected 6 answers, got {}", answers.len()),
            });
        }
        let content = parse_content_answer(&answers[0])?;
        let mut scores = [0.0; 5];
        for (i, dim) in QualityDimension::ALL.into_iter().enumerate() {
            scores[i] = parse_score_answer(dim, &answers[1 + i])?;
        }
        RegionDescription::new(content, scores)
    }
}
