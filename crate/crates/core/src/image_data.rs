//! Image loading and synthetic test-image generation.
//!
//! Images are `[3, H, W]` tensors with channel values in `[0, 1]`. The
//! synthetic generator draws scenes of a few colored geometric regions,
//! then applies a parametric distortion per region whose strength drives
//! the ground-truth score; this gives training and calibration data with a
//! known quality ordering and no external downloads.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

/// Loads an image file into a `[3, H, W]` tensor scaled to `[0, 1]`.
pub fn load_rgb_tensor(path: &Path) -> Result<Tensor> {
    let img = image::open(path)
        .map_err(|e| Error::IoError { path: path.display().to_string(), detail: e.to_string() })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::EmptyInput { what: "image pixels" });
    }
    let mut data = vec![0.0; 3 * h * w];
    for (x, y, p) in img.enumerate_pixels() {
        let (x, y) = (x as usize, y as usize);
        for c in 0..3 {
            data[(c * h + y) * w + x] = p.0[c] as f64 / 255.0;
        }
    }
    Tensor::new(vec![3, h, w], data)
}

/// Writes a `[3, H, W]` tensor as an 8-bit RGB PNG.
pub fn save_rgb_tensor(path: &Path, t: &Tensor) -> Result<()> {
    let s = t.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::ShapeMismatch {
            op: "save_rgb_tensor",
            detail: format!("expected [3, H, W], got {:?}", s),
        });
    }
    let (h, w) = (s[1], s[2]);
    let d = t.data();
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = |c: usize| (d[(c * h + y) * w + x].clamp(0.0, 1.0) * 255.0).round() as u8;
            img.put_pixel(x as u32, y as u32, image::Rgb([px(0), px(1), px(2)]));
        }
    }
    img.save(path)
        .map_err(|e| Error::IoError { path: path.display().to_string(), detail: e.to_string() })
}

/// BT.601 luma of one pixel.
pub fn luma(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Luma plane `[H, W]` of a `[3, H, W]` tensor, as a flat row-major vec.
pub fn luma_plane(t: &Tensor) -> Result<(Vec<f64>, usize, usize)> {
    let s = t.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::ShapeMismatch {
            op: "luma_plane",
            detail: format!("expected [3, H, W], got {:?}", s),
        });
    }
    let (h, w) = (s[1], s[2]);
    let d = t.data();
    let mut out = vec![0.0; h * w];
    for i in 0..h * w {
        out[i] = luma(d[i], d[h * w + i], d[2 * h * w + i]);
    }
    Ok((out, h, w))
}

/// Distortion families applied by the synthetic generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Distortion {
    Blur,
    Noise,
    Desaturate,
    Blockiness,
}

impl Distortion {
    pub const ALL: [Distortion; 4] =
        [Distortion::Blur, Distortion::Noise, Distortion::Desaturate, Distortion::Blockiness];

    pub fn name(self) -> &'static str {
        match self {
            Distortion::Blur => "blur",
            Distortion::Noise => "noise",
            Distortion::Desaturate => "desaturate",
            Distortion::Blockiness => "blockiness",
        }
    }
}

/// A clean scene: smooth background gradient, saturated rectangles, and a
/// sinusoidal texture band, all drawn from the seed.
pub fn synth_scene(seed: u64, h: usize, w: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0.0; 3 * h * w];
    let (gx, gy): (f64, f64) = (rng.random_range(0.2..1.0), rng.random_range(0.2..1.0));
    let base: [f64; 3] = [
        rng.random_range(0.1..0.6),
        rng.random_range(0.1..0.6),
        rng.random_range(0.1..0.6),
    ];
    for y in 0..h {
        for x in 0..w {
            let t = gx * x as f64 / w as f64 + gy * y as f64 / h as f64;
            for c in 0..3 {
                data[(c * h + y) * w + x] = (base[c] + 0.4 * t).clamp(0.0, 1.0);
            }
        }
    }
    // Saturated rectangles give stable color statistics and hard edges.
    for _ in 0..rng.random_range(3..7) {
        let rw = rng.random_range(w / 8..w / 2);
        let rh = rng.random_range(h / 8..h / 2);
        let x0 = rng.random_range(0..w - rw);
        let y0 = rng.random_range(0..h - rh);
        let col: [f64; 3] = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
        for y in y0..y0 + rh {
            for x in x0..x0 + rw {
                for c in 0..3 {
                    data[(c * h + y) * w + x] = col[c];
                }
            }
        }
    }
    // Texture band: fine sinusoid so blur measurably removes energy.
    let fx = rng.random_range(0.8..1.6);
    let band0 = h / 3;
    let band1 = 2 * h / 3;
    for y in band0..band1 {
        for x in 0..w {
            let s = 0.25 * (fx * x as f64).sin() * (0.7 * y as f64).cos();
            for c in 0..3 {
                let i = (c * h + y) * w + x;
                data[i] = (data[i] + s).clamp(0.0, 1.0);
            }
        }
    }
    Tensor::new(vec![3, h, w], data).expect("constructed buffer matches shape")
}

fn box_blur_once(data: &mut [f64], h: usize, w: usize, plane: usize) {
    let src = data[plane * h * w..(plane + 1) * h * w].to_vec();
    let at = |y: isize, x: isize| -> f64 {
        let y = y.clamp(0, h as isize - 1) as usize;
        let x = x.clamp(0, w as isize - 1) as usize;
        src[y * w + x]
    };
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    acc += at(y as isize + dy, x as isize + dx);
                }
            }
            data[plane * h * w + y * w + x] = acc / 9.0;
        }
    }
}

/// Applies a distortion at `severity` in `[0, 1]` (0 leaves the image as is).
pub fn apply_distortion(img: &Tensor, kind: Distortion, severity: f64, seed: u64) -> Result<Tensor> {
    let s = img.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::ShapeMismatch {
            op: "apply_distortion",
            detail: format!("expected [3, H, W], got {:?}", s),
        });
    }
    let severity = severity.clamp(0.0, 1.0);
    let (h, w) = (s[1], s[2]);
    let mut data = img.data().to_vec();
    match kind {
        Distortion::Blur => {
            // Crossfade toward a twice-box-blurred copy: the response is
            // linear in severity instead of saturating after one round.
            if severity > 0.0 {
                let mut blurred = data.clone();
                for _ in 0..2 {
                    for c in 0..3 {
                        box_blur_once(&mut blurred, h, w, c);
                    }
                }
                for (v, b) in data.iter_mut().zip(&blurred) {
                    *v += severity * (b - *v);
                }
            }
        }
        Distortion::Noise => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6e6f_6973);
            let amp = 0.35 * severity;
            for v in data.iter_mut() {
                *v = (*v + rng.random_range(-amp..=amp)).clamp(0.0, 1.0);
            }
        }
        Distortion::Desaturate => {
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    let l = luma(data[i], data[h * w + i], data[2 * h * w + i]);
                    for c in 0..3 {
                        let j = c * h * w + i;
                        data[j] += severity * (l - data[j]);
                    }
                }
            }
        }
        Distortion::Blockiness => {
            // Replace 8x8 blocks by their means, mixed in by severity.
            let bs = 8;
            for c in 0..3 {
                for by in (0..h).step_by(bs) {
                    for bx in (0..w).step_by(bs) {
                        let y1 = (by + bs).min(h);
                        let x1 = (bx + bs).min(w);
                        let mut mean = 0.0;
                        for y in by..y1 {
                            for x in bx..x1 {
                                mean += data[(c * h + y) * w + x];
                            }
                        }
                        mean /= ((y1 - by) * (x1 - bx)) as f64;
                        for y in by..y1 {
                            for x in bx..x1 {
                                let i = (c * h + y) * w + x;
                                data[i] += severity * (mean - data[i]);
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![3, h, w], data)
}

/// A clean scene split into labeled geometric regions. `regions` holds flat
/// `y * w + x` pixel indices; together the lists partition the image, with
/// the background last.
#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub image: Tensor,
    pub regions: Vec<Vec<usize>>,
}

/// Saturated shape colors; a small palette keeps cross-scene appearance
/// variation small next to distortion effects, which is what makes scores
/// learnable from modest sample counts.
const SHAPE_PALETTE: [[f64; 3]; 6] = [
    [0.85, 0.15, 0.15],
    [0.15, 0.75, 0.20],
    [0.20, 0.30, 0.85],
    [0.90, 0.80, 0.20],
    [0.80, 0.25, 0.80],
    [0.20, 0.80, 0.80],
];

/// Draws a scene of 2..=4 colored geometric regions: textured rectangles
/// and discs over a textured gradient background, painter's order, fully
/// seeded. Every region carries a fine sinusoid so each distortion family
/// changes its pixels measurably; shapes are capped at half the image
/// extent so the background always survives.
pub fn synth_scene_regions(seed: u64, h: usize, w: usize) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7265_6769);
    let mut data = vec![0.0; 3 * h * w];
    // Pastel background: a palette hue pulled toward gray. Definite chroma
    // keeps desaturation visible on the background region too.
    let tint = SHAPE_PALETTE[rng.random_range(0..SHAPE_PALETTE.len())];
    let mut base = [0.0; 3];
    for c in 0..3 {
        base[c] = 0.35 + 0.5 * (tint[c] - 0.35) + rng.random_range(-0.03..0.03);
    }
    // Fixed amplitudes anchor the clean texture energy, so distortion
    // severity reads as a stable deviation from that anchor.
    let texture = |rng: &mut ChaCha8Rng, amp: f64| {
        let fy: f64 = rng.random_range(1.1..1.6);
        let fx: f64 = rng.random_range(1.1..1.6);
        let ph: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        move |y: usize, x: usize| amp * (fy * y as f64 + ph).sin() * (fx * x as f64).cos()
    };
    let bg_tex = texture(&mut rng, 0.09);
    for y in 0..h {
        for x in 0..w {
            let t = 0.35 * (x as f64 / w as f64 + y as f64 / h as f64);
            let s = bg_tex(y, x);
            for c in 0..3 {
                data[(c * h + y) * w + x] = (base[c] + t + s).clamp(0.0, 1.0);
            }
        }
    }
    // owner[i] = 0 for background, k for the k-th shape (painter's order).
    let mut owner = vec![0usize; h * w];
    let shapes = rng.random_range(1..=3usize);
    for s in 1..=shapes {
        let pick = SHAPE_PALETTE[rng.random_range(0..SHAPE_PALETTE.len())];
        let mut col = [0.0; 3];
        for c in 0..3 {
            col[c] = (pick[c] + rng.random_range(-0.06..0.06)).clamp(0.0, 1.0);
        }
        let tex = texture(&mut rng, 0.15);
        let circle = rng.random_range(0..2u32) == 0;
        if circle {
            let r = rng.random_range((h.min(w) / 6).max(2)..=(h.min(w) / 3).max(3));
            let cy = rng.random_range(0..h) as isize;
            let cx = rng.random_range(0..w) as isize;
            for y in 0..h {
                for x in 0..w {
                    let (dy, dx) = (y as isize - cy, x as isize - cx);
                    if dy * dy + dx * dx <= (r * r) as isize {
                        owner[y * w + x] = s;
                        let t = tex(y, x);
                        for c in 0..3 {
                            data[(c * h + y) * w + x] = (col[c] + t).clamp(0.0, 1.0);
                        }
                    }
                }
            }
        } else {
            let rw = rng.random_range((w / 6).max(2)..=(w / 2).max(3)).min(w);
            let rh = rng.random_range((h / 6).max(2)..=(h / 2).max(3)).min(h);
            let x0 = rng.random_range(0..=w - rw);
            let y0 = rng.random_range(0..=h - rh);
            for y in y0..y0 + rh {
                for x in x0..x0 + rw {
                    owner[y * w + x] = s;
                    let t = tex(y, x);
                    for c in 0..3 {
                        data[(c * h + y) * w + x] = (col[c] + t).clamp(0.0, 1.0);
                    }
                }
            }
        }
    }
    // Fully occluded shapes disappear; background stays last.
    let mut regions: Vec<Vec<usize>> = Vec::new();
    for s in 1..=shapes {
        let px: Vec<usize> = (0..h * w).filter(|&i| owner[i] == s).collect();
        if !px.is_empty() {
            regions.push(px);
        }
    }
    regions.push((0..h * w).filter(|&i| owner[i] == 0).collect());
    let image = Tensor::new(vec![3, h, w], data).expect("constructed buffer matches shape");
    SceneSpec { image, regions }
}

/// Ground-truth score for per-region distortion strengths: the clean image
/// maps to 5.0 and strength 1 everywhere maps to 1.0, independent of the
/// distortion kinds. Strengths are clamped to `[0, 1]` first.
pub fn mos_for_strengths(strengths: &[f64]) -> Result<f64> {
    if strengths.is_empty() {
        return Err(Error::EmptyInput { what: "distortion strengths" });
    }
    let mean = strengths.iter().map(|s| s.clamp(0.0, 1.0)).sum::<f64>() / strengths.len() as f64;
    Ok(5.0 - 4.0 * mean)
}

/// Applies one `(kind, strength)` per region and composites the results so
/// each distortion only lands on its own region's pixels. Strength 0
/// everywhere reproduces the clean image bit for bit.
pub fn compose_distorted(
    scene: &SceneSpec,
    plan: &[(Distortion, f64)],
    seed: u64,
) -> Result<Tensor> {
    if plan.len() != scene.regions.len() {
        return Err(Error::LengthMismatch { left: plan.len(), right: scene.regions.len() });
    }
    let s = scene.image.shape();
    let (h, w) = (s[1], s[2]);
    let mut data = scene.image.data().to_vec();
    for (r, &(kind, strength)) in plan.iter().enumerate() {
        if strength <= 0.0 {
            continue;
        }
        let full = apply_distortion(&scene.image, kind, strength, seed ^ (r as u64) << 8)?;
        let fd = full.data();
        for &i in &scene.regions[r] {
            for c in 0..3 {
                data[c * h * w + i] = fd[c * h * w + i];
            }
        }
    }
    Tensor::new(s.to_vec(), data)
}

/// One synthetic record: the distorted image, its score on `[1, 5]`, and the
/// per-region distortion plan that produced it.
#[derive(Debug, Clone)]
pub struct SynthRecord {
    pub image: Tensor,
    pub mos: f64,
    pub kinds: Vec<Distortion>,
    pub strengths: Vec<f64>,
}

/// Distinct reference scenes per dataset seed. Several distortion plans
/// land on each scene, as in classical quality corpora built from a small
/// reference pool; scores must be read from the distortions, not the
/// content.
pub const REFERENCE_SCENES: u64 = 8;

/// Generates record `index` of a synthetic dataset: a reference scene from
/// the pool plus an independent per-image distortion plan. A per-image
/// quality level with per-region jitter spreads scores across the full
/// `[1, 5]` range while keeping regions unequal.
pub fn make_synthetic_image(seed: u64, index: u64, h: usize, w: usize) -> SynthRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(index));
    let scene = synth_scene_regions(seed.wrapping_add(1000 + index % REFERENCE_SCENES), h, w);
    let level: f64 = rng.random_range(0.0..=1.0);
    let mut kinds = Vec::with_capacity(scene.regions.len());
    let mut strengths = Vec::with_capacity(scene.regions.len());
    for _ in &scene.regions {
        kinds.push(Distortion::ALL[rng.random_range(0..Distortion::ALL.len())]);
        strengths.push((level + rng.random_range(-0.15..=0.15)).clamp(0.0, 1.0));
    }
    let plan: Vec<(Distortion, f64)> =
        kinds.iter().copied().zip(strengths.iter().copied()).collect();
    let image = compose_distorted(&scene, &plan, seed.wrapping_add(index))
        .expect("plan length matches regions");
    let mos = mos_for_strengths(&strengths).expect("at least the background region exists");
    SynthRecord { image, mos, kinds, strengths }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scene_is_deterministic_per_seed() {
        let a = synth_scene(7, 32, 32);
        let b = synth_scene(7, 32, 32);
        assert_eq!(a.data(), b.data());
        let c = synth_scene(8, 32, 32);
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn zero_severity_is_identity_for_all_kinds() {
        let img = synth_scene(3, 24, 24);
        for kind in Distortion::ALL {
            let out = apply_distortion(&img, kind, 0.0, 5).unwrap();
            assert_eq!(out.data(), img.data(), "{kind:?}");
        }
    }

    #[test]
    fn distortions_keep_values_in_unit_range() {
        let img = synth_scene(11, 24, 24);
        for kind in Distortion::ALL {
            let out = apply_distortion(&img, kind, 1.0, 5).unwrap();
            for &v in out.data() {
                assert!((0.0..=1.0).contains(&v), "{kind:?} produced {v}");
            }
        }
    }

    #[test]
    fn blur_energy_decreases_monotonically_in_severity() {
        let img = synth_scene(2, 32, 32);
        let energy = |t: &Tensor| {
            let (l, h, w) = luma_plane(t).unwrap();
            let mut e = 0.0;
            for y in 0..h {
                for x in 1..w {
                    e += (l[y * w + x] - l[y * w + x - 1]).abs();
                }
            }
            e
        };
        let e0 = energy(&img);
        let mut prev = e0;
        for s in [0.25, 0.5, 0.75, 1.0] {
            let e = energy(&apply_distortion(&img, Distortion::Blur, s, 0).unwrap());
            assert!(e < prev, "severity {s}: {e} !< {prev}");
            prev = e;
        }
        assert!(prev < 0.8 * e0, "full blur keeps {prev} of {e0}");
    }

    #[test]
    fn scene_regions_partition_the_image() {
        for seed in 0..6u64 {
            let sc = synth_scene_regions(seed, 24, 20);
            assert!((2..=4).contains(&sc.regions.len()), "seed {seed}");
            let mut seen = vec![false; 24 * 20];
            for px in &sc.regions {
                assert!(!px.is_empty());
                for &i in px {
                    assert!(!seen[i], "pixel {i} claimed twice");
                    seen[i] = true;
                }
            }
            assert!(seen.iter().all(|&s| s));
        }
    }

    #[test]
    fn zero_strength_plan_reproduces_the_clean_scene() {
        let sc = synth_scene_regions(9, 16, 16);
        let plan: Vec<(Distortion, f64)> =
            sc.regions.iter().map(|_| (Distortion::Blur, 0.0)).collect();
        let out = compose_distorted(&sc, &plan, 3).unwrap();
        assert_eq!(out.data(), sc.image.data());
        let strengths = vec![0.0; sc.regions.len()];
        assert_eq!(mos_for_strengths(&strengths).unwrap(), 5.0);
    }

    #[test]
    fn mos_depends_on_strengths_not_kinds() {
        let s = [0.4, 0.7, 0.1];
        let a = mos_for_strengths(&s).unwrap();
        assert!((a - (5.0 - 4.0 * 0.4)).abs() < 1e-12);
        // Kind plays no role in the scoring rule: equal strengths under
        // different distortions change the pixels but not the score.
        let sc = synth_scene_regions(4, 16, 16);
        let strengths: Vec<f64> = (0..sc.regions.len()).map(|i| 0.3 + 0.1 * i as f64).collect();
        let blur_plan: Vec<(Distortion, f64)> =
            strengths.iter().map(|&s| (Distortion::Blur, s)).collect();
        let noise_plan: Vec<(Distortion, f64)> =
            strengths.iter().map(|&s| (Distortion::Noise, s)).collect();
        let blurred = compose_distorted(&sc, &blur_plan, 0).unwrap();
        let noisy = compose_distorted(&sc, &noise_plan, 0).unwrap();
        assert_ne!(blurred.data(), noisy.data());
        let mos = mos_for_strengths(&strengths).unwrap();
        assert!((1.0..=5.0).contains(&mos));
    }

    #[test]
    fn distortion_stays_inside_its_region() {
        let sc = synth_scene_regions(2, 16, 16);
        // Distort only region 0 and check every other region is untouched.
        let mut plan: Vec<(Distortion, f64)> =
            sc.regions.iter().map(|_| (Distortion::Noise, 0.0)).collect();
        plan[0] = (Distortion::Noise, 1.0);
        let out = compose_distorted(&sc, &plan, 7).unwrap();
        let (h, w) = (16, 16);
        for (r, px) in sc.regions.iter().enumerate().skip(1) {
            for &i in px {
                for c in 0..3 {
                    assert_eq!(
                        out.data()[c * h * w + i],
                        sc.image.data()[c * h * w + i],
                        "region {r} pixel {i} changed"
                    );
                }
            }
        }
    }

    #[test]
    fn synthetic_records_are_seed_deterministic() {
        let a = make_synthetic_image(0, 3, 16, 16);
        let b = make_synthetic_image(0, 3, 16, 16);
        assert_eq!(a.image.data(), b.image.data());
        assert_eq!(a.mos, b.mos);
        assert_eq!(a.strengths, b.strengths);
        let c = make_synthetic_image(1, 3, 16, 16);
        assert_ne!(a.image.data(), c.image.data());
        assert!((1.0..=5.0).contains(&a.mos));
    }

    #[test]
    fn pooled_scenes_get_independent_distortion_plans() {
        // Indices one pool apart reuse the reference scene but must draw
        // fresh severities, or every repeat would score identically.
        let a = make_synthetic_image(0, 2, 16, 16);
        let b = make_synthetic_image(0, 2 + REFERENCE_SCENES, 16, 16);
        assert_ne!(a.image.data(), b.image.data());
        assert_ne!(a.strengths, b.strengths);
    }

    #[test]
    fn plan_length_must_match_region_count() {
        let sc = synth_scene_regions(0, 8, 8);
        let err = compose_distorted(&sc, &[], 0).unwrap_err();
        assert_eq!(err.category(), "LengthMismatch");
        assert_eq!(mos_for_strengths(&[]).unwrap_err().category(), "EmptyInput");
    }

    #[test]
    fn png_roundtrip_preserves_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.png");
        let img = synth_scene(5, 16, 20);
        save_rgb_tensor(&path, &img).unwrap();
        let back = load_rgb_tensor(&path).unwrap();
        assert_eq!(back.shape(), img.shape());
        // 8-bit quantization bounds the roundtrip error.
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-9);
        }
    }

    #[test]
    fn load_missing_file_reports_io_error() {
        let err = load_rgb_tensor(Path::new("/nonexistent/zzz.png")).unwrap_err();
        assert_eq!(err.category(), "IoError");
    }
}
