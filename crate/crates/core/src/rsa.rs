//! Region-aware attention over the fused feature.
//!
//! Each segmented region gets a guided representation: its pixels are
//! projected into a small guide width, a pooled text query attends over
//! them, and the attended summary is broadcast back onto the region with a
//! per-pixel residual. Gram products of the resampled representations form
//! a symmetric PSD bias that steers the final attention pass over the
//! fused tokens.

use crate::attention::{bind as bind_attn, scaled_attention, AttnProjBound, AttnProjParams};
use crate::encoder::pool_tokens;
use crate::error::{Error, Result};
use crate::tape::{Tape, Value};
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Projections for region guidance plus the biased attention pass.
#[derive(Debug, Clone)]
pub struct RsaParams {
    /// Per-pixel color projection, `[3, C_G]`.
    pub pix_proj: Tensor,
    /// Pooled text-query projection, `[d, C_G]`.
    pub text_proj: Tensor,
    /// Q/K/V projections over the fused width C.
    pub attn: AttnProjParams,
    /// Bias coefficient, `[1]`; kept nonnegative by the training loop.
    pub lambda: Tensor,
}

impl RsaParams {
    pub fn init(
        c: usize,
        c_g: usize,
        d: usize,
        lambda_init: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if c_g == 0 {
            return Err(Error::InvalidConfig { detail: "guide width must be positive".into() });
        }
        if !(lambda_init >= 0.0) {
            return Err(Error::InvalidConfig {
                detail: format!("bias coefficient must be nonnegative, got {lambda_init}"),
            });
        }
        let uniform = |rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
            let limit = (1.0 / rows as f64).sqrt();
            Tensor::new(
                vec![rows, cols],
                (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect(),
            )
            .expect("buffer matches shape")
        };
        Ok(RsaParams {
            pix_proj: uniform(3, c_g, rng),
            text_proj: uniform(d, c_g, rng),
            attn: AttnProjParams::init(c, rng),
            lambda: Tensor::new(vec![1], vec![lambda_init]).expect("singleton"),
        })
    }

    pub fn fields(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("pix_proj".to_string(), &self.pix_proj),
            ("text_proj".to_string(), &self.text_proj),
        ];
        for (f, t) in self.attn.fields() {
            out.push((format!("attn.{f}"), t));
        }
        out.push(("lambda".to_string(), &self.lambda));
        out
    }

    pub fn fields_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![
            ("pix_proj".to_string(), &mut self.pix_proj),
            ("text_proj".to_string(), &mut self.text_proj),
        ];
        for (f, t) in self.attn.fields_mut() {
            out.push((format!("attn.{f}"), t));
        }
        out.push(("lambda".to_string(), &mut self.lambda));
        out
    }
}

#[derive(Debug, Clone)]
pub struct RsaBound {
    pub pix_proj: Value,
    pub text_proj: Value,
    pub attn: AttnProjBound,
    pub lambda: Value,
}

impl RsaBound {
    /// Leaf handles in `RsaParams::fields` order.
    pub fn values(&self) -> Vec<Value> {
        vec![
            self.pix_proj,
            self.text_proj,
            self.attn.wq,
            self.attn.wk,
            self.attn.wv,
            self.lambda,
        ]
    }
}

/// Leaf order matches `RsaParams::fields`.
pub fn bind(tape: &mut Tape, p: &RsaParams) -> RsaBound {
    RsaBound {
        pix_proj: tape.leaf(p.pix_proj.clone()),
        text_proj: tape.leaf(p.text_proj.clone()),
        attn: bind_attn(tape, &p.attn),
        lambda: tape.leaf(p.lambda.clone()),
    }
}

/// `[3, H, W]` image to a `[H*W, 3]` matrix of pixel color rows.
pub fn image_pixel_rows(tape: &mut Tape, image: Value) -> Result<Value> {
    let s = tape.value(image).shape().to_vec();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::ShapeMismatch {
            op: "image_pixel_rows",
            detail: format!("expected [3, H, W], got {:?}", s),
        });
    }
    let flat = tape.reshape(image, vec![3, s[1] * s[2]])?;
    tape.transpose(flat)
}

/// Builds one region's guided map `[C_G, H, W]`, exactly zero outside the
/// region. The pooled text query attends over the region's projected
/// pixels; the attended summary is broadcast over the region and each
/// pixel keeps its own projected residual.
#[allow(clippy::too_many_arguments)]
pub fn region_guided_repr(
    tape: &mut Tape,
    bound: &RsaBound,
    pixel_rows: Value,
    h: usize,
    w: usize,
    region: &[usize],
    region_idx: usize,
    text: Value,
    valid: usize,
) -> Result<Value> {
    if region.is_empty() {
        return Err(Error::EmptyRegion { region: region_idx });
    }
    if valid == 0 {
        return Err(Error::EmptyText);
    }
    let px = tape.gather_rows(pixel_rows, region)?;
    let projected = tape.matmul(px, bound.pix_proj)?;
    let pooled = pool_tokens(tape, text, valid)?;
    let query = tape.matmul(pooled, bound.text_proj)?;
    let summary = scaled_attention(tape, query, projected, projected, None, 1)?;
    let rows = tape.add_bias_rows(projected, summary)?;
    let scattered = tape.scatter_rows(rows, region, h * w)?;
    let t = tape.transpose(scattered)?;
    let c_g = tape.value(t).shape()[0];
    tape.reshape(t, vec![c_g, h, w])
}

/// Resamples a guided map to `h_out x w_out` and flattens it row-major to a
/// `[h_out*w_out, C_G]` matrix. `expect_rows` pins the token count of the
/// attention pass this feeds.
pub fn resample_repr(
    tape: &mut Tape,
    g: Value,
    h_out: usize,
    w_out: usize,
    expect_rows: usize,
) -> Result<Value> {
    if h_out * w_out != expect_rows {
        return Err(Error::TargetMismatch { expected: expect_rows, got: h_out * w_out });
    }
    let resized = tape.bilinear(g, h_out, w_out)?;
    let c_g = tape.value(resized).shape()[0];
    let flat = tape.reshape(resized, vec![c_g, h_out * w_out])?;
    tape.transpose(flat)
}

/// `B = lambda * sum_i G_i' (G_i')^T`. Summation order is fixed, so B is
/// bitwise symmetric; it is PSD up to roundoff whenever lambda >= 0.
pub fn attention_bias(tape: &mut Tape, reprs: &[Value], lambda: Value) -> Result<Value> {
    if reprs.is_empty() {
        return Err(Error::EmptyInput { what: "region representations" });
    }
    let first = tape.value(reprs[0]).shape().to_vec();
    for &r in reprs {
        if tape.value(r).shape() != first.as_slice() {
            return Err(Error::ShapeMismatch {
                op: "attention_bias",
                detail: format!(
                    "representation {:?} vs {:?}",
                    tape.value(r).shape(),
                    first
                ),
            });
        }
    }
    let mut acc: Option<Value> = None;
    for &r in reprs {
        let rt = tape.transpose(r)?;
        let gram = tape.matmul(r, rt)?;
        acc = Some(match acc {
            None => gram,
            Some(a) => tape.add(a, gram)?,
        });
    }
    tape.mul(acc.expect("nonempty checked above"), lambda)
}

/// Final biased attention over the fused tokens `[S, C]`: projects Q/K/V,
/// adds the bias inside the softmax, no residual.
pub fn rsa_attention(
    tape: &mut Tape,
    bound: &RsaBound,
    tokens: Value,
    bias: Option<Value>,
    heads: usize,
) -> Result<Value> {
    if let Some(b) = bias {
        let rows = tape.value(tokens).shape()[0];
        let bs = tape.value(b).shape().to_vec();
        if bs != [rows, rows] {
            return Err(Error::ShapeMismatch {
                op: "rsa_attention",
                detail: format!("bias {:?} vs {} tokens", bs, rows),
            });
        }
    }
    let q = tape.matmul(tokens, bound.attn.wq)?;
    let k = tape.matmul(tokens, bound.attn.wk)?;
    let v = tape.matmul(tokens, bound.attn.wv)?;
    scaled_attention(tape, q, k, v, bias, heads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradients, Coord};
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn rand_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn params(c: usize, c_g: usize, d: usize, lambda: f64, seed: u64) -> RsaParams {
        RsaParams::init(c, c_g, d, lambda, &mut rng(seed)).unwrap()
    }

    // ---- plain-Rust oracle helpers ------------------------------------

    fn mm(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let (m, k, n) = (a.len(), b.len(), b[0].len());
        let mut out = vec![vec![0.0; n]; m];
        for i in 0..m {
            for j in 0..n {
                for l in 0..k {
                    out[i][j] += a[i][l] * b[l][j];
                }
            }
        }
        out
    }

    fn rows_of(t: &Tensor) -> Vec<Vec<f64>> {
        let n = t.shape()[1];
        t.data().chunks(n).map(|r| r.to_vec()).collect()
    }

    fn softmax_row(row: &[f64]) -> Vec<f64> {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
        let z: f64 = e.iter().sum();
        e.iter().map(|x| x / z).collect()
    }

    fn naive_biased_attention(
        tokens: &[Vec<f64>],
        p: &AttnProjParams,
        bias: Option<&[Vec<f64>]>,
    ) -> Vec<Vec<f64>> {
        let q = mm(tokens, &rows_of(&p.wq));
        let k = mm(tokens, &rows_of(&p.wk));
        let v = mm(tokens, &rows_of(&p.wv));
        let d = q[0].len() as f64;
        let mut out = vec![vec![0.0; q[0].len()]; q.len()];
        for i in 0..q.len() {
            let mut scores: Vec<f64> = k
                .iter()
                .map(|kr| kr.iter().zip(&q[i]).map(|(a, b)| a * b).sum::<f64>() / d.sqrt())
                .collect();
            if let Some(b) = bias {
                for (s, &bv) in scores.iter_mut().zip(&b[i]) {
                    *s += bv;
                }
            }
            let w = softmax_row(&scores);
            for (vr, &wi) in v.iter().zip(&w) {
                for (o, &x) in out[i].iter_mut().zip(vr) {
                    *o += wi * x;
                }
            }
        }
        out
    }

    // ---- region_guided_repr -------------------------------------------

    #[test]
    fn zero_projections_zero_the_representation() {
        let mut p = params(4, 2, 6, 0.1, 0);
        for v in p.pix_proj.data_mut() {
            *v = 0.0;
        }
        for v in p.text_proj.data_mut() {
            *v = 0.0;
        }
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &p);
        let img = tape.leaf(rand_tensor(vec![3, 2, 3], &mut rng(1)));
        let px = image_pixel_rows(&mut tape, img).unwrap();
        let text = tape.leaf(rand_tensor(vec![4, 6], &mut rng(2)));
        let g =
            region_guided_repr(&mut tape, &bound, px, 2, 3, &[0, 2, 5], 0, text, 3).unwrap();
        assert_eq!(tape.value(g).shape(), &[2, 2, 3]);
        for &v in tape.value(g).data() {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn single_pixel_region_doubles_its_projection() {
        let p = params(4, 2, 6, 0.1, 3);
        let image = rand_tensor(vec![3, 2, 2], &mut rng(4));
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &p);
        let img = tape.leaf(image.clone());
        let px = image_pixel_rows(&mut tape, img).unwrap();
        let text = tape.leaf(rand_tensor(vec![4, 6], &mut rng(5)));
        let g = region_guided_repr(&mut tape, &bound, px, 2, 2, &[3], 0, text, 2).unwrap();
        // Attention over one key returns that key's value row, so the region
        // pixel holds its projection twice.
        let color: Vec<f64> = (0..3).map(|c| image.data()[c * 4 + 3]).collect();
        for ch in 0..2 {
            let mut proj = 0.0;
            for (c, &col) in color.iter().enumerate() {
                proj += col * p.pix_proj.data()[c * 2 + ch];
            }
            let got = tape.value(g).data()[ch * 4 + 3];
            assert!((got - 2.0 * proj).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_region_gets_a_constant_representation() {
        let p = params(4, 2, 6, 0.1, 6);
        let mut image = rand_tensor(vec![3, 2, 3], &mut rng(7));
        let region = [1usize, 3, 4];
        for c in 0..3 {
            for &i in &region {
                image.data_mut()[c * 6 + i] = 0.3 + 0.2 * c as f64;
            }
        }
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &p);
        let img = tape.leaf(image);
        let px = image_pixel_rows(&mut tape, img).unwrap();
        let text = tape.leaf(rand_tensor(vec![4, 6], &mut rng(8)));
        let g = region_guided_repr(&mut tape, &bound, px, 2, 3, &region, 0, text, 4).unwrap();
        for ch in 0..2 {
            let mut proj = 0.0;
            for c in 0..3 {
                proj += (0.3 + 0.2 * c as f64) * p.pix_proj.data()[c * 2 + ch];
            }
            for &i in &region {
                let got = tape.value(g).data()[ch * 6 + i];
                assert!((got - 2.0 * proj).abs() < 1e-12, "channel {ch} pixel {i}");
            }
        }
        // Off-region pixels stay exactly zero.
        for ch in 0..2 {
            for i in [0usize, 2, 5] {
                assert_eq!(tape.value(g).data()[ch * 6 + i], 0.0);
            }
        }
    }

    #[test]
    fn empty_region_and_empty_text_are_rejected() {
        let p = params(4, 2, 6, 0.1, 9);
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &p);
        let img = tape.leaf(rand_tensor(vec![3, 2, 2], &mut rng(10)));
        let px = image_pixel_rows(&mut tape, img).unwrap();
        let text = tape.leaf(rand_tensor(vec![4, 6], &mut rng(11)));
        let err = region_guided_repr(&mut tape, &bound, px, 2, 2, &[], 7, text, 2).unwrap_err();
        assert_eq!(err.category(), "EmptyRegion");
        let err = region_guided_repr(&mut tape, &bound, px, 2, 2, &[0], 0, text, 0).unwrap_err();
        assert_eq!(err.category(), "EmptyText");
    }

    // ---- resample_repr -------------------------------------------------

    #[test]
    fn identity_extent_resample_only_flattens() {
        let mut tape = Tape::new();
        let g = tape.leaf(rand_tensor(vec![2, 2, 2], &mut rng(12)));
        let out = resample_repr(&mut tape, g, 2, 2, 4).unwrap();
        assert_eq!(tape.value(out).shape(), &[4, 2]);
        let gd = tape.value(g).data();
        for s in 0..4 {
            for ch in 0..2 {
                assert_eq!(tape.value(out).data()[s * 2 + ch], gd[ch * 4 + s]);
            }
        }
    }

    #[test]
    fn column_resample_matches_shared_bilinear_oracle() {
        let mut tape = Tape::new();
        let g = tape.leaf(Tensor::new(vec![1, 2, 1], vec![0.0, 1.0]).unwrap());
        let out = resample_repr(&mut tape, g, 4, 1, 4).unwrap();
        let expect = [0.0, 0.25, 0.75, 1.0];
        for (a, b) in tape.value(out).data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn resample_rejects_row_count_mismatch() {
        let mut tape = Tape::new();
        let g = tape.leaf(rand_tensor(vec![2, 2, 2], &mut rng(13)));
        let err = resample_repr(&mut tape, g, 2, 2, 5).unwrap_err();
        assert_eq!(err.category(), "TargetMismatch");
    }

    // ---- attention_bias ------------------------------------------------

    #[test]
    fn zero_coefficient_gives_exactly_zero_bias() {
        let mut tape = Tape::new();
        let reprs: Vec<Value> =
            (0..3).map(|i| tape.leaf(rand_tensor(vec![4, 2], &mut rng(20 + i)))).collect();
        let lambda = tape.leaf(Tensor::new(vec![1], vec![0.0]).unwrap());
        let b = attention_bias(&mut tape, &reprs, lambda).unwrap();
        for &v in tape.value(b).data() {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn one_hot_repr_gives_rank_one_gram() {
        let mut tape = Tape::new();
        let mut g = Tensor::zeros(vec![3, 2]);
        g.data_mut()[0] = 1.0;
        let g = tape.leaf(g);
        let lambda = tape.leaf(Tensor::new(vec![1], vec![0.7]).unwrap());
        let b = attention_bias(&mut tape, &[g], lambda).unwrap();
        let want = [0.7, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(tape.value(b).data(), &want);
    }

    #[test]
    fn random_bias_is_symmetric_psd_and_matches_gram_oracle() {
        let mut tape = Tape::new();
        let mats: Vec<Tensor> =
            (0..3).map(|i| rand_tensor(vec![4, 2], &mut rng(30 + i))).collect();
        let reprs: Vec<Value> = mats.iter().map(|m| tape.leaf(m.clone())).collect();
        let lam = 0.3;
        let lambda = tape.leaf(Tensor::new(vec![1], vec![lam]).unwrap());
        let b = attention_bias(&mut tape, &reprs, lambda).unwrap();
        let bd = tape.value(b).data();
        // Naive double-loop Gram.
        let mut want = vec![0.0; 16];
        for m in &mats {
            let r = rows_of(m);
            for u in 0..4 {
                for v in 0..4 {
                    want[u * 4 + v] += r[u].iter().zip(&r[v]).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        for (got, w) in bd.iter().zip(&want) {
            assert!((got - lam * w).abs() < 1e-9);
        }
        for u in 0..4 {
            for v in 0..4 {
                assert!((bd[u * 4 + v] - bd[v * 4 + u]).abs() < 1e-12);
            }
        }
        let mut r = rng(40);
        for _ in 0..100 {
            let x: Vec<f64> = (0..4).map(|_| r.random_range(-2.0..2.0)).collect();
            let mut quad = 0.0;
            for u in 0..4 {
                for v in 0..4 {
                    quad += x[u] * bd[u * 4 + v] * x[v];
                }
            }
            assert!(quad >= -1e-10);
        }
    }

    #[test]
    fn disjoint_supports_leave_cross_entries_zero() {
        let mut tape = Tape::new();
        let mut a = Tensor::zeros(vec![4, 2]);
        a.data_mut()[0] = 0.8;
        a.data_mut()[3] = -0.4;
        let mut b = Tensor::zeros(vec![4, 2]);
        b.data_mut()[4] = 1.2;
        b.data_mut()[7] = 0.5;
        let (a, b) = (tape.leaf(a), tape.leaf(b));
        let lambda = tape.leaf(Tensor::new(vec![1], vec![0.9]).unwrap());
        let bias = attention_bias(&mut tape, &[a, b], lambda).unwrap();
        let bd = tape.value(bias).data();
        // Supports {0,1} and {2,3}: every cross entry is exactly zero.
        for u in 0..2 {
            for v in 2..4 {
                assert_eq!(bd[u * 4 + v], 0.0);
                assert_eq!(bd[v * 4 + u], 0.0);
            }
        }
    }

    #[test]
    fn bias_shape_checks_fire() {
        let mut tape = Tape::new();
        let a = tape.leaf(rand_tensor(vec![4, 2], &mut rng(41)));
        let b = tape.leaf(rand_tensor(vec![3, 2], &mut rng(42)));
        let lambda = tape.leaf(Tensor::new(vec![1], vec![0.1]).unwrap());
        let err = attention_bias(&mut tape, &[a, b], lambda).unwrap_err();
        assert_eq!(err.category(), "ShapeMismatch");
        let err = attention_bias(&mut tape, &[], lambda).unwrap_err();
        assert_eq!(err.category(), "EmptyInput");
    }

    // ---- rsa_attention -------------------------------------------------

    #[test]
    fn zero_coefficient_reduces_to_unbiased_attention() {
        let p = params(4, 2, 6, 0.0, 50);
        let tokens = rand_tensor(vec![4, 4], &mut rng(51));
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &p);
        let t = tape.leaf(tokens.clone());
        let reprs: Vec<Value> =
            (0..2).map(|i| tape.leaf(rand_tensor(vec![4, 2], &mut rng(52 + i)))).collect();
        let bias = attention_bias(&mut tape, &reprs, bound.lambda).unwrap();
        let biased = rsa_attention(&mut tape, &bound, t, Some(bias), 1).unwrap();
        let unbiased = rsa_attention(&mut tape, &bound, t, None, 1).unwrap();
        assert_eq!(tape.value(biased).data(), tape.value(unbiased).data());
    }

    #[test]
    fn huge_coefficient_keeps_rows_convex_combinations() {
        let p = params(4, 2, 6, 1000.0, 60);
        let tokens = rand_tensor(vec![4, 4], &mut rng(61));
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &p);
        let t = tape.leaf(tokens.clone());
        let repr = tape.leaf(rand_tensor(vec![4, 2], &mut rng(62)));
        let bias = attention_bias(&mut tape, &[repr], bound.lambda).unwrap();
        let out = rsa_attention(&mut tape, &bound, t, Some(bias), 1).unwrap();
        // Rows remain stochastic mixes of V rows, so each output column is
        // bounded by the column extremes of V.
        let v = mm(&rows_of(&tokens), &rows_of(&p.attn.wv));
        for col in 0..4 {
            let lo = v.iter().map(|r| r[col]).fold(f64::INFINITY, f64::min);
            let hi = v.iter().map(|r| r[col]).fold(f64::NEG_INFINITY, f64::max);
            for row in 0..4 {
                let x = tape.value(out).data()[row * 4 + col];
                assert!(x >= lo - 1e-9 && x <= hi + 1e-9);
            }
        }
    }

    #[test]
    fn biased_attention_matches_naive_reimplementation() {
        let p = params(4, 2, 6, 0.4, 70);
        let tokens = rand_tensor(vec![4, 4], &mut rng(71));
        let reprs: Vec<Tensor> =
            (0..2).map(|i| rand_tensor(vec![4, 2], &mut rng(72 + i))).collect();
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &p);
        let t = tape.leaf(tokens.clone());
        let rs: Vec<Value> = reprs.iter().map(|r| tape.leaf(r.clone())).collect();
        let bias = attention_bias(&mut tape, &rs, bound.lambda).unwrap();
        let out = rsa_attention(&mut tape, &bound, t, Some(bias), 1).unwrap();
        // Oracle: explicit Gram, then explicit biased attention.
        let mut b = vec![vec![0.0; 4]; 4];
        for m in &reprs {
            let r = rows_of(m);
            for u in 0..4 {
                for v in 0..4 {
                    b[u][v] += 0.4 * r[u].iter().zip(&r[v]).map(|(x, y)| x * y).sum::<f64>();
                }
            }
        }
        let want = naive_biased_attention(&rows_of(&tokens), &p.attn, Some(&b));
        for i in 0..4 {
            for j in 0..4 {
                assert!((tape.value(out).data()[i * 4 + j] - want[i][j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn attention_rejects_wrong_bias_extent() {
        let p = params(4, 2, 6, 0.1, 80);
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &p);
        let t = tape.leaf(rand_tensor(vec![4, 4], &mut rng(81)));
        let small = tape.leaf(rand_tensor(vec![3, 3], &mut rng(82)));
        let err = rsa_attention(&mut tape, &bound, t, Some(small), 1).unwrap_err();
        assert_eq!(err.category(), "ShapeMismatch");
    }

    // ---- gradients ------------------------------------------------------

    #[test]
    fn full_rsa_gradients_match_finite_differences() {
        let p = params(4, 2, 6, 0.2, 90);
        let image = rand_tensor(vec![3, 2, 2], &mut rng(91));
        let text = rand_tensor(vec![3, 6], &mut rng(92));
        let tokens = rand_tensor(vec![4, 4], &mut rng(93));
        let regions: Vec<Vec<usize>> = vec![vec![0, 1], vec![2, 3]];
        // Inputs: the five projection tensors plus lambda, then the text
        // embedding matrix (standing in for the table).
        let mut inputs: Vec<Tensor> = p.fields().into_iter().map(|(_, t)| t.clone()).collect();
        inputs.push(text.clone());
        let run = |ts: &[Tensor]| -> Result<(f64, Vec<Tensor>)> {
            let mut q = p.clone();
            for ((_, dst), src) in q.fields_mut().into_iter().zip(ts) {
                *dst = src.clone();
            }
            let emb = ts.last().expect("text embedding present").clone();
            let mut tape = Tape::new();
            let bound = bind(&mut tape, &q);
            let text_leaf = tape.leaf(emb);
            let img = tape.leaf(image.clone());
            let px = image_pixel_rows(&mut tape, img)?;
            let mut reprs = Vec::new();
            for (i, reg) in regions.iter().enumerate() {
                let g = region_guided_repr(&mut tape, &bound, px, 2, 2, reg, i, text_leaf, 3)?;
                reprs.push(resample_repr(&mut tape, g, 2, 2, 4)?);
            }
            let bias = attention_bias(&mut tape, &reprs, bound.lambda)?;
            let tok = tape.leaf(tokens.clone());
            let out = rsa_attention(&mut tape, &bound, tok, Some(bias), 1)?;
            let loss = tape.mean_all(out)?;
            tape.backward(loss)?;
            let mut grads: Vec<Tensor> =
                bound.values().iter().map(|&v| tape.grad(v)).collect();
            grads.push(tape.grad(text_leaf));
            Ok((tape.value(loss).item()?, grads))
        };
        let (_, analytic) = run(&inputs).unwrap();
        let mut coords = Vec::new();
        for (i, t) in inputs.iter().enumerate() {
            coords.push(Coord { input: i, elem: 0 });
            if t.len() > 2 {
                coords.push(Coord { input: i, elem: t.len() - 1 });
            }
        }
        let report =
            check_gradients(|ts| run(ts).map(|(l, _)| l), &inputs, &analytic, 1e-4, &coords)
                .unwrap();
        assert!(report.passes(1e-3), "worst {:?} of {}", report.worst, report.checked);
    }
}
