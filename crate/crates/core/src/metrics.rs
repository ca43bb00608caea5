//! Correlation metrics for score evaluation.
//!
//! Pearson linear correlation (PLCC) follows the direct covariance formula.
//! Spearman rank correlation (SRCC) is the Pearson correlation of average
//! ranks, which stays correct in the presence of ties; the popular
//! `1 - 6*sum(d^2)/(n(n^2-1))` shortcut is only equivalent when all values
//! are distinct and is therefore used purely as a test oracle.

use crate::error::{Error, Result};

/// Pearson linear correlation coefficient.
pub fn plcc(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch { left: x.len(), right: y.len() });
    }
    if x.is_empty() {
        return Err(Error::EmptyInput { what: "plcc" });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::DegenerateVariance { side: "first" });
    }
    if syy == 0.0 {
        return Err(Error::DegenerateVariance { side: "second" });
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Average (fractional) ranks, 1-based. Tied values share the mean of the
/// ranks they would occupy.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("finite values"));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) hold ranks i+1..=j+1; ties average them.
        let avg = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation coefficient (tie-corrected).
pub fn srcc(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch { left: x.len(), right: y.len() });
    }
    if x.is_empty() {
        return Err(Error::EmptyInput { what: "srcc" });
    }
    plcc(&average_ranks(x), &average_ranks(y))
}

/// Mean squared error between two equally long slices.
pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::LengthMismatch { left: pred.len(), right: target.len() });
    }
    if pred.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let s: f64 = pred.iter().zip(target).map(|(&p, &t)| (p - t) * (p - t)).sum();
    Ok(s / pred.len() as f64)
}
