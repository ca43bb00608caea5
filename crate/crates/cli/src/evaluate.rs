//! Correlation reporting between prediction files and label files.

use rsfiqa_core::{Error, Result, metrics};
use std::collections::HashMap;
use std::path::Path;

use crate::data::read_scored_csv;

/// Correlations for one prediction file against the labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub plcc: f64,
    pub srcc: f64,
    pub n: usize,
}

/// Aggregate over several prediction files (one per seed, typically).
#[derive(Debug, Clone, PartialEq)]
pub struct MultiReport {
    pub per_file: Vec<MetricReport>,
    pub plcc_mean: f64,
    pub plcc_std: f64,
    pub srcc_mean: f64,
    pub srcc_std: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Joins predicted scores with labels on image id. Ids must match exactly
/// in both directions; the first offender is named.
pub fn join_on_ids(preds: &[(String, f64)], labels: &[(String, f64)]) -> Result<(Vec<f64>, Vec<f64>)> {
    let label_map: HashMap<&str, f64> =
        labels.iter().map(|(id, v)| (id.as_str(), *v)).collect();
    let mut p = Vec::with_capacity(preds.len());
    let mut y = Vec::with_capacity(preds.len());
    let mut seen = std::collections::HashSet::new();
    for (id, score) in preds {
        match label_map.get(id.as_str()) {
            Some(&mos) => {
                p.push(*score);
                y.push(mos);
                seen.insert(id.as_str());
            }
            None => return Err(Error::IdMismatch { id: id.clone() }),
        }
    }
    for (id, _) in labels {
        if !seen.contains(id.as_str()) {
            return Err(Error::IdMismatch { id: id.clone() });
        }
    }
    Ok((p, y))
}

/// Evaluates one predictions CSV against a labels CSV.
pub fn evaluate_files(predictions: &Path, labels: &Path) -> Result<MetricReport> {
    let preds = read_scored_csv(predictions, "score")?;
    let labs = read_scored_csv(labels, "mos")?;
    let (p, y) = join_on_ids(&preds, &labs)?;
    Ok(MetricReport { plcc: metrics::plcc(&p, &y)?, srcc: metrics::srcc(&p, &y)?, n: p.len() })
}

/// Evaluates several prediction files against one labels CSV, reporting
/// per-file correlations plus their mean and standard deviation.
pub fn evaluate_many(predictions: &[&Path], labels: &Path) -> Result<MultiReport> {
    if predictions.is_empty() {
        return Err(Error::EmptyInput { what: "prediction files" });
    }
    let per_file: Vec<MetricReport> =
        predictions.iter().map(|p| evaluate_files(p, labels)).collect::<Result<_>>()?;
    let plccs: Vec<f64> = per_file.iter().map(|r| r.plcc).collect();
    let srccs: Vec<f64> = per_file.iter().map(|r| r.srcc).collect();
    let (plcc_mean, plcc_std) = mean_std(&plccs);
    let (srcc_mean, srcc_std) = mean_std(&srccs);
    Ok(MultiReport { per_file, plcc_mean, plcc_std, srcc_mean, srcc_std })
}
