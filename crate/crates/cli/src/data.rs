//! Dataset ingestion, synthetic dataset generation, and the split protocol.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use rsfiqa_core::image_data::{make_synthetic_image, save_rgb_tensor};
use rsfiqa_core::{Error, Result};
use std::collections::HashSet;
use std::path::{Path, PathBuf};

use crate::config::SplitRatios;

/// Where a dataset came from; synthetic sets carry exact generator scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Synthetic,
    External,
}

#[derive(Debug, Clone)]
pub struct DatasetRecord {
    /// The raw `image_path` cell; doubles as the stable image id.
    pub image_id: String,
    /// Resolved location on disk.
    pub path: PathBuf,
    /// Raw score as labeled; normalized later against the training split.
    pub mos: f64,
}

#[derive(Debug, Clone)]
pub struct DatasetIndex {
    pub records: Vec<DatasetRecord>,
    pub provenance: Provenance,
}

impl DatasetIndex {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Reads a `image_path,mos` CSV. Relative paths resolve against the CSV's
/// own directory; every referenced file must exist at load time.
pub fn load_dataset(csv_path: &Path) -> Result<DatasetIndex> {
    let base = csv_path.parent().unwrap_or_else(|| Path::new("."));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(csv_path)
        .map_err(|e| Error::IoError { path: csv_path.display().to_string(), detail: e.to_string() })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::MalformedCsv { line: 1, detail: e.to_string() })?
        .clone();
    let expect = ["image_path", "mos"];
    if headers.iter().collect::<Vec<_>>() != expect {
        return Err(Error::MalformedCsv {
            line: 1,
            detail: format!("header must be image_path,mos, got {headers:?}"),
        });
    }
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, row) in reader.records().enumerate() {
        // Header occupies line 1; data starts on line 2.
        let line = i + 2;
        let row = row.map_err(|e| Error::MalformedCsv { line, detail: e.to_string() })?;
        if row.len() != 2 {
            return Err(Error::MalformedCsv {
                line,
                detail: format!("expected 2 fields, got {}", row.len()),
            });
        }
        let image_id = row[0].trim().to_string();
        if image_id.is_empty() {
            return Err(Error::MalformedCsv { line, detail: "empty image_path".into() });
        }
        if !seen.insert(image_id.clone()) {
            return Err(Error::MalformedCsv {
                line,
                detail: format!("duplicate image_path {image_id:?}"),
            });
        }
        let mos: f64 = row[1].trim().parse().map_err(|_| Error::MalformedCsv {
            line,
            detail: format!("unparseable mos {:?}", &row[1]),
        })?;
        if !mos.is_finite() {
            return Err(Error::MalformedCsv { line, detail: format!("non-finite mos {mos}") });
        }
        let raw = Path::new(&image_id);
        let path = if raw.is_absolute() { raw.to_path_buf() } else { base.join(raw) };
        if !path.is_file() {
            return Err(Error::MissingImage { path: path.display().to_string() });
        }
        records.push(DatasetRecord { image_id, path, mos });
    }
    Ok(DatasetIndex { records, provenance: Provenance::External })
}

/// Writes `count` synthetic images plus a `labels.csv` into `out_dir` and
/// returns the resulting index. Fully determined by `seed`.
pub fn make_synthetic_dataset(
    count: usize,
    seed: u64,
    out_dir: &Path,
    h: usize,
    w: usize,
) -> Result<DatasetIndex> {
    if count < 2 {
        return Err(Error::TooFewSamples { have: count, need: 2 });
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let mut records = Vec::with_capacity(count);
    let mut csv_body = String::from("image_path,mos\n");
    for i in 0..count {
        let rec = make_synthetic_image(seed, i as u64, h, w);
        let name = format!("img_{i:05}.png");
        let path = out_dir.join(&name);
        save_rgb_tensor(&path, &rec.image)?;
        csv_body.push_str(&format!("{name},{}\n", rec.mos));
        records.push(DatasetRecord { image_id: name, path, mos: rec.mos });
    }
    let csv_path = out_dir.join("labels.csv");
    std::fs::write(&csv_path, csv_body).map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    Ok(DatasetIndex { records, provenance: Provenance::Synthetic })
}

/// Index triples into `index.records` for train/val/test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Deterministic shuffled split. Train and val sizes round down; test takes
/// the remainder. Any ratio above zero must yield a nonempty split.
pub fn split(index: &DatasetIndex, ratios: &SplitRatios, seed: u64) -> Result<Split> {
    let n = index.len();
    // The epsilon keeps products that are mathematically integral from
    // flooring one short after rounding error.
    let n_train = (n as f64 * ratios.train + 1e-9).floor() as usize;
    let n_val = (n as f64 * ratios.val + 1e-9).floor() as usize;
    let n_test = n - n_train - n_val;
    let need_train = ratios.train > 0.0;
    let need_val = ratios.val > 0.0;
    let need_test = ratios.test > 0.0;
    let starved = (need_train && n_train == 0)
        || (need_val && n_val == 0)
        || (need_test && n_test == 0);
    if starved {
        let groups = need_train as usize + need_val as usize + need_test as usize;
        // Rough floor: one sample per requested split never suffices when
        // fractional ratios round a split down to zero.
        return Err(Error::TooFewSamples { have: n, need: groups.max(2) });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let train = order[..n_train].to_vec();
    let val = order[n_train..n_train + n_val].to_vec();
    let test = order[n_train + n_val..].to_vec();
    Ok(Split { train, val, test })
}

/// Writes an `image_id,score` predictions CSV.
pub fn write_predictions(path: &Path, rows: &[(String, f64)]) -> Result<()> {
    let mut body = String::from("image_id,score\n");
    for (id, score) in rows {
        body.push_str(&format!("{id},{score}\n"));
    }
    std::fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads a two-column CSV with the given header into id/value pairs.
pub fn read_scored_csv(path: &Path, value_header: &str) -> Result<Vec<(String, f64)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::IoError { path: path.display().to_string(), detail: e.to_string() })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::MalformedCsv { line: 1, detail: e.to_string() })?
        .clone();
    let expect = ["image_id", value_header];
    if headers.iter().collect::<Vec<_>>() != expect {
        return Err(Error::MalformedCsv {
            line: 1,
            detail: format!("header must be image_id,{value_header}, got {headers:?}"),
        });
    }
    let mut rows = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::MalformedCsv { line, detail: e.to_string() })?;
        if row.len() != 2 {
            return Err(Error::MalformedCsv {
                line,
                detail: format!("expected 2 fields, got {}", row.len()),
            });
        }
        let value: f64 = row[1].trim().parse().map_err(|_| Error::MalformedCsv {
            line,
            detail: format!("unparseable {value_header} {:?}", &row[1]),
        })?;
        rows.push((row[0].trim().to_string(), value));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ratios(train: f64, val: f64, test: f64) -> SplitRatios {
        SplitRatios { train, val, test }
    }

    #[test]
    fn synthetic_dataset_round_trips_through_its_csv() {
        let dir = tempfile::tempdir().unwrap();
        let made = make_synthetic_dataset(4, 9, dir.path(), 16, 16).unwrap();
        assert_eq!(made.len(), 4);
        assert_eq!(made.provenance, Provenance::Synthetic);
        let loaded = load_dataset(&dir.path().join("labels.csv")).unwrap();
        assert_eq!(loaded.len(), 4);
        for (a, b) in made.records.iter().zip(&loaded.records) {
            assert_eq!(a.image_id, b.image_id);
            assert_eq!(a.mos, b.mos);
        }
    }

    #[test]
    fn synthetic_dataset_is_seed_deterministic() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let a = make_synthetic_dataset(3, 5, d1.path(), 16, 16).unwrap();
        let b = make_synthetic_dataset(3, 5, d2.path(), 16, 16).unwrap();
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!(ra.mos, rb.mos);
            let bytes_a = std::fs::read(&ra.path).unwrap();
            let bytes_b = std::fs::read(&rb.path).unwrap();
            assert_eq!(bytes_a, bytes_b);
        }
    }

    #[test]
    fn one_synthetic_image_is_too_few() {
        let dir = tempfile::tempdir().unwrap();
        let err = make_synthetic_dataset(1, 0, dir.path(), 16, 16).unwrap_err();
        assert_eq!(err.category(), "TooFewSamples");
    }

    #[test]
    fn duplicate_paths_are_rejected_with_the_line_number() {
        let dir = tempfile::tempdir().unwrap();
        make_synthetic_dataset(2, 0, dir.path(), 16, 16).unwrap();
        let csv = dir.path().join("dup.csv");
        std::fs::write(&csv, "image_path,mos\nimg_00000.png,3.0\nimg_00000.png,2.0\n").unwrap();
        match load_dataset(&csv).unwrap_err() {
            Error::MalformedCsv { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_image_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("bad.csv");
        std::fs::write(&csv, "image_path,mos\nnope.png,3.0\n").unwrap();
        match load_dataset(&csv).unwrap_err() {
            Error::MissingImage { path } => assert!(path.ends_with("nope.png")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_header_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("bad.csv");
        std::fs::write(&csv, "path,score\nx.png,1\n").unwrap();
        assert_eq!(load_dataset(&csv).unwrap_err().category(), "MalformedCsv");
    }

    #[test]
    fn unparseable_mos_reports_its_line() {
        let dir = tempfile::tempdir().unwrap();
        make_synthetic_dataset(2, 0, dir.path(), 16, 16).unwrap();
        let csv = dir.path().join("bad.csv");
        std::fs::write(&csv, "image_path,mos\nimg_00000.png,3.0\nimg_00001.png,abc\n").unwrap();
        match load_dataset(&csv).unwrap_err() {
            Error::MalformedCsv { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn tiny_index(n: usize) -> DatasetIndex {
        let records = (0..n)
            .map(|i| DatasetRecord {
                image_id: format!("img{i}"),
                path: PathBuf::from(format!("img{i}.png")),
                mos: i as f64,
            })
            .collect();
        DatasetIndex { records, provenance: Provenance::Synthetic }
    }

    #[test]
    fn ten_records_split_seven_one_two() {
        let s = split(&tiny_index(10), &ratios(0.7, 0.1, 0.2), 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (7, 1, 2));
    }

    #[test]
    fn split_is_seed_deterministic_and_seed_sensitive() {
        let idx = tiny_index(20);
        let r = ratios(0.7, 0.1, 0.2);
        assert_eq!(split(&idx, &r, 3).unwrap(), split(&idx, &r, 3).unwrap());
        assert_ne!(split(&idx, &r, 3).unwrap(), split(&idx, &r, 4).unwrap());
    }

    #[test]
    fn splits_partition_the_index() {
        let idx = tiny_index(13);
        let s = split(&idx, &ratios(0.7, 0.1, 0.2), 8).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..13).collect::<Vec<_>>());
    }

    #[test]
    fn starved_split_is_too_few_samples() {
        let err = split(&tiny_index(3), &ratios(0.7, 0.1, 0.2), 0).unwrap_err();
        assert_eq!(err.category(), "TooFewSamples");
    }

    #[test]
    fn zero_ratio_splits_may_be_empty() {
        let s = split(&tiny_index(4), &ratios(1.0, 0.0, 0.0), 0).unwrap();
        assert_eq!(s.train.len(), 4);
        assert!(s.val.is_empty() && s.test.is_empty());
    }

    #[test]
    fn predictions_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("preds.csv");
        let rows = vec![("a.png".to_string(), 1.25), ("b.png".to_string(), 4.5)];
        write_predictions(&path, &rows).unwrap();
        assert_eq!(read_scored_csv(&path, "score").unwrap(), rows);
    }
}
