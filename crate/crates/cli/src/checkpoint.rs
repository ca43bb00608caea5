//! Self-describing checkpoint files.
//!
//! Layout: 4 magic bytes, u32 format version, u64 JSON header length, the
//! JSON header, then every parameter as little-endian f64 in registry
//! order. Reloading reproduces parameters bitwise.

use rsfiqa_core::model::ModelParams;
use rsfiqa_core::regressor::ScoreNormalizer;
use rsfiqa_core::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

use crate::config::RunConfig;

const MAGIC: [u8; 4] = *b"RSFQ";
const VERSION: u32 = 1;

/// Bit-level f64 encoding for header fields that may hold NaN; plain JSON
/// numbers cannot represent NaN, and `null` does not round-trip.
mod f64_bits {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(v.to_bits())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(f64::from_bits(u64::deserialize(d)?))
    }
}

/// One line of the training curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// NaN when the validation split is too small to rank.
    #[serde(with = "f64_bits")]
    pub val_srcc: f64,
    pub lr: f64,
}

impl EpochLog {
    /// The stable log line format; determinism tests compare these strings.
    pub fn line(&self) -> String {
        format!(
            "epoch={} train_loss={:.12e} val_srcc={:.12e} lr={:.12e}",
            self.epoch, self.train_loss, self.val_srcc, self.lr
        )
    }
}

/// Everything needed to resume or apply a trained model.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub normalizer: ScoreNormalizer,
    pub log: Vec<EpochLog>,
    pub params: ModelParams,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: RunConfig,
    normalizer: ScoreNormalizer,
    log: Vec<EpochLog>,
    param_count: usize,
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let flat = ckpt.params.flatten();
    let header = Header {
        config: ckpt.config.clone(),
        normalizer: ckpt.normalizer.clone(),
        log: ckpt.log.clone(),
        param_count: flat.len(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::CorruptCheckpoint { detail: format!("header encode: {e}") })?;
    let mut out = Vec::with_capacity(16 + header_json.len() + flat.len() * 8);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_json);
    for v in &flat {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(&out).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    if bytes.len() < 16 || bytes[..4] != MAGIC {
        return Err(Error::CorruptCheckpoint { detail: "missing magic bytes".into() });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("fixed slice"));
    if version != VERSION {
        return Err(Error::CorruptCheckpoint {
            detail: format!("format version {version}, expected {VERSION}"),
        });
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("fixed slice")) as usize;
    let body_start = 16 + header_len;
    if bytes.len() < body_start {
        return Err(Error::CorruptCheckpoint { detail: "truncated header".into() });
    }
    let header: Header = serde_json::from_slice(&bytes[16..body_start])
        .map_err(|e| Error::CorruptCheckpoint { detail: format!("header decode: {e}") })?;
    let body = &bytes[body_start..];
    if body.len() != header.param_count * 8 {
        return Err(Error::CorruptCheckpoint {
            detail: format!(
                "parameter body holds {} bytes, header promises {}",
                body.len(),
                header.param_count * 8
            ),
        });
    }
    let flat: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    header
        .config
        .validate()
        .map_err(|e| Error::CorruptCheckpoint { detail: format!("embedded config: {e}") })?;
    // Seed 0 is a placeholder; every value is overwritten from the file.
    let mut params = ModelParams::init(&header.config.model_config(), 0)
        .map_err(|e| Error::CorruptCheckpoint { detail: format!("embedded config: {e}") })?;
    if params.param_count() != header.param_count {
        return Err(Error::CorruptCheckpoint {
            detail: format!(
                "config implies {} parameters, file holds {}",
                params.param_count(),
                header.param_count
            ),
        });
    }
    params
        .assign_flat(&flat)
        .map_err(|e| Error::CorruptCheckpoint { detail: e.to_string() })?;
    Ok(Checkpoint {
        config: header.config,
        normalizer: header.normalizer,
        log: header.log,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_ckpt() -> Checkpoint {
        let mut cfg = RunConfig::default();
        cfg.height = 16;
        cfg.width = 16;
        cfg.channels = vec![2, 4];
        cfg.fused_channels = 4;
        cfg.guide_channels = 2;
        cfg.embed_dim = 4;
        cfg.tokens = 8;
        cfg.vocab = 128;
        cfg.mlp_hidden = 4;
        cfg.regions = 3;
        let params = ModelParams::init(&cfg.model_config(), 11).unwrap();
        Checkpoint {
            config: cfg,
            normalizer: ScoreNormalizer::fit(&[1.0, 3.5, 5.0]).unwrap(),
            log: vec![
                EpochLog { epoch: 0, train_loss: 0.25, val_srcc: 0.1, lr: 3e-4 },
                EpochLog { epoch: 1, train_loss: 0.125, val_srcc: 0.6, lr: 2.9e-4 },
            ],
            params,
        }
    }

    #[test]
    fn checkpoint_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ckpt = small_ckpt();
        save_checkpoint(&path, &ckpt).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.config, ckpt.config);
        assert_eq!(back.log, ckpt.log);
        let a = ckpt.params.flatten();
        let b = back.params.flatten();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn nan_validation_srcc_survives_the_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut ckpt = small_ckpt();
        ckpt.log[1].val_srcc = f64::NAN;
        save_checkpoint(&path, &ckpt).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.log[1].val_srcc.to_bits(), ckpt.log[1].val_srcc.to_bits());
        assert_eq!(back.log[0], ckpt.log[0]);
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"NOPE0000000000000000").unwrap();
        assert_eq!(load_checkpoint(&path).unwrap_err().category(), "CorruptCheckpoint");
    }

    #[test]
    fn truncated_body_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &small_ckpt()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap_err().category(), "CorruptCheckpoint");
    }

    #[test]
    fn unknown_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &small_ckpt()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 9;
        std::fs::write(&path, &bytes).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap_err().category(), "CorruptCheckpoint");
    }

    #[test]
    fn log_line_format_is_stable() {
        let log = EpochLog { epoch: 3, train_loss: 0.5, val_srcc: -0.25, lr: 1e-3 };
        assert_eq!(
            log.line(),
            "epoch=3 train_loss=5.000000000000e-1 val_srcc=-2.500000000000e-1 lr=1.000000000000e-3"
        );
    }
}
