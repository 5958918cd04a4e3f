//! Dataset container format.
//!
//! Byte layout, all integers little-endian:
//!
//! ```text
//! offset  size       field
//! 0       4          magic bytes "EEGD"
//! 4       4          format version (u32, currently 1)
//! 8       8          header length H in bytes (u64)
//! 16      H          UTF-8 JSON header: {"channels", "time", "sample_rate",
//!                    "n_classes", "labels": [..], "metadata": {..}}
//! 16+H    n*c*t*4    samples as f32, trial-major then channel-major:
//!                    trial 0 channel 0 samples, trial 0 channel 1, ...
//! ```
//!
//! `n` (the trial count) is the length of `labels`. A save followed by a load
//! reproduces the dataset bit-exactly, metadata included.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Dataset, SignalError, Trial};

pub const MAGIC: [u8; 4] = *b"EEGD";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetIoError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported format version {found} (supported: {supported})")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("truncated payload: expected {expected} bytes of samples, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("trailing data: expected {expected} bytes of samples, found {found}")]
    TrailingData { expected: usize, found: usize },
    #[error("invalid dataset contents: {0}")]
    InvalidContents(#[from] SignalError),
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    channels: usize,
    time: usize,
    sample_rate: f64,
    n_classes: usize,
    labels: Vec<usize>,
    metadata: BTreeMap<String, String>,
}

pub fn save_dataset(path: impl AsRef<Path>, dataset: &Dataset) -> Result<(), DatasetIoError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset(&mut w, dataset)?;
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, DatasetIoError> {
    let mut r = BufReader::new(File::open(path)?);
    read_dataset(&mut r)
}

pub fn write_dataset(w: &mut impl Write, dataset: &Dataset) -> Result<(), DatasetIoError> {
    let header = Header {
        channels: dataset.channels(),
        time: dataset.time(),
        sample_rate: dataset.sample_rate(),
        n_classes: dataset.n_classes(),
        labels: dataset.trials().iter().map(|t| t.label()).collect(),
        metadata: dataset.metadata().clone(),
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| DatasetIoError::MalformedHeader(e.to_string()))?;
    w.write_all(&MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for trial in dataset.trials() {
        // Standard layout: rows are channels, so this is channel-major.
        for &v in trial.data().as_slice().expect("standard layout") {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_dataset(r: &mut impl Read) -> Result<Dataset, DatasetIoError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| DatasetIoError::MalformedHeader("file shorter than magic".into()))?;
    if magic != MAGIC {
        return Err(DatasetIoError::MalformedHeader(format!(
            "bad magic bytes {magic:?}"
        )));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)
        .map_err(|_| DatasetIoError::MalformedHeader("missing version field".into()))?;
    let version = u32::from_le_bytes(word);
    if version != FORMAT_VERSION {
        return Err(DatasetIoError::VersionMismatch {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let mut len8 = [0u8; 8];
    r.read_exact(&mut len8)
        .map_err(|_| DatasetIoError::MalformedHeader("missing header length".into()))?;
    let header_len = u64::from_le_bytes(len8) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)
        .map_err(|_| DatasetIoError::MalformedHeader("header shorter than declared".into()))?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| DatasetIoError::MalformedHeader(e.to_string()))?;

    let per_trial = header.channels * header.time;
    let expected = header.labels.len() * per_trial * 4;
    let mut payload = Vec::with_capacity(expected);
    r.read_to_end(&mut payload)?;
    if payload.len() < expected {
        return Err(DatasetIoError::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(DatasetIoError::TrailingData {
            expected,
            found: payload.len(),
        });
    }

    let mut trials = Vec::with_capacity(header.labels.len());
    for (i, &label) in header.labels.iter().enumerate() {
        let base = i * per_trial * 4;
        let samples: Vec<f32> = (0..per_trial)
            .map(|j| {
                let o = base + j * 4;
                f32::from_le_bytes([payload[o], payload[o + 1], payload[o + 2], payload[o + 3]])
            })
            .collect();
        let data = Array2::from_shape_vec((header.channels, header.time), samples)
            .expect("shape matches sample count");
        trials.push(Trial::new(data, header.sample_rate, label)?);
    }
    Ok(Dataset::new(trials, header.n_classes, header.metadata)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{generate_synthetic_dataset, BandRule, NoiseConfig, SynthConfig};

    fn small_dataset() -> Dataset {
        let cfg = SynthConfig {
            n_trials_per_class: 3,
            channels: 2,
            duration_s: 0.4,
            sample_rate: 100.0,
            noise: NoiseConfig {
                level: 0.3,
                slope: 1.0,
            },
            class_rules: vec![
                vec![BandRule {
                    band: (8.0, 12.0),
                    channels: None,
                    amplitude: 1.0,
                    phase_locked: false,
                }],
                vec![],
            ],
        };
        generate_synthetic_dataset(&cfg, 42).unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let ds = small_dataset();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &ds).unwrap();
        let back = read_dataset(&mut buf.as_slice()).unwrap();
        assert_eq!(ds, back);
        // Bytes are stable across saves as well.
        let mut buf2 = Vec::new();
        write_dataset(&mut buf2, &back).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn corrupted_magic_is_malformed_header() {
        let ds = small_dataset();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &ds).unwrap();
        buf[0] = b'X';
        assert!(matches!(
            read_dataset(&mut buf.as_slice()),
            Err(DatasetIoError::MalformedHeader(_))
        ));
    }

    #[test]
    fn version_mismatch_reported() {
        let ds = small_dataset();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &ds).unwrap();
        buf[4] = 9;
        assert!(matches!(
            read_dataset(&mut buf.as_slice()),
            Err(DatasetIoError::VersionMismatch { found: 9, .. })
        ));
    }

    #[test]
    fn short_payload_is_truncated_error() {
        let ds = small_dataset();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &ds).unwrap();
        // Drop one channel worth of the last trial.
        buf.truncate(buf.len() - ds.time() * 4);
        assert!(matches!(
            read_dataset(&mut buf.as_slice()),
            Err(DatasetIoError::TruncatedPayload { .. })
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.eegd");
        let ds = small_dataset();
        save_dataset(&path, &ds).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), ds);
    }
}
