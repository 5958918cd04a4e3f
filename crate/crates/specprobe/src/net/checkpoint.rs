//! Checkpoint container format.
//!
//! Byte layout, integers little-endian:
//!
//! ```text
//! offset  size     field
//! 0       4        magic bytes "EEGN"
//! 4       4        format version (u32, currently 1)
//! 8       8        manifest length M in bytes (u64)
//! 16      M        UTF-8 JSON manifest: {"spec": NetworkSpec,
//!                  "tensors": [{"name", "shape", "offset", "len"}, ...]}
//! 16+M    4*total  f32 blob; tensor offsets/lengths are in floats
//! ```
//!
//! Weights are maintained at `f32` precision throughout training, so a save
//! followed by a load reproduces the network bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::network::{build_network, Network};
use super::spec::NetworkSpec;

pub const MAGIC: [u8; 4] = *b"EEGN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),
    #[error("unsupported checkpoint version {found} (supported: {supported})")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("tensor {name}: manifest declares shape {declared:?}/len {declared_len}, spec requires {expected:?}/len {expected_len}")]
    TensorMismatch {
        name: String,
        declared: Vec<usize>,
        declared_len: usize,
        expected: Vec<usize>,
        expected_len: usize,
    },
    #[error("tensor {name} missing from manifest")]
    MissingTensor { name: String },
    #[error("tensor {name}: blob range {offset}..{end} outside blob of {blob_len} floats")]
    BlobOutOfRange {
        name: String,
        offset: usize,
        end: usize,
        blob_len: usize,
    },
    #[error("invalid spec in checkpoint: {0}")]
    InvalidSpec(#[from] super::spec::SpecError),
    #[error("invalid network in checkpoint: {0}")]
    InvalidNetwork(#[from] super::network::NetError),
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the blob, in floats.
    offset: usize,
    /// Length in floats.
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    spec: NetworkSpec,
    tensors: Vec<TensorEntry>,
}

pub fn save_network(path: impl AsRef<Path>, net: &Network) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_network(&mut w, net)?;
    w.flush()?;
    Ok(())
}

pub fn load_network(path: impl AsRef<Path>) -> Result<Network, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    read_network(&mut r)
}

pub fn write_network(w: &mut impl Write, net: &Network) -> Result<(), CheckpointError> {
    let mut tensors = Vec::with_capacity(net.n_tensors());
    let mut offset = 0usize;
    for i in 0..net.n_tensors() {
        let len = net.tensor_data(i).len();
        tensors.push(TensorEntry {
            name: net.tensor_name(i),
            shape: net.tensor_shape(i),
            offset,
            len,
        });
        offset += len;
    }
    let manifest = Manifest {
        spec: net.spec().clone(),
        tensors,
    };
    let manifest_bytes = serde_json::to_vec(&manifest)
        .map_err(|e| CheckpointError::MalformedManifest(e.to_string()))?;
    w.write_all(&MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(manifest_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&manifest_bytes)?;
    for i in 0..net.n_tensors() {
        for &v in net.tensor_data(i) {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_network(r: &mut impl Read) -> Result<Network, CheckpointError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| CheckpointError::MalformedManifest("file shorter than magic".into()))?;
    if magic != MAGIC {
        return Err(CheckpointError::MalformedManifest(format!(
            "bad magic bytes {magic:?}"
        )));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)
        .map_err(|_| CheckpointError::MalformedManifest("missing version".into()))?;
    let version = u32::from_le_bytes(word);
    if version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let mut len8 = [0u8; 8];
    r.read_exact(&mut len8)
        .map_err(|_| CheckpointError::MalformedManifest("missing manifest length".into()))?;
    let manifest_len = u64::from_le_bytes(len8) as usize;
    let mut manifest_bytes = vec![0u8; manifest_len];
    r.read_exact(&mut manifest_bytes)
        .map_err(|_| CheckpointError::MalformedManifest("manifest shorter than declared".into()))?;
    let manifest: Manifest = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| CheckpointError::MalformedManifest(e.to_string()))?;

    let mut blob_bytes = Vec::new();
    r.read_to_end(&mut blob_bytes)?;
    if blob_bytes.len() % 4 != 0 {
        return Err(CheckpointError::MalformedManifest(format!(
            "blob length {} is not a multiple of 4",
            blob_bytes.len()
        )));
    }
    let blob: Vec<f32> = blob_bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();

    // Allocate tensors from the declared spec, then fill from the blob; any
    // disagreement between manifest and spec is reported per tensor.
    let mut net = build_network(&manifest.spec, 0)?;
    for i in 0..net.n_tensors() {
        let name = net.tensor_name(i);
        let expected_shape = net.tensor_shape(i);
        let expected_len = net.tensor_data(i).len();
        let entry = manifest
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| CheckpointError::MissingTensor { name: name.clone() })?;
        if entry.shape != expected_shape || entry.len != expected_len {
            return Err(CheckpointError::TensorMismatch {
                name,
                declared: entry.shape.clone(),
                declared_len: entry.len,
                expected: expected_shape,
                expected_len,
            });
        }
        let end = entry.offset + entry.len;
        if end > blob.len() {
            return Err(CheckpointError::BlobOutOfRange {
                name,
                offset: entry.offset,
                end,
                blob_len: blob.len(),
            });
        }
        let dst = net.tensor_data_mut(i);
        for (d, &s) in dst.iter_mut().zip(&blob[entry.offset..end]) {
            *d = f64::from(s);
        }
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::spec::StandardParams;
    use ndarray::Array2;

    fn tiny_net() -> Network {
        let spec = NetworkSpec::standard(
            2,
            80,
            2,
            &StandardParams {
                temporal_kernel: 5,
                filters: [3, 3, 4, 5, 6],
                pool_size: 2,
                pool_stride: 2,
            },
        );
        build_network(&spec, 12).unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let net = tiny_net();
        let mut buf = Vec::new();
        write_network(&mut buf, &net).unwrap();
        let back = read_network(&mut buf.as_slice()).unwrap();
        assert_eq!(net, back);

        let crop = Array2::from_shape_fn((2, 80), |(c, t)| ((c + 2 * t) as f64 * 0.1).sin());
        let a = net.forward(&crop.view(), &[1, 4]).unwrap();
        let b = back.forward(&crop.view(), &[1, 4]).unwrap();
        assert_eq!(a.probabilities, b.probabilities);
        assert_eq!(a.taps[0].values, b.taps[0].values);
        assert_eq!(a.taps[1].values, b.taps[1].values);
    }

    #[test]
    fn tampered_tensor_length_is_error() {
        let net = tiny_net();
        let mut buf = Vec::new();
        write_network(&mut buf, &net).unwrap();
        // Rewrite the declared length of conv1.weight in the manifest.
        let json_end = 16 + u64::from_le_bytes(buf[8..16].try_into().unwrap()) as usize;
        let mut manifest: serde_json::Value =
            serde_json::from_slice(&buf[16..json_end]).expect("manifest parses");
        manifest["tensors"][0]["len"] = serde_json::json!(7);
        let new_manifest = serde_json::to_vec(&manifest).unwrap();
        let blob_start = json_end;
        let mut tampered = Vec::new();
        tampered.extend_from_slice(&buf[..8]);
        tampered.extend_from_slice(&(new_manifest.len() as u64).to_le_bytes());
        tampered.extend_from_slice(&new_manifest);
        tampered.extend_from_slice(&buf[blob_start..]);
        assert!(matches!(
            read_network(&mut tampered.as_slice()),
            Err(CheckpointError::TensorMismatch { .. })
        ));
    }

    #[test]
    fn mismatched_spec_names_layer() {
        let net = tiny_net();
        let mut buf = Vec::new();
        write_network(&mut buf, &net).unwrap();
        let json_end = 16 + u64::from_le_bytes(buf[8..16].try_into().unwrap()) as usize;
        let mut manifest: serde_json::Value = serde_json::from_slice(&buf[16..json_end]).unwrap();
        // Declare more filters for conv3 than the stored tensors have.
        manifest["spec"]["layers"][4]["filters"] = serde_json::json!(9);
        let new_manifest = serde_json::to_vec(&manifest).unwrap();
        let blob_start = json_end;
        let mut tampered = Vec::new();
        tampered.extend_from_slice(&buf[..8]);
        tampered.extend_from_slice(&(new_manifest.len() as u64).to_le_bytes());
        tampered.extend_from_slice(&new_manifest);
        tampered.extend_from_slice(&buf[blob_start..]);
        match read_network(&mut tampered.as_slice()) {
            Err(CheckpointError::TensorMismatch { name, .. }) => {
                assert!(name.starts_with("conv3"), "error names {name}");
            }
            other => panic!("expected TensorMismatch, got {other:?}"),
        }
    }
}
