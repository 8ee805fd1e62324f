//! Checkpoint container: a 4-byte magic, u32 LE format version, u32 LE
//! header length, a JSON header, then every tensor as f32 LE in header order.

use std::fs;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct Header<M> {
    meta: M,
    tensors: Vec<(String, Vec<usize>)>,
}

#[derive(Debug, Clone)]
pub struct CheckpointFile<M> {
    pub meta: M,
    pub tensors: Vec<TensorEntry>,
    /// SHA-256 of the whole file.
    pub fingerprint: String,
}

pub fn write_checkpoint<M: Serialize>(
    path: &Path,
    magic: [u8; 4],
    version: u32,
    meta: &M,
    tensors: &[TensorEntry],
) -> Result<String> {
    let header = Header {
        meta,
        tensors: tensors.iter().map(|t| (t.name.clone(), t.shape.clone())).collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Json {
        path: path.into(),
        source: e,
    })?;
    let mut out = Vec::new();
    out.extend_from_slice(&magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in tensors {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, &out).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&out)))
}

pub fn read_checkpoint<M: DeserializeOwned>(path: &Path, magic: [u8; 4], version: u32) -> Result<CheckpointFile<M>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let truncated = |expected: usize| Error::Truncated {
        path: path.into(),
        expected,
        found: bytes.len(),
    };
    if bytes.len() < 12 {
        return Err(truncated(12));
    }
    let found: [u8; 4] = bytes[0..4].try_into().unwrap();
    if found != magic {
        return Err(Error::BadMagic {
            path: path.into(),
            found,
        });
    }
    let v = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if v != version {
        return Err(Error::UnsupportedVersion {
            path: path.into(),
            version: v,
        });
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + hlen {
        return Err(truncated(12 + hlen));
    }
    let header: Header<M> = serde_json::from_slice(&bytes[12..12 + hlen]).map_err(|e| Error::Json {
        path: path.into(),
        source: e,
    })?;
    let total: usize = header.tensors.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    let expected = 12 + hlen + total * 4;
    if bytes.len() != expected {
        return Err(truncated(expected));
    }
    let mut offset = 12 + hlen;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for (name, shape) in header.tensors {
        let n: usize = shape.iter().product();
        let data = bytes[offset..offset + 4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        offset += 4 * n;
        tensors.push(TensorEntry { name, shape, data });
    }
    Ok(CheckpointFile {
        meta: header.meta,
        tensors,
        fingerprint: hex::encode(Sha256::digest(&bytes)),
    })
}

/// SHA-256 of a file's bytes.
pub fn file_fingerprint(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_fingerprint() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        let tensors = vec![
            TensorEntry {
                name: "a".into(),
                shape: vec![2, 2],
                data: vec![1.0, -2.0, 3.5, 0.0],
            },
            TensorEntry {
                name: "b".into(),
                shape: vec![1],
                data: vec![7.0],
            },
        ];
        let fp = write_checkpoint(&path, *b"TEST", 3, &"meta".to_string(), &tensors).unwrap();
        let back: CheckpointFile<String> = read_checkpoint(&path, *b"TEST", 3).unwrap();
        assert_eq!(back.meta, "meta");
        assert_eq!(back.tensors, tensors);
        assert_eq!(back.fingerprint, fp);
        assert_eq!(file_fingerprint(&path).unwrap(), fp);
        assert!(matches!(
            read_checkpoint::<String>(&path, *b"XXXX", 3),
            Err(Error::BadMagic { .. })
        ));
        assert!(matches!(
            read_checkpoint::<String>(&path, *b"TEST", 4),
            Err(Error::UnsupportedVersion { .. })
        ));
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 2]).unwrap();
        assert!(matches!(
            read_checkpoint::<String>(&path, *b"TEST", 3),
            Err(Error::Truncated { .. })
        ));
    }
}
