//! Versioned JSON artifacts with content hashes.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("{path}: expected a {expected} artifact, found {found}")]
    WrongKind { path: String, expected: String, found: String },
    #[error("{path}: unsupported artifact version {0}", .found)]
    Version { path: String, found: u32 },
    #[error("{path}: payload hash mismatch")]
    HashMismatch { path: String },
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the compact JSON encoding of `value`.
pub fn hash_json<T: Serialize + ?Sized>(value: &T) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("serializable value"))
}

pub fn hash_file(path: &Path) -> Result<String, ArtifactError> {
    std::fs::read(path).map(|b| sha256_hex(&b)).map_err(|source| ArtifactError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// A payload plus the hashes of everything it was derived from. No
/// timestamps, so identical inputs give identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub version: u32,
    pub kind: String,
    pub config_hash: String,
    /// Input name to content hash.
    pub inputs: BTreeMap<String, String>,
    pub payload_hash: String,
    pub payload: T,
}

impl<T: Serialize + DeserializeOwned> Artifact<T> {
    pub fn new(kind: &str, config_hash: String, inputs: BTreeMap<String, String>, payload: T) -> Self {
        Self {
            version: ARTIFACT_VERSION,
            kind: kind.to_string(),
            config_hash,
            inputs,
            payload_hash: hash_json(&payload),
            payload,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("serializable artifact");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<(), ArtifactError> {
        std::fs::write(path, self.to_json()).map_err(|source| ArtifactError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Reads an artifact and checks its kind, version and payload hash.
    pub fn read(path: &Path, kind: &str) -> Result<Self, ArtifactError> {
        let p = path.display().to_string();
        let bytes = std::fs::read(path).map_err(|source| ArtifactError::Io { path: p.clone(), source })?;
        let art: Self = serde_json::from_slice(&bytes).map_err(|source| ArtifactError::Json { path: p.clone(), source })?;
        if art.kind != kind {
            return Err(ArtifactError::WrongKind {
                path: p,
                expected: kind.to_string(),
                found: art.kind,
            });
        }
        if art.version != ARTIFACT_VERSION {
            return Err(ArtifactError::Version { path: p, found: art.version });
        }
        if hash_json(&art.payload) != art.payload_hash {
            return Err(ArtifactError::HashMismatch { path: p });
        }
        Ok(art)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn round_trip_and_checks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.json");
        let inputs = BTreeMap::from([("train".to_string(), sha256_hex(b"x"))]);
        let payload = vec![0.1, 1.0 / 3.0, -2.5e-17, 6.02e23];
        let art = Artifact::new("numbers", hash_json(&"cfg"), inputs, payload);
        art.write(&path).unwrap();
        let back: Artifact<Vec<f64>> = Artifact::read(&path, "numbers").unwrap();
        assert_eq!(back, art);
        assert_eq!(back.to_json(), std::fs::read_to_string(&path).unwrap());
        assert!(matches!(
            Artifact::<Vec<f64>>::read(&path, "policy"),
            Err(ArtifactError::WrongKind { .. })
        ));
        let tampered = std::fs::read_to_string(&path).unwrap().replacen("0.1", "0.2", 1);
        std::fs::write(&path, tampered).unwrap();
        assert!(matches!(
            Artifact::<Vec<f64>>::read(&path, "numbers"),
            Err(ArtifactError::HashMismatch { .. })
        ));
    }
}
