//! Digest-checked binary container for trained models and run manifests.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "SVDF" | version u32 | kind u8 | payload_len u64 | payload | sha256
//! ```
//!
//! The trailing 32-byte digest covers every preceding byte, so any corruption
//! or truncation is detected at load. Payloads are self-describing JSON;
//! floats survive the round trip exactly (shortest-representation encoding).

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

pub const ARTIFACT_MAGIC: &[u8; 4] = b"SVDF";
/// Current container version. Readers accept versions 1..=current.
pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported artifact version {0}")]
    UnsupportedVersion(u32),
    #[error("file truncated or payload length inconsistent")]
    Truncated,
    #[error("stored digest does not match content")]
    DigestMismatch,
    #[error("unknown artifact kind byte {0}")]
    UnknownKind(u8),
    #[error("expected a {expected:?} artifact, found {found:?}")]
    WrongKind { expected: ArtifactKind, found: ArtifactKind },
    #[error("payload: {0}")]
    Payload(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ArtifactError {
    pub fn code(&self) -> &'static str {
        match self {
            ArtifactError::BadMagic(_) => "bad-magic",
            ArtifactError::UnsupportedVersion(_) => "unsupported-version",
            ArtifactError::Truncated => "truncated",
            ArtifactError::DigestMismatch => "digest-mismatch",
            ArtifactError::UnknownKind(_) => "unknown-kind",
            ArtifactError::WrongKind { .. } => "wrong-kind",
            ArtifactError::Payload(_) => "payload",
            ArtifactError::Io(_) => "io",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArtifactKind {
    Denoiser,
    Oracle,
    RunManifest,
}

impl ArtifactKind {
    fn byte(self) -> u8 {
        match self {
            ArtifactKind::Denoiser => 0,
            ArtifactKind::Oracle => 1,
            ArtifactKind::RunManifest => 2,
        }
    }

    fn from_byte(b: u8) -> Result<Self, ArtifactError> {
        match b {
            0 => Ok(ArtifactKind::Denoiser),
            1 => Ok(ArtifactKind::Oracle),
            2 => Ok(ArtifactKind::RunManifest),
            other => Err(ArtifactError::UnknownKind(other)),
        }
    }
}

/// A typed payload plus the metadata needed to persist it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArtifactBundle {
    pub kind: ArtifactKind,
    pub version: u32,
    pub payload: Vec<u8>,
}

impl ArtifactBundle {
    pub fn new(kind: ArtifactKind, payload: Vec<u8>) -> Self {
        ArtifactBundle {
            kind,
            version: ARTIFACT_VERSION,
            payload,
        }
    }

    /// Serialized byte image, digest included.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 + 1 + 8 + self.payload.len() + 32);
        out.extend_from_slice(ARTIFACT_MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.push(self.kind.byte());
        out.extend_from_slice(&(self.payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.payload);
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    /// Digest over header plus payload, hex-encoded. Identifies artifact
    /// content in run manifests.
    pub fn content_digest(&self) -> String {
        let bytes = self.to_bytes();
        hex(&bytes[bytes.len() - 32..])
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ArtifactError> {
        const HEADER: usize = 4 + 4 + 1 + 8;
        if bytes.len() < HEADER + 32 {
            if bytes.len() >= 4 && &bytes[..4] != ARTIFACT_MAGIC {
                let mut m = [0u8; 4];
                m.copy_from_slice(&bytes[..4]);
                return Err(ArtifactError::BadMagic(m));
            }
            return Err(ArtifactError::Truncated);
        }
        if &bytes[..4] != ARTIFACT_MAGIC {
            let mut m = [0u8; 4];
            m.copy_from_slice(&bytes[..4]);
            return Err(ArtifactError::BadMagic(m));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version == 0 || version > ARTIFACT_VERSION {
            return Err(ArtifactError::UnsupportedVersion(version));
        }
        let kind = ArtifactKind::from_byte(bytes[8])?;
        let payload_len = u64::from_le_bytes(bytes[9..17].try_into().unwrap()) as usize;
        if bytes.len() != HEADER + payload_len + 32 {
            return Err(ArtifactError::Truncated);
        }
        let (content, stored) = bytes.split_at(HEADER + payload_len);
        let digest = Sha256::digest(content);
        if digest.as_slice() != stored {
            return Err(ArtifactError::DigestMismatch);
        }
        Ok(ArtifactBundle {
            kind,
            version,
            payload: content[HEADER..].to_vec(),
        })
    }
}

/// Persist a bundle to disk.
pub fn save_artifact(bundle: &ArtifactBundle, path: impl AsRef<Path>) -> Result<(), ArtifactError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bundle.to_bytes())?;
    Ok(())
}

/// Load and verify a bundle from disk.
pub fn load_artifact(path: impl AsRef<Path>) -> Result<ArtifactBundle, ArtifactError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    ArtifactBundle::from_bytes(&bytes)
}

/// Serialize `value` as a JSON payload of the given kind and save it.
pub fn save_json<T: Serialize>(
    kind: ArtifactKind,
    value: &T,
    path: impl AsRef<Path>,
) -> Result<(), ArtifactError> {
    let payload = serde_json::to_vec(value)?;
    save_artifact(&ArtifactBundle::new(kind, payload), path)
}

/// Load an artifact, check its kind, and deserialize the payload.
pub fn load_json<T: DeserializeOwned>(
    expected: ArtifactKind,
    path: impl AsRef<Path>,
) -> Result<T, ArtifactError> {
    let bundle = load_artifact(path)?;
    if bundle.kind != expected {
        return Err(ArtifactError::WrongKind {
            expected,
            found: bundle.kind,
        });
    }
    Ok(serde_json::from_slice(&bundle.payload)?)
}

/// Hex-encoded SHA-256 of arbitrary bytes; used for manifest digests.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Hex-encoded SHA-256 of a file's content.
pub fn file_sha256_hex(path: impl AsRef<Path>) -> Result<String, std::io::Error> {
    let mut f = std::fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex(&hasher.finalize()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
