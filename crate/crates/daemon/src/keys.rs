//! Hex-encoded secret key files.

use std::path::Path;

use lluad_core::mixnet::Scalar;
use lluad_core::protocol::registry::{decode_hex, encode_hex};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KeyError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}: not a 64-digit hex secret key")]
    Malformed(String),
}

pub fn load_secret(path: &Path) -> Result<Scalar, KeyError> {
    let text =
        std::fs::read_to_string(path).map_err(|source| KeyError::Io { path: path.display().to_string(), source })?;
    decode_hex::<32>(text.trim())
        .and_then(|b| Scalar::from_bytes(b).ok())
        .ok_or_else(|| KeyError::Malformed(path.display().to_string()))
}

pub fn save_secret(path: &Path, secret: &Scalar) -> Result<(), KeyError> {
    std::fs::write(path, format!("{}\n", encode_hex(&secret.to_bytes())))
        .map_err(|source| KeyError::Io { path: path.display().to_string(), source })
}

pub fn generate_secret() -> Scalar {
    Scalar::random(&mut rand::rng())
}
