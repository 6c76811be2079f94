//! File formats and dataset layout.

mod dataset;
mod pfm;
mod ply;
mod pnm;
mod trajectory;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::geometry::GeometryError;
use crate::synth::SceneError;

pub use dataset::{generate_synthetic, write_dataset, Dataset};
pub use pfm::{decode_pfm, encode_pfm, read_depth, write_depth};
pub use ply::{decode_ply, encode_ply, read_ply, write_ply};
pub use pnm::{read_image, read_pgm, write_image, write_pgm};
pub use trajectory::{format_trajectory, parse_trajectory, read_trajectory, write_trajectory};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("malformed file: {0}")]
    Format(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>, IoError> {
    std::fs::read(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    std::fs::write(path, bytes).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn create_dir(path: &Path) -> Result<(), IoError> {
    std::fs::create_dir_all(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Splits off the first `count` whitespace-separated header tokens, skipping
/// `#` comments, and returns them with the remaining bytes. Exactly one
/// whitespace byte separates the last token from the payload.
pub(crate) fn header_tokens(bytes: &[u8], count: usize) -> Result<(Vec<String>, &[u8]), IoError> {
    let mut tokens = Vec::with_capacity(count);
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(IoError::Format("truncated header".into()));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    if i >= bytes.len() {
        return Err(IoError::Format("header not terminated".into()));
    }
    Ok((tokens, &bytes[i + 1..]))
}
