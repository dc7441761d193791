//! Emulation, calibration and surrogate modeling of 3x3 Mach-Zehnder
//! interferometer mesh optical matrix multipliers.
//!
//! The crate covers the whole offline-training loop: a synthetic chip with
//! thermal crosstalk and dispersion stands in for measurements, analytic and
//! neural forward models are fitted to voltage→weight data, evaluated, and
//! inverted to program target matrices. A small task simulator relates model
//! error to the accuracy of a neural network whose first layer runs on the
//! mesh.

pub mod analytic;
pub mod dataset;
pub mod emulator;
pub mod error;
pub mod eval;
pub mod mesh;
pub mod model;
pub mod nn;
pub mod numopt;
pub mod program;
pub mod task;
pub mod wavelength;

pub use error::{Error, Result};

use std::path::Path;

use sha2::{Digest, Sha256};

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::json(path.display().to_string(), e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}
