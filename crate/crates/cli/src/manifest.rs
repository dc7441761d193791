//! Per-run provenance: resolved config, its hash, seeds, tool version and
//! the SHA-256 of every input and output file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;

pub const MANIFEST_FORMAT: &str = "omm-manifest/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    /// Path relative to the run directory when inside it.
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub command: String,
    pub tool_version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub config: RunConfig,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn digest(cfg: &RunConfig, path: &Path) -> Result<FileDigest, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let shown = path.strip_prefix(&cfg.out_dir).unwrap_or(path);
    Ok(FileDigest {
        path: shown.to_string_lossy().replace('\\', "/"),
        sha256: omm_core::sha256_hex(&bytes),
    })
}

/// Writes `manifests/<name>.json` under the run directory and returns its
/// path.
pub fn write_manifest(
    cfg: &RunConfig,
    command: &str,
    name: &str,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
) -> Result<PathBuf, CliError> {
    let m = Manifest {
        format: MANIFEST_FORMAT.into(),
        command: command.into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config_sha256: cfg.hash(),
        seed: cfg.seed,
        config: cfg.clone(),
        inputs: inputs.iter().map(|p| digest(cfg, p)).collect::<Result<_, _>>()?,
        outputs: outputs.iter().map(|p| digest(cfg, p)).collect::<Result<_, _>>()?,
    };
    let path = cfg.out_dir.join("manifests").join(format!("{name}.json"));
    crate::commands::ensure_parent(&path)?;
    omm_core::write_json(&path, &m)?;
    Ok(path)
}
