//! Metadata sidecars: every primary artifact `X` gets an `X.meta.json`
//! recording the tool version, the full stage configuration, the seed and
//! the SHA-256 digests of the stage inputs. Sidecars carry no timestamps,
//! so re-running a stage reproduces them byte for byte.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Serialize)]
struct InputDigest {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    tool: &'a str,
    version: &'a str,
    command: &'a str,
    seed: u64,
    config: serde_json::Value,
    inputs: Vec<InputDigest>,
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes =
        std::fs::read(path).with_context(|| format!("cannot read input {}", path.display()))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Writes `<artifact>.meta.json` next to the artifact.
pub fn write_sidecar(
    artifact: &Path,
    command: &str,
    seed: u64,
    config: serde_json::Value,
    inputs: &[PathBuf],
) -> Result<()> {
    let digests = inputs
        .iter()
        .map(|p| {
            Ok(InputDigest {
                path: p.display().to_string(),
                sha256: file_digest(p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let sidecar = Sidecar {
        tool: "lithoscan",
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed,
        config,
        inputs: digests,
    };
    let mut name = artifact
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "artifact".into());
    name.push_str(".meta.json");
    let path = artifact.with_file_name(name);
    let json = serde_json::to_string_pretty(&sidecar)?;
    std::fs::write(&path, json)
        .with_context(|| format!("cannot write sidecar {}", path.display()))?;
    Ok(())
}
