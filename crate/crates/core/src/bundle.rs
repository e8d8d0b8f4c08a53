//! Snapshot bundles: a directory holding the three canonical record files
//! and a manifest with their content hashes.

use crate::config::RetrievalConfig;
use crate::store::{self, IngestOptions, MemorySnapshot, StoreError};
use crate::vector::{Embedder, EmbeddingSpec, HashEmbedder};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

pub const CAPTIONS_FILE: &str = "captions.jsonl";
pub const PRIMITIVES_FILE: &str = "primitives.jsonl";
pub const KEYFRAMES_FILE: &str = "keyframes.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BUNDLE_FORMAT: &str = "star-snapshot-1";

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("bad manifest: {0}")]
    Manifest(String),
    #[error("{file} does not match its manifest hash")]
    HashMismatch { file: String },
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub sha256: String,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub horizon: f64,
    pub embedding: EmbeddingSpec,
    pub files: BTreeMap<String, FileEntry>,
    /// Effective config at build time.
    pub config: RetrievalConfig,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn io_err(path: &Path, e: std::io::Error) -> BundleError {
    BundleError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Writes `snapshot` into `dir`, creating it if needed.
pub fn write_bundle(snapshot: &MemorySnapshot, config: &RetrievalConfig, dir: &Path) -> Result<Manifest, BundleError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let bodies = [
        (CAPTIONS_FILE, snapshot.captions_jsonl(), snapshot.captions().len()),
        (PRIMITIVES_FILE, snapshot.primitives_jsonl(), snapshot.primitives().len()),
        (KEYFRAMES_FILE, snapshot.keyframes_jsonl(), snapshot.keyframes().len()),
    ];
    let mut files = BTreeMap::new();
    for (name, body, records) in bodies {
        let path = dir.join(name);
        std::fs::write(&path, &body).map_err(|e| io_err(&path, e))?;
        files.insert(
            name.to_string(),
            FileEntry {
                sha256: sha256_hex(body.as_bytes()),
                records,
            },
        );
    }
    let manifest = Manifest {
        format: BUNDLE_FORMAT.into(),
        horizon: snapshot.horizon(),
        embedding: snapshot.embedding_spec().clone(),
        files,
        config: config.clone(),
    };
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, BundleError> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| BundleError::Manifest(e.to_string()))?;
    if manifest.format != BUNDLE_FORMAT {
        return Err(BundleError::Manifest(format!("unsupported format {:?}", manifest.format)));
    }
    Ok(manifest)
}

/// Loads a bundle, checking every file against the manifest before
/// re-validating the records.
pub fn load_bundle(dir: &Path) -> Result<(MemorySnapshot, Manifest), BundleError> {
    let manifest = read_manifest(dir)?;
    for name in [CAPTIONS_FILE, PRIMITIVES_FILE, KEYFRAMES_FILE] {
        let entry = manifest
            .files
            .get(name)
            .ok_or_else(|| BundleError::Manifest(format!("no entry for {name}")))?;
        let path = dir.join(name);
        let bytes = std::fs::read(&path).map_err(|e| io_err(&path, e))?;
        if sha256_hex(&bytes) != entry.sha256 {
            return Err(BundleError::HashMismatch { file: name.into() });
        }
    }
    let embedder = HashEmbedder::new(manifest.embedding.dimension).map_err(StoreError::from)?;
    let snapshot = store::ingest(
        &dir.join(CAPTIONS_FILE),
        &dir.join(PRIMITIVES_FILE),
        &dir.join(KEYFRAMES_FILE),
        &embedder as &dyn Embedder,
        IngestOptions {
            strict: true,
            horizon: Some(manifest.horizon),
        },
    )?;
    if snapshot.embedding_spec() != &manifest.embedding {
        return Err(BundleError::Manifest(format!(
            "records embed as {:?}, manifest says {:?}",
            snapshot.embedding_spec(),
            manifest.embedding
        )));
    }
    Ok((snapshot, manifest))
}
