//! Retrieval configuration shared by the pipeline, the agent loop, the
//! benchmark harness and the command line.

use crate::vector::{self, Embedder, HashEmbedder, VectorError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("cannot read config {path}: {message}")]
    Io { path: String, message: String },
    #[error("cannot parse config: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    /// Caption similarity threshold for the pool.
    pub tau: f64,
    /// Null-task floor on cue scores.
    pub alpha: f64,
    /// Number of cue scores kept per primitive.
    pub gamma_topk: usize,
    /// Budget on the fractional information loss of a single merge.
    pub delta_bar: f64,
    /// Number of text evidence entries kept.
    #[serde(rename = "K")]
    pub k: usize,
    /// Centroid distance (meters) under which two primitives are adjacent.
    pub r_adj: f64,
    /// Also connect primitives that appear together in one caption.
    pub cooccurrence_edges: bool,
    pub max_rounds: usize,
    /// Tolerance (seconds) when resolving keyframes.
    pub keyframe_tol: f64,
    /// How much round 2 lowers `tau`.
    pub tau_relax: f64,
    pub embedder: String,
    pub embedding_dim: usize,
    pub external_generator_url: Option<String>,
    pub generator_timeout_s: f64,
    /// Extra cue expansions for round 2, merged over the built-in table.
    pub synonyms: BTreeMap<String, Vec<String>>,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            tau: 0.55,
            alpha: 0.1,
            gamma_topk: 2,
            delta_bar: 0.05,
            k: 6,
            r_adj: 3.0,
            cooccurrence_edges: true,
            max_rounds: 3,
            keyframe_tol: 1.0,
            tau_relax: 0.1,
            embedder: vector::REF_HASH_SCHEME.to_string(),
            embedding_dim: vector::DEFAULT_DIMENSION,
            external_generator_url: None,
            generator_timeout_s: 30.0,
            synonyms: BTreeMap::new(),
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau must lie in [0, 1], got {}", self.tau));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.gamma_topk == 0 {
            return bad("gamma_topk must be at least 1".into());
        }
        if !(self.delta_bar >= 0.0) {
            return bad(format!("delta_bar must be non-negative, got {}", self.delta_bar));
        }
        if self.k == 0 {
            return bad("K must be at least 1".into());
        }
        if !(self.r_adj > 0.0 && self.r_adj.is_finite()) {
            return bad(format!("r_adj must be positive, got {}", self.r_adj));
        }
        if !(1..=3).contains(&self.max_rounds) {
            return bad(format!("max_rounds must be 1, 2 or 3, got {}", self.max_rounds));
        }
        if !(self.keyframe_tol >= 0.0) {
            return bad(format!("keyframe_tol must be non-negative, got {}", self.keyframe_tol));
        }
        if !(self.tau_relax >= 0.0 && self.tau_relax <= 1.0) {
            return bad(format!("tau_relax must lie in [0, 1], got {}", self.tau_relax));
        }
        if self.embedding_dim < 2 {
            return bad("embedding_dim must be at least 2".into());
        }
        if !(self.generator_timeout_s > 0.0) {
            return bad("generator_timeout_s must be positive".into());
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml_str(&text)
    }

    /// The reference embedder for this config. Other schemes cannot embed
    /// text locally.
    pub fn embedder(&self) -> Result<Box<dyn Embedder>, VectorError> {
        if self.embedder == vector::REF_HASH_SCHEME {
            Ok(Box::new(HashEmbedder::new(self.embedding_dim)?))
        } else {
            Err(VectorError::Unsupported(format!(
                "no local embedder for scheme {:?}",
                self.embedder
            )))
        }
    }

    /// Built-in expansions overlaid with the configured ones.
    pub fn synonym_table(&self) -> BTreeMap<String, Vec<String>> {
        let mut table = default_synonyms();
        for (k, v) in &self.synonyms {
            table.insert(k.clone(), v.clone());
        }
        table
    }
}

pub fn default_synonyms() -> BTreeMap<String, Vec<String>> {
    let pairs: &[(&str, &[&str])] = &[
        ("pole", &["post", "pillar"]),
        ("post", &["pole"]),
        ("pillar", &["pole"]),
        ("box", &["crate", "carton", "package"]),
        ("crate", &["box"]),
        ("carton", &["box"]),
        ("package", &["box", "parcel"]),
        ("parcel", &["package", "box"]),
        ("forklift", &["lift truck", "pallet jack"]),
        ("pallet", &["skid"]),
        ("skid", &["pallet"]),
        ("shelf", &["rack", "shelving"]),
        ("rack", &["shelf"]),
        ("sign", &["label", "placard"]),
        ("label", &["sign", "tag"]),
        ("cone", &["pylon"]),
        ("extinguisher", &["fire extinguisher"]),
        ("charger", &["charging station"]),
        ("door", &["gate", "entrance"]),
        ("trash", &["garbage", "bin"]),
        ("bin", &["container"]),
        ("police", &["security"]),
        ("call", &["help"]),
        ("help", &["call", "emergency"]),
    ];
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.iter().map(|s| s.to_string()).collect()))
        .collect()
}
