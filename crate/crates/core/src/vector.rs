//! Text embedding and an exact flat vector index.
//!
//! The index is a plain row-major matrix scanned linearly. Scores are the
//! clamped cosine `max(0, u·v)` of unit vectors, and results are always
//! ordered by score descending with ties broken by ascending record id, so
//! every search is reproducible bit for bit.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::HashSet;
use thiserror::Error;

pub const REF_HASH_SCHEME: &str = "ref-hash-v1";
pub const EXTERNAL_SCHEME: &str = "external";
pub const DEFAULT_DIMENSION: usize = 64;

/// Tolerance on the L2 norm of stored vectors.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// Dot products this close to 1 are reported as exactly 1, so identical
/// embeddings always satisfy a threshold of 1.
const UNIT_SNAP: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VectorError {
    #[error("text is empty after normalization")]
    EmptyText,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid embedding spec: {0}")]
    InvalidSpec(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("duplicate record id {0} in index")]
    DuplicateId(u64),
    #[error("embedder `{0}` cannot embed text at query time")]
    Unsupported(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingSpec {
    pub dimension: usize,
    pub scheme_id: String,
}

impl EmbeddingSpec {
    pub fn new(dimension: usize, scheme_id: impl Into<String>) -> Result<Self, VectorError> {
        if dimension < 2 {
            return Err(VectorError::InvalidSpec(format!(
                "dimension must be at least 2, got {dimension}"
            )));
        }
        Ok(Self {
            dimension,
            scheme_id: scheme_id.into(),
        })
    }

    pub fn reference(dimension: usize) -> Result<Self, VectorError> {
        Self::new(dimension, REF_HASH_SCHEME)
    }
}

/// Maps text to unit-norm vectors.
pub trait Embedder: Send + Sync {
    fn spec(&self) -> &EmbeddingSpec;
    fn embed(&self, text: &str) -> Result<Vec<f64>, VectorError>;
}

/// Deterministic signed feature-hashing bag-of-words embedder.
///
/// Tokens are case folded and split on anything that is not alphanumeric.
/// Each token adds ±1 to one of `d` bins chosen by a 64-bit hash, and the
/// result is L2 normalized.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    spec: EmbeddingSpec,
}

impl HashEmbedder {
    pub fn new(dimension: usize) -> Result<Self, VectorError> {
        Ok(Self {
            spec: EmbeddingSpec::reference(dimension)?,
        })
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIMENSION).expect("default dimension is valid")
    }
}

impl Embedder for HashEmbedder {
    fn spec(&self) -> &EmbeddingSpec {
        &self.spec
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, VectorError> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(VectorError::EmptyText);
        }
        let d = self.spec.dimension;
        let mut v = vec![0.0; d];
        for token in &tokens {
            let (bin, sign) = hash_bin(token.as_bytes(), 0, d);
            v[bin] += sign;
        }
        if v.iter().all(|x| *x == 0.0) {
            // every token cancelled against another; fall back to one
            // feature for the whole token sequence
            let joined = tokens.join(" ");
            let (bin, sign) = hash_bin(joined.as_bytes(), 1, d);
            v[bin] = sign;
        }
        normalize(&mut v);
        Ok(v)
    }
}

/// An embedder for snapshots whose vectors were produced elsewhere. It
/// knows the dimension but cannot embed new text.
#[derive(Debug, Clone)]
pub struct ExternalEmbedder {
    spec: EmbeddingSpec,
}

impl ExternalEmbedder {
    pub fn new(dimension: usize) -> Result<Self, VectorError> {
        Ok(Self {
            spec: EmbeddingSpec::new(dimension, EXTERNAL_SCHEME)?,
        })
    }
}

impl Embedder for ExternalEmbedder {
    fn spec(&self) -> &EmbeddingSpec {
        &self.spec
    }

    fn embed(&self, _text: &str) -> Result<Vec<f64>, VectorError> {
        Err(VectorError::Unsupported(EXTERNAL_SCHEME.to_string()))
    }
}

/// Case-folded alphanumeric tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

fn fnv1a(bytes: &[u8], seed: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    // splitmix64 finalizer
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

fn hash_bin(bytes: &[u8], seed: u64, d: usize) -> (usize, f64) {
    let h = fnv1a(bytes, seed);
    let bin = (h % d as u64) as usize;
    let sign = if (h >> 63) == 1 { -1.0 } else { 1.0 };
    (bin, sign)
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn normalize(v: &mut [f64]) {
    let n = l2_norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

pub fn is_unit(v: &[f64]) -> bool {
    (l2_norm(v) - 1.0).abs() <= UNIT_NORM_TOL
}

fn clamp_score(dot: f64) -> f64 {
    if dot >= 1.0 - UNIT_SNAP {
        1.0
    } else if dot <= 0.0 {
        0.0
    } else {
        dot
    }
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Normalized similarity of two unit vectors: `max(0, u·v)`, in `[0, 1]`.
pub fn similarity(u: &[f64], v: &[f64]) -> Result<f64, VectorError> {
    if u.len() != v.len() {
        return Err(VectorError::DimensionMismatch {
            expected: u.len(),
            found: v.len(),
        });
    }
    Ok(clamp_score(dot(u, v)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub record_id: u64,
    pub score: f64,
}

/// Score descending, then record id ascending.
pub fn hit_order(a: &SearchHit, b: &SearchHit) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then(a.record_id.cmp(&b.record_id))
}

/// Time and position metadata used by search filters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntryMeta {
    pub t_start: f64,
    pub t_end: f64,
    pub position: [f64; 3],
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SearchFilter {
    /// Closed interval that must intersect the entry's `[t_start, t_end]`.
    pub time: Option<(f64, f64)>,
    /// Center and radius of a ball that must contain the entry's position.
    pub position: Option<([f64; 3], f64)>,
}

impl SearchFilter {
    pub fn none() -> Self {
        Self::default()
    }

    fn is_empty(&self) -> bool {
        self.time.is_none() && self.position.is_none()
    }

    fn accepts(&self, meta: Option<&EntryMeta>) -> bool {
        if self.is_empty() {
            return true;
        }
        let Some(meta) = meta else {
            return false;
        };
        if let Some((lo, hi)) = self.time {
            if meta.t_start > hi || meta.t_end < lo {
                return false;
            }
        }
        if let Some((center, radius)) = self.position {
            let d2: f64 = center
                .iter()
                .zip(meta.position.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d2.sqrt() > radius {
                return false;
            }
        }
        true
    }
}

/// Exact in-memory index over unit vectors.
#[derive(Debug, Clone)]
pub struct FlatIndex {
    dimension: usize,
    ids: Vec<u64>,
    metas: Vec<Option<EntryMeta>>,
    data: Vec<f64>,
    seen: HashSet<u64>,
}

impl FlatIndex {
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension,
            ids: Vec::new(),
            metas: Vec::new(),
            data: Vec::new(),
            seen: HashSet::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn insert(
        &mut self,
        id: u64,
        vector: &[f64],
        meta: Option<EntryMeta>,
    ) -> Result<(), VectorError> {
        if vector.len() != self.dimension {
            return Err(VectorError::DimensionMismatch {
                expected: self.dimension,
                found: vector.len(),
            });
        }
        if !self.seen.insert(id) {
            return Err(VectorError::DuplicateId(id));
        }
        self.ids.push(id);
        self.metas.push(meta);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    fn check_query(&self, query: &[f64]) -> Result<(), VectorError> {
        if query.len() != self.dimension {
            return Err(VectorError::DimensionMismatch {
                expected: self.dimension,
                found: query.len(),
            });
        }
        Ok(())
    }

    fn scored(&self, query: &[f64]) -> impl Iterator<Item = (usize, SearchHit)> + '_ {
        let query = query.to_vec();
        self.data
            .chunks_exact(self.dimension)
            .enumerate()
            .map(move |(i, row)| {
                (
                    i,
                    SearchHit {
                        record_id: self.ids[i],
                        score: clamp_score(dot(row, &query)),
                    },
                )
            })
    }

    /// All records with score `>= tau` that pass `filter`.
    pub fn search_above_threshold(
        &self,
        query: &[f64],
        tau: f64,
        filter: &SearchFilter,
    ) -> Result<Vec<SearchHit>, VectorError> {
        self.check_query(query)?;
        if !(0.0..=1.0).contains(&tau) {
            return Err(VectorError::InvalidArgument(format!(
                "threshold {tau} outside [0, 1]"
            )));
        }
        let mut hits: Vec<SearchHit> = self
            .scored(query)
            .filter(|(i, hit)| hit.score >= tau && filter.accepts(self.metas[*i].as_ref()))
            .map(|(_, hit)| hit)
            .collect();
        hits.sort_by(hit_order);
        Ok(hits)
    }

    /// The `k` best records.
    pub fn search_topk(&self, query: &[f64], k: usize) -> Result<Vec<SearchHit>, VectorError> {
        self.check_query(query)?;
        if k == 0 {
            return Err(VectorError::InvalidArgument("k must be at least 1".into()));
        }
        let mut hits: Vec<SearchHit> = self.scored(query).map(|(_, hit)| hit).collect();
        if k < hits.len() {
            hits.select_nth_unstable_by(k - 1, hit_order);
            hits.truncate(k);
        }
        hits.sort_by(hit_order);
        Ok(hits)
    }
}
