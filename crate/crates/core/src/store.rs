//! The three memory stores (clip captions, 3D primitives, keyframes) and the
//! sealed snapshot that serves time, position and id lookups.
//!
//! Records are staged in a [`SnapshotBuilder`] by a single writer and then
//! sealed. Sealing validates every record invariant and every cross
//! reference, embeds any record that arrived without a vector, and sorts the
//! stores by time. A sealed [`MemorySnapshot`] is immutable.

use crate::canonical::{self, FloatStyle};
use crate::vector::{self, Embedder, EmbeddingSpec, VectorError, EXTERNAL_SCHEME};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::BufRead;
use std::path::Path;
use thiserror::Error;

pub type Vec3 = [f64; 3];

/// Which store a record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    Caption,
    Primitive,
    Keyframe,
}

impl fmt::Display for RecordKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RecordKind::Caption => "caption",
            RecordKind::Primitive => "primitive",
            RecordKind::Keyframe => "keyframe",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StoreError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("{source_name}:{line}: malformed record: {reason}")]
    MalformedRecord {
        source_name: String,
        line: usize,
        reason: String,
    },
    #[error("caption {caption_id} references unknown primitive {primitive_id}")]
    DanglingReference { caption_id: u64, primitive_id: u64 },
    #[error("keyframe at {timestamp}s references unknown primitive {primitive_id}")]
    DanglingKeyframeReference { timestamp: f64, primitive_id: u64 },
    #[error("duplicate {kind} id {id}")]
    DuplicateId { kind: RecordKind, id: u64 },
    #[error("duplicate keyframe timestamp {0}s")]
    DuplicateTimestamp(f64),
    #[error("embedding scheme mismatch: {0}")]
    SchemeMismatch(String),
    #[error("invalid time range [{lo}, {hi}]")]
    InvalidRange { lo: f64, hi: f64 },
    #[error("horizon {horizon}s is shorter than the recorded data ({needed}s)")]
    HorizonTooShort { horizon: f64, needed: f64 },
    #[error(transparent)]
    Vector(#[from] VectorError),
}

/// Caption of one clip of the robot's video stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub id: u64,
    pub t_start: f64,
    pub t_end: f64,
    /// `[x, y, z, yaw]` at the clip midpoint, meters and radians.
    pub pose: [f64; 4],
    pub text: String,
    pub embedding: Vec<f64>,
    pub primitive_ids: Vec<u64>,
}

impl CaptionRecord {
    pub fn position(&self) -> Vec3 {
        [self.pose[0], self.pose[1], self.pose[2]]
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.t_start + self.t_end)
    }
}

/// Axis-aligned box, `[min, max]` corners in meters.
pub type BBox = [Vec3; 2];

pub fn bbox_center(bbox: &BBox) -> Vec3 {
    [
        0.5 * (bbox[0][0] + bbox[1][0]),
        0.5 * (bbox[0][1] + bbox[1][1]),
        0.5 * (bbox[0][2] + bbox[1][2]),
    ]
}

/// Persistent 3D object fragment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub id: u64,
    pub centroid: Vec3,
    pub bbox: BBox,
    pub caption: String,
    pub feature: Vec<f64>,
    pub detections: Vec<f64>,
}

impl Primitive {
    pub fn bbox_center(&self) -> Vec3 {
        bbox_center(&self.bbox)
    }

    pub fn last_detection(&self) -> Option<f64> {
        self.detections.last().copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeRecord {
    pub timestamp: f64,
    pub image_ref: String,
    pub visible_primitive_ids: Vec<u64>,
    #[serde(default)]
    pub annotation: Option<String>,
}

/// Caption as it appears in `captions.jsonl`; the embedding is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionInput {
    pub id: u64,
    pub t_start: f64,
    pub t_end: f64,
    pub pose: [f64; 4],
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
    pub primitive_ids: Vec<u64>,
}

/// Primitive as it appears in `primitives.jsonl`; the feature is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveInput {
    pub id: u64,
    pub centroid: Vec3,
    pub bbox: BBox,
    pub caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature: Option<Vec<f64>>,
    pub detections: Vec<f64>,
}

const CAPTION_FIELDS: &[&str] = &[
    "id",
    "t_start",
    "t_end",
    "pose",
    "text",
    "embedding",
    "primitive_ids",
];
const PRIMITIVE_FIELDS: &[&str] = &["id", "centroid", "bbox", "caption", "feature", "detections"];
const KEYFRAME_FIELDS: &[&str] = &["timestamp", "image_ref", "visible_primitive_ids", "annotation"];

/// Where a staged record came from, for diagnostics.
#[derive(Debug, Clone)]
struct Origin {
    source: String,
    line: usize,
}

impl Origin {
    fn malformed(&self, reason: impl Into<String>) -> StoreError {
        StoreError::MalformedRecord {
            source_name: self.source.clone(),
            line: self.line,
            reason: reason.into(),
        }
    }
}

/// Parses one line-delimited record file. Blank lines are skipped. With
/// `strict`, fields outside the documented schema are rejected.
pub fn parse_records<T: serde::de::DeserializeOwned>(
    reader: impl BufRead,
    source: &str,
    strict: bool,
    kind: RecordKind,
) -> Result<Vec<(usize, T)>, StoreError> {
    let allowed = match kind {
        RecordKind::Caption => CAPTION_FIELDS,
        RecordKind::Primitive => PRIMITIVE_FIELDS,
        RecordKind::Keyframe => KEYFRAME_FIELDS,
    };
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| StoreError::Io {
            path: source.to_string(),
            message: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let origin = Origin {
            source: source.to_string(),
            line: line_no,
        };
        let value: Value = serde_json::from_str(trimmed)
            .map_err(|e| origin.malformed(format!("invalid JSON: {e}")))?;
        let Value::Object(map) = &value else {
            return Err(origin.malformed("record must be a JSON object"));
        };
        if strict {
            if let Some(unknown) = map.keys().find(|k| !allowed.contains(&k.as_str())) {
                return Err(origin.malformed(format!("unknown field `{unknown}`")));
            }
        }
        let record: T = serde_json::from_value(value).map_err(|e| origin.malformed(e.to_string()))?;
        out.push((line_no, record));
    }
    Ok(out)
}

fn read_file<T: serde::de::DeserializeOwned>(
    path: &Path,
    strict: bool,
    kind: RecordKind,
) -> Result<Vec<(usize, T)>, StoreError> {
    let file = std::fs::File::open(path).map_err(|e| StoreError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    parse_records(std::io::BufReader::new(file), &name, strict, kind)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IngestOptions {
    /// Reject unknown fields instead of ignoring them.
    pub strict: bool,
    /// Declared memory duration; defaults to the latest recorded time.
    pub horizon: Option<f64>,
}

/// Reads the three record files and seals them into a snapshot.
pub fn ingest(
    caption_file: &Path,
    primitive_file: &Path,
    keyframe_file: &Path,
    embedder: &dyn Embedder,
    options: IngestOptions,
) -> Result<MemorySnapshot, StoreError> {
    let mut builder = SnapshotBuilder::new();
    let source = |p: &Path| {
        p.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default()
    };
    for (line, c) in read_file::<CaptionInput>(caption_file, options.strict, RecordKind::Caption)? {
        builder.push_caption(c, source(caption_file), line);
    }
    for (line, p) in read_file::<PrimitiveInput>(primitive_file, options.strict, RecordKind::Primitive)? {
        builder.push_primitive(p, source(primitive_file), line);
    }
    for (line, k) in read_file::<KeyframeRecord>(keyframe_file, options.strict, RecordKind::Keyframe)? {
        builder.push_keyframe(k, source(keyframe_file), line);
    }
    if let Some(h) = options.horizon {
        builder.horizon(h);
    }
    builder.seal(embedder)
}

/// Single-writer staging area for snapshot records.
#[derive(Debug, Default)]
pub struct SnapshotBuilder {
    captions: Vec<(Origin, CaptionInput)>,
    primitives: Vec<(Origin, PrimitiveInput)>,
    keyframes: Vec<(Origin, KeyframeRecord)>,
    horizon: Option<f64>,
}

impl SnapshotBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_caption(&mut self, caption: CaptionInput) -> &mut Self {
        let line = self.captions.len() + 1;
        self.push_caption(caption, "<captions>".into(), line);
        self
    }

    pub fn add_primitive(&mut self, primitive: PrimitiveInput) -> &mut Self {
        let line = self.primitives.len() + 1;
        self.push_primitive(primitive, "<primitives>".into(), line);
        self
    }

    pub fn add_keyframe(&mut self, keyframe: KeyframeRecord) -> &mut Self {
        let line = self.keyframes.len() + 1;
        self.push_keyframe(keyframe, "<keyframes>".into(), line);
        self
    }

    pub fn horizon(&mut self, horizon: f64) -> &mut Self {
        self.horizon = Some(horizon);
        self
    }

    fn push_caption(&mut self, c: CaptionInput, source: String, line: usize) {
        self.captions.push((Origin { source, line }, c));
    }

    fn push_primitive(&mut self, p: PrimitiveInput, source: String, line: usize) {
        self.primitives.push((Origin { source, line }, p));
    }

    fn push_keyframe(&mut self, k: KeyframeRecord, source: String, line: usize) {
        self.keyframes.push((Origin { source, line }, k));
    }

    /// Validates everything and produces the immutable snapshot.
    ///
    /// Records without a vector are embedded with `embedder`. Supplied
    /// vectors are kept as they are; if they differ from what `embedder`
    /// would produce they are treated as an external scheme, and mixing an
    /// external scheme with computed vectors is a [`StoreError::SchemeMismatch`].
    pub fn seal(self, embedder: &dyn Embedder) -> Result<MemorySnapshot, StoreError> {
        let mut vectors = VectorResolver::new(embedder);

        let mut primitives = BTreeMap::new();
        for (origin, p) in self.primitives {
            validate_primitive(&origin, &p)?;
            let feature = vectors.resolve(&origin, &p.caption, p.feature)?;
            let record = Primitive {
                id: p.id,
                centroid: p.centroid,
                bbox: p.bbox,
                caption: p.caption,
                feature,
                detections: p.detections,
            };
            if primitives.insert(record.id, record).is_some() {
                return Err(StoreError::DuplicateId {
                    kind: RecordKind::Primitive,
                    id: p.id,
                });
            }
        }

        let mut seen_captions = BTreeSet::new();
        let mut captions = Vec::with_capacity(self.captions.len());
        for (origin, c) in self.captions {
            validate_caption(&origin, &c)?;
            if !seen_captions.insert(c.id) {
                return Err(StoreError::DuplicateId {
                    kind: RecordKind::Caption,
                    id: c.id,
                });
            }
            if let Some(missing) = c.primitive_ids.iter().find(|id| !primitives.contains_key(id)) {
                return Err(StoreError::DanglingReference {
                    caption_id: c.id,
                    primitive_id: *missing,
                });
            }
            let embedding = vectors.resolve(&origin, &c.text, c.embedding)?;
            captions.push(CaptionRecord {
                id: c.id,
                t_start: c.t_start,
                t_end: c.t_end,
                pose: c.pose,
                text: c.text,
                embedding,
                primitive_ids: c.primitive_ids,
            });
        }
        captions.sort_by(|a, b| a.t_start.total_cmp(&b.t_start).then(a.id.cmp(&b.id)));

        let mut keyframes = Vec::with_capacity(self.keyframes.len());
        for (origin, k) in self.keyframes {
            if !k.timestamp.is_finite() {
                return Err(origin.malformed("timestamp must be finite"));
            }
            if let Some(missing) = k
                .visible_primitive_ids
                .iter()
                .find(|id| !primitives.contains_key(id))
            {
                return Err(StoreError::DanglingKeyframeReference {
                    timestamp: k.timestamp,
                    primitive_id: *missing,
                });
            }
            keyframes.push(k);
        }
        keyframes.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        if let Some(w) = keyframes.windows(2).find(|w| w[0].timestamp == w[1].timestamp) {
            return Err(StoreError::DuplicateTimestamp(w[0].timestamp));
        }

        let embedding = vectors.finish()?;

        let needed = captions
            .iter()
            .map(|c| c.t_end)
            .chain(keyframes.iter().map(|k| k.timestamp))
            .chain(primitives.values().filter_map(|p| p.last_detection()))
            .fold(0.0_f64, f64::max);
        let horizon = match self.horizon {
            Some(h) if h < needed => {
                return Err(StoreError::HorizonTooShort { horizon: h, needed })
            }
            Some(h) => h,
            None => needed,
        };

        Ok(MemorySnapshot::from_parts(
            captions, primitives, keyframes, horizon, embedding,
        ))
    }
}

fn finite(values: &[f64]) -> bool {
    values.iter().all(|x| x.is_finite())
}

fn validate_caption(origin: &Origin, c: &CaptionInput) -> Result<(), StoreError> {
    if !finite(&[c.t_start, c.t_end]) || !finite(&c.pose) {
        return Err(origin.malformed("times and pose must be finite"));
    }
    if c.t_start >= c.t_end {
        return Err(origin.malformed(format!(
            "t_start {} must be before t_end {}",
            c.t_start, c.t_end
        )));
    }
    if c.t_start < 0.0 {
        return Err(origin.malformed("t_start must be non-negative"));
    }
    Ok(())
}

fn validate_primitive(origin: &Origin, p: &PrimitiveInput) -> Result<(), StoreError> {
    if !finite(&p.centroid) || !finite(&p.bbox[0]) || !finite(&p.bbox[1]) || !finite(&p.detections)
    {
        return Err(origin.malformed("geometry and detections must be finite"));
    }
    for axis in 0..3 {
        let (lo, hi) = (p.bbox[0][axis], p.bbox[1][axis]);
        if lo > hi {
            return Err(origin.malformed(format!("bbox min exceeds max on axis {axis}")));
        }
        if p.centroid[axis] < lo || p.centroid[axis] > hi {
            return Err(origin.malformed(format!("centroid outside bbox on axis {axis}")));
        }
    }
    if p.detections.windows(2).any(|w| w[0] >= w[1]) {
        return Err(origin.malformed("detections must be strictly increasing"));
    }
    Ok(())
}

/// Tracks which vectors were supplied and which were computed, so a
/// snapshot never mixes embedding schemes.
struct VectorResolver<'a> {
    embedder: &'a dyn Embedder,
    computed: usize,
    supplied: usize,
    supplied_foreign: Option<String>,
    supplied_dim: Option<usize>,
}

impl<'a> VectorResolver<'a> {
    fn new(embedder: &'a dyn Embedder) -> Self {
        Self {
            embedder,
            computed: 0,
            supplied: 0,
            supplied_foreign: None,
            supplied_dim: None,
        }
    }

    fn resolve(
        &mut self,
        origin: &Origin,
        text: &str,
        supplied: Option<Vec<f64>>,
    ) -> Result<Vec<f64>, StoreError> {
        match supplied {
            Some(v) => {
                if !finite(&v) || v.len() < 2 {
                    return Err(origin.malformed("vector must be finite with at least 2 entries"));
                }
                if !vector::is_unit(&v) {
                    return Err(origin.malformed(format!(
                        "vector is not unit norm (|v| = {})",
                        vector::l2_norm(&v)
                    )));
                }
                match self.supplied_dim {
                    Some(d) if d != v.len() => {
                        return Err(origin.malformed(format!(
                            "vector dimension {} differs from earlier records ({d})",
                            v.len()
                        )))
                    }
                    _ => self.supplied_dim = Some(v.len()),
                }
                if self.supplied_foreign.is_none() {
                    let matches = self.embedder.embed(text).map(|e| e == v).unwrap_or(false);
                    if !matches {
                        self.supplied_foreign =
                            Some(format!("{}:{}", origin.source, origin.line));
                    }
                }
                self.supplied += 1;
                Ok(v)
            }
            None => {
                self.computed += 1;
                self.embedder
                    .embed(text)
                    .map_err(|e| origin.malformed(format!("cannot embed text: {e}")))
            }
        }
    }

    fn finish(self) -> Result<EmbeddingSpec, StoreError> {
        match (&self.supplied_foreign, self.computed) {
            (None, _) => Ok(self.embedder.spec().clone()),
            (Some(_), 0) => Ok(EmbeddingSpec::new(
                self.supplied_dim.unwrap_or(self.embedder.spec().dimension),
                EXTERNAL_SCHEME,
            )?),
            (Some(at), n) => Err(StoreError::SchemeMismatch(format!(
                "vector at {at} was not produced by `{}`, but {n} record(s) without vectors were embedded with it",
                self.embedder.spec().scheme_id
            ))),
        }
    }
}

/// Result of a keyframe lookup by timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyframeLookup<'a> {
    pub found: Vec<&'a KeyframeRecord>,
    /// Requested timestamps with no keyframe within tolerance.
    pub missing: Vec<f64>,
}

/// Sealed, immutable multimodal memory.
#[derive(Debug, Clone)]
pub struct MemorySnapshot {
    captions: Vec<CaptionRecord>,
    primitives: BTreeMap<u64, Primitive>,
    keyframes: Vec<KeyframeRecord>,
    horizon: f64,
    embedding: EmbeddingSpec,
    caption_pos: HashMap<u64, usize>,
}

impl MemorySnapshot {
    fn from_parts(
        captions: Vec<CaptionRecord>,
        primitives: BTreeMap<u64, Primitive>,
        keyframes: Vec<KeyframeRecord>,
        horizon: f64,
        embedding: EmbeddingSpec,
    ) -> Self {
        let caption_pos = captions.iter().enumerate().map(|(i, c)| (c.id, i)).collect();
        Self {
            captions,
            primitives,
            keyframes,
            horizon,
            embedding,
            caption_pos,
        }
    }

    /// Captions ordered by `t_start`, then id.
    pub fn captions(&self) -> &[CaptionRecord] {
        &self.captions
    }

    pub fn primitives(&self) -> &BTreeMap<u64, Primitive> {
        &self.primitives
    }

    /// Keyframes ordered by timestamp.
    pub fn keyframes(&self) -> &[KeyframeRecord] {
        &self.keyframes
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn embedding_spec(&self) -> &EmbeddingSpec {
        &self.embedding
    }

    pub fn caption(&self, id: u64) -> Option<&CaptionRecord> {
        self.caption_pos.get(&id).map(|i| &self.captions[*i])
    }

    pub fn primitive(&self, id: u64) -> Option<&Primitive> {
        self.primitives.get(&id)
    }

    /// Captions whose closed interval `[t_start, t_end]` meets `[t_lo, t_hi]`.
    pub fn query_by_time(&self, t_lo: f64, t_hi: f64) -> Result<Vec<&CaptionRecord>, StoreError> {
        if t_lo > t_hi || t_lo.is_nan() || t_hi.is_nan() {
            return Err(StoreError::InvalidRange { lo: t_lo, hi: t_hi });
        }
        // captions are sorted by t_start, so everything after this point
        // starts too late
        let end = self.captions.partition_point(|c| c.t_start <= t_hi);
        Ok(self.captions[..end].iter().filter(|c| c.t_end >= t_lo).collect())
    }

    /// Captions whose pose lies within `radius` meters of `center`.
    pub fn query_by_position(&self, center: Vec3, radius: f64) -> Vec<&CaptionRecord> {
        if radius.is_nan() || radius < 0.0 {
            return Vec::new();
        }
        self.captions
            .iter()
            .filter(|c| distance(&c.position(), &center) <= radius)
            .collect()
    }

    /// Nearest keyframe within `tol` seconds of each requested timestamp.
    /// Duplicates are removed and the request order is kept. On an exact
    /// tie between two neighbours the earlier keyframe wins.
    pub fn keyframes_at(&self, timestamps: &[f64], tol: f64) -> KeyframeLookup<'_> {
        let mut found: Vec<&KeyframeRecord> = Vec::new();
        let mut missing = Vec::new();
        for &t in timestamps {
            match self.nearest_keyframe(t) {
                Some(k) if (k.timestamp - t).abs() <= tol => {
                    if !found.iter().any(|f| f.timestamp == k.timestamp) {
                        found.push(k);
                    }
                }
                _ => missing.push(t),
            }
        }
        KeyframeLookup { found, missing }
    }

    fn nearest_keyframe(&self, t: f64) -> Option<&KeyframeRecord> {
        if t.is_nan() {
            return None;
        }
        let i = self.keyframes.partition_point(|k| k.timestamp < t);
        let after = self.keyframes.get(i);
        let before = i.checked_sub(1).and_then(|j| self.keyframes.get(j));
        match (before, after) {
            (Some(b), Some(a)) => {
                if (a.timestamp - t) < (t - b.timestamp) {
                    Some(a)
                } else {
                    Some(b)
                }
            }
            (b, a) => b.or(a),
        }
    }

    /// Canonical line-delimited form of the caption store.
    pub fn captions_jsonl(&self) -> String {
        lines(self.captions.iter())
    }

    pub fn primitives_jsonl(&self) -> String {
        lines(self.primitives.values())
    }

    pub fn keyframes_jsonl(&self) -> String {
        lines(self.keyframes.iter())
    }
}

fn lines<'a, T: Serialize + 'a>(items: impl Iterator<Item = &'a T>) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&canonical::to_canonical_string(item, FloatStyle::RoundTrip));
        out.push('\n');
    }
    out
}

pub fn distance(a: &Vec3, b: &Vec3) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Renders seconds as `mm:ss`.
pub fn format_mmss(seconds: f64) -> String {
    let total = seconds.max(0.0).round() as u64;
    format!("{:02}:{:02}", total / 60, total % 60)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vector::HashEmbedder;

    fn prim(id: u64, x: f64) -> PrimitiveInput {
        PrimitiveInput {
            id,
            centroid: [x, 0.0, 0.5],
            bbox: [[x - 0.5, -0.5, 0.0], [x + 0.5, 0.5, 1.0]],
            caption: format!("object {id}"),
            feature: None,
            detections: vec![1.0, 2.0],
        }
    }

    fn cap(id: u64, t: f64, prims: Vec<u64>) -> CaptionInput {
        CaptionInput {
            id,
            t_start: t,
            t_end: t + 3.0,
            pose: [t, 0.0, 0.0, 0.0],
            text: format!("clip {id}"),
            embedding: None,
            primitive_ids: prims,
        }
    }

    fn kf(t: f64) -> KeyframeRecord {
        KeyframeRecord {
            timestamp: t,
            image_ref: format!("kf/{t}.png"),
            visible_primitive_ids: vec![],
            annotation: None,
        }
    }

    fn minimal() -> MemorySnapshot {
        let mut b = SnapshotBuilder::new();
        b.add_primitive(prim(1, 0.0)).add_primitive(prim(2, 5.0));
        b.add_caption(cap(10, 6.0, vec![1]))
            .add_caption(cap(11, 0.0, vec![1, 2]))
            .add_caption(cap(12, 3.0, vec![2]));
        b.seal(&HashEmbedder::default()).unwrap()
    }

    #[test]
    fn seal_minimal_consistent_input() {
        let s = minimal();
        assert_eq!(s.captions().len(), 3);
        assert_eq!(s.primitives().len(), 2);
        let order: Vec<u64> = s.captions().iter().map(|c| c.id).collect();
        assert_eq!(order, vec![11, 12, 10]);
        assert_eq!(s.horizon(), 9.0);
        assert_eq!(s.embedding_spec().scheme_id, "ref-hash-v1");
    }

    #[test]
    fn dangling_reference() {
        let mut b = SnapshotBuilder::new();
        b.add_primitive(prim(1, 0.0)).add_primitive(prim(2, 1.0));
        b.add_caption(cap(5, 0.0, vec![1, 99]));
        match b.seal(&HashEmbedder::default()) {
            Err(StoreError::DanglingReference {
                caption_id: 5,
                primitive_id: 99,
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_and_timestamps() {
        let mut b = SnapshotBuilder::new();
        b.add_primitive(prim(1, 0.0)).add_primitive(prim(1, 1.0));
        assert!(matches!(
            b.seal(&HashEmbedder::default()),
            Err(StoreError::DuplicateId { kind: RecordKind::Primitive, id: 1 })
        ));
        let mut b = SnapshotBuilder::new();
        b.add_caption(cap(1, 0.0, vec![])).add_caption(cap(1, 3.0, vec![]));
        assert!(matches!(
            b.seal(&HashEmbedder::default()),
            Err(StoreError::DuplicateId { kind: RecordKind::Caption, id: 1 })
        ));
        let mut b = SnapshotBuilder::new();
        b.add_keyframe(kf(1.0)).add_keyframe(kf(1.0));
        assert!(matches!(
            b.seal(&HashEmbedder::default()),
            Err(StoreError::DuplicateTimestamp(_))
        ));
    }

    #[test]
    fn record_invariants_are_checked() {
        let mut bad = prim(1, 0.0);
        bad.centroid = [3.0, 0.0, 0.5];
        let mut b = SnapshotBuilder::new();
        b.add_primitive(bad);
        assert!(matches!(
            b.seal(&HashEmbedder::default()),
            Err(StoreError::MalformedRecord { .. })
        ));

        let mut bad = prim(1, 0.0);
        bad.detections = vec![2.0, 2.0];
        let mut b = SnapshotBuilder::new();
        b.add_primitive(bad);
        assert!(b.seal(&HashEmbedder::default()).is_err());

        let mut bad = cap(1, 3.0, vec![]);
        bad.t_end = 3.0;
        let mut b = SnapshotBuilder::new();
        b.add_caption(bad);
        assert!(b.seal(&HashEmbedder::default()).is_err());

        let mut bad = cap(1, 3.0, vec![]);
        bad.embedding = Some(vec![0.5, 0.5]);
        let mut b = SnapshotBuilder::new();
        b.add_caption(bad);
        assert!(b.seal(&HashEmbedder::default()).is_err());
    }

    #[test]
    fn mixed_schemes_are_rejected() {
        let mut foreign = cap(1, 0.0, vec![]);
        let mut v = vec![0.0; 64];
        v[3] = 1.0;
        foreign.embedding = Some(v);
        let mut b = SnapshotBuilder::new();
        b.add_caption(foreign.clone()).add_caption(cap(2, 3.0, vec![]));
        assert!(matches!(
            b.seal(&HashEmbedder::default()),
            Err(StoreError::SchemeMismatch(_))
        ));

        // all supplied and foreign: external scheme
        let mut other = cap(2, 3.0, vec![]);
        let mut w = vec![0.0; 64];
        w[4] = 1.0;
        other.embedding = Some(w);
        let mut b = SnapshotBuilder::new();
        b.add_caption(foreign).add_caption(other);
        let s = b.seal(&HashEmbedder::default()).unwrap();
        assert_eq!(s.embedding_spec().scheme_id, "external");
    }

    #[test]
    fn time_queries() {
        let mut b = SnapshotBuilder::new();
        for i in 0..10 {
            b.add_caption(cap(i, 3.0 * i as f64, vec![]));
        }
        let s = b.seal(&HashEmbedder::default()).unwrap();
        assert_eq!(s.query_by_time(0.0, s.horizon()).unwrap().len(), 10);
        let first = s.query_by_time(0.0, 0.0).unwrap();
        assert_eq!(first.iter().map(|c| c.id).collect::<Vec<_>>(), vec![0]);
        let w = s.query_by_time(10.0, 12.0).unwrap();
        let spans: Vec<(f64, f64)> = w.iter().map(|c| (c.t_start, c.t_end)).collect();
        assert_eq!(spans, vec![(9.0, 12.0), (12.0, 15.0)]);
        assert!(matches!(
            s.query_by_time(5.0, 4.0),
            Err(StoreError::InvalidRange { .. })
        ));
    }

    #[test]
    fn position_queries() {
        let s = minimal();
        let hit = s.query_by_position([3.0, 0.0, 0.0], 0.0);
        assert_eq!(hit.iter().map(|c| c.id).collect::<Vec<_>>(), vec![12]);
        assert_eq!(s.query_by_position([0.0; 3], 100.0).len(), 3);
    }

    #[test]
    fn keyframe_lookup() {
        let mut b = SnapshotBuilder::new();
        for t in 95..105 {
            b.add_keyframe(kf(t as f64));
        }
        let s = b.seal(&HashEmbedder::default()).unwrap();
        let r = s.keyframes_at(&[100.0], 0.5);
        assert_eq!(r.found[0].timestamp, 100.0);
        let r = s.keyframes_at(&[100.4], 0.5);
        assert_eq!(r.found[0].timestamp, 100.0);
        let r = s.keyframes_at(&[100.0, 100.2], 0.5);
        assert_eq!(r.found.len(), 1);
        let r = s.keyframes_at(&[102.0, 200.0, 96.0], 0.5);
        assert_eq!(
            r.found.iter().map(|k| k.timestamp).collect::<Vec<_>>(),
            vec![102.0, 96.0]
        );
        assert_eq!(r.missing, vec![200.0]);
        // exact midpoint picks the earlier frame
        let r = s.keyframes_at(&[100.5], 0.5);
        assert_eq!(r.found[0].timestamp, 100.0);
    }

    #[test]
    fn strict_mode_rejects_unknown_fields() {
        let text = r#"{"id":1,"t_start":0,"t_end":3,"pose":[0,0,0,0],"text":"a","primitive_ids":[],"extra":1}"#;
        let err = parse_records::<CaptionInput>(text.as_bytes(), "c.jsonl", true, RecordKind::Caption)
            .unwrap_err();
        assert!(err.to_string().contains("unknown field `extra`"));
        let ok = parse_records::<CaptionInput>(text.as_bytes(), "c.jsonl", false, RecordKind::Caption)
            .unwrap();
        assert_eq!(ok.len(), 1);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "\n{\"timestamp\": 1.0, \"image_ref\": \"a\", \"visible_primitive_ids\": []}\nnot json\n";
        match parse_records::<KeyframeRecord>(text.as_bytes(), "k.jsonl", true, RecordKind::Keyframe) {
            Err(StoreError::MalformedRecord { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mmss() {
        assert_eq!(format_mmss(791.0), "13:11");
        assert_eq!(format_mmss(480.0), "08:00");
    }
}
