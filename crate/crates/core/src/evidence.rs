//! Query-time retrieval: caption pool, induced primitive subset, clustering,
//! caption groups, one representative per cluster, top-K ranking and
//! keyframe fusion.

use crate::canonical::{self, FloatStyle, EVIDENCE_DIGITS};
use crate::config::RetrievalConfig;
use crate::ib::{self, Cluster, IbError, MergeTrace};
use crate::relevance::TaskCueSet;
use crate::store::MemorySnapshot;
use crate::vector::{self, EntryMeta, FlatIndex, SearchFilter, SearchHit, VectorError};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvidenceError {
    #[error("inconsistent evidence components: {0}")]
    InconsistentComponents(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Vector(#[from] VectorError),
    #[error(transparent)]
    Ib(#[from] IbError),
}

/// Flat indexes over caption embeddings and primitive features.
#[derive(Debug, Clone)]
pub struct RetrievalIndex {
    captions: FlatIndex,
    primitives: FlatIndex,
}

impl RetrievalIndex {
    pub fn build(snapshot: &MemorySnapshot) -> Result<Self, VectorError> {
        let d = snapshot.embedding_spec().dimension;
        let mut captions = FlatIndex::new(d);
        for c in snapshot.captions() {
            let meta = EntryMeta {
                t_start: c.t_start,
                t_end: c.t_end,
                position: c.position(),
            };
            captions.insert(c.id, &c.embedding, Some(meta))?;
        }
        let mut primitives = FlatIndex::new(d);
        for p in snapshot.primitives().values() {
            let t = p.last_detection().unwrap_or(0.0);
            let meta = EntryMeta {
                t_start: t,
                t_end: t,
                position: p.centroid,
            };
            primitives.insert(p.id, &p.feature, Some(meta))?;
        }
        Ok(Self {
            captions,
            primitives,
        })
    }

    pub fn captions(&self) -> &FlatIndex {
        &self.captions
    }

    pub fn primitives(&self) -> &FlatIndex {
        &self.primitives
    }
}

/// Captions scoring at least `tau` against some cue.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionPool {
    /// Best score per caption, sorted by score descending then id.
    pub hits: Vec<SearchHit>,
    pub tau: f64,
}

impl CaptionPool {
    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    pub fn contains(&self, caption_id: u64) -> bool {
        self.hits.iter().any(|h| h.record_id == caption_id)
    }
}

fn union_max(per_cue: impl IntoIterator<Item = Vec<SearchHit>>) -> Vec<SearchHit> {
    let mut best: BTreeMap<u64, f64> = BTreeMap::new();
    for hits in per_cue {
        for h in hits {
            let e = best.entry(h.record_id).or_insert(h.score);
            if h.score > *e {
                *e = h.score;
            }
        }
    }
    let mut out: Vec<SearchHit> = best
        .into_iter()
        .map(|(record_id, score)| SearchHit { record_id, score })
        .collect();
    out.sort_by(vector::hit_order);
    out
}

pub fn retrieve_caption_pool(
    index: &FlatIndex,
    cues: &TaskCueSet,
    tau: f64,
) -> Result<CaptionPool, EvidenceError> {
    let per_cue = cues
        .cues()
        .iter()
        .map(|c| index.search_above_threshold(&c.embedding, tau, &SearchFilter::none()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CaptionPool {
        hits: union_max(per_cue),
        tau,
    })
}

/// Sorted union of the primitives referenced by pool captions.
pub fn induce_primitive_subset(
    pool: &CaptionPool,
    snapshot: &MemorySnapshot,
) -> Result<Vec<u64>, EvidenceError> {
    let mut out = BTreeSet::new();
    for h in &pool.hits {
        let c = snapshot.caption(h.record_id).ok_or_else(|| {
            EvidenceError::InconsistentComponents(format!("caption {} not in snapshot", h.record_id))
        })?;
        out.extend(c.primitive_ids.iter().copied());
    }
    Ok(out.into_iter().collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionGroup {
    pub cluster_id: usize,
    /// Pool captions touching the cluster, in pool order.
    pub caption_ids: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grouping {
    pub groups: Vec<CaptionGroup>,
    /// Pool captions that touch no cluster.
    pub ungrouped: Vec<u64>,
}

pub fn group_captions(
    pool: &CaptionPool,
    clusters: &[Cluster],
    snapshot: &MemorySnapshot,
) -> Result<Grouping, EvidenceError> {
    let mut owner: HashMap<u64, usize> = HashMap::new();
    for (k, c) in clusters.iter().enumerate() {
        for m in &c.members {
            if owner.insert(*m, k).is_some() {
                return Err(EvidenceError::InconsistentComponents(format!(
                    "primitive {m} belongs to two clusters"
                )));
            }
        }
    }
    let mut buckets: Vec<Vec<u64>> = vec![Vec::new(); clusters.len()];
    let mut ungrouped = Vec::new();
    for h in &pool.hits {
        let c = snapshot.caption(h.record_id).ok_or_else(|| {
            EvidenceError::InconsistentComponents(format!("caption {} not in snapshot", h.record_id))
        })?;
        let touched: BTreeSet<usize> = c.primitive_ids.iter().filter_map(|p| owner.get(p).copied()).collect();
        if touched.is_empty() {
            ungrouped.push(c.id);
        }
        for k in touched {
            buckets[k].push(c.id);
        }
    }
    let groups = buckets
        .into_iter()
        .enumerate()
        .filter(|(_, ids)| !ids.is_empty())
        .map(|(k, caption_ids)| CaptionGroup {
            cluster_id: clusters[k].id,
            caption_ids,
        })
        .collect();
    Ok(Grouping { groups, ungrouped })
}

/// Best clamped cosine over cues and the first cue reaching it.
pub fn phi(embedding: &[f64], cues: &TaskCueSet) -> Result<(f64, usize), EvidenceError> {
    let mut best = (f64::NEG_INFINITY, 0);
    for (j, cue) in cues.cues().iter().enumerate() {
        let s = vector::similarity(embedding, &cue.embedding)?;
        if s > best.0 {
            best = (s, j);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Representative {
    pub cluster_id: usize,
    pub caption_id: u64,
    pub phi: f64,
    pub best_cue: usize,
    pub t_start: f64,
}

fn representative_order(a: &Representative, b: &Representative) -> Ordering {
    b.phi
        .total_cmp(&a.phi)
        .then(a.t_start.total_cmp(&b.t_start))
        .then(a.caption_id.cmp(&b.caption_id))
        .then(a.cluster_id.cmp(&b.cluster_id))
}

/// Highest-φ caption of each group; ties go to the earlier clip, then the
/// lower caption id.
pub fn select_representatives(
    groups: &[CaptionGroup],
    cues: &TaskCueSet,
    snapshot: &MemorySnapshot,
) -> Result<Vec<Representative>, EvidenceError> {
    let mut out = Vec::with_capacity(groups.len());
    for g in groups {
        let mut best: Option<Representative> = None;
        for id in &g.caption_ids {
            let c = snapshot.caption(*id).ok_or_else(|| {
                EvidenceError::InconsistentComponents(format!("caption {id} not in snapshot"))
            })?;
            let (score, cue) = phi(&c.embedding, cues)?;
            let cand = Representative {
                cluster_id: g.cluster_id,
                caption_id: c.id,
                phi: score,
                best_cue: cue,
                t_start: c.t_start,
            };
            if best
                .as_ref()
                .map_or(true, |b| representative_order(&cand, b) == Ordering::Less)
            {
                best = Some(cand);
            }
        }
        out.extend(best);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedEntry {
    /// 1-based dense rank over φ.
    pub rank: usize,
    pub rep: Representative,
}

/// Sorts by φ, drops repeated captions (keeping the better-ranked entry),
/// keeps `k` entries and assigns dense ranks.
pub fn rank_evidence(reps: &[Representative], k: usize) -> Result<Vec<RankedEntry>, EvidenceError> {
    if k == 0 {
        return Err(EvidenceError::InvalidArgument("K must be at least 1".into()));
    }
    let mut sorted = reps.to_vec();
    sorted.sort_by(representative_order);
    let mut seen = BTreeSet::new();
    sorted.retain(|r| seen.insert(r.caption_id));
    sorted.truncate(k);
    let mut out: Vec<RankedEntry> = Vec::with_capacity(sorted.len());
    for rep in sorted {
        let rank = match out.last() {
            None => 1,
            Some(prev) if prev.rep.phi == rep.phi => prev.rank,
            Some(prev) => prev.rank + 1,
        };
        out.push(RankedEntry { rank, rep });
    }
    Ok(out)
}

/// Chooses timestamps whose keyframes should accompany the text evidence.
pub trait KeyframeSelector {
    fn select(&self, entries: &[TextEvidence], snapshot: &MemorySnapshot) -> Vec<f64>;
}

/// Clip midpoints of the first `count` text entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MidpointSelector {
    pub count: usize,
}

impl Default for MidpointSelector {
    fn default() -> Self {
        Self { count: 3 }
    }
}

impl KeyframeSelector for MidpointSelector {
    fn select(&self, entries: &[TextEvidence], _snapshot: &MemorySnapshot) -> Vec<f64> {
        entries
            .iter()
            .take(self.count)
            .map(|e| 0.5 * (e.t_start + e.t_end))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeRef {
    pub timestamp: f64,
    pub image_ref: String,
    pub annotation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct KeyframeSelection {
    pub refs: Vec<KeyframeRef>,
    /// Requested timestamps with no keyframe in tolerance or outside the
    /// memory horizon.
    pub missing: Vec<f64>,
}

pub fn select_keyframes(
    entries: &[TextEvidence],
    selector: &dyn KeyframeSelector,
    snapshot: &MemorySnapshot,
    tol: f64,
) -> KeyframeSelection {
    if entries.is_empty() {
        return KeyframeSelection::default();
    }
    let (inside, mut missing): (Vec<f64>, Vec<f64>) = selector
        .select(entries, snapshot)
        .into_iter()
        .partition(|t| *t >= 0.0 && *t <= snapshot.horizon());
    let lookup = snapshot.keyframes_at(&inside, tol);
    missing.extend(lookup.missing);
    KeyframeSelection {
        refs: lookup
            .found
            .into_iter()
            .map(|k| KeyframeRef {
                timestamp: k.timestamp,
                image_ref: k.image_ref.clone(),
                annotation: k.annotation.clone(),
            })
            .collect(),
        missing,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceSource {
    Caption,
    Primitive,
}

/// One ranked text memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextEvidence {
    pub rank: usize,
    pub cluster_id: usize,
    pub source: EvidenceSource,
    pub record_id: u64,
    pub phi: f64,
    /// Index of the cue that produced `phi`.
    pub best_cue: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub text: String,
}

impl TextEvidence {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.t_start + self.t_end)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub cluster_id: usize,
    pub members: Vec<u64>,
    pub prior: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    Clustered,
    CaptionTopk,
    PrimitiveTopk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceDebug {
    pub mode: RetrievalMode,
    pub tau: f64,
    pub pool: Vec<u64>,
    pub working_set: Vec<u64>,
    pub ungrouped: Vec<u64>,
    pub stop_reason: Option<String>,
    pub missing_keyframes: Vec<f64>,
}

/// Fused text and keyframe evidence for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceSet {
    pub cues: Vec<String>,
    pub text_evidence: Vec<TextEvidence>,
    pub clusters: Vec<ClusterSummary>,
    pub keyframe_refs: Vec<KeyframeRef>,
    pub config: RetrievalConfig,
    pub debug: EvidenceDebug,
}

impl EvidenceSet {
    pub fn empty(cues: Vec<String>, config: &RetrievalConfig, mode: RetrievalMode, tau: f64) -> Self {
        Self {
            cues,
            text_evidence: Vec::new(),
            clusters: Vec::new(),
            keyframe_refs: Vec::new(),
            config: config.clone(),
            debug: EvidenceDebug {
                mode,
                tau,
                pool: Vec::new(),
                working_set: Vec::new(),
                ungrouped: Vec::new(),
                stop_reason: None,
                missing_keyframes: Vec::new(),
            },
        }
    }

    pub fn is_empty(&self) -> bool {
        self.text_evidence.is_empty()
    }

    pub fn cluster(&self, cluster_id: usize) -> Option<&ClusterSummary> {
        self.clusters.iter().find(|c| c.cluster_id == cluster_id)
    }

    pub fn to_canonical(&self) -> String {
        canonical::to_canonical_string(self, FloatStyle::Significant(EVIDENCE_DIGITS))
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::from_str(&self.to_canonical()).expect("canonical evidence parses")
    }
}

/// Packages the stage outputs after checking that they agree.
pub fn assemble_evidence(
    pool: &CaptionPool,
    working_set: &[u64],
    clusters: &[Cluster],
    grouping: &Grouping,
    ranked: &[RankedEntry],
    keyframes: KeyframeSelection,
    cues: &TaskCueSet,
    config: &RetrievalConfig,
    snapshot: &MemorySnapshot,
) -> Result<EvidenceSet, EvidenceError> {
    let bad = |m: String| Err(EvidenceError::InconsistentComponents(m));
    let ws: BTreeSet<u64> = working_set.iter().copied().collect();
    let mut covered = BTreeSet::new();
    for c in clusters {
        for m in &c.members {
            if !ws.contains(m) {
                return bad(format!("cluster {} member {m} outside the working set", c.id));
            }
            if !covered.insert(*m) {
                return bad(format!("primitive {m} appears in two clusters"));
            }
        }
    }
    if covered != ws {
        return bad("clusters do not partition the working set".into());
    }
    let mut used_clusters = BTreeSet::new();
    let mut text = Vec::with_capacity(ranked.len());
    for e in ranked {
        let r = &e.rep;
        let Some(cluster) = clusters.iter().find(|c| c.id == r.cluster_id) else {
            return bad(format!("unknown cluster {}", r.cluster_id));
        };
        if !used_clusters.insert(r.cluster_id) {
            return bad(format!("cluster {} has two representatives", r.cluster_id));
        }
        if !pool.contains(r.caption_id) {
            return bad(format!("caption {} is not in the pool", r.caption_id));
        }
        let Some(c) = snapshot.caption(r.caption_id) else {
            return bad(format!("caption {} not in snapshot", r.caption_id));
        };
        if !c.primitive_ids.iter().any(|p| cluster.members.binary_search(p).is_ok()) {
            return bad(format!("caption {} does not touch cluster {}", c.id, r.cluster_id));
        }
        text.push(TextEvidence {
            rank: e.rank,
            cluster_id: r.cluster_id,
            source: EvidenceSource::Caption,
            record_id: c.id,
            phi: r.phi,
            best_cue: r.best_cue,
            t_start: c.t_start,
            t_end: c.t_end,
            text: c.text.clone(),
        });
    }
    Ok(EvidenceSet {
        cues: cues.texts(),
        text_evidence: text,
        clusters: clusters
            .iter()
            .map(|c| ClusterSummary {
                cluster_id: c.id,
                members: c.members.clone(),
                prior: c.prior,
            })
            .collect(),
        keyframe_refs: keyframes.refs,
        config: config.clone(),
        debug: EvidenceDebug {
            mode: RetrievalMode::Clustered,
            tau: pool.tau,
            pool: pool.hits.iter().map(|h| h.record_id).collect(),
            working_set: working_set.to_vec(),
            ungrouped: grouping.ungrouped.clone(),
            stop_reason: None,
            missing_keyframes: keyframes.missing,
        },
    })
}

/// Evidence plus the clustering trace that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub evidence: EvidenceSet,
    pub trace: Option<MergeTrace>,
}

/// Pool, working set, clustering, groups, representatives, ranking and
/// keyframes for one cue set at threshold `tau`.
pub fn run_pipeline(
    snapshot: &MemorySnapshot,
    index: &RetrievalIndex,
    cues: &TaskCueSet,
    config: &RetrievalConfig,
    tau: f64,
    selector: &dyn KeyframeSelector,
) -> Result<PipelineOutput, EvidenceError> {
    let pool = retrieve_caption_pool(&index.captions, cues, tau)?;
    if pool.is_empty() {
        return Ok(PipelineOutput {
            evidence: EvidenceSet::empty(cues.texts(), config, RetrievalMode::Clustered, tau),
            trace: None,
        });
    }
    let working_set = induce_primitive_subset(&pool, snapshot)?;
    if working_set.is_empty() {
        let mut evidence = EvidenceSet::empty(cues.texts(), config, RetrievalMode::Clustered, tau);
        evidence.debug.pool = pool.hits.iter().map(|h| h.record_id).collect();
        evidence.debug.ungrouped = evidence.debug.pool.clone();
        return Ok(PipelineOutput {
            evidence,
            trace: None,
        });
    }
    let graph = ib::build_adjacency(snapshot, &working_set, config.r_adj, config.cooccurrence_edges)?;
    let agg = ib::agglomerate_primitives(snapshot, cues, &graph, config.delta_bar)?;
    let grouping = group_captions(&pool, &agg.clusters, snapshot)?;
    let reps = select_representatives(&grouping.groups, cues, snapshot)?;
    let ranked = rank_evidence(&reps, config.k)?;
    let mut evidence = assemble_evidence(
        &pool,
        &working_set,
        &agg.clusters,
        &grouping,
        &ranked,
        KeyframeSelection::default(),
        cues,
        config,
        snapshot,
    )?;
    let kf = select_keyframes(&evidence.text_evidence, selector, snapshot, config.keyframe_tol);
    evidence.keyframe_refs = kf.refs;
    evidence.debug.missing_keyframes = kf.missing;
    evidence.debug.stop_reason = Some(agg.trace.stop_reason.as_str().to_string());
    Ok(PipelineOutput {
        evidence,
        trace: Some(agg.trace),
    })
}

/// Top-`k` captions by best cue score with no clustering. Each entry forms
/// its own pseudo-cluster made of the caption's primitives.
pub fn caption_topk(
    snapshot: &MemorySnapshot,
    index: &RetrievalIndex,
    cues: &TaskCueSet,
    config: &RetrievalConfig,
    k: usize,
    selector: &dyn KeyframeSelector,
) -> Result<EvidenceSet, EvidenceError> {
    let hits = topk_union(&index.captions, cues, k)?;
    let mut evidence = EvidenceSet::empty(cues.texts(), config, RetrievalMode::CaptionTopk, 0.0);
    for (i, h) in hits.iter().enumerate() {
        let c = snapshot.caption(h.record_id).ok_or_else(|| {
            EvidenceError::InconsistentComponents(format!("caption {} not in snapshot", h.record_id))
        })?;
        let (score, cue) = phi(&c.embedding, cues)?;
        let members: Vec<u64> = c.primitive_ids.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        evidence.clusters.push(ClusterSummary {
            cluster_id: i,
            prior: 0.0,
            members,
        });
        evidence.text_evidence.push(TextEvidence {
            rank: 0,
            cluster_id: i,
            source: EvidenceSource::Caption,
            record_id: c.id,
            phi: score,
            best_cue: cue,
            t_start: c.t_start,
            t_end: c.t_end,
            text: c.text.clone(),
        });
    }
    finish_flat(&mut evidence, hits, snapshot, config, selector);
    Ok(evidence)
}

/// Top-`k` primitives by feature similarity to the cues, using only
/// primitive captions. Entries are stamped with the last detection time.
pub fn primitive_topk(
    snapshot: &MemorySnapshot,
    index: &RetrievalIndex,
    cues: &TaskCueSet,
    config: &RetrievalConfig,
    k: usize,
    selector: &dyn KeyframeSelector,
) -> Result<EvidenceSet, EvidenceError> {
    let hits = topk_union(&index.primitives, cues, k)?;
    let mut evidence = EvidenceSet::empty(cues.texts(), config, RetrievalMode::PrimitiveTopk, 0.0);
    for (i, h) in hits.iter().enumerate() {
        let p = snapshot.primitive(h.record_id).ok_or_else(|| {
            EvidenceError::InconsistentComponents(format!("primitive {} not in snapshot", h.record_id))
        })?;
        let (score, cue) = phi(&p.feature, cues)?;
        let t = p.last_detection().unwrap_or(0.0);
        evidence.clusters.push(ClusterSummary {
            cluster_id: i,
            prior: 0.0,
            members: vec![p.id],
        });
        evidence.text_evidence.push(TextEvidence {
            rank: 0,
            cluster_id: i,
            source: EvidenceSource::Primitive,
            record_id: p.id,
            phi: score,
            best_cue: cue,
            t_start: t,
            t_end: t,
            text: p.caption.clone(),
        });
    }
    finish_flat(&mut evidence, hits, snapshot, config, selector);
    Ok(evidence)
}

fn topk_union(index: &FlatIndex, cues: &TaskCueSet, k: usize) -> Result<Vec<SearchHit>, EvidenceError> {
    if k == 0 {
        return Err(EvidenceError::InvalidArgument("k must be at least 1".into()));
    }
    if index.is_empty() {
        return Ok(Vec::new());
    }
    let per_cue = cues
        .cues()
        .iter()
        .map(|c| index.search_topk(&c.embedding, k))
        .collect::<Result<Vec<_>, _>>()?;
    let mut hits = union_max(per_cue);
    hits.truncate(k);
    Ok(hits)
}

fn finish_flat(
    evidence: &mut EvidenceSet,
    hits: Vec<SearchHit>,
    snapshot: &MemorySnapshot,
    config: &RetrievalConfig,
    selector: &dyn KeyframeSelector,
) {
    let mut prev: Option<(f64, usize)> = None;
    for e in evidence.text_evidence.iter_mut() {
        let rank = match prev {
            None => 1,
            Some((phi, r)) if phi == e.phi => r,
            Some((_, r)) => r + 1,
        };
        e.rank = rank;
        prev = Some((e.phi, rank));
    }
    evidence.debug.pool = hits.iter().map(|h| h.record_id).collect();
    let kf = select_keyframes(&evidence.text_evidence, selector, snapshot, config.keyframe_tol);
    evidence.keyframe_refs = kf.refs;
    evidence.debug.missing_keyframes = kf.missing;
}
