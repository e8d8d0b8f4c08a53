//! Agglomerative information-bottleneck clustering of a primitive working
//! set under a spatial adjacency constraint.
//!
//! Clustering starts from singletons. Each step merges the adjacent pair
//! whose merge loses the least relevance information, measured as
//! `d_ij = (p_i + p_j) · JS_π(p(y|i), p(y|j))` with mixture weights
//! `π ∝ (p_i, p_j)`. With these weights `d_ij` equals the exact drop in
//! `I(X̃; Y)` caused by the merge. A merge whose fractional loss
//! `d_ij / I(X'; Y)` exceeds the budget `δ̄` is rolled back and ends the run.

use crate::canonical::{self, FloatStyle};
use crate::relevance::{self, JointModel, TaskCueSet};
use crate::store::{distance, MemorySnapshot};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use thiserror::Error;

/// Costs within this distance of the minimum are treated as ties and
/// resolved by member ids.
pub const COST_TIE_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IbError {
    #[error("working set is empty")]
    EmptyWorkingSet,
    #[error("primitive {0} is not in the snapshot")]
    UnknownPrimitive(u64),
    #[error("adjacency radius must be positive, got {0}")]
    InvalidRadius(f64),
    #[error("clusters {0} and {1} are not adjacent")]
    NotAdjacent(u64, u64),
    #[error("no live cluster with id {0}")]
    UnknownCluster(u64),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Relevance(#[from] relevance::RelevanceError),
}

/// Undirected graph over the working set, keyed by primitive id.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyGraph {
    nodes: Vec<u64>,
    edges: BTreeSet<(u64, u64)>,
    r_adj: f64,
    cooccurrence: bool,
}

impl AdjacencyGraph {
    /// Graph from explicit edges. Self-loops are dropped and each edge is
    /// stored once as `(low, high)`.
    pub fn from_edges(
        nodes: impl IntoIterator<Item = u64>,
        edges: impl IntoIterator<Item = (u64, u64)>,
    ) -> Result<Self, IbError> {
        let nodes: BTreeSet<u64> = nodes.into_iter().collect();
        if nodes.is_empty() {
            return Err(IbError::EmptyWorkingSet);
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            for id in [a, b] {
                if !nodes.contains(&id) {
                    return Err(IbError::UnknownPrimitive(id));
                }
            }
            if a != b {
                set.insert((a.min(b), a.max(b)));
            }
        }
        Ok(Self {
            nodes: nodes.into_iter().collect(),
            edges: set,
            r_adj: 0.0,
            cooccurrence: false,
        })
    }

    /// Sorted primitive ids.
    pub fn nodes(&self) -> &[u64] {
        &self.nodes
    }

    pub fn edges(&self) -> &BTreeSet<(u64, u64)> {
        &self.edges
    }

    pub fn contains_edge(&self, a: u64, b: u64) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn radius(&self) -> f64 {
        self.r_adj
    }

    pub fn uses_cooccurrence(&self) -> bool {
        self.cooccurrence
    }
}

/// Connects two working-set primitives when their centroids are at most
/// `r_adj` meters apart or, with `use_cooccurrence`, when some caption of the
/// snapshot lists both.
pub fn build_adjacency(
    snapshot: &MemorySnapshot,
    working_set: &[u64],
    r_adj: f64,
    use_cooccurrence: bool,
) -> Result<AdjacencyGraph, IbError> {
    if !(r_adj > 0.0) {
        return Err(IbError::InvalidRadius(r_adj));
    }
    let nodes: Vec<u64> = working_set.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if nodes.is_empty() {
        return Err(IbError::EmptyWorkingSet);
    }
    let centroids = nodes
        .iter()
        .map(|id| {
            snapshot
                .primitive(*id)
                .map(|p| p.centroid)
                .ok_or(IbError::UnknownPrimitive(*id))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut edges = BTreeSet::new();
    for i in 0..nodes.len() {
        for j in (i + 1)..nodes.len() {
            if distance(&centroids[i], &centroids[j]) <= r_adj {
                edges.insert((nodes[i], nodes[j]));
            }
        }
    }
    if use_cooccurrence {
        let members: BTreeSet<u64> = nodes.iter().copied().collect();
        let mut seen = Vec::new();
        for caption in snapshot.captions() {
            seen.clear();
            seen.extend(caption.primitive_ids.iter().filter(|id| members.contains(id)));
            seen.sort_unstable();
            seen.dedup();
            for i in 0..seen.len() {
                for j in (i + 1)..seen.len() {
                    edges.insert((seen[i], seen[j]));
                }
            }
        }
    }
    Ok(AdjacencyGraph {
        nodes,
        edges,
        r_adj,
        cooccurrence: use_cooccurrence,
    })
}

/// A cluster of working-set primitives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: usize,
    /// Sorted primitive ids.
    pub members: Vec<u64>,
    /// `|members| / N`.
    pub prior: f64,
    /// `p(y | cluster)`.
    pub conditional: Vec<f64>,
}

/// Information lost by merging two clusters, in bits.
pub fn merge_cost(a: &Cluster, b: &Cluster) -> f64 {
    pair_cost(a.prior, &a.conditional, b.prior, &b.conditional)
}

fn pair_cost(pa: f64, ca: &[f64], pb: f64, cb: &[f64]) -> f64 {
    (pa + pb) * relevance::js_divergence(ca, cb, pa, pb)
}

fn mix(pa: f64, ca: &[f64], pb: f64, cb: &[f64]) -> Vec<f64> {
    if ca == cb {
        return ca.to_vec();
    }
    let total = pa + pb;
    ca.iter()
        .zip(cb)
        .map(|(x, y)| (pa * x + pb * y) / total)
        .collect()
}

#[derive(Debug, Clone)]
struct Slot {
    members: Vec<u64>,
    conditional: Vec<f64>,
    neighbors: BTreeSet<usize>,
}

/// Live partition of the working set plus the contracted cluster graph.
///
/// Clusters are addressed by the id of their smallest member primitive.
#[derive(Debug, Clone)]
pub struct ClusterState {
    nodes: Vec<u64>,
    index: HashMap<u64, usize>,
    slots: Vec<Option<Slot>>,
    live: usize,
}

impl ClusterState {
    /// One singleton per graph node; `conditionals[i]` belongs to
    /// `graph.nodes()[i]`.
    pub fn singletons(graph: &AdjacencyGraph, conditionals: &[Vec<f64>]) -> Result<Self, IbError> {
        let n = graph.nodes.len();
        if n == 0 {
            return Err(IbError::EmptyWorkingSet);
        }
        if conditionals.len() != n {
            return Err(IbError::InvalidInput(format!(
                "{} conditionals for {n} primitives",
                conditionals.len()
            )));
        }
        let width = conditionals[0].len();
        if conditionals.iter().any(|c| c.len() != width) {
            return Err(IbError::InvalidInput("ragged conditionals".into()));
        }
        let index: HashMap<u64, usize> = graph.nodes.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        let mut slots: Vec<Option<Slot>> = graph
            .nodes
            .iter()
            .zip(conditionals)
            .map(|(id, c)| {
                Some(Slot {
                    members: vec![*id],
                    conditional: c.clone(),
                    neighbors: BTreeSet::new(),
                })
            })
            .collect();
        for (a, b) in &graph.edges {
            let (i, j) = (index[a], index[b]);
            slots[i].as_mut().expect("live").neighbors.insert(j);
            slots[j].as_mut().expect("live").neighbors.insert(i);
        }
        Ok(Self {
            nodes: graph.nodes.clone(),
            index,
            slots,
            live: n,
        })
    }

    pub fn working_set_size(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_clusters(&self) -> usize {
        self.live
    }

    fn prior_of(&self, slot: &Slot) -> f64 {
        slot.members.len() as f64 / self.nodes.len() as f64
    }

    fn slot(&self, cluster: u64) -> Result<(usize, &Slot), IbError> {
        let i = *self.index.get(&cluster).ok_or(IbError::UnknownCluster(cluster))?;
        match &self.slots[i] {
            Some(s) => Ok((i, s)),
            None => Err(IbError::UnknownCluster(cluster)),
        }
    }

    /// Cluster-level edges as pairs of cluster ids, `(low, high)`.
    pub fn edges(&self) -> Vec<(u64, u64)> {
        let mut out = Vec::new();
        for (i, slot) in self.slots.iter().enumerate() {
            if let Some(s) = slot {
                out.extend(s.neighbors.range(i + 1..).map(|&j| (self.nodes[i], self.nodes[j])));
            }
        }
        out
    }

    /// Current clusters ordered by smallest member; `id` is the position.
    pub fn clusters(&self) -> Vec<Cluster> {
        self.slots
            .iter()
            .flatten()
            .enumerate()
            .map(|(id, s)| Cluster {
                id,
                members: s.members.clone(),
                prior: self.prior_of(s),
                conditional: s.conditional.clone(),
            })
            .collect()
    }

    pub fn joint_model(&self) -> Result<JointModel, IbError> {
        let live: Vec<&Slot> = self.slots.iter().flatten().collect();
        let priors = live.iter().map(|s| self.prior_of(s)).collect();
        let rows = live.iter().map(|s| s.conditional.clone()).collect();
        Ok(JointModel::weighted(priors, rows)?)
    }

    /// `I(X̃; Y)` of the current partition, evaluated from scratch.
    pub fn mutual_information(&self) -> f64 {
        self.joint_model()
            .map(|m| relevance::mutual_information(&m))
            .unwrap_or(0.0)
    }

    /// Merge cost of two live clusters.
    pub fn cost(&self, a: u64, b: u64) -> Result<f64, IbError> {
        let (_, sa) = self.slot(a)?;
        let (_, sb) = self.slot(b)?;
        Ok(pair_cost(
            self.prior_of(sa),
            &sa.conditional,
            self.prior_of(sb),
            &sb.conditional,
        ))
    }

    /// Merges two adjacent clusters and contracts their edge. The merged
    /// cluster keeps the smaller id.
    pub fn merge(&mut self, a: u64, b: u64) -> Result<u64, IbError> {
        let (ia, _) = self.slot(a)?;
        let (ib, sb) = self.slot(b)?;
        if !sb.neighbors.contains(&ia) {
            return Err(IbError::NotAdjacent(a, b));
        }
        let (keep, drop) = (ia.min(ib), ia.max(ib));
        let gone = self.slots[drop].take().expect("live slot");
        let n = self.nodes.len() as f64;
        let p_gone = gone.members.len() as f64 / n;
        for &nb in &gone.neighbors {
            if let Some(s) = self.slots[nb].as_mut() {
                s.neighbors.remove(&drop);
                if nb != keep {
                    s.neighbors.insert(keep);
                }
            }
        }
        let kept = self.slots[keep].as_mut().expect("live slot");
        let p_kept = kept.members.len() as f64 / n;
        kept.conditional = mix(p_kept, &kept.conditional, p_gone, &gone.conditional);
        kept.members.extend(gone.members);
        kept.members.sort_unstable();
        kept.neighbors.extend(gone.neighbors.into_iter().filter(|&x| x != keep));
        kept.neighbors.remove(&drop);
        self.live -= 1;
        Ok(self.nodes[keep])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    DeltaExceeded,
    GraphExhausted,
    SingleCluster,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::DeltaExceeded => "delta_exceeded",
            StopReason::GraphExhausted => "graph_exhausted",
            StopReason::SingleCluster => "single_cluster",
        }
    }
}

/// One executed (or rejected) merge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeRecord {
    /// 1-based merge index.
    pub step: usize,
    /// Cluster ids (smallest members) of the merged pair, `(low, high)`.
    pub pair: (u64, u64),
    pub cost: f64,
    pub info_before: f64,
    pub info_after: f64,
    /// Fractional loss `cost / I(X'; Y)`.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeTrace {
    /// `I(X'; Y)` of the singleton partition.
    pub initial_info: f64,
    pub merges: Vec<MergeRecord>,
    /// The candidate that exceeded the loss budget and was rolled back.
    pub rejected: Option<MergeRecord>,
    pub stop_reason: StopReason,
}

impl MergeTrace {
    /// Line-delimited export: one line per executed merge followed by a
    /// closing line with the stop reason.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for m in &self.merges {
            out.push_str(&canonical::to_canonical_string(m, FloatStyle::RoundTrip));
            out.push('\n');
        }
        let tail = serde_json::json!({
            "initial_info": self.initial_info,
            "merges": self.merges.len(),
            "rejected": self.rejected,
            "stop_reason": self.stop_reason.as_str(),
        });
        out.push_str(&canonical::render(&tail, FloatStyle::RoundTrip));
        out.push('\n');
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agglomeration {
    pub clusters: Vec<Cluster>,
    pub trace: MergeTrace,
}

fn key(i: usize, j: usize) -> (usize, usize) {
    (i.min(j), i.max(j))
}

/// Greedy agglomeration from singletons.
///
/// Each step takes the cheapest adjacent pair; pairs whose costs lie within
/// [`COST_TIE_EPS`] of the cheapest are ordered by `(smaller id, larger id)`.
/// A zero-cost merge has zero fractional loss even when `I(X'; Y) = 0`.
pub fn agglomerate(
    graph: &AdjacencyGraph,
    conditionals: &[Vec<f64>],
    delta_bar: f64,
) -> Result<Agglomeration, IbError> {
    if !(delta_bar >= 0.0) {
        return Err(IbError::InvalidInput(format!(
            "loss budget must be non-negative, got {delta_bar}"
        )));
    }
    let mut state = ClusterState::singletons(graph, conditionals)?;
    let initial_info = state.mutual_information();
    let mut info = initial_info;
    let mut merges = Vec::new();

    let mut costs: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (a, b) in &graph.edges {
        let (i, j) = (state.index[a], state.index[b]);
        costs.insert(key(i, j), state.cost(*a, *b)?);
    }

    let stop = loop {
        if state.num_clusters() == 1 {
            break (StopReason::SingleCluster, None);
        }
        let Some(min_cost) = costs.values().copied().reduce(f64::min) else {
            break (StopReason::GraphExhausted, None);
        };
        let (&(i, j), &cost) = costs
            .iter()
            .find(|(_, c)| **c <= min_cost + COST_TIE_EPS)
            .expect("minimum exists");
        let (a, b) = (state.nodes[i], state.nodes[j]);
        let delta = if cost == 0.0 { 0.0 } else { cost / initial_info };
        let step = merges.len() + 1;

        if delta > delta_bar {
            let mut tentative = state.clone();
            tentative.merge(a, b)?;
            let rejected = MergeRecord {
                step,
                pair: (a, b),
                cost,
                info_before: info,
                info_after: tentative.mutual_information(),
                delta,
            };
            break (StopReason::DeltaExceeded, Some(rejected));
        }

        state.merge(a, b)?;
        let info_after = state.mutual_information();
        merges.push(MergeRecord {
            step,
            pair: (a, b),
            cost,
            info_before: info,
            info_after,
            delta,
        });
        info = info_after;

        costs.retain(|&(x, y), _| x != i && y != i && x != j && y != j);
        let neighbors: Vec<usize> = state.slots[i]
            .as_ref()
            .expect("merged slot is live")
            .neighbors
            .iter()
            .copied()
            .collect();
        for nb in neighbors {
            costs.insert(key(i, nb), state.cost(a, state.nodes[nb])?);
        }
    };

    Ok(Agglomeration {
        clusters: state.clusters(),
        trace: MergeTrace {
            initial_info,
            merges,
            rejected: stop.1,
            stop_reason: stop.0,
        },
    })
}

/// `p(y|x')` for every node of `graph`, in node order.
pub fn relevance_rows(
    snapshot: &MemorySnapshot,
    graph: &AdjacencyGraph,
    cues: &TaskCueSet,
) -> Result<Vec<Vec<f64>>, IbError> {
    graph
        .nodes
        .iter()
        .map(|id| {
            let p = snapshot.primitive(*id).ok_or(IbError::UnknownPrimitive(*id))?;
            Ok(cues.relevance_of(&p.feature)?.into_vec())
        })
        .collect()
}

/// Clusters the working set of a snapshot for one cue set.
pub fn agglomerate_primitives(
    snapshot: &MemorySnapshot,
    cues: &TaskCueSet,
    graph: &AdjacencyGraph,
    delta_bar: f64,
) -> Result<Agglomeration, IbError> {
    let rows = relevance_rows(snapshot, graph, cues)?;
    agglomerate(graph, &rows, delta_bar)
}
