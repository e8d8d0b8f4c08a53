//! Query planning, the three retrieval rounds and answer generation.

use crate::canonical::{self, FloatStyle, EVIDENCE_DIGITS};
use crate::config::RetrievalConfig;
use crate::evidence::{self, EvidenceError, EvidenceSet, KeyframeSelector, RetrievalIndex};
use crate::ib::MergeTrace;
use crate::relevance::{RelevanceError, TaskCueSet};
use crate::store::{MemorySnapshot, Vec3};
use crate::vector::{self, Embedder, VectorError};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("query has no content words")]
    UnparseableQuery,
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("answer generator failed: {0}")]
    Generator(String),
    #[error(transparent)]
    Evidence(#[from] EvidenceError),
    #[error(transparent)]
    Relevance(#[from] RelevanceError),
    #[error(transparent)]
    Vector(#[from] VectorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    Spatial,
    Temporal,
    Binary,
    Descriptive,
}

impl QueryKind {
    pub const ALL: [QueryKind; 4] = [
        QueryKind::Spatial,
        QueryKind::Temporal,
        QueryKind::Binary,
        QueryKind::Descriptive,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            QueryKind::Spatial => "spatial",
            QueryKind::Temporal => "temporal",
            QueryKind::Binary => "binary",
            QueryKind::Descriptive => "descriptive",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub text: String,
    /// Text stand-in for an image attached to the query.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<String>,
    /// "Now", in seconds on the memory clock.
    pub issued_at: f64,
}

impl Query {
    pub fn new(text: impl Into<String>, issued_at: f64) -> Self {
        Self {
            text: text.into(),
            observation: None,
            issued_at,
        }
    }

    pub fn with_observation(mut self, observation: impl Into<String>) -> Self {
        self.observation = Some(observation.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tool {
    Text,
    Time,
    Position,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerDirective {
    pub cues: Vec<String>,
    pub query_kind: QueryKind,
    pub tool: Tool,
    pub round: usize,
}

const INTERROGATIVES: &[&str] = &["where", "when", "what", "which", "who", "whom", "whose", "why", "how"];

const AUXILIARIES: &[&str] = &[
    "is", "are", "was", "were", "am", "do", "does", "did", "can", "could", "has", "have", "had",
    "will", "would", "should", "shall", "may", "might", "must",
];

const STOP_WORDS: &[&str] = &[
    "a", "an", "the", "this", "that", "these", "those", "there", "here", "it", "its", "i", "me",
    "my", "mine", "you", "your", "yours", "we", "us", "our", "they", "them", "their", "he", "him",
    "his", "she", "her", "one", "ones", "of", "on", "in", "at", "to", "for", "with", "from", "by",
    "into", "onto", "about", "near", "nearest", "closest", "next", "last", "first", "latest",
    "see", "saw", "seen", "find", "found", "be", "been", "being", "placed", "place", "put", "go",
    "located", "location", "long", "ago", "time", "any", "some", "please", "tell", "show", "and",
    "or", "not", "no", "yes", "if", "so", "than", "then", "now", "just", "ever", "still", "kind",
    "color", "colour", "look", "like", "get", "got", "s",
];

const RELATION_WORDS: &[&str] = &["labeled", "labelled", "marked", "tagged", "reading", "saying"];

fn is_stop(token: &str) -> bool {
    INTERROGATIVES.contains(&token) || AUXILIARIES.contains(&token) || STOP_WORDS.contains(&token)
}

/// Crude plural folding.
pub fn singularize(token: &str) -> String {
    let n = token.len();
    if n <= 3 || token.ends_with("ss") || token.ends_with("us") || token.ends_with("is") {
        return token.to_string();
    }
    if let Some(stem) = token.strip_suffix("ves") {
        return format!("{stem}f");
    }
    if let Some(stem) = token.strip_suffix("ies") {
        return format!("{stem}y");
    }
    for suffix in ["xes", "ches", "shes", "sses", "zes"] {
        if token.ends_with(suffix) {
            return token[..n - 2].to_string();
        }
    }
    match token.strip_suffix('s') {
        Some(stem) => stem.to_string(),
        None => token.to_string(),
    }
}

/// Lowercased, punctuation-split, singularized tokens.
pub fn content_tokens(text: &str) -> Vec<String> {
    vector::tokenize(text).iter().map(|t| singularize(t)).collect()
}

fn classify(tokens: &[String]) -> QueryKind {
    let has = |w: &str| tokens.iter().any(|t| t == w);
    if tokens.windows(3).any(|w| w[0] == "how" && w[1] == "long" && w[2] == "ago") {
        return QueryKind::Temporal;
    }
    if has("where") {
        return QueryKind::Spatial;
    }
    if has("when") {
        return QueryKind::Temporal;
    }
    if tokens.first().is_some_and(|t| AUXILIARIES.contains(&t.as_str())) {
        return QueryKind::Binary;
    }
    QueryKind::Descriptive
}

fn phrases(tokens: &[String]) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    let mut cur: Vec<String> = Vec::new();
    for t in tokens {
        if is_stop(t) {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        } else {
            cur.push(t.clone());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    for p in out.iter_mut() {
        let head = match p.iter().position(|t| RELATION_WORDS.contains(&t.as_str())) {
            Some(0) => continue,
            Some(i) => i - 1,
            None => p.len() - 1,
        };
        p[head] = singularize(&p[head]);
    }
    out
}

/// Noun phrases of `text`, with the head noun singularized.
fn extract_cues(text: &str) -> Vec<String> {
    phrases(&vector::tokenize(text)).iter().map(|p| p.join(" ")).collect()
}

/// Cues of an attached observation, plus the labels it carries. A phrase
/// of the form "X labeled Y" becomes the two cues "Y head(X)" and "X".
fn observation_cues(text: &str) -> (Vec<String>, Vec<String>) {
    let tokens = vector::tokenize(text);
    let mut cues = Vec::new();
    let mut labels = Vec::new();
    let mut rest: &[String] = &tokens;
    while let Some(pos) = rest.iter().position(|t| RELATION_WORDS.contains(&t.as_str())) {
        let (before, after) = (&rest[..pos], &rest[pos + 1..]);
        let left = phrases(before);
        let right_end = after.iter().position(|t| is_stop(t)).unwrap_or(after.len());
        let label: Vec<String> = after[..right_end].to_vec();
        match left.last() {
            Some(subject) if !label.is_empty() => {
                for p in &left[..left.len() - 1] {
                    cues.push(p.join(" "));
                }
                let head = subject.last().expect("non-empty phrase");
                cues.push(format!("{} {}", label.join(" "), head));
                cues.push(subject.join(" "));
                labels.push(label.join(" "));
            }
            _ => {
                cues.extend(left.iter().map(|p| p.join(" ")));
                if !label.is_empty() {
                    cues.push(label.join(" "));
                }
            }
        }
        rest = &after[right_end..];
    }
    cues.extend(phrases(rest).iter().map(|p| p.join(" ")));
    (cues, labels)
}

fn dedup(cues: Vec<String>) -> Vec<String> {
    let mut seen = BTreeSet::new();
    cues.into_iter().filter(|c| seen.insert(c.clone())).collect()
}

/// Reference planner: keyword rules for the kind, noun phrases for cues.
pub fn plan_query(query: &Query) -> Result<PlannerDirective, AgentError> {
    if !query.issued_at.is_finite() {
        return Err(AgentError::InvalidQuery("issued_at must be finite".into()));
    }
    let tokens = vector::tokenize(&query.text);
    let kind = classify(&tokens);
    let mut cues = extract_cues(&query.text);
    if let Some(obs) = &query.observation {
        let (seen, labels) = observation_cues(obs);
        // "this one" questions: the asked-about thing should carry the label
        let linked: Vec<String> = cues
            .iter()
            .flat_map(|c| labels.iter().map(move |l| format!("{l} {c}")))
            .collect();
        cues.extend(linked);
        cues.extend(seen);
    }
    let cues = dedup(cues);
    if cues.is_empty() {
        return Err(AgentError::UnparseableQuery);
    }
    Ok(PlannerDirective {
        cues,
        query_kind: kind,
        tool: Tool::Text,
        round: 1,
    })
}

/// The cues plus every variant obtained by swapping one token for a
/// listed synonym.
pub fn expand_synonyms(cues: &[String], table: &BTreeMap<String, Vec<String>>) -> Vec<String> {
    let mut out: Vec<String> = cues.to_vec();
    for cue in cues {
        let tokens: Vec<&str> = cue.split(' ').collect();
        for (i, t) in tokens.iter().enumerate() {
            if let Some(alts) = table.get(*t) {
                for alt in alts {
                    let mut v: Vec<&str> = tokens.clone();
                    v[i] = alt;
                    out.push(v.join(" "));
                }
            }
        }
    }
    dedup(out)
}

/// Evidence returned by the round loop together with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundsOutcome {
    pub evidence: EvidenceSet,
    pub history: Vec<PlannerDirective>,
    pub trace: Option<MergeTrace>,
    /// Cue set of the round that produced `evidence` (the last round when
    /// nothing was found).
    pub cues: TaskCueSet,
    /// Content tokens of the first-round cues.
    pub answer_tokens: Vec<String>,
    pub rounds_used: usize,
}

fn embedder_for(config: &RetrievalConfig, snapshot: &MemorySnapshot) -> Result<Box<dyn Embedder>, AgentError> {
    let spec = snapshot.embedding_spec();
    if spec.scheme_id != config.embedder {
        return Err(AgentError::Vector(VectorError::Unsupported(format!(
            "snapshot uses scheme {:?} but the config selects {:?}",
            spec.scheme_id, config.embedder
        ))));
    }
    let mut cfg = config.clone();
    cfg.embedding_dim = spec.dimension;
    Ok(cfg.embedder()?)
}

/// Keeps fallback hits that share a content token with some cue.
fn lexical_guard(evidence: &mut EvidenceSet, cues: &[String]) {
    let vocab: BTreeSet<String> = cues.iter().flat_map(|c| content_tokens(c)).collect();
    let keep: Vec<bool> = evidence
        .text_evidence
        .iter()
        .map(|e| content_tokens(&e.text).iter().any(|t| vocab.contains(t)))
        .collect();
    let mut i = 0;
    evidence.text_evidence.retain(|_| {
        i += 1;
        keep[i - 1]
    });
    let used: BTreeSet<usize> = evidence.text_evidence.iter().map(|e| e.cluster_id).collect();
    evidence.clusters.retain(|c| used.contains(&c.cluster_id));
    let mut rank = 0;
    let mut prev = None;
    for e in evidence.text_evidence.iter_mut() {
        if prev != Some(e.phi) {
            rank += 1;
            prev = Some(e.phi);
        }
        e.rank = rank;
    }
}

/// Round 1: full pipeline. Round 2: lower `tau` and add synonyms. Round 3:
/// flat top-K over captions. Stops at the first round with evidence.
pub fn run_rounds(
    query: &Query,
    snapshot: &MemorySnapshot,
    index: &RetrievalIndex,
    config: &RetrievalConfig,
    selector: &dyn KeyframeSelector,
) -> Result<RoundsOutcome, AgentError> {
    config
        .validate()
        .map_err(|e| AgentError::InvalidQuery(e.to_string()))?;
    let first = plan_query(query)?;
    let embedder = embedder_for(config, snapshot)?;
    let answer_tokens = dedup(first.cues.iter().flat_map(|c| content_tokens(c)).collect());
    let mut history = Vec::new();
    let mut last_cues = None;

    for round in 1..=config.max_rounds {
        let directive = match round {
            1 => first.clone(),
            _ => PlannerDirective {
                cues: expand_synonyms(&first.cues, &config.synonym_table()),
                round,
                ..first.clone()
            },
        };
        let cues = TaskCueSet::from_texts(&directive.cues, embedder.as_ref(), config.alpha, config.gamma_topk)?;
        history.push(directive.clone());
        let (mut evidence, trace) = match round {
            1 | 2 => {
                let tau = if round == 1 {
                    config.tau
                } else {
                    (config.tau - config.tau_relax).max(0.0)
                };
                let out = evidence::run_pipeline(snapshot, index, &cues, config, tau, selector)?;
                (out.evidence, out.trace)
            }
            _ => {
                let mut ev = evidence::caption_topk(snapshot, index, &cues, config, config.k, selector)?;
                lexical_guard(&mut ev, &directive.cues);
                let kf = evidence::select_keyframes(&ev.text_evidence, selector, snapshot, config.keyframe_tol);
                ev.keyframe_refs = kf.refs;
                ev.debug.missing_keyframes = kf.missing;
                (ev, None)
            }
        };
        evidence.debug.stop_reason = trace.as_ref().map(|t| t.stop_reason.as_str().to_string());
        if !evidence.is_empty() {
            return Ok(RoundsOutcome {
                evidence,
                history,
                trace,
                cues,
                answer_tokens,
                rounds_used: round,
            });
        }
        last_cues = Some((cues, evidence));
    }
    let (cues, evidence) = last_cues.expect("at least one round runs");
    let rounds_used = history.len();
    Ok(RoundsOutcome {
        evidence,
        history,
        trace: None,
        cues,
        answer_tokens,
        rounds_used,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub kind: QueryKind,
    pub found: bool,
    pub position: Option<Vec3>,
    pub time_ago: Option<f64>,
    pub text: String,
    pub evidence: EvidenceSet,
    pub rounds_used: usize,
}

impl Answer {
    pub fn not_found(kind: QueryKind, evidence: EvidenceSet, rounds_used: usize) -> Self {
        Self {
            kind,
            found: false,
            position: None,
            time_ago: None,
            text: "not found".into(),
            evidence,
            rounds_used,
        }
    }

    pub fn to_canonical(&self) -> String {
        canonical::to_canonical_string(self, FloatStyle::Significant(EVIDENCE_DIGITS))
    }
}

/// Everything a generator may consult besides the evidence itself.
pub struct GenerationContext<'a> {
    pub snapshot: &'a MemorySnapshot,
    pub cues: &'a TaskCueSet,
    pub answer_tokens: &'a [String],
    pub rounds_used: usize,
}

pub trait AnswerGenerator {
    fn generate(
        &self,
        query: &Query,
        kind: QueryKind,
        evidence: &EvidenceSet,
        ctx: &GenerationContext<'_>,
    ) -> Result<Answer, AgentError>;
}

/// Renders elapsed seconds as "8 mins ago".
pub fn render_time_ago(seconds: f64) -> String {
    if seconds < 0.0 {
        return "in the future".into();
    }
    let unit = |n: u64, word: &str| {
        if n == 1 {
            format!("1 {word} ago")
        } else {
            format!("{n} {word}s ago")
        }
    };
    if seconds < 60.0 {
        unit(seconds.round() as u64, "sec")
    } else if seconds < 3600.0 {
        unit((seconds / 60.0).round() as u64, "min")
    } else {
        unit((seconds / 3600.0).round() as u64, "hour")
    }
}

fn fmt_pos(p: &Vec3) -> String {
    format!("({:.2}, {:.2}, {:.2})", p[0], p[1], p[2])
}

/// Deterministic extractive answers read straight from the evidence.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReferenceGenerator;

impl ReferenceGenerator {
    /// Most relevant primitive of the top entry's cluster, scored against
    /// the cue that ranked that entry.
    pub fn target_primitive(evidence: &EvidenceSet, ctx: &GenerationContext<'_>) -> Result<Option<u64>, AgentError> {
        let Some(top) = evidence.text_evidence.first() else {
            return Ok(None);
        };
        let Some(cluster) = evidence.cluster(top.cluster_id) else {
            return Ok(None);
        };
        let mut best: Option<(f64, f64, u64)> = None;
        for id in &cluster.members {
            let Some(p) = ctx.snapshot.primitive(*id) else {
                continue;
            };
            let scores = ctx.cues.scores(&p.feature)?;
            let main = scores.get(top.best_cue).copied().unwrap_or(0.0);
            let any = scores.iter().copied().fold(0.0, f64::max);
            let better = match best {
                None => true,
                Some((m, a, _)) => main > m || (main == m && any > a),
            };
            if better {
                best = Some((main, any, *id));
            }
        }
        Ok(best.map(|b| b.2))
    }

    fn contains_all(text: &str, tokens: &[String]) -> bool {
        let have: BTreeSet<String> = content_tokens(text).into_iter().collect();
        !tokens.is_empty() && tokens.iter().all(|t| have.contains(t))
    }
}

impl AnswerGenerator for ReferenceGenerator {
    fn generate(
        &self,
        query: &Query,
        kind: QueryKind,
        evidence: &EvidenceSet,
        ctx: &GenerationContext<'_>,
    ) -> Result<Answer, AgentError> {
        if evidence.is_empty() {
            return Ok(Answer::not_found(kind, evidence.clone(), ctx.rounds_used));
        }
        let top = &evidence.text_evidence[0];
        let mut answer = Answer {
            kind,
            found: true,
            position: None,
            time_ago: None,
            text: String::new(),
            evidence: evidence.clone(),
            rounds_used: ctx.rounds_used,
        };
        match kind {
            QueryKind::Spatial => {
                let Some(id) = Self::target_primitive(evidence, ctx)? else {
                    return Ok(Answer::not_found(kind, evidence.clone(), ctx.rounds_used));
                };
                let p = ctx.snapshot.primitive(id).expect("member resolves");
                let c = p.bbox_center();
                answer.text = format!("{} at {}", p.caption, fmt_pos(&c));
                answer.position = Some(c);
            }
            QueryKind::Temporal => {
                let last = evidence
                    .cluster(top.cluster_id)
                    .into_iter()
                    .flat_map(|c| c.members.iter())
                    .filter_map(|id| ctx.snapshot.primitive(*id).and_then(|p| p.last_detection()))
                    .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.max(t))))
                    .unwrap_or(top.t_end);
                let ago = query.issued_at - last;
                answer.text = render_time_ago(ago);
                answer.time_ago = Some(ago);
            }
            QueryKind::Binary => {
                let hit = evidence.text_evidence.iter().any(|e| Self::contains_all(&e.text, ctx.answer_tokens))
                    || evidence
                        .keyframe_refs
                        .iter()
                        .filter_map(|k| k.annotation.as_deref())
                        .any(|a| Self::contains_all(a, ctx.answer_tokens));
                answer.text = if hit { "yes" } else { "no" }.into();
            }
            QueryKind::Descriptive => {
                let subject: Vec<String> = dedup(extract_cues(&query.text).iter().flat_map(|c| content_tokens(c)).collect());
                let top = evidence
                    .text_evidence
                    .iter()
                    .find(|e| Self::contains_all(&e.text, &subject))
                    .unwrap_or(top);
                let vocab: BTreeSet<&String> = ctx.answer_tokens.iter().collect();
                let note = evidence
                    .keyframe_refs
                    .iter()
                    .filter_map(|k| k.annotation.as_deref())
                    .find(|a| content_tokens(a).iter().any(|t| vocab.contains(t)));
                answer.text = match note {
                    Some(n) => format!("{} | {}", top.text, n),
                    None => top.text.clone(),
                };
            }
        }
        Ok(answer)
    }
}

#[derive(Debug, Serialize)]
struct GeneratorRequest<'a> {
    query: &'a str,
    evidence: serde_json::Value,
    kind: &'a str,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeneratorResponse {
    text: String,
    position: Option<Vec<f64>>,
    time_ago: Option<f64>,
}

/// Remote generator over a JSON POST endpoint.
#[derive(Debug, Clone)]
pub struct HttpGenerator {
    url: String,
    timeout: Duration,
    retries: usize,
}

impl HttpGenerator {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        Self {
            url: url.into(),
            timeout,
            retries: 1,
        }
    }

    fn call(&self, body: &GeneratorRequest<'_>) -> Result<GeneratorResponse, String> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let mut resp = agent.post(&self.url).send_json(body).map_err(|e| e.to_string())?;
        resp.body_mut()
            .read_json::<GeneratorResponse>()
            .map_err(|e| format!("malformed response: {e}"))
    }
}

impl AnswerGenerator for HttpGenerator {
    fn generate(
        &self,
        query: &Query,
        kind: QueryKind,
        evidence: &EvidenceSet,
        ctx: &GenerationContext<'_>,
    ) -> Result<Answer, AgentError> {
        let body = GeneratorRequest {
            query: &query.text,
            evidence: evidence.to_value(),
            kind: kind.as_str(),
        };
        let mut last_err = String::new();
        for _ in 0..=self.retries {
            match self.call(&body) {
                Ok(r) => {
                    let position = match r.position {
                        None => None,
                        Some(v) if v.len() == 3 && v.iter().all(|x| x.is_finite()) => Some([v[0], v[1], v[2]]),
                        Some(v) => {
                            return Err(AgentError::Generator(format!(
                                "position must be three finite numbers, got {v:?}"
                            )))
                        }
                    };
                    return Ok(Answer {
                        kind,
                        found: !evidence.is_empty(),
                        position,
                        time_ago: r.time_ago,
                        text: r.text,
                        evidence: evidence.clone(),
                        rounds_used: ctx.rounds_used,
                    });
                }
                Err(e) => last_err = e,
            }
        }
        Err(AgentError::Generator(last_err))
    }
}

/// Full query session output.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub answer: Answer,
    pub history: Vec<PlannerDirective>,
    pub trace: Option<MergeTrace>,
}

pub fn answer_query(
    query: &Query,
    snapshot: &MemorySnapshot,
    index: &RetrievalIndex,
    config: &RetrievalConfig,
    generator: &dyn AnswerGenerator,
    selector: &dyn KeyframeSelector,
) -> Result<QueryResult, AgentError> {
    let outcome = run_rounds(query, snapshot, index, config, selector)?;
    let kind = outcome.history[0].query_kind;
    let ctx = GenerationContext {
        snapshot,
        cues: &outcome.cues,
        answer_tokens: &outcome.answer_tokens,
        rounds_used: outcome.rounds_used,
    };
    let answer = generator.generate(query, kind, &outcome.evidence, &ctx)?;
    Ok(QueryResult {
        answer,
        history: outcome.history,
        trace: outcome.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn police_pole_query() {
        let d = plan_query(&Query::new("Where is the nearest police call pole?", 0.0)).unwrap();
        assert_eq!(d.query_kind, QueryKind::Spatial);
        assert!(d.cues.contains(&"police call pole".to_string()));
        assert_eq!(d.tool, Tool::Text);
    }

    #[test]
    fn forklift_query() {
        let d = plan_query(&Query::new("When did you last see the forklift?", 0.0)).unwrap();
        assert_eq!(d.query_kind, QueryKind::Temporal);
        assert!(d.cues.contains(&"forklift".to_string()));
        let d = plan_query(&Query::new("How long ago was the red cone moved?", 0.0)).unwrap();
        assert_eq!(d.query_kind, QueryKind::Temporal);
    }

    #[test]
    fn observation_cues() {
        let q = Query::new("Which shelf should this one be placed on?", 0.0)
            .with_observation("white box labeled Digital Twin");
        let d = plan_query(&q).unwrap();
        assert_eq!(d.query_kind, QueryKind::Descriptive);
        for c in ["digital twin box", "white box", "shelf", "digital twin shelf"] {
            assert!(d.cues.contains(&c.to_string()), "{c} missing from {:?}", d.cues);
        }
    }

    #[test]
    fn binary_and_unparseable() {
        let d = plan_query(&Query::new("Is there a yellow forklift?", 0.0)).unwrap();
        assert_eq!(d.query_kind, QueryKind::Binary);
        assert_eq!(d.cues, vec!["yellow forklift".to_string()]);
        assert_eq!(plan_query(&Query::new("", 0.0)), Err(AgentError::UnparseableQuery));
        assert_eq!(plan_query(&Query::new("Where is it?", 0.0)), Err(AgentError::UnparseableQuery));
    }

    #[test]
    fn labels_stay_verbatim() {
        let d = plan_query(&Query::new("Where are the brown boxes labeled textiles?", 0.0)).unwrap();
        assert_eq!(d.cues, vec!["brown box labeled textiles".to_string()]);
    }

    #[test]
    fn plural_folding() {
        assert_eq!(singularize("boxes"), "box");
        assert_eq!(singularize("shelves"), "shelf");
        assert_eq!(singularize("pallets"), "pallet");
        assert_eq!(singularize("glass"), "glass");
        assert_eq!(singularize("batteries"), "battery");
    }

    #[test]
    fn synonyms_swap_one_token() {
        let table = crate::config::default_synonyms();
        let out = expand_synonyms(&["police call pole".to_string()], &table);
        assert!(out.contains(&"police call post".to_string()));
        assert_eq!(out[0], "police call pole");
    }

    #[test]
    fn time_rendering() {
        assert_eq!(render_time_ago(780.0 - 300.0), "8 mins ago");
        assert_eq!(render_time_ago(1.0), "1 sec ago");
        assert_eq!(render_time_ago(7200.0), "2 hours ago");
    }
}
