//! Scoring, retrieval metrics and the method comparison benchmark.

use crate::agent::{self, AgentError, Answer, AnswerGenerator, GenerationContext, Query, QueryKind, ReferenceGenerator};
use crate::canonical::{self, FloatStyle, EVIDENCE_DIGITS};
use crate::config::RetrievalConfig;
use crate::evidence::{self, EvidenceSet, MidpointSelector, RetrievalIndex};
use crate::relevance::TaskCueSet;
use crate::store::{distance, MemorySnapshot};
use crate::synth::{GroundTruth, QATask, TaskKind};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("answer kind {answer} does not match task kind {task}")]
    KindMismatch { answer: String, task: String },
    #[error("unknown method {0:?}; expected star, naive_topk or object_caption")]
    UnknownMethod(String),
    #[error("judge failed: {0}")]
    Judge(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Spatial answers succeed strictly below this L2 error, meters.
    pub spatial_threshold: f64,
    /// Temporal answers succeed at or below this L1 error, seconds.
    pub temporal_threshold: f64,
    pub recall_k: usize,
    /// Half-width of the recall window around a clip, seconds.
    pub recall_tol: f64,
    /// Window used by the redundancy score, seconds.
    pub redundancy_window: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            spatial_threshold: 5.0,
            temporal_threshold: 120.0,
            recall_k: 6,
            recall_tol: 5.0,
            redundancy_window: 10.0,
        }
    }
}

/// 1 iff one of the first `k` entries, widened by `tol` on both sides,
/// contains a ground-truth timestamp.
pub fn recall_at_k(evidence: &EvidenceSet, gt_timestamps: &[f64], k: usize, tol: f64) -> u8 {
    let hit = evidence.text_evidence.iter().take(k).any(|e| {
        gt_timestamps
            .iter()
            .any(|t| *t >= e.t_start - tol && *t <= e.t_end + tol)
    });
    u8::from(hit)
}

/// Largest share of entries whose clip midpoints fit in one closed window
/// of length `window`. Sets with fewer than two entries score 0.
pub fn redundancy(evidence: &EvidenceSet, window: f64) -> f64 {
    let mut mids: Vec<f64> = evidence.text_evidence.iter().map(|e| e.midpoint()).collect();
    let n = mids.len();
    if n < 2 {
        return 0.0;
    }
    mids.sort_by(f64::total_cmp);
    let mut best = 0;
    let mut j = 0;
    for i in 0..n {
        if j < i {
            j = i;
        }
        while j + 1 < n && mids[j + 1] - mids[i] <= window {
            j += 1;
        }
        best = best.max(j - i + 1);
    }
    best as f64 / n as f64
}

/// Judges free-text answers against key tokens.
pub trait DescriptiveJudge {
    fn judge(&self, task: &QATask, answer_text: &str, key_tokens: &[String]) -> Result<bool, EvalError>;
}

/// Succeeds when every key token occurs in the answer.
#[derive(Debug, Clone, Copy, Default)]
pub struct TokenJudge;

impl DescriptiveJudge for TokenJudge {
    fn judge(&self, _task: &QATask, answer_text: &str, key_tokens: &[String]) -> Result<bool, EvalError> {
        let have: BTreeSet<String> = agent::content_tokens(answer_text).into_iter().collect();
        Ok(key_tokens
            .iter()
            .flat_map(|k| agent::content_tokens(k))
            .all(|t| have.contains(&t)))
    }
}

#[derive(Debug, Serialize)]
struct JudgeRequest<'a> {
    query: &'a str,
    evidence: serde_json::Value,
    kind: &'a str,
}

#[derive(Debug, Deserialize)]
struct JudgeResponse {
    text: String,
}

/// Judge over the same POST contract as the answer generator. The reply's
/// `text` must start with "yes" or "no".
#[derive(Debug, Clone)]
pub struct HttpJudge {
    url: String,
    timeout: Duration,
}

impl HttpJudge {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        Self {
            url: url.into(),
            timeout,
        }
    }

    fn call(&self, body: &JudgeRequest<'_>) -> Result<String, String> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let mut resp = agent.post(&self.url).send_json(body).map_err(|e| e.to_string())?;
        resp.body_mut()
            .read_json::<JudgeResponse>()
            .map(|r| r.text)
            .map_err(|e| format!("malformed response: {e}"))
    }
}

impl DescriptiveJudge for HttpJudge {
    fn judge(&self, task: &QATask, answer_text: &str, key_tokens: &[String]) -> Result<bool, EvalError> {
        let body = JudgeRequest {
            query: &task.query.text,
            evidence: serde_json::json!({ "answer": answer_text, "reference": key_tokens }),
            kind: "judge",
        };
        let mut last = String::new();
        for _ in 0..2 {
            match self.call(&body) {
                Ok(text) => {
                    let t = text.trim().to_lowercase();
                    if t.starts_with("yes") {
                        return Ok(true);
                    }
                    if t.starts_with("no") {
                        return Ok(false);
                    }
                    return Err(EvalError::Judge(format!("unexpected verdict {text:?}")));
                }
                Err(e) => last = e,
            }
        }
        Err(EvalError::Judge(last))
    }
}

pub fn expected_answer_kind(kind: TaskKind) -> QueryKind {
    match kind {
        TaskKind::Spatial => QueryKind::Spatial,
        TaskKind::Temporal => QueryKind::Temporal,
        TaskKind::Binary => QueryKind::Binary,
        TaskKind::Descriptive | TaskKind::Multimodal => QueryKind::Descriptive,
    }
}

/// Success flag and, for spatial and temporal tasks, the error (meters or
/// seconds). Missing position or time counts as a failure with no error.
pub fn score_answer(
    answer: &Answer,
    task: &QATask,
    config: &EvalConfig,
    judge: &dyn DescriptiveJudge,
) -> Result<(bool, Option<f64>), EvalError> {
    let expected = expected_answer_kind(task.kind);
    if answer.kind != expected {
        return Err(EvalError::KindMismatch {
            answer: answer.kind.as_str().into(),
            task: task.kind.as_str().into(),
        });
    }
    Ok(match &task.ground_truth {
        GroundTruth::Position(gt) => match answer.position {
            Some(p) => {
                let err = distance(&p, gt);
                let thr = task.spatial_threshold.unwrap_or(config.spatial_threshold);
                (err < thr, Some(err))
            }
            None => (false, None),
        },
        GroundTruth::Timestamp(gt) => match answer.time_ago {
            Some(ago) => {
                let err = ((task.query.issued_at - ago) - gt).abs();
                let thr = task.temporal_threshold.unwrap_or(config.temporal_threshold);
                (err <= thr, Some(err))
            }
            None => (false, None),
        },
        GroundTruth::Boolean(gt) => {
            let said = match answer.text.trim().to_lowercase().as_str() {
                "yes" => Some(true),
                "no" => Some(false),
                _ => None,
            };
            (answer.found && said == Some(*gt) || !answer.found && !gt, None)
        }
        GroundTruth::KeyTokens(keys) => (answer.found && judge.judge(task, &answer.text, keys)?, None),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Star,
    NaiveTopk,
    ObjectCaption,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Star, Method::NaiveTopk, Method::ObjectCaption];

    pub fn parse(name: &str) -> Result<Self, EvalError> {
        match name {
            "star" => Ok(Method::Star),
            "naive_topk" => Ok(Method::NaiveTopk),
            "object_caption" => Ok(Method::ObjectCaption),
            other => Err(EvalError::UnknownMethod(other.to_string())),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Star => "star",
            Method::NaiveTopk => "naive_topk",
            Method::ObjectCaption => "object_caption",
        }
    }
}

/// Outcome of one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: u64,
    pub kind: TaskKind,
    pub success: bool,
    pub error: Option<f64>,
    /// Absent when the task has no ground-truth timestamps.
    pub recall: Option<u8>,
    pub redundancy: f64,
    pub rounds_used: usize,
    pub evidence_size: usize,
    pub answer: String,
    pub kind_mismatch: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindMetrics {
    pub kind: TaskKind,
    pub tasks: usize,
    pub successes: usize,
    pub sr: f64,
    /// Mean error over tasks that produced a position or time.
    pub mean_error: Option<f64>,
    pub answered: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

impl LatencyStats {
    pub fn from_durations(samples: &[Duration]) -> Self {
        let mut ms: Vec<f64> = samples.iter().map(|d| d.as_secs_f64() * 1e3).collect();
        ms.sort_by(f64::total_cmp);
        if ms.is_empty() {
            return Self { mean_ms: 0.0, p50_ms: 0.0, p95_ms: 0.0, max_ms: 0.0 };
        }
        let q = |p: f64| ms[((p * ms.len() as f64).ceil() as usize).clamp(1, ms.len()) - 1];
        Self {
            mean_ms: ms.iter().sum::<f64>() / ms.len() as f64,
            p50_ms: q(0.5),
            p95_ms: q(0.95),
            max_ms: *ms.last().expect("non-empty"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: Method,
    pub tasks: usize,
    pub per_kind: Vec<KindMetrics>,
    pub overall_sr: f64,
    pub recall_k: usize,
    pub recall_at_k: f64,
    pub recall_tasks: usize,
    /// Mean redundancy over tasks.
    pub redundancy: f64,
    pub records: Vec<TaskRecord>,
    pub config: RetrievalConfig,
    pub eval: EvalConfig,
    /// Wall-clock timing; kept out of the serialized report.
    #[serde(skip)]
    pub latency: Option<LatencyStats>,
}

impl MetricReport {
    pub fn kind(&self, kind: TaskKind) -> Option<&KindMetrics> {
        self.per_kind.iter().find(|k| k.kind == kind)
    }

    /// One line per task followed by a summary line.
    pub fn to_jsonl(&self) -> String {
        let style = FloatStyle::Significant(EVIDENCE_DIGITS);
        let mut out = String::new();
        for r in &self.records {
            let mut v = serde_json::to_value(r).expect("serializable");
            v["method"] = serde_json::json!(self.method.as_str());
            out.push_str(&canonical::render(&v, style));
            out.push('\n');
        }
        let summary = serde_json::json!({
            "method": self.method.as_str(),
            "summary": {
                "tasks": self.tasks,
                "per_kind": self.per_kind,
                "overall_sr": self.overall_sr,
                "recall_k": self.recall_k,
                "recall_at_k": self.recall_at_k,
                "recall_tasks": self.recall_tasks,
                "redundancy": self.redundancy,
            },
            "config": self.config,
            "eval": self.eval,
        });
        out.push_str(&canonical::render(&summary, style));
        out.push('\n');
        out
    }
}

/// Aligned text table over one or more reports.
pub fn render_table(reports: &[MetricReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<15} {:<12} {:>5} {:>6} {:>10}",
        "method", "kind", "n", "SR", "Er."
    );
    for r in reports {
        for k in &r.per_kind {
            if k.tasks == 0 {
                continue;
            }
            let err = k.mean_error.map_or_else(|| "-".to_string(), |e| format!("{e:.2}"));
            let _ = writeln!(
                out,
                "{:<15} {:<12} {:>5} {:>6.3} {:>10}",
                r.method.as_str(),
                k.kind.as_str(),
                k.tasks,
                k.sr,
                err
            );
        }
        let _ = writeln!(
            out,
            "{:<15} {:<12} {:>5} {:>6.3} {:>10}",
            r.method.as_str(),
            "all",
            r.tasks,
            r.overall_sr,
            "-"
        );
        let _ = writeln!(
            out,
            "{:<15} recall@{}={:.3} (over {} tasks)  redundancy={:.3}",
            r.method.as_str(),
            r.recall_k,
            r.recall_at_k,
            r.recall_tasks,
            r.redundancy
        );
        if let Some(l) = &r.latency {
            let _ = writeln!(
                out,
                "{:<15} latency mean={:.2}ms p50={:.2}ms p95={:.2}ms max={:.2}ms",
                r.method.as_str(),
                l.mean_ms,
                l.p50_ms,
                l.p95_ms,
                l.max_ms
            );
        }
    }
    out
}

/// Answer for `query` with a single-shot baseline retrieval.
fn baseline_answer(
    method: Method,
    query: &Query,
    snapshot: &MemorySnapshot,
    index: &RetrievalIndex,
    config: &RetrievalConfig,
    generator: &dyn AnswerGenerator,
) -> Result<Answer, EvalError> {
    let directive = agent::plan_query(query)?;
    let mut cfg = config.clone();
    cfg.embedding_dim = snapshot.embedding_spec().dimension;
    let embedder = cfg.embedder().map_err(AgentError::from)?;
    let cues = TaskCueSet::from_texts(&directive.cues, embedder.as_ref(), config.alpha, config.gamma_topk)
        .map_err(AgentError::from)?;
    let selector = MidpointSelector::default();
    let ev = match method {
        Method::NaiveTopk => evidence::caption_topk(snapshot, index, &cues, config, config.k, &selector),
        _ => evidence::primitive_topk(snapshot, index, &cues, config, config.k, &selector),
    }
    .map_err(AgentError::from)?;
    let tokens: Vec<String> = directive.cues.iter().flat_map(|c| agent::content_tokens(c)).collect();
    let ctx = GenerationContext {
        snapshot,
        cues: &cues,
        answer_tokens: &tokens,
        rounds_used: 1,
    };
    Ok(generator.generate(query, directive.query_kind, &ev, &ctx)?)
}

pub fn run_benchmark(
    snapshot: &MemorySnapshot,
    tasks: &[QATask],
    method: Method,
    config: &RetrievalConfig,
    eval: &EvalConfig,
    judge: &dyn DescriptiveJudge,
) -> Result<MetricReport, EvalError> {
    let index = RetrievalIndex::build(snapshot).map_err(|e| AgentError::from(crate::evidence::EvidenceError::from(e)))?;
    run_benchmark_with(snapshot, &index, tasks, method, config, eval, judge, &ReferenceGenerator)
}

#[allow(clippy::too_many_arguments)]
pub fn run_benchmark_with(
    snapshot: &MemorySnapshot,
    index: &RetrievalIndex,
    tasks: &[QATask],
    method: Method,
    config: &RetrievalConfig,
    eval: &EvalConfig,
    judge: &dyn DescriptiveJudge,
    generator: &dyn AnswerGenerator,
) -> Result<MetricReport, EvalError> {
    let mut records = Vec::with_capacity(tasks.len());
    let mut timings = Vec::with_capacity(tasks.len());
    for task in tasks {
        let start = Instant::now();
        let answer = match method {
            Method::Star => {
                agent::answer_query(&task.query, snapshot, index, config, generator, &MidpointSelector::default())?.answer
            }
            _ => baseline_answer(method, &task.query, snapshot, index, config, generator)?,
        };
        timings.push(start.elapsed());
        let (success, error, mismatch) = match score_answer(&answer, task, eval, judge) {
            Ok((s, e)) => (s, e, false),
            Err(EvalError::KindMismatch { .. }) => (false, None, true),
            Err(e) => return Err(e),
        };
        let recall = (!task.gt_timestamps.is_empty())
            .then(|| recall_at_k(&answer.evidence, &task.gt_timestamps, eval.recall_k, eval.recall_tol));
        records.push(TaskRecord {
            task_id: task.id,
            kind: task.kind,
            success,
            error,
            recall,
            redundancy: redundancy(&answer.evidence, eval.redundancy_window),
            rounds_used: answer.rounds_used,
            evidence_size: answer.evidence.text_evidence.len(),
            answer: answer.text.clone(),
            kind_mismatch: mismatch,
        });
    }
    Ok(aggregate(method, records, config, eval, &timings))
}

fn aggregate(
    method: Method,
    records: Vec<TaskRecord>,
    config: &RetrievalConfig,
    eval: &EvalConfig,
    timings: &[Duration],
) -> MetricReport {
    let per_kind = TaskKind::ALL
        .iter()
        .map(|&kind| {
            let rs: Vec<&TaskRecord> = records.iter().filter(|r| r.kind == kind).collect();
            let successes = rs.iter().filter(|r| r.success).count();
            let errs: Vec<f64> = rs.iter().filter_map(|r| r.error).collect();
            KindMetrics {
                kind,
                tasks: rs.len(),
                successes,
                sr: if rs.is_empty() { 0.0 } else { successes as f64 / rs.len() as f64 },
                mean_error: (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64),
                answered: errs.len(),
            }
        })
        .collect();
    let n = records.len();
    let recalls: Vec<u8> = records.iter().filter_map(|r| r.recall).collect();
    MetricReport {
        method,
        tasks: n,
        per_kind,
        overall_sr: if n == 0 { 0.0 } else { records.iter().filter(|r| r.success).count() as f64 / n as f64 },
        recall_k: eval.recall_k,
        recall_at_k: if recalls.is_empty() {
            0.0
        } else {
            recalls.iter().map(|&r| f64::from(r)).sum::<f64>() / recalls.len() as f64
        },
        recall_tasks: recalls.len(),
        redundancy: if n == 0 { 0.0 } else { records.iter().map(|r| r.redundancy).sum::<f64>() / n as f64 },
        records,
        config: config.clone(),
        eval: eval.clone(),
        latency: Some(LatencyStats::from_durations(timings)),
    }
}
