//! Task-cue scores, per-primitive relevance distributions and the
//! information measures used by the clustering step.
//!
//! The relevance variable `y` ranges over `{null, cue_1, .., cue_m}`. A
//! primitive whose best cue score stays below the floor `alpha` is assigned
//! entirely to the null outcome. Otherwise only its `k` strongest cue
//! scores are kept and renormalized.
//!
//! All logarithms are base 2, so information is measured in bits.

use crate::vector::{self, Embedder, VectorError};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RelevanceError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("all kept cue scores are zero although the best score reaches alpha")]
    DegenerateScores,
    #[error("invalid cue set: {0}")]
    InvalidCueSet(String),
    #[error("invalid joint model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Vector(#[from] VectorError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cue {
    pub text: String,
    pub embedding: Vec<f64>,
}

/// The cues of one query together with the null-task floor and the
/// top-k width.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskCueSet {
    cues: Vec<Cue>,
    alpha: f64,
    topk: usize,
}

impl TaskCueSet {
    pub fn new(cues: Vec<Cue>, alpha: f64, topk: usize) -> Result<Self, RelevanceError> {
        if cues.is_empty() {
            return Err(RelevanceError::InvalidCueSet("at least one cue is required".into()));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(RelevanceError::InvalidCueSet(format!(
                "alpha must lie in (0, 1), got {alpha}"
            )));
        }
        if topk == 0 {
            return Err(RelevanceError::InvalidCueSet("topk must be at least 1".into()));
        }
        let d = cues[0].embedding.len();
        for cue in &cues {
            if cue.embedding.len() != d {
                return Err(RelevanceError::DimensionMismatch {
                    expected: d,
                    found: cue.embedding.len(),
                });
            }
            if !vector::is_unit(&cue.embedding) {
                return Err(RelevanceError::InvalidCueSet(format!(
                    "cue `{}` is not unit norm",
                    cue.text
                )));
            }
        }
        Ok(Self { cues, alpha, topk })
    }

    pub fn from_texts<S: AsRef<str>>(
        texts: &[S],
        embedder: &dyn Embedder,
        alpha: f64,
        topk: usize,
    ) -> Result<Self, RelevanceError> {
        let cues = texts
            .iter()
            .map(|t| {
                Ok(Cue {
                    text: t.as_ref().to_string(),
                    embedding: embedder.embed(t.as_ref())?,
                })
            })
            .collect::<Result<Vec<_>, VectorError>>()?;
        Self::new(cues, alpha, topk)
    }

    pub fn cues(&self) -> &[Cue] {
        &self.cues
    }

    pub fn len(&self) -> usize {
        self.cues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cues.is_empty()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn topk(&self) -> usize {
        self.topk
    }

    pub fn texts(&self) -> Vec<String> {
        self.cues.iter().map(|c| c.text.clone()).collect()
    }

    pub fn scores(&self, feature: &[f64]) -> Result<Vec<f64>, RelevanceError> {
        cue_scores(feature, self)
    }

    pub fn distribution(&self, theta: &[f64]) -> Result<RelevanceDistribution, RelevanceError> {
        relevance_distribution(theta, self.alpha, self.topk)
    }

    /// `p(y|x')` for a primitive feature vector.
    pub fn relevance_of(&self, feature: &[f64]) -> Result<RelevanceDistribution, RelevanceError> {
        self.distribution(&self.scores(feature)?)
    }
}

/// `θ = [α, φ(f, f_1), .., φ(f, f_m)]`.
pub fn cue_scores(feature: &[f64], cues: &TaskCueSet) -> Result<Vec<f64>, RelevanceError> {
    let mut theta = Vec::with_capacity(cues.len() + 1);
    theta.push(cues.alpha);
    for cue in &cues.cues {
        let s = vector::similarity(feature, &cue.embedding).map_err(|e| match e {
            VectorError::DimensionMismatch { expected, found } => {
                RelevanceError::DimensionMismatch {
                    expected: found,
                    found: expected,
                }
            }
            other => other.into(),
        })?;
        theta.push(s);
    }
    Ok(theta)
}

/// Probability vector over `{null, cue_1, .., cue_m}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceDistribution(Vec<f64>);

impl RelevanceDistribution {
    pub fn null(m: usize) -> Self {
        let mut p = vec![0.0; m + 1];
        p[0] = 1.0;
        Self(p)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_null(&self) -> bool {
        self.0[0] == 1.0
    }
}

/// Indices (into `scores`) of the `k` largest entries; equal scores keep
/// the lower index.
pub fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Turns cue scores `θ` (entry 0 is the null floor) into `p(y|x')`.
///
/// If the best cue score is strictly below `alpha` the whole mass goes to
/// the null outcome. Otherwise the null entry is dropped, the `topk` largest
/// cue scores are kept and the kept vector is normalized to sum to one.
pub fn relevance_distribution(
    theta: &[f64],
    alpha: f64,
    topk: usize,
) -> Result<RelevanceDistribution, RelevanceError> {
    if theta.len() < 2 {
        return Err(RelevanceError::InvalidCueSet(
            "theta needs the null entry and at least one cue score".into(),
        ));
    }
    let m = theta.len() - 1;
    let cue_scores = &theta[1..];
    let best = cue_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if best < alpha {
        return Ok(RelevanceDistribution::null(m));
    }
    let kept = top_k_indices(cue_scores, topk.max(1));
    let total: f64 = kept.iter().map(|&j| cue_scores[j]).sum();
    if !(total > 0.0) {
        return Err(RelevanceError::DegenerateScores);
    }
    let mut p = vec![0.0; m + 1];
    for j in kept {
        p[j + 1] = cue_scores[j] / total;
    }
    Ok(RelevanceDistribution(p))
}

/// Shannon entropy in bits, with `0 log 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.log2())
        .sum::<f64>()
}

/// Generalized Jensen-Shannon divergence in bits with mixture weights
/// `(w_p, w_q)` (normalized internally).
///
/// Returns exactly zero when the two distributions are bitwise equal.
pub fn js_divergence(p: &[f64], q: &[f64], w_p: f64, w_q: f64) -> f64 {
    if p == q {
        return 0.0;
    }
    let total = w_p + w_q;
    let (a, b) = (w_p / total, w_q / total);
    let mut js = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        let m = a * pi + b * qi;
        if pi > 0.0 {
            js += a * pi * (pi / m).log2();
        }
        if qi > 0.0 {
            js += b * qi * (qi / m).log2();
        }
    }
    js.max(0.0)
}

/// Joint distribution of a source variable and the relevance variable,
/// given as a prior over sources and one conditional row per source.
#[derive(Debug, Clone, PartialEq)]
pub struct JointModel {
    priors: Vec<f64>,
    conditionals: Vec<Vec<f64>>,
    marginal: Vec<f64>,
}

const STOCHASTIC_TOL: f64 = 1e-9;

impl JointModel {
    /// Uniform prior `1/N` over the rows.
    pub fn uniform(conditionals: Vec<Vec<f64>>) -> Result<Self, RelevanceError> {
        let n = conditionals.len();
        if n == 0 {
            return Err(RelevanceError::InvalidModel("no rows".into()));
        }
        Self::weighted(vec![1.0 / n as f64; n], conditionals)
    }

    pub fn weighted(priors: Vec<f64>, conditionals: Vec<Vec<f64>>) -> Result<Self, RelevanceError> {
        if priors.len() != conditionals.len() || priors.is_empty() {
            return Err(RelevanceError::InvalidModel(
                "priors and conditionals must be non-empty and equally long".into(),
            ));
        }
        if (priors.iter().sum::<f64>() - 1.0).abs() > STOCHASTIC_TOL
            || priors.iter().any(|&p| p < 0.0)
        {
            return Err(RelevanceError::InvalidModel("priors must form a distribution".into()));
        }
        let width = conditionals[0].len();
        for row in &conditionals {
            if row.len() != width {
                return Err(RelevanceError::InvalidModel("ragged conditional rows".into()));
            }
            if (row.iter().sum::<f64>() - 1.0).abs() > STOCHASTIC_TOL || row.iter().any(|&p| p < 0.0)
            {
                return Err(RelevanceError::InvalidModel(
                    "conditional rows must be distributions".into(),
                ));
            }
        }
        let mut marginal = vec![0.0; width];
        for (p, row) in priors.iter().zip(&conditionals) {
            for (m, r) in marginal.iter_mut().zip(row) {
                *m += p * r;
            }
        }
        Ok(Self {
            priors,
            conditionals,
            marginal,
        })
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn conditionals(&self) -> &[Vec<f64>] {
        &self.conditionals
    }

    pub fn marginal(&self) -> &[f64] {
        &self.marginal
    }
}

/// Plug-in mutual information `I(X; Y)` in bits.
pub fn mutual_information(joint: &JointModel) -> f64 {
    let mut info = 0.0;
    for (&px, row) in joint.priors.iter().zip(&joint.conditionals) {
        if px == 0.0 {
            continue;
        }
        let mut inner = 0.0;
        for (&pyx, &py) in row.iter().zip(&joint.marginal) {
            if pyx > 0.0 {
                inner += pyx * (pyx / py).log2();
            }
        }
        info += px * inner;
    }
    info.max(0.0)
}
