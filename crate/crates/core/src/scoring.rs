//! Reasoning-verbosity and cognitive-difficulty scoring.
//!
//! RV fuses an LLM judge score with the log-normalized token length of
//! the thought: `l_norm = K * log(L - L_min + 1) / log(L_max - L_min + 1)`
//! maps the corpus length range onto the 0..=K grading scale, and the
//! final level is `round(alpha * mean(judge scores) + (1 - alpha) *
//! l_norm)` with half-up rounding. CD is the rounded mean of judge
//! scores alone. Length bounds come from a first pass over the corpus
//! unless fixed bounds are configured for incremental runs.

use serde::{Deserialize, Serialize};

use crate::corpus::{CoTRecord, Problem, ScoreAnnotation, MAX_LEVEL};
use crate::gateway::{ChatRequest, Gateway, GatewayError, ModelEndpoint};
use crate::templates::PromptTemplates;

/// Scoring parameters. `alpha` weights the judge score against the
/// normalized length and must lie in (0, 1]; the upper boundary is
/// allowed so the fusion can be collapsed to the pure judge score.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub alpha: f64,
    pub grading_scale_k: u8,
    pub n_evals_rv: u32,
    pub n_evals_cd: u32,
    /// Fixed `(l_min, l_max)` override; when absent the bounds are
    /// computed from the corpus being scored.
    pub fixed_bounds: Option<(u64, u64)>,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            grading_scale_k: MAX_LEVEL,
            n_evals_rv: 1,
            n_evals_cd: 1,
            fixed_bounds: None,
        }
    }
}

impl ScoringConfig {
    pub fn validate(&self) -> Result<(), ScoringError> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(ScoringError::InvalidConfig(format!(
                "alpha must be in (0, 1], got {}",
                self.alpha
            )));
        }
        if self.grading_scale_k < 1 {
            return Err(ScoringError::InvalidConfig("grading_scale_k must be >= 1".into()));
        }
        if self.n_evals_rv < 1 || self.n_evals_cd < 1 {
            return Err(ScoringError::InvalidConfig("n_evals must be >= 1".into()));
        }
        if let Some((lo, hi)) = self.fixed_bounds {
            if lo > hi {
                return Err(ScoringError::InvalidConfig(format!(
                    "fixed bounds {lo} > {hi}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScoringError {
    #[error("invalid scoring config: {0}")]
    InvalidConfig(String),
    #[error("cannot compute length bounds over an empty corpus")]
    EmptyCorpus,
    #[error("no parseable judge evaluation for {rubric} on cot {cot_id}")]
    Unscored { rubric: Rubric, cot_id: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Which rubric a judge call grades.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rubric {
    #[serde(rename = "rv")]
    ReasoningVerbosity,
    #[serde(rename = "cd")]
    CognitiveDifficulty,
}

impl std::fmt::Display for Rubric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Rubric::ReasoningVerbosity => write!(f, "rv"),
            Rubric::CognitiveDifficulty => write!(f, "cd"),
        }
    }
}

/// Token-count bounds of a corpus, the first pass of a scoring run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LBounds {
    pub l_min: u64,
    pub l_max: u64,
    /// All records share one token count.
    pub degenerate: bool,
}

/// Exact min and max token counts over the corpus.
pub fn compute_l_bounds<I>(token_counts: I) -> Result<LBounds, ScoringError>
where
    I: IntoIterator<Item = u64>,
{
    let mut bounds: Option<(u64, u64)> = None;
    for count in token_counts {
        bounds = Some(match bounds {
            None => (count, count),
            Some((lo, hi)) => (lo.min(count), hi.max(count)),
        });
    }
    let (l_min, l_max) = bounds.ok_or(ScoringError::EmptyCorpus)?;
    Ok(LBounds { l_min, l_max, degenerate: l_min == l_max })
}

/// Log-normalize a token count onto `[0, k]`.
///
/// Exactly 0 at `l_min` and exactly `k` at `l_max`. Counts outside the
/// bounds (possible when bounds come from config rather than the same
/// corpus) are clamped with a warning. Degenerate bounds map everything
/// to the neutral midpoint `k / 2`.
pub fn l_norm(l: u64, l_min: u64, l_max: u64, k: u8) -> f64 {
    debug_assert!(l_min <= l_max);
    if l_min == l_max {
        return f64::from(k) / 2.0;
    }
    let clamped = l.clamp(l_min, l_max);
    if clamped != l {
        tracing::warn!(l, l_min, l_max, "token count outside bounds, clamping");
    }
    let num = ((clamped - l_min + 1) as f64).ln();
    let den = ((l_max - l_min + 1) as f64).ln();
    // Ratio first: num == den must give exactly k, and the ratio never
    // exceeds 1, so the scaled value never exceeds k.
    f64::from(k) * (num / den)
}

/// Half-up rounding for nonnegative scores (ties round toward +inf).
pub fn round_half_up(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    x.round()
}

fn mean(raw_evals: &[u8]) -> f64 {
    debug_assert!(!raw_evals.is_empty());
    raw_evals.iter().map(|&e| f64::from(e)).sum::<f64>() / raw_evals.len() as f64
}

/// Fuse judge evaluations with the normalized length into the final RV
/// level: `round(alpha * mean(raw) + (1 - alpha) * l_norm)`, clamped to
/// the 0..=9 scale.
pub fn fuse_rv(raw_evals: &[u8], l_norm_value: f64, alpha: f64) -> u8 {
    let fused = alpha * mean(raw_evals) + (1.0 - alpha) * l_norm_value;
    round_half_up(fused).clamp(0.0, f64::from(MAX_LEVEL)) as u8
}

/// CD level: half-up rounded mean of the judge evaluations.
pub fn score_cd(raw_evals: &[u8]) -> u8 {
    round_half_up(mean(raw_evals)).clamp(0.0, f64::from(MAX_LEVEL)) as u8
}

/// First standalone integer in a judge response, if any.
pub fn parse_first_integer(text: &str) -> Option<u64> {
    let mut digits = String::new();
    for c in text.chars() {
        if c.is_ascii_digit() {
            digits.push(c);
        } else if !digits.is_empty() {
            break;
        }
    }
    if digits.is_empty() {
        return None;
    }
    // Absurdly long digit runs are still "an integer", just never a
    // valid score; saturate instead of failing the parse.
    Some(digits.parse::<u64>().unwrap_or(u64::MAX))
}

/// Run `n_evals` independent judge calls for one rubric and return the
/// parseable in-range evaluations. Each unusable response earns one
/// re-ask; evaluations that still fail are dropped. An empty result is
/// reported as `Unscored`.
pub async fn judge_score(
    gateway: &Gateway,
    judge: &ModelEndpoint,
    templates: &PromptTemplates,
    problem: &Problem,
    record: &CoTRecord,
    rubric: Rubric,
    n_evals: u32,
) -> Result<Vec<u8>, ScoringError> {
    let prompt = match rubric {
        Rubric::ReasoningVerbosity => {
            templates.render_rv(&problem.prompt, &record.thought, &record.solution)
        }
        Rubric::CognitiveDifficulty => {
            templates.render_cd(&problem.prompt, &record.thought, &record.solution)
        }
    };
    let request = ChatRequest::user(&prompt);

    let mut evals = Vec::new();
    for _ in 0..n_evals {
        let mut accepted = None;
        for _attempt in 0..2 {
            let score = match gateway.complete(judge, &request).await {
                Ok(completion) => parse_first_integer(&completion.response.text),
                Err(e) => {
                    tracing::warn!(cot = %record.cot_id, %rubric, error = %e, "judge call failed");
                    None
                }
            };
            match score {
                Some(s) if s <= u64::from(MAX_LEVEL) => {
                    accepted = Some(s as u8);
                    break;
                }
                _ => continue,
            }
        }
        if let Some(s) = accepted {
            evals.push(s);
        }
    }
    if evals.is_empty() {
        return Err(ScoringError::Unscored { rubric, cot_id: record.cot_id.clone() });
    }
    Ok(evals)
}

/// Score one retained record on both rubrics, attaching annotations (or
/// the per-rubric unscored marker) in place.
pub async fn score_record(
    gateway: &Gateway,
    judge: &ModelEndpoint,
    templates: &PromptTemplates,
    config: &ScoringConfig,
    bounds: &LBounds,
    problem: &Problem,
    record: &mut CoTRecord,
) -> Result<(), ScoringError> {
    match judge_score(
        gateway,
        judge,
        templates,
        problem,
        record,
        Rubric::ReasoningVerbosity,
        config.n_evals_rv,
    )
    .await
    {
        Ok(raw) => {
            let ln = l_norm(
                record.token_count,
                bounds.l_min,
                bounds.l_max,
                config.grading_scale_k,
            );
            record.rv = Some(ScoreAnnotation {
                level: fuse_rv(&raw, ln, config.alpha),
                judge: judge.name.clone(),
                raw_evaluations: raw,
                l_norm: Some(ln),
                fused: true,
            });
            record.rv_unscored = false;
        }
        Err(ScoringError::Unscored { .. }) => {
            record.rv = None;
            record.rv_unscored = true;
        }
        Err(e) => return Err(e),
    }

    match judge_score(
        gateway,
        judge,
        templates,
        problem,
        record,
        Rubric::CognitiveDifficulty,
        config.n_evals_cd,
    )
    .await
    {
        Ok(raw) => {
            record.cd = Some(ScoreAnnotation {
                level: score_cd(&raw),
                judge: judge.name.clone(),
                raw_evaluations: raw,
                l_norm: None,
                fused: false,
            });
            record.cd_unscored = false;
        }
        Err(ScoringError::Unscored { .. }) => {
            record.cd = None;
            record.cd_unscored = true;
        }
        Err(e) => return Err(e),
    }
    Ok(())
}
