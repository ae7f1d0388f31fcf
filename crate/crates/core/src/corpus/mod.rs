//! Domain types and JSONL persistence for problems and annotated CoTs.
//!
//! A corpus is a stream of `(Problem, Vec<CoTRecord>)` groups. On disk it
//! is line-oriented JSON (UTF-8, LF): the default "joined" layout embeds
//! the problem fields in every CoT line; a "split" layout keeps a
//! problem file and a CoT file referencing problems by id. Serialized CoT
//! lines carry exactly the seven conventional metadata keys (`thought`,
//! `solution`, `full_response`, `teacher`, `thought_correctness_verify`,
//! `Reasoning_Verbosity`, `Cognitive_Difficulty`); everything this
//! pipeline adds on top lives under the `x_omni` namespace so readers of
//! the plain layout keep working. Unknown keys found while reading are
//! preserved in an extras map and re-emitted on write.

mod jsonl;
mod stats;

pub use jsonl::{
    partial_marker_path, read_corpus, read_corpus_split, read_problems, write_corpus,
    write_problems, CorpusReader, LineError, ReadReport, Rejection, Strictness, WriteReport,
};
pub use stats::{compute_stats, CorpusStats};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Top score on the 0..=9 grading scale used by both rubrics.
pub const MAX_LEVEL: u8 = 9;

/// A reasoning task with reference answer and source provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub prompt: String,
    pub reference_answer: String,
    /// Provenance tag: dataset name plus the original record id.
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain_tag: Option<String>,
    /// Unknown keys from foreign problem files, preserved verbatim.
    #[serde(flatten)]
    pub extras: BTreeMap<String, Value>,
}

impl Problem {
    pub fn new(
        id: impl Into<String>,
        prompt: impl Into<String>,
        reference_answer: impl Into<String>,
        source: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            prompt: prompt.into(),
            reference_answer: reference_answer.into(),
            source: source.into(),
            domain_tag: None,
            extras: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<(), InvariantViolation> {
        if self.id.is_empty() {
            return Err(InvariantViolation::EmptyProblemId);
        }
        if self.prompt.is_empty() {
            return Err(InvariantViolation::EmptyPrompt { id: self.id.clone() });
        }
        if self.reference_answer.is_empty() {
            return Err(InvariantViolation::EmptyReferenceAnswer { id: self.id.clone() });
        }
        Ok(())
    }
}

/// A `{level, judge}` score for one rubric, with the raw judge calls kept
/// for audit. For RV annotations the judge score is fused with the
/// log-normalized length; `l_norm` holds the normalized length used and
/// `fused` is set. CD annotations are plain judge scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreAnnotation {
    pub level: u8,
    pub judge: String,
    pub raw_evaluations: Vec<u8>,
    pub l_norm: Option<f64>,
    pub fused: bool,
}

impl ScoreAnnotation {
    /// Invariants shared by both rubrics plus the RV/CD-specific shape:
    /// `l_norm` is present iff the annotation was produced by the fusion
    /// rule (RV), and never on CD.
    pub fn validate(&self, rubric_is_rv: bool) -> Result<(), InvariantViolation> {
        if self.level > MAX_LEVEL {
            return Err(InvariantViolation::LevelOutOfRange { level: self.level });
        }
        if let Some(&bad) = self.raw_evaluations.iter().find(|&&e| e > MAX_LEVEL) {
            return Err(InvariantViolation::RawEvaluationOutOfRange { value: bad });
        }
        if self.l_norm.is_some() != self.fused {
            return Err(InvariantViolation::LNormShape);
        }
        if !rubric_is_rv && self.fused {
            return Err(InvariantViolation::LNormShape);
        }
        Ok(())
    }
}

/// One teacher-generated trace with its validation verdicts and score
/// annotations.
///
/// Validation state is three-valued: `None` verdicts mean the record is
/// still pending, `validation_failed` marks records whose judge response
/// never parsed (quarantined). `rv`/`cd` are `None` until scored;
/// `rv_unscored`/`cd_unscored` distinguish "scoring was attempted and
/// failed" from "not scored yet".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoTRecord {
    pub problem_id: String,
    pub cot_id: String,
    pub thought: String,
    pub solution: String,
    pub full_response: String,
    pub teacher: String,
    pub thought_correctness_verify: Option<bool>,
    pub solution_valid: Option<bool>,
    #[serde(default)]
    pub validation_failed: bool,
    pub token_count: u64,
    /// Name of the tokenizer that produced `token_count`.
    #[serde(default)]
    pub tokenizer: String,
    pub rv: Option<ScoreAnnotation>,
    pub cd: Option<ScoreAnnotation>,
    #[serde(default)]
    pub rv_unscored: bool,
    #[serde(default)]
    pub cd_unscored: bool,
    /// Unknown keys from foreign CoT lines, preserved verbatim.
    #[serde(default)]
    pub extras: BTreeMap<String, Value>,
}

impl CoTRecord {
    /// A fresh, unvalidated, unscored record. `full_response` is rebuilt
    /// from the join convention.
    pub fn pending(
        problem_id: impl Into<String>,
        cot_id: impl Into<String>,
        thought: impl Into<String>,
        solution: impl Into<String>,
        teacher: impl Into<String>,
        token_count: u64,
        tokenizer: impl Into<String>,
    ) -> Self {
        let thought = thought.into();
        let solution = solution.into();
        let full_response = join_full_response(&thought, &solution);
        Self {
            problem_id: problem_id.into(),
            cot_id: cot_id.into(),
            thought,
            solution,
            full_response,
            teacher: teacher.into(),
            thought_correctness_verify: None,
            solution_valid: None,
            validation_failed: false,
            token_count,
            tokenizer: tokenizer.into(),
            rv: None,
            cd: None,
            rv_unscored: false,
            cd_unscored: false,
            extras: BTreeMap::new(),
        }
    }

    /// Both verdicts present and true.
    pub fn is_fully_correct(&self) -> bool {
        self.thought_correctness_verify == Some(true) && self.solution_valid == Some(true)
    }

    /// Scored on both rubrics, so the record is eligible for samplers.
    pub fn is_scored(&self) -> bool {
        self.rv.is_some() && self.cd.is_some()
    }

    pub fn validate(&self) -> Result<(), InvariantViolation> {
        if self.cot_id.is_empty() {
            return Err(InvariantViolation::EmptyCotId { problem_id: self.problem_id.clone() });
        }
        if self.full_response != join_full_response(&self.thought, &self.solution) {
            return Err(InvariantViolation::JoinMismatch { cot_id: self.cot_id.clone() });
        }
        if !self.thought.is_empty() && self.token_count == 0 {
            return Err(InvariantViolation::ZeroTokenCount { cot_id: self.cot_id.clone() });
        }
        if self.validation_failed
            && (self.thought_correctness_verify.is_some() || self.solution_valid.is_some())
        {
            return Err(InvariantViolation::FailedWithVerdict { cot_id: self.cot_id.clone() });
        }
        if let Some(rv) = &self.rv {
            rv.validate(true)?;
        }
        if let Some(cd) = &self.cd {
            cd.validate(false)?;
        }
        Ok(())
    }
}

/// The fixed thought/solution join convention: thought, one blank line,
/// then solution.
pub fn join_full_response(thought: &str, solution: &str) -> String {
    format!("{thought}\n\n{solution}")
}

/// A corpus type invariant that a record failed.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InvariantViolation {
    #[error("problem id is empty")]
    EmptyProblemId,
    #[error("problem {id} has an empty prompt")]
    EmptyPrompt { id: String },
    #[error("problem {id} has an empty reference answer")]
    EmptyReferenceAnswer { id: String },
    #[error("duplicate problem id {id}")]
    DuplicateProblemId { id: String },
    #[error("cot record under problem {problem_id} has an empty cot_id")]
    EmptyCotId { problem_id: String },
    #[error("cot {cot_id}: full_response does not reconstruct from thought + solution")]
    JoinMismatch { cot_id: String },
    #[error("cot {cot_id}: non-empty thought with token_count 0")]
    ZeroTokenCount { cot_id: String },
    #[error("cot {cot_id}: validation_failed record carries verdicts")]
    FailedWithVerdict { cot_id: String },
    #[error("cot {cot_id} references problem {actual}, expected {expected}")]
    ProblemIdMismatch { cot_id: String, expected: String, actual: String },
    #[error("cot {cot_id}: extras key {key} shadows a layout key")]
    ReservedExtrasKey { cot_id: String, key: String },
    #[error("score level {level} outside 0..=9")]
    LevelOutOfRange { level: u8 },
    #[error("raw evaluation {value} outside 0..=9")]
    RawEvaluationOutOfRange { value: u8 },
    #[error("l_norm must be present exactly on fused RV annotations")]
    LNormShape,
}

/// Errors from corpus I/O.
#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON at {path}:{line}: {message}")]
    MalformedLine { path: String, line: u64, message: String },
    #[error("record error at {path}:{line}: {message}")]
    RecordError { path: String, line: u64, message: String },
    #[error("invariant violation: {0}")]
    Invariant(#[from] InvariantViolation),
}
