//! Multi-teacher CoT generation.
//!
//! Teacher responses are expected to wrap their reasoning in
//! `<think>...</think>` delimiters; the text before the closing
//! delimiter becomes the thought and the remainder the solution.
//! Responses without the delimiter are reported as unsplit rather than
//! guessed at. Every requested call is accounted for: records plus
//! failure reports always add up to `teachers x per_teacher_count`.

use futures::future::join_all;
use serde::Serialize;

use crate::corpus::{CoTRecord, Problem};
use crate::gateway::{ChatRequest, Gateway, ModelEndpoint};
use crate::tokenizer::Tokenizer;

/// Why a requested generation produced no record.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GenerationFailure {
    /// The transport gave up.
    CallFailed { problem_id: String, teacher: String, error: String },
    /// The response had no recognizable thought delimiter.
    Unsplit { problem_id: String, teacher: String, response_chars: usize },
}

/// Records and failure reports for one problem.
#[derive(Debug, Default)]
pub struct GenerationOutcome {
    pub records: Vec<CoTRecord>,
    pub failures: Vec<GenerationFailure>,
}

impl GenerationOutcome {
    /// Every call failed; the problem produced nothing.
    pub fn ungenerated(&self) -> bool {
        self.records.is_empty()
    }
}

/// Split a teacher response at the closing think delimiter. Returns
/// `None` when the delimiter is missing or either side ends up empty.
pub fn split_teacher_response(text: &str) -> Option<(String, String)> {
    const CLOSE: &str = "</think>";
    let close = text.find(CLOSE)?;
    let mut thought = text[..close].trim();
    thought = thought.strip_prefix("<think>").unwrap_or(thought).trim();
    let solution = text[close + CLOSE.len()..].trim();
    if thought.is_empty() || solution.is_empty() {
        return None;
    }
    Some((thought.to_string(), solution.to_string()))
}

/// Ask every teacher for `per_teacher_count` traces of one problem.
///
/// `cot_seq_start` offsets the per-teacher id counter so regeneration
/// rounds never collide with earlier ids.
pub async fn generate(
    gateway: &Gateway,
    problem: &Problem,
    teachers: &[ModelEndpoint],
    per_teacher_count: usize,
    tokenizer: &dyn Tokenizer,
    system_prompt: Option<&str>,
    cot_seq_start: usize,
) -> GenerationOutcome {
    let mut request = ChatRequest::user(&problem.prompt);
    if let Some(system) = system_prompt {
        if !system.is_empty() {
            request = request.with_system(system);
        }
    }

    let calls = teachers.iter().flat_map(|teacher| {
        let request = &request;
        (0..per_teacher_count).map(move |i| {
            let seq = cot_seq_start + i;
            async move {
                let result = gateway.complete(teacher, request).await;
                (teacher, seq, result)
            }
        })
    });
    let results = join_all(calls).await;

    let mut outcome = GenerationOutcome::default();
    for (teacher, seq, result) in results {
        match result {
            Err(e) => outcome.failures.push(GenerationFailure::CallFailed {
                problem_id: problem.id.clone(),
                teacher: teacher.name.clone(),
                error: e.to_string(),
            }),
            Ok(completion) => match split_teacher_response(&completion.response.text) {
                None => outcome.failures.push(GenerationFailure::Unsplit {
                    problem_id: problem.id.clone(),
                    teacher: teacher.name.clone(),
                    response_chars: completion.response.text.chars().count(),
                }),
                Some((thought, solution)) => {
                    let token_count = tokenizer.count(&thought);
                    outcome.records.push(CoTRecord::pending(
                        &problem.id,
                        format!("{}-{:03}", teacher.name, seq),
                        thought,
                        solution,
                        &teacher.name,
                        token_count,
                        tokenizer.name(),
                    ));
                }
            },
        }
    }
    outcome
}

/// A foreign CoT rejected at import.
#[derive(Debug, Clone, Serialize)]
pub struct ImportReject {
    pub index: usize,
    pub teacher: String,
    pub reason: String,
}

/// Wrap pre-existing traces as pending records so they run through the
/// same validation as freshly generated ones.
pub fn import_existing(
    problem: &Problem,
    foreign_cots: &[(String, String, String)],
    tokenizer: &dyn Tokenizer,
) -> (Vec<CoTRecord>, Vec<ImportReject>) {
    let mut records = Vec::new();
    let mut rejects = Vec::new();
    for (index, (thought, solution, teacher)) in foreign_cots.iter().enumerate() {
        let reason = if thought.is_empty() {
            Some("empty thought")
        } else if solution.is_empty() {
            Some("empty solution")
        } else if teacher.is_empty() {
            Some("empty teacher")
        } else {
            None
        };
        if let Some(reason) = reason {
            rejects.push(ImportReject { index, teacher: teacher.clone(), reason: reason.into() });
            continue;
        }
        records.push(CoTRecord::pending(
            &problem.id,
            format!("{teacher}-import-{index:03}"),
            thought,
            solution,
            teacher,
            tokenizer.count(thought),
            tokenizer.name(),
        ));
    }
    (records, rejects)
}
