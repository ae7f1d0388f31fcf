//! LLM-as-a-judge correctness validation.
//!
//! Each CoT is judged against the validation template, the response is
//! parsed into `(reasoning_valid, solution_valid)`, and the retention
//! rule keeps every record whose final answer is correct: flawed
//! reasoning with a correct answer survives for preference training,
//! wrong answers are discarded. Records whose judge response never
//! parses are quarantined, never silently dropped.
//!
//! Verdict parsing is deliberately forgiving. A JSON object response is
//! tried first; otherwise the response is scanned for the two key names
//! (case-insensitive, any separator) with a boolean literal within the
//! next three tokens. Template echoes parse to nothing and are skipped
//! because `bool` is not a boolean literal.

use serde::Serialize;

use crate::corpus::{CoTRecord, Problem};
use crate::gateway::{ChatRequest, Gateway, ModelEndpoint};
use crate::templates::PromptTemplates;

/// Problems must end up with at least this many fully correct CoTs to
/// stay in the main corpus.
pub const MIN_CORRECT_COTS: usize = 2;

/// A parsed judge verdict for one record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationVerdict {
    pub reasoning_valid: bool,
    pub solution_valid: bool,
    pub judge: String,
    /// Judge calls spent (first ask plus re-asks).
    pub attempts: u32,
    pub raw_response: String,
}

/// Verdict or quarantine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValidationOutcome {
    Verdict(ValidationVerdict),
    /// No parseable verdict within the re-ask budget.
    Failed { judge: String, attempts: u32, last_response: Option<String> },
}

fn normalize_key(key: &str) -> String {
    key.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

fn parse_json_verdict(text: &str) -> Option<(bool, bool)> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    if end <= start {
        return None;
    }
    let value: serde_json::Value = serde_json::from_str(&text[start..=end]).ok()?;
    let obj = value.as_object()?;
    let mut reasoning = None;
    let mut solution = None;
    for (key, val) in obj {
        let as_bool = match val {
            serde_json::Value::Bool(b) => Some(*b),
            serde_json::Value::String(s) => match s.to_ascii_lowercase().as_str() {
                "true" => Some(true),
                "false" => Some(false),
                _ => None,
            },
            _ => None,
        };
        match normalize_key(key).as_str() {
            "reasoningvalid" => reasoning = as_bool,
            "solutionvalid" => solution = as_bool,
            _ => {}
        }
    }
    Some((reasoning?, solution?))
}

fn scan_key(tokens: &[String], key: &str) -> Option<bool> {
    for (i, token) in tokens.iter().enumerate() {
        if token != key {
            continue;
        }
        // The key name may be split ("reasoning valid") or run through a
        // qualifier ("reasoning process validity").
        let Some(valid_at) = (i + 1..=(i + 2).min(tokens.len().saturating_sub(1)))
            .find(|&j| tokens.get(j).is_some_and(|t| t.starts_with("valid")))
        else {
            continue;
        };
        let window_end = (valid_at + 3).min(tokens.len().saturating_sub(1));
        for token in &tokens[valid_at + 1..=window_end] {
            match token.as_str() {
                "true" => return Some(true),
                "false" => return Some(false),
                _ => {}
            }
        }
    }
    None
}

/// Parse a judge response into `(reasoning_valid, solution_valid)`.
pub fn parse_verdict(text: &str) -> Option<(bool, bool)> {
    if let Some(verdict) = parse_json_verdict(text) {
        return Some(verdict);
    }
    let tokens: Vec<String> = text
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_ascii_lowercase())
        .collect();
    let reasoning = scan_key(&tokens, "reasoning")?;
    let solution = scan_key(&tokens, "solution")?;
    Some((reasoning, solution))
}

/// Judge one record. Unparseable responses are re-asked up to
/// `re_ask_bound` additional times before the record is quarantined.
pub async fn validate(
    gateway: &Gateway,
    judge: &ModelEndpoint,
    templates: &PromptTemplates,
    problem: &Problem,
    record: &CoTRecord,
    re_ask_bound: u32,
) -> ValidationOutcome {
    let prompt = templates.render_validation(
        &problem.prompt,
        &problem.reference_answer,
        &record.thought,
        &record.solution,
    );
    let request = ChatRequest::user(&prompt);

    let mut attempts = 0;
    let mut last_response = None;
    while attempts <= re_ask_bound {
        attempts += 1;
        match gateway.complete(judge, &request).await {
            Err(e) => {
                tracing::warn!(cot = %record.cot_id, judge = %judge.name, error = %e, "validation call failed");
            }
            Ok(completion) => {
                let text = completion.response.text;
                if let Some((reasoning_valid, solution_valid)) = parse_verdict(&text) {
                    return ValidationOutcome::Verdict(ValidationVerdict {
                        reasoning_valid,
                        solution_valid,
                        judge: judge.name.clone(),
                        attempts,
                        raw_response: text,
                    });
                }
                last_response = Some(text);
            }
        }
    }
    ValidationOutcome::Failed { judge: judge.name.clone(), attempts, last_response }
}

/// Write the outcome onto the record.
pub fn attach_verdict(record: &mut CoTRecord, outcome: &ValidationOutcome) {
    match outcome {
        ValidationOutcome::Verdict(v) => {
            record.thought_correctness_verify = Some(v.reasoning_valid);
            record.solution_valid = Some(v.solution_valid);
            record.validation_failed = false;
        }
        ValidationOutcome::Failed { .. } => {
            record.thought_correctness_verify = None;
            record.solution_valid = None;
            record.validation_failed = true;
        }
    }
}

/// Judge assignment: prefer a judge that is not the record's own
/// teacher; fall back to the first in the pool.
pub fn pick_cross_judge<'a>(pool: &'a [ModelEndpoint], teacher: &str) -> Option<&'a ModelEndpoint> {
    pool.iter().find(|e| e.name != teacher).or_else(|| pool.first())
}

/// Retention rule: keep everything except wrong answers and quarantined
/// records. Returns `(retained, discarded)`.
pub fn apply_retention(records: Vec<CoTRecord>) -> (Vec<CoTRecord>, Vec<CoTRecord>) {
    records
        .into_iter()
        .partition(|r| r.solution_valid == Some(true) && !r.validation_failed)
}

/// Fully correct records among `records`.
pub fn count_correct(records: &[CoTRecord]) -> usize {
    records.iter().filter(|r| r.is_fully_correct()).count()
}

/// Outcome of the minimum-correct-CoT guarantee for one problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum QuorumStatus {
    Satisfied { regen_rounds: u32 },
    BelowQuorum { correct: usize },
}

/// Ensure at least [`MIN_CORRECT_COTS`] fully correct records, invoking
/// `regen_round(round)` for up to `regen_budget` extra
/// generation+validation rounds. New retained records are appended to
/// `records`; problems still short afterwards are reported below quorum
/// for sidecar exclusion.
pub async fn enforce_min_correct<F, Fut>(
    records: &mut Vec<CoTRecord>,
    regen_budget: u32,
    mut regen_round: F,
) -> QuorumStatus
where
    F: FnMut(u32) -> Fut,
    Fut: std::future::Future<Output = Vec<CoTRecord>>,
{
    let mut rounds = 0;
    while count_correct(records) < MIN_CORRECT_COTS && rounds < regen_budget {
        rounds += 1;
        let fresh = regen_round(rounds).await;
        records.extend(fresh);
    }
    let correct = count_correct(records);
    if correct >= MIN_CORRECT_COTS {
        QuorumStatus::Satisfied { regen_rounds: rounds }
    } else {
        QuorumStatus::BelowQuorum { correct }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MockResponse, MockRule, MockScript, MockTransport, RetryPolicy};

    fn endpoint(name: &str) -> ModelEndpoint {
        ModelEndpoint {
            name: name.into(),
            base_url: "http://localhost:0".into(),
            model_id: name.into(),
            max_concurrency: 4,
            timeout_ms: 2_000,
            retry: RetryPolicy { max_attempts: 1, initial_backoff_ms: 0, backoff_multiplier: 1.0 },
            temperature: 0.0,
            max_output_tokens: 512,
        }
    }

    fn record(id: &str) -> CoTRecord {
        CoTRecord::pending("p1", id, "some thought", "some solution", "teacher-a", 2, "whitespace")
    }

    fn verdict(id: &str, reasoning: Option<bool>, solution: Option<bool>, failed: bool) -> CoTRecord {
        let mut r = record(id);
        r.thought_correctness_verify = reasoning;
        r.solution_valid = solution;
        r.validation_failed = failed;
        r
    }

    #[test]
    fn canonical_template_output_parses() {
        assert_eq!(
            parse_verdict("reasoning_valid: true, solution_valid: true"),
            Some((true, true))
        );
    }

    #[test]
    fn json_verdicts_parse_first() {
        assert_eq!(
            parse_verdict(r#"{"reasoning_valid": false, "solution_valid": true}"#),
            Some((false, true))
        );
        assert_eq!(
            parse_verdict("```json\n{\"Reasoning_Valid\": \"TRUE\", \"solution_valid\": false}\n```"),
            Some((true, false))
        );
    }

    #[test]
    fn drifting_prose_parses() {
        assert_eq!(
            parse_verdict(
                "After checking each step: Reasoning_Valid=TRUE even though terse, \
                 and comparing numbers gives solution_valid : false"
            ),
            Some((true, false))
        );
        assert_eq!(
            parse_verdict("Reasoning validity is false. Solution validity is true."),
            Some((false, true))
        );
    }

    #[test]
    fn template_echo_does_not_fool_the_parser() {
        // The format instruction mentions the keys with `bool` rather
        // than a boolean literal; the real answer follows.
        let text = "Output Format: reasoning_valid: bool, solution_valid: bool\n\
                    reasoning_valid: false, solution_valid: true";
        assert_eq!(parse_verdict(text), Some((false, true)));
        // Echo alone parses to nothing.
        assert_eq!(
            parse_verdict("Output Format: reasoning_valid: bool, solution_valid: bool"),
            None
        );
    }

    #[test]
    fn unparseable_responses_return_none() {
        assert_eq!(parse_verdict(""), None);
        assert_eq!(parse_verdict("the reasoning is sound and the answer checks out"), None);
        assert_eq!(parse_verdict("reasoning_valid: true"), None);
    }

    /// Hand-labeled phrasing fixtures; every entry maps to exactly one
    /// of verdict or unparseable.
    #[test]
    fn parser_is_total_over_fixture_set() {
        let fixtures: Vec<(&str, Option<(bool, bool)>)> = vec![
            ("reasoning_valid: true, solution_valid: true", Some((true, true))),
            ("reasoning_valid: false, solution_valid: true", Some((false, true))),
            ("reasoning_valid: true, solution_valid: false", Some((true, false))),
            ("reasoning_valid: false, solution_valid: false", Some((false, false))),
            (r#"{"reasoning_valid": false, "solution_valid": true}"#, Some((false, true))),
            (r#"{"solution_valid": "False", "reasoning_valid": "True"}"#, Some((true, false))),
            ("REASONING_VALID=TRUE; SOLUTION_VALID=FALSE", Some((true, false))),
            ("Reasoning Valid - false | Solution Valid - true", Some((false, true))),
            ("reasoning valid? true. solution valid? true.", Some((true, true))),
            ("* reasoning_valid: **false**\n* solution_valid: **true**", Some((false, true))),
            ("Verdict: reasoning_valid:false solution_valid:true", Some((false, true))),
            ("solution_valid: true, reasoning_valid: false", Some((false, true))),
            ("The reasoning validity: FALSE. The solution validity: TRUE.", Some((false, true))),
            ("I think it's correct overall.", None),
            ("reasoning_valid: maybe, solution_valid: true", None),
        ];
        for (text, expected) in fixtures {
            assert_eq!(parse_verdict(text), expected, "fixture: {text:?}");
        }
    }

    #[tokio::test]
    async fn validate_attaches_parsed_verdict() {
        let script = MockScript::constant("", "reasoning_valid: true, solution_valid: true");
        let gateway = Gateway::new(MockTransport::new(script)).without_backoff();
        let templates = PromptTemplates::builtin();
        let problem = Problem::new("p1", "what?", "42", "unit:p1");
        let mut rec = record("c1");
        let outcome = validate(&gateway, &endpoint("judge"), &templates, &problem, &rec, 2).await;
        let ValidationOutcome::Verdict(v) = &outcome else {
            panic!("expected verdict")
        };
        assert!((v.reasoning_valid, v.solution_valid) == (true, true));
        assert_eq!(v.attempts, 1);
        attach_verdict(&mut rec, &outcome);
        assert!(rec.is_fully_correct());
    }

    #[tokio::test]
    async fn reask_recovers_from_garbage_then_quarantines() {
        let script = MockScript {
            rules: vec![MockRule {
                name: None,
                match_substring: None,
                match_all: vec![],
                responses: vec![
                    MockResponse::Text("hmm, looks fine".into()),
                    MockResponse::Text("reasoning_valid: false, solution_valid: true".into()),
                ],
            }],
        };
        let gateway = Gateway::new(MockTransport::new(script)).without_backoff();
        let templates = PromptTemplates::builtin();
        let problem = Problem::new("p1", "what?", "42", "unit:p1");
        let outcome =
            validate(&gateway, &endpoint("judge"), &templates, &problem, &record("c1"), 2).await;
        let ValidationOutcome::Verdict(v) = outcome else { panic!("expected verdict") };
        assert_eq!(v.attempts, 2);
        assert_eq!((v.reasoning_valid, v.solution_valid), (false, true));

        // All garbage: quarantine after 1 + re_ask_bound attempts.
        let script = MockScript::constant("", "word salad");
        let gateway = Gateway::new(MockTransport::new(script)).without_backoff();
        let outcome =
            validate(&gateway, &endpoint("judge"), &templates, &problem, &record("c2"), 2).await;
        let ValidationOutcome::Failed { attempts, .. } = outcome else {
            panic!("expected quarantine")
        };
        assert_eq!(attempts, 3);
        let mut rec = record("c2");
        attach_verdict(&mut rec, &ValidationOutcome::Failed { judge: "j".into(), attempts: 3, last_response: None });
        assert!(rec.validation_failed);
        assert!(rec.validate().is_ok());
    }

    #[test]
    fn retention_keeps_correct_answers_only() {
        let records = vec![
            verdict("tt", Some(true), Some(true), false),
            verdict("ft", Some(false), Some(true), false),
            verdict("tf", Some(true), Some(false), false),
        ];
        let (retained, discarded) = apply_retention(records);
        let kept: Vec<&str> = retained.iter().map(|r| r.cot_id.as_str()).collect();
        assert_eq!(kept, vec!["tt", "ft"]);
        assert_eq!(discarded.len(), 1);
        assert_eq!(discarded[0].cot_id, "tf");
    }

    #[test]
    fn retention_edge_cases() {
        let all_good = vec![
            verdict("a", Some(true), Some(true), false),
            verdict("b", Some(true), Some(true), false),
        ];
        let (retained, discarded) = apply_retention(all_good);
        assert_eq!((retained.len(), discarded.len()), (2, 0));

        let all_failed = vec![verdict("a", None, None, true), verdict("b", None, None, true)];
        let (retained, discarded) = apply_retention(all_failed);
        assert_eq!((retained.len(), discarded.len()), (0, 2));
    }

    #[test]
    fn retention_is_a_partition() {
        let records: Vec<CoTRecord> = (0..30)
            .map(|i| {
                verdict(
                    &format!("c{i}"),
                    Some(i % 2 == 0),
                    if i % 5 == 0 { None } else { Some(i % 3 != 0) },
                    i % 5 == 0,
                )
            })
            .collect();
        let ids: std::collections::BTreeSet<String> =
            records.iter().map(|r| r.cot_id.clone()).collect();
        let (retained, discarded) = apply_retention(records);
        let mut union = std::collections::BTreeSet::new();
        for r in retained.iter().chain(discarded.iter()) {
            assert!(union.insert(r.cot_id.clone()), "overlap on {}", r.cot_id);
        }
        assert_eq!(union, ids);
    }

    #[test]
    fn cross_judge_prefers_other_model() {
        let pool = vec![endpoint("alpha"), endpoint("beta")];
        assert_eq!(pick_cross_judge(&pool, "alpha").unwrap().name, "beta");
        assert_eq!(pick_cross_judge(&pool, "beta").unwrap().name, "alpha");
        assert_eq!(pick_cross_judge(&pool, "gamma").unwrap().name, "alpha");
        let single = vec![endpoint("alpha")];
        assert_eq!(pick_cross_judge(&single, "alpha").unwrap().name, "alpha");
    }

    #[tokio::test]
    async fn quorum_already_satisfied_needs_no_regen() {
        let mut records = vec![
            verdict("a", Some(true), Some(true), false),
            verdict("b", Some(true), Some(true), false),
        ];
        let status = enforce_min_correct(&mut records, 3, |_| async { panic!("no regen expected") }).await;
        assert_eq!(status, QuorumStatus::Satisfied { regen_rounds: 0 });
    }

    #[tokio::test]
    async fn quorum_satisfied_after_one_regen_round() {
        let mut records = vec![verdict("a", Some(true), Some(true), false)];
        let status = enforce_min_correct(&mut records, 2, |round| async move {
            assert_eq!(round, 1);
            vec![verdict("regen", Some(true), Some(true), false)]
        })
        .await;
        assert_eq!(status, QuorumStatus::Satisfied { regen_rounds: 1 });
        assert_eq!(records.len(), 2);
    }

    #[tokio::test]
    async fn quorum_exhausts_budget_and_reports_below() {
        let mut records = vec![verdict("a", Some(false), Some(true), false)];
        let status =
            enforce_min_correct(&mut records, 2, |_| async { Vec::new() }).await;
        assert_eq!(status, QuorumStatus::BelowQuorum { correct: 0 });
        assert_eq!(records.len(), 1);
    }
}
