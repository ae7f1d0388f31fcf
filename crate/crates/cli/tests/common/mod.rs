//! Shared fixtures: a fully mocked 50-problem pipeline run.

use std::collections::BTreeMap;
use std::path::Path;

use omni_cli::config::{
    Config, DedupeConfig, EndpointConfig, ExportSection, GenerationConfig, SamplerSection,
    ScoringSection, SourceConfig, StatsSection, TransportConfig, ValidationConfig,
};
use omni_core::gateway::RetryPolicy;

pub const TEACHER_A: &str = "teacher-alpha";
pub const TEACHER_B: &str = "teacher-beta";

/// Problems whose solutions the mock judge rejects; they fall below
/// quorum and are excluded to the sidecar.
pub const BAD_IDS: [&str; 3] = ["q013", "q027", "q041"];

pub fn problem_id(i: usize) -> String {
    format!("q{i:03}")
}

fn parity_marker(i: usize) -> &'static str {
    if i.is_multiple_of(2) {
        "grp-even"
    } else {
        "grp-odd"
    }
}

/// Foreign-format problem file: `{question, answer, uid}` per line.
pub fn write_problem_source(path: &Path, n: usize) {
    let mut lines = Vec::new();
    for i in 0..n {
        let id = problem_id(i);
        let hard = if BAD_IDS.contains(&id.as_str()) { " hard-variant" } else { "" };
        let question = format!(
            "Problem {id} ({}{hard}): compute the value for case {i}.",
            parity_marker(i)
        );
        lines.push(
            serde_json::json!({
                "question": question,
                "answer": "42",
                "uid": id,
                "tag": if i % 2 == 0 { "math" } else { "code" },
            })
            .to_string(),
        );
    }
    std::fs::write(path, lines.join("\n") + "\n").unwrap();
}

/// Scripted transport covering generation, validation and both scoring
/// rubrics. Every rule is single-response so replies are independent of
/// request interleaving.
pub fn write_mock_script(path: &Path) {
    let script = serde_json::json!({
        "rules": [
            {
                "name": "validate-hard",
                "match": "rigorous logical validator",
                "match_all": ["hard-variant"],
                "responses": ["reasoning_valid: true, solution_valid: false"]
            },
            {
                "name": "validate-ok",
                "match": "rigorous logical validator",
                "responses": [{"text": "{\"reasoning_valid\": true, \"solution_valid\": true}"}]
            },
            {
                "name": "rv-even",
                "match": "Reasoning Verbosity",
                "match_all": ["grp-even"],
                "responses": ["4"]
            },
            {
                "name": "rv-odd",
                "match": "Reasoning Verbosity",
                "responses": ["6"]
            },
            {
                "name": "cd-even",
                "match": "Cognitive Difficulty",
                "match_all": ["grp-even"],
                "responses": ["3"]
            },
            {
                "name": "cd-odd",
                "match": "Cognitive Difficulty",
                "responses": ["7"]
            },
            {
                "name": "gen-even",
                "match": "grp-even",
                "responses": ["<think>short chain for the even case</think>The value is 42."]
            },
            {
                "name": "gen-odd",
                "match": "grp-odd",
                "responses": ["<think>a much longer and considerably more elaborate chain of reasoning for the odd case, revisiting the constraints twice and double checking the arithmetic before settling</think>The value is 42."]
            }
        ]
    });
    std::fs::write(path, serde_json::to_string_pretty(&script).unwrap()).unwrap();
}

fn endpoint(name: &str) -> EndpointConfig {
    EndpointConfig {
        name: name.into(),
        base_url: "http://localhost:0/v1".into(),
        model_id: format!("{name}-model"),
        max_concurrency: 8,
        timeout_ms: 5_000,
        retry: RetryPolicy { max_attempts: 2, initial_backoff_ms: 0, backoff_multiplier: 1.0 },
        temperature: 0.6,
        max_output_tokens: 4096,
    }
}

/// A complete mock pipeline config rooted at `work_dir`.
pub fn fixture_config(dir: &Path, work_dir: &Path, n_problems: usize) -> Config {
    let source_path = dir.join("foreign_problems.jsonl");
    let script_path = dir.join("mock_script.json");
    if !source_path.exists() {
        write_problem_source(&source_path, n_problems);
    }
    if !script_path.exists() {
        write_mock_script(&script_path);
    }

    Config {
        seed: 42,
        workers: 4,
        strict: false,
        work_dir: work_dir.to_path_buf(),
        sources: vec![SourceConfig {
            name: "demo".into(),
            path: source_path,
            format_adapter: "jsonl".into(),
            field_mapping: BTreeMap::from([
                ("question".to_string(), "prompt".to_string()),
                ("answer".to_string(), "reference_answer".to_string()),
                ("uid".to_string(), "id".to_string()),
                ("tag".to_string(), "domain_tag".to_string()),
            ]),
        }],
        dedupe: DedupeConfig::default(),
        transport: TransportConfig {
            kind: "mock".into(),
            script: Some(script_path),
            audit_log: None,
        },
        endpoints: vec![endpoint(TEACHER_A), endpoint(TEACHER_B)],
        generation: GenerationConfig {
            teachers: vec![TEACHER_A.into(), TEACHER_B.into()],
            per_teacher_count: 1,
            tokenizer: "whitespace".into(),
            system_prompt: String::new(),
        },
        validation: ValidationConfig {
            judge: "cross".into(),
            re_ask_bound: 2,
            regen_budget: 1,
            temperature: 0.0,
        },
        scoring: ScoringSection { judge: TEACHER_B.into(), ..Default::default() },
        sampler: SamplerSection::default(),
        export: ExportSection {
            sft: true,
            dpo: true,
            chosen_rv_range: [3, 5],
            filter: Some("s_cd <= 6 and solution_valid".into()),
        },
        stats: StatsSection { group_by: "domain_tag".into(), input: None },
        templates: Default::default(),
    }
}

/// Read a whole file, panicking with the path on failure.
pub fn slurp(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()))
}

#[allow(dead_code)]
pub fn jsonl_values(path: &Path) -> Vec<serde_json::Value> {
    String::from_utf8(slurp(path))
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

/// Work-dir paths for assertions.
pub fn paths(config: &Config) -> omni_cli::StagePaths {
    omni_cli::StagePaths::new(&config.work_dir)
}
