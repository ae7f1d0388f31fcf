//! Ingestion of foreign reasoning-problem corpora.
//!
//! A [`SourceSpec`] names a file, a format adapter, and a field mapping
//! from foreign keys to problem fields. Adapters are looked up in a
//! registry so new corpus formats plug in without touching the
//! pipeline. After ingestion, [`dedupe`] collapses repeated prompts,
//! keeping the first occurrence.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::Problem;

/// One foreign corpus to ingest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourceSpec {
    pub name: String,
    pub path: PathBuf,
    #[serde(default = "default_adapter")]
    pub format_adapter: String,
    /// Foreign key -> problem field (`prompt`, `reference_answer`,
    /// `id`, `domain_tag`).
    pub field_mapping: BTreeMap<String, String>,
}

fn default_adapter() -> String {
    "jsonl".into()
}

impl SourceSpec {
    pub fn validate(&self) -> Result<(), SourceError> {
        if self.name.is_empty() {
            return Err(SourceError::InvalidSpec("source name is empty".into()));
        }
        for required in ["prompt", "reference_answer"] {
            if !self.field_mapping.values().any(|v| v == required) {
                return Err(SourceError::InvalidSpec(format!(
                    "{}: field_mapping does not cover {required}",
                    self.name
                )));
            }
        }
        for target in self.field_mapping.values() {
            if !["prompt", "reference_answer", "id", "domain_tag"].contains(&target.as_str()) {
                return Err(SourceError::InvalidSpec(format!(
                    "{}: unknown mapping target {target}",
                    self.name
                )));
            }
        }
        Ok(())
    }

    fn foreign_key_for(&self, target: &str) -> Option<&str> {
        self.field_mapping
            .iter()
            .find(|(_, v)| v.as_str() == target)
            .map(|(k, _)| k.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SourceError {
    #[error("invalid source spec: {0}")]
    InvalidSpec(String),
    #[error("unknown format adapter {0}")]
    UnknownAdapter(String),
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Streams foreign records out of a file as JSON objects.
pub trait FormatAdapter: Send + Sync {
    fn name(&self) -> &str;
    #[allow(clippy::type_complexity)]
    fn records(
        &self,
        path: &std::path::Path,
    ) -> Result<Box<dyn Iterator<Item = Result<Value, String>>>, SourceError>;
}

/// Built-in adapter for line-oriented JSON.
struct JsonlAdapter;

impl FormatAdapter for JsonlAdapter {
    fn name(&self) -> &str {
        "jsonl"
    }

    fn records(
        &self,
        path: &std::path::Path,
    ) -> Result<Box<dyn Iterator<Item = Result<Value, String>>>, SourceError> {
        let file = File::open(path).map_err(|source| SourceError::Unreadable {
            path: path.display().to_string(),
            source,
        })?;
        let iter = BufReader::new(file)
            .lines()
            .filter(|l| !matches!(l, Ok(l) if l.trim().is_empty()))
            .map(|line| {
                let line = line.map_err(|e| e.to_string())?;
                serde_json::from_str::<Value>(&line).map_err(|e| e.to_string())
            });
        Ok(Box::new(iter))
    }
}

/// Adapter lookup, extensible at runtime.
pub struct AdapterRegistry {
    adapters: BTreeMap<String, Arc<dyn FormatAdapter>>,
}

impl Default for AdapterRegistry {
    fn default() -> Self {
        let mut registry = Self { adapters: BTreeMap::new() };
        registry.register(Arc::new(JsonlAdapter));
        registry
    }
}

impl AdapterRegistry {
    pub fn register(&mut self, adapter: Arc<dyn FormatAdapter>) {
        self.adapters.insert(adapter.name().to_string(), adapter);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn FormatAdapter>, SourceError> {
        self.adapters
            .get(name)
            .cloned()
            .ok_or_else(|| SourceError::UnknownAdapter(name.to_string()))
    }
}

/// One ingested item: a problem or a reported skip.
#[derive(Debug)]
pub enum IngestItem {
    Problem(Problem),
    Skipped { record_index: u64, reason: String },
}

fn value_as_string(value: &Value) -> Option<String> {
    match value {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

/// Stream a source into problems. Unmappable records are yielded as
/// skips; an unreadable location fails outright.
pub fn ingest<'a>(
    spec: &'a SourceSpec,
    registry: &AdapterRegistry,
) -> Result<impl Iterator<Item = IngestItem> + 'a, SourceError> {
    spec.validate()?;
    let adapter = registry.get(&spec.format_adapter)?;
    let records = adapter.records(&spec.path)?;

    Ok(records.enumerate().map(move |(index, record)| {
        let index = index as u64;
        let record = match record {
            Ok(r) => r,
            Err(e) => return IngestItem::Skipped { record_index: index, reason: e },
        };
        let lookup = |target: &str| -> Option<String> {
            let key = spec.foreign_key_for(target)?;
            record.get(key).and_then(value_as_string)
        };
        let Some(prompt) = lookup("prompt").filter(|p| !p.is_empty()) else {
            return IngestItem::Skipped { record_index: index, reason: "missing prompt field".into() };
        };
        // The validator prompt needs a reference answer; reject records
        // without one at the door.
        let Some(reference_answer) = lookup("reference_answer").filter(|a| !a.is_empty()) else {
            return IngestItem::Skipped {
                record_index: index,
                reason: "missing reference answer field".into(),
            };
        };
        let foreign_id = lookup("id").unwrap_or_else(|| index.to_string());
        let mut problem = Problem::new(
            foreign_id.clone(),
            prompt,
            reference_answer,
            format!("{}:{}", spec.name, foreign_id),
        );
        problem.domain_tag = lookup("domain_tag");
        IngestItem::Problem(problem)
    }))
}

/// Prompt comparison policy for deduplication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DedupePolicy {
    /// Byte-identical prompts collapse.
    #[default]
    Exact,
    /// Whitespace-collapsed, case-folded prompts collapse.
    NormalizedText,
}

impl DedupePolicy {
    fn key(&self, prompt: &str) -> String {
        match self {
            DedupePolicy::Exact => prompt.to_string(),
            DedupePolicy::NormalizedText => prompt
                .split_whitespace()
                .collect::<Vec<_>>()
                .join(" ")
                .to_lowercase(),
        }
    }
}

/// A set of problems that collapsed into one survivor.
#[derive(Debug, Clone, Serialize)]
pub struct DedupeGroup {
    pub kept: String,
    pub collapsed: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct DedupeReport {
    pub input: u64,
    pub survivors: u64,
    /// Only groups that actually collapsed something.
    pub groups: Vec<DedupeGroup>,
}

/// Collapse duplicate prompts, keeping the first occurrence in stream
/// order.
pub fn dedupe<I>(problems: I, policy: DedupePolicy) -> (Vec<Problem>, DedupeReport)
where
    I: IntoIterator<Item = Problem>,
{
    let mut survivors: Vec<Problem> = Vec::new();
    let mut seen: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
    let mut collapsed: Vec<Vec<String>> = Vec::new();
    let mut report = DedupeReport::default();

    for problem in problems {
        report.input += 1;
        let key = policy.key(&problem.prompt);
        match seen.get(&key) {
            Some(&idx) => collapsed[idx].push(problem.id),
            None => {
                seen.insert(key, survivors.len());
                collapsed.push(Vec::new());
                survivors.push(problem);
            }
        }
    }
    report.survivors = survivors.len() as u64;
    report.groups = survivors
        .iter()
        .zip(collapsed)
        .filter(|(_, dup)| !dup.is_empty())
        .map(|(kept, dup)| DedupeGroup { kept: kept.id.clone(), collapsed: dup })
        .collect();
    (survivors, report)
}
