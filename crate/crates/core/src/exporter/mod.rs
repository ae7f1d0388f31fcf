//! Training-set materialization: SFT rows, DPO preference pairs, and
//! predicate-filtered sub-corpora.
//!
//! Exported response text is byte-identical to the stored
//! `full_response`; no normalization happens at export time.

mod predicate;

pub use predicate::{Predicate, PredicateError};

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{CoTRecord, Problem};
use crate::sampler::DpoPair;

/// One drawn selection from the sampler.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub problem_id: String,
    pub cot_id: String,
}

/// A resolved preference pair for one problem.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DpoSelection {
    pub problem_id: String,
    #[serde(flatten)]
    pub pair: DpoPair,
}

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("manifest entry {problem_id}/{cot_id} does not resolve to a corpus record")]
    DanglingManifest { problem_id: String, cot_id: String },
    #[error("record {cot_id} is not retained (wrong answer or quarantined)")]
    NotRetained { cot_id: String },
    #[error("record {cot_id} is missing a {rubric} score")]
    Unscored { cot_id: String, rubric: &'static str },
    #[error("export i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Predicate(#[from] PredicateError),
}

#[derive(Debug, Serialize)]
struct SftMeta<'a> {
    teacher: &'a str,
    s_rv: u8,
    s_cd: u8,
    token_count: u64,
}

#[derive(Debug, Serialize)]
struct SftRow<'a> {
    prompt: &'a str,
    response: &'a str,
    meta: SftMeta<'a>,
}

/// Aggregates reported alongside an SFT export.
#[derive(Debug, Clone, Default, Serialize)]
pub struct SftSummary {
    pub rows: u64,
    pub rv_mean: f64,
    pub cd_mean: f64,
    pub token_count_mean: f64,
}

struct CorpusIndex {
    problems: HashMap<String, Problem>,
    records: HashMap<(String, String), CoTRecord>,
}

impl CorpusIndex {
    fn build<I>(groups: I) -> Self
    where
        I: IntoIterator<Item = (Problem, Vec<CoTRecord>)>,
    {
        let mut problems = HashMap::new();
        let mut records = HashMap::new();
        for (problem, group_records) in groups {
            for record in group_records {
                records.insert((problem.id.clone(), record.cot_id.clone()), record);
            }
            problems.insert(problem.id.clone(), problem);
        }
        Self { problems, records }
    }

    fn resolve(&self, entry: &ManifestEntry) -> Result<(&Problem, &CoTRecord), ExportError> {
        let key = (entry.problem_id.clone(), entry.cot_id.clone());
        let record = self.records.get(&key).ok_or_else(|| ExportError::DanglingManifest {
            problem_id: entry.problem_id.clone(),
            cot_id: entry.cot_id.clone(),
        })?;
        let problem = self.problems.get(&entry.problem_id).ok_or_else(|| {
            ExportError::DanglingManifest {
                problem_id: entry.problem_id.clone(),
                cot_id: entry.cot_id.clone(),
            }
        })?;
        Ok((problem, record))
    }
}

fn require_scored(record: &CoTRecord) -> Result<(u8, u8), ExportError> {
    if record.solution_valid != Some(true) || record.validation_failed {
        return Err(ExportError::NotRetained { cot_id: record.cot_id.clone() });
    }
    let rv = record
        .rv
        .as_ref()
        .ok_or_else(|| ExportError::Unscored { cot_id: record.cot_id.clone(), rubric: "rv" })?;
    let cd = record
        .cd
        .as_ref()
        .ok_or_else(|| ExportError::Unscored { cot_id: record.cot_id.clone(), rubric: "cd" })?;
    Ok((rv.level, cd.level))
}

/// Materialize SFT rows for every manifest entry, in manifest order.
/// A manifest entry that does not resolve to a retained, scored record
/// aborts the export: that mismatch is a pipeline bug, not data noise.
pub fn export_sft<I, W>(
    corpus: I,
    manifest: &[ManifestEntry],
    mut out: W,
) -> Result<SftSummary, ExportError>
where
    I: IntoIterator<Item = (Problem, Vec<CoTRecord>)>,
    W: Write,
{
    let index = CorpusIndex::build(corpus);
    let mut summary = SftSummary::default();
    let mut rv_sum = 0u64;
    let mut cd_sum = 0u64;
    let mut token_sum = 0u64;

    for entry in manifest {
        let (problem, record) = index.resolve(entry)?;
        let (s_rv, s_cd) = require_scored(record)?;
        let row = SftRow {
            prompt: &problem.prompt,
            response: &record.full_response,
            meta: SftMeta { teacher: &record.teacher, s_rv, s_cd, token_count: record.token_count },
        };
        serde_json::to_writer(&mut out, &row).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
        summary.rows += 1;
        rv_sum += u64::from(s_rv);
        cd_sum += u64::from(s_cd);
        token_sum += record.token_count;
    }
    if summary.rows > 0 {
        let n = summary.rows as f64;
        summary.rv_mean = rv_sum as f64 / n;
        summary.cd_mean = cd_sum as f64 / n;
        summary.token_count_mean = token_sum as f64 / n;
    }
    Ok(summary)
}

#[derive(Debug, Serialize)]
struct DpoMeta {
    chosen_rv: u8,
    rejected_rv: u8,
}

#[derive(Debug, Serialize)]
struct DpoRow<'a> {
    prompt: &'a str,
    chosen: &'a str,
    rejected: &'a str,
    meta: DpoMeta,
}

/// Aggregates reported alongside a DPO export.
#[derive(Debug, Clone, Default, Serialize)]
pub struct DpoSummary {
    pub problems: u64,
    pub pairs: u64,
    pub skipped: Vec<String>,
    pub pair_yield: f64,
}

/// Materialize preference-pair rows. Invalid pairs (dangling ids,
/// unretained sides, chosen == rejected) are skipped and reported.
/// `problems` is the number of problems the pairs were built over, for
/// the yield statistic.
pub fn export_dpo<I, W>(
    corpus: I,
    selections: &[DpoSelection],
    problems: u64,
    mut out: W,
) -> Result<DpoSummary, ExportError>
where
    I: IntoIterator<Item = (Problem, Vec<CoTRecord>)>,
    W: Write,
{
    let index = CorpusIndex::build(corpus);
    let mut summary = DpoSummary { problems, ..Default::default() };

    for selection in selections {
        let chosen_entry = ManifestEntry {
            problem_id: selection.problem_id.clone(),
            cot_id: selection.pair.chosen.clone(),
        };
        let rejected_entry = ManifestEntry {
            problem_id: selection.problem_id.clone(),
            cot_id: selection.pair.rejected.clone(),
        };
        let resolved = (|| -> Result<_, ExportError> {
            if selection.pair.chosen == selection.pair.rejected {
                return Err(ExportError::DanglingManifest {
                    problem_id: selection.problem_id.clone(),
                    cot_id: selection.pair.chosen.clone(),
                });
            }
            let (problem, chosen) = index.resolve(&chosen_entry)?;
            let (_, rejected) = index.resolve(&rejected_entry)?;
            require_scored(chosen)?;
            require_scored(rejected)?;
            Ok((problem, chosen, rejected))
        })();
        match resolved {
            Err(e) => {
                tracing::warn!(problem = %selection.problem_id, error = %e, "skipping dpo pair");
                summary.skipped.push(format!("{}: {e}", selection.problem_id));
            }
            Ok((problem, chosen, rejected)) => {
                let row = DpoRow {
                    prompt: &problem.prompt,
                    chosen: &chosen.full_response,
                    rejected: &rejected.full_response,
                    meta: DpoMeta {
                        chosen_rv: selection.pair.chosen_rv,
                        rejected_rv: selection.pair.rejected_rv,
                    },
                };
                serde_json::to_writer(&mut out, &row).map_err(std::io::Error::from)?;
                out.write_all(b"\n")?;
                summary.pairs += 1;
            }
        }
    }
    if problems > 0 {
        summary.pair_yield = summary.pairs as f64 / problems as f64;
    }
    Ok(summary)
}

/// Per-filter record counts.
#[derive(Debug, Clone, Default, Serialize)]
pub struct FilterCounts {
    pub problems_in: u64,
    pub records_in: u64,
    pub records_out: u64,
}

/// Keep only records satisfying the predicate; problems whose record
/// list empties out are dropped from the sub-corpus.
pub fn filter_corpus<I>(
    corpus: I,
    predicate: &Predicate,
) -> (Vec<(Problem, Vec<CoTRecord>)>, FilterCounts)
where
    I: IntoIterator<Item = (Problem, Vec<CoTRecord>)>,
{
    let mut counts = FilterCounts::default();
    let mut output = Vec::new();
    for (problem, records) in corpus {
        counts.problems_in += 1;
        counts.records_in += records.len() as u64;
        let kept: Vec<CoTRecord> = records.into_iter().filter(|r| predicate.eval(r)).collect();
        counts.records_out += kept.len() as u64;
        if !kept.is_empty() {
            output.push((problem, kept));
        }
    }
    (output, counts)
}
