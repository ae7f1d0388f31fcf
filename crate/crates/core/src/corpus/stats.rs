//! Corpus-level summary statistics.

use std::collections::BTreeMap;

use serde::Serialize;

use super::{CoTRecord, Problem};

/// Histograms and token bounds over a corpus.
///
/// Score histograms count annotated records only; the token bounds run
/// over every record. An empty corpus is reported with the `degenerate`
/// flag set instead of sentinel bounds.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub num_problems: u64,
    pub num_cots: u64,
    pub cots_per_problem_histogram: BTreeMap<u64, u64>,
    pub rv_histogram: BTreeMap<u8, u64>,
    pub cd_histogram: BTreeMap<u8, u64>,
    pub l_min: u64,
    pub l_max: u64,
    pub degenerate: bool,
}

/// Single pass over a corpus stream.
pub fn compute_stats<I>(groups: I) -> CorpusStats
where
    I: IntoIterator<Item = (Problem, Vec<CoTRecord>)>,
{
    let mut stats = CorpusStats::default();
    let mut bounds: Option<(u64, u64)> = None;

    for (_, records) in groups {
        stats.num_problems += 1;
        *stats
            .cots_per_problem_histogram
            .entry(records.len() as u64)
            .or_insert(0) += 1;
        for record in &records {
            stats.num_cots += 1;
            if let Some(rv) = &record.rv {
                *stats.rv_histogram.entry(rv.level).or_insert(0) += 1;
            }
            if let Some(cd) = &record.cd {
                *stats.cd_histogram.entry(cd.level).or_insert(0) += 1;
            }
            bounds = Some(match bounds {
                None => (record.token_count, record.token_count),
                Some((lo, hi)) => (lo.min(record.token_count), hi.max(record.token_count)),
            });
        }
    }

    match bounds {
        Some((lo, hi)) => {
            stats.l_min = lo;
            stats.l_max = hi;
        }
        None => stats.degenerate = true,
    }
    stats
}
