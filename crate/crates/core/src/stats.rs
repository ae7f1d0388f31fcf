//! Token-count summary statistics for corpora and exports.

use std::collections::BTreeMap;

use serde::Serialize;

/// Mean/median/p90 of token counts for one group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TokenStatsRow {
    pub group: String,
    pub count: u64,
    pub mean: f64,
    pub median: f64,
    pub p90: f64,
}

fn summarize(group: String, mut counts: Vec<u64>) -> TokenStatsRow {
    counts.sort_unstable();
    let n = counts.len();
    let mean = counts.iter().sum::<u64>() as f64 / n as f64;
    let median = if n % 2 == 1 {
        counts[n / 2] as f64
    } else {
        (counts[n / 2 - 1] + counts[n / 2]) as f64 / 2.0
    };
    // Nearest-rank percentile.
    let rank = ((0.9 * n as f64).ceil() as usize).clamp(1, n);
    let p90 = counts[rank - 1] as f64;
    TokenStatsRow { group, count: n as u64, mean, median, p90 }
}

/// Group token counts by tag (problems without a tag fall into
/// `untagged`) and summarize each group. Pass `group_by_tag = false` to
/// get a single `all` row.
pub fn token_stats<I>(items: I, group_by_tag: bool) -> Vec<TokenStatsRow>
where
    I: IntoIterator<Item = (Option<String>, u64)>,
{
    let mut groups: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    for (tag, count) in items {
        let key = if group_by_tag {
            tag.unwrap_or_else(|| "untagged".into())
        } else {
            "all".into()
        };
        groups.entry(key).or_default().push(count);
    }
    groups
        .into_iter()
        .filter(|(_, counts)| !counts.is_empty())
        .map(|(group, counts)| summarize(group, counts))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_group_mean() {
        let rows = token_stats(vec![(None, 100), (None, 200), (None, 300)], false);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].group, "all");
        assert_eq!(rows[0].mean, 200.0);
        assert_eq!(rows[0].median, 200.0);
        assert_eq!(rows[0].p90, 300.0);
    }

    #[test]
    fn disjoint_groups_get_their_own_rows() {
        let rows = token_stats(
            vec![
                (Some("math".into()), 10),
                (Some("math".into()), 20),
                (Some("code".into()), 1000),
            ],
            true,
        );
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].group, "code");
        assert_eq!(rows[0].mean, 1000.0);
        assert_eq!(rows[1].group, "math");
        assert_eq!(rows[1].mean, 15.0);
        assert_eq!(rows[1].median, 15.0);
    }

    #[test]
    fn empty_input_gives_no_rows() {
        assert!(token_stats(Vec::new(), false).is_empty());
    }

    #[test]
    fn percentile_nearest_rank() {
        let counts: Vec<(Option<String>, u64)> = (1..=10).map(|i| (None, i * 10)).collect();
        let rows = token_stats(counts, false);
        assert_eq!(rows[0].median, 55.0);
        assert_eq!(rows[0].p90, 90.0);
    }
}
