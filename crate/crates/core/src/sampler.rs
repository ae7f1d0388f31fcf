//! Capacity-matched CoT selection.
//!
//! Per problem, every correct candidate gets two preference weights:
//! `f1` rewards cognitive difficulty at or below the target model's
//! capacity `mu_cd` (everything at or below is equally preferred,
//! everything above decays linearly), and `f2` penalizes a large gap
//! between the CD and RV scores. Both are normalized into probabilities
//! and mixed with the `beta` weight:
//!
//! ```text
//! m_cd  = max_i |cd_i - mu_cd|          f1_i = m_cd            if cd_i <= mu_cd
//!                                       f1_i = m_cd - (cd_i - mu_cd)   otherwise
//! m_gap = max_i |cd_i - rv_i|           f2_i = m_gap - |cd_i - rv_i|
//! p1 = f1 / sum(f1)    p2 = f2 / sum(f2)    pr = beta * p1 + (1 - beta) * p2
//! ```
//!
//! A zero sum in either normalization falls back to the uniform
//! distribution with a flag recorded on the plan. Draws are made
//! without replacement by renormalizing over the remaining candidates,
//! using a ChaCha8 stream derived from `(seed, problem_id)` so results
//! do not depend on problem order or parallelism.
//!
//! The module also provides the range-conformity selection strategies
//! (RV-optimal, CD-optimal, combined, random) and the DPO pairing rule
//! (in-range RV as chosen, maximum RV as rejected).

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CoTRecord, MAX_LEVEL};

/// How the per-problem candidate set is restricted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateFilter {
    /// Both verdicts true (the default).
    #[default]
    FullyCorrect,
    /// Correct answer is enough; flawed reasoning allowed.
    SolutionValid,
}

impl CandidateFilter {
    pub fn accepts(&self, record: &CoTRecord) -> bool {
        match self {
            CandidateFilter::FullyCorrect => record.is_fully_correct(),
            CandidateFilter::SolutionValid => {
                record.solution_valid == Some(true) && !record.validation_failed
            }
        }
    }
}

/// Sampler parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Target model capacity score on the CD scale.
    pub mu_cd: u8,
    /// Mix between the capacity weight (1.0) and the gap weight (0.0).
    pub beta: f64,
    pub samples_per_problem: usize,
    pub seed: u64,
    pub candidate_filter: CandidateFilter,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            mu_cd: 5,
            beta: 0.5,
            samples_per_problem: 1,
            seed: 0,
            candidate_filter: CandidateFilter::FullyCorrect,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.mu_cd > MAX_LEVEL {
            return Err(SamplerError::InvalidConfig(format!(
                "mu_cd {} outside 0..=9",
                self.mu_cd
            )));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(SamplerError::InvalidConfig(format!(
                "beta {} outside [0, 1]",
                self.beta
            )));
        }
        if self.samples_per_problem < 1 {
            return Err(SamplerError::InvalidConfig("samples_per_problem must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SamplerError {
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
    #[error("empty candidate list for problem {0}")]
    EmptyCandidates(String),
    #[error("candidate {cot_id} has score {score} outside 0..=9")]
    ScoreOutOfRange { cot_id: String, score: u8 },
    #[error("draw count must be >= 1")]
    InvalidDrawCount,
    #[error("selection mode {0} requires a score range")]
    MissingRange(&'static str),
}

/// One scored, correctness-filtered CoT eligible for selection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub cot_id: String,
    pub s_cd: u8,
    pub s_rv: u8,
    pub token_count: u64,
}

impl Candidate {
    pub fn new(cot_id: impl Into<String>, s_cd: u8, s_rv: u8) -> Self {
        Self { cot_id: cot_id.into(), s_cd, s_rv, token_count: 0 }
    }

    /// Extract a candidate from a record that passes `filter` and is
    /// scored on both rubrics.
    pub fn from_record(record: &CoTRecord, filter: CandidateFilter) -> Option<Self> {
        if !filter.accepts(record) {
            return None;
        }
        let (rv, cd) = (record.rv.as_ref()?, record.cd.as_ref()?);
        Some(Self {
            cot_id: record.cot_id.clone(),
            s_cd: cd.level,
            s_rv: rv.level,
            token_count: record.token_count,
        })
    }
}

/// Degenerate situations a plan can hit; recorded for audit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegenerateFlag {
    F1UniformFallback,
    F2UniformFallback,
    SingleCandidate,
    /// Positive probability mass ran out before the requested number of
    /// draws; the rest were drawn uniformly.
    ExhaustedMassFallback,
}

/// Per-candidate weight and probability breakdown.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanEntry {
    #[serde(flatten)]
    pub candidate: Candidate,
    pub f1: u32,
    pub f2: u32,
    pub p1: f64,
    pub p2: f64,
    pub pr: f64,
}

/// The full selection state for one problem: candidates with their
/// computed probabilities, what was drawn, and any degeneracies hit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub problem_id: String,
    pub candidates: Vec<PlanEntry>,
    pub drawn: Vec<String>,
    pub degenerate_flags: BTreeSet<DegenerateFlag>,
}

impl SamplingPlan {
    pub fn pr(&self) -> Vec<f64> {
        self.candidates.iter().map(|c| c.pr).collect()
    }
}

fn check_scores(problem_id: &str, candidates: &[Candidate]) -> Result<(), SamplerError> {
    if candidates.is_empty() {
        return Err(SamplerError::EmptyCandidates(problem_id.to_string()));
    }
    for c in candidates {
        for score in [c.s_cd, c.s_rv] {
            if score > MAX_LEVEL {
                return Err(SamplerError::ScoreOutOfRange { cot_id: c.cot_id.clone(), score });
            }
        }
    }
    Ok(())
}

/// Compute selection probabilities for one problem's candidates.
/// Nothing is drawn.
pub fn compute_plan(
    problem_id: &str,
    candidates: &[Candidate],
    config: &SamplerConfig,
) -> Result<SamplingPlan, SamplerError> {
    config.validate()?;
    check_scores(problem_id, candidates)?;

    let mut flags = BTreeSet::new();
    if candidates.len() == 1 {
        flags.insert(DegenerateFlag::SingleCandidate);
    }

    let mu = i32::from(config.mu_cd);
    let m_cd = candidates
        .iter()
        .map(|c| (i32::from(c.s_cd) - mu).abs())
        .max()
        .expect("non-empty");
    let m_gap = candidates
        .iter()
        .map(|c| (i32::from(c.s_cd) - i32::from(c.s_rv)).abs())
        .max()
        .expect("non-empty");

    // Both weights are nonnegative by construction: m_cd bounds every
    // deviation and m_gap bounds every gap.
    let f1: Vec<u32> = candidates
        .iter()
        .map(|c| {
            let cd = i32::from(c.s_cd);
            let w = if cd <= mu { m_cd } else { m_cd - (cd - mu) };
            u32::try_from(w).expect("f1 >= 0")
        })
        .collect();
    let f2: Vec<u32> = candidates
        .iter()
        .map(|c| {
            let gap = (i32::from(c.s_cd) - i32::from(c.s_rv)).abs();
            u32::try_from(m_gap - gap).expect("f2 >= 0")
        })
        .collect();

    let n = candidates.len() as f64;
    let normalize = |weights: &[u32], flag: DegenerateFlag, flags: &mut BTreeSet<DegenerateFlag>| -> Vec<f64> {
        let sum: u64 = weights.iter().map(|&w| u64::from(w)).sum();
        if sum == 0 {
            flags.insert(flag);
            vec![1.0 / n; weights.len()]
        } else {
            weights.iter().map(|&w| w as f64 / sum as f64).collect()
        }
    };
    let p1 = normalize(&f1, DegenerateFlag::F1UniformFallback, &mut flags);
    let p2 = normalize(&f2, DegenerateFlag::F2UniformFallback, &mut flags);

    let entries = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| PlanEntry {
            candidate: c.clone(),
            f1: f1[i],
            f2: f2[i],
            p1: p1[i],
            p2: p2[i],
            pr: config.beta * p1[i] + (1.0 - config.beta) * p2[i],
        })
        .collect();

    Ok(SamplingPlan {
        problem_id: problem_id.to_string(),
        candidates: entries,
        drawn: Vec::new(),
        degenerate_flags: flags,
    })
}

/// Deterministic per-problem random stream: ChaCha8 keyed by an
/// FNV-1a/splitmix64 expansion of `(seed, problem_id)`.
pub fn derive_rng(seed: u64, problem_id: &str) -> ChaCha8Rng {
    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = FNV_OFFSET;
    for byte in problem_id.as_bytes() {
        h ^= u64::from(*byte);
        h = h.wrapping_mul(FNV_PRIME);
    }
    let mut state = h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
        chunk.copy_from_slice(&z.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// What a draw produced.
#[derive(Debug, Clone)]
pub struct DrawOutcome {
    pub drawn: Vec<String>,
    pub exhausted_mass_fallback: bool,
}

/// Draw up to `k` distinct candidates without replacement, renormalizing
/// over the remainder after each pick. Zero-mass candidates are skipped
/// until positive mass runs out; any remaining draws fall back to
/// uniform picks over the undrawn ones.
pub fn draw(plan: &SamplingPlan, k: usize, rng: &mut ChaCha8Rng) -> Result<DrawOutcome, SamplerError> {
    if k < 1 {
        return Err(SamplerError::InvalidDrawCount);
    }
    let n = plan.candidates.len();
    let target = k.min(n);
    let mut undrawn: Vec<usize> = (0..n).collect();
    let mut drawn = Vec::with_capacity(target);
    let mut fallback = false;

    while drawn.len() < target {
        let picked = if !fallback {
            let total: f64 = undrawn.iter().map(|&i| plan.candidates[i].pr).sum();
            if total <= 0.0 {
                fallback = true;
                continue;
            }
            let u = rng.random::<f64>() * total;
            let mut cumulative = 0.0;
            let mut choice = None;
            for (pos, &i) in undrawn.iter().enumerate() {
                let pr = plan.candidates[i].pr;
                if pr <= 0.0 {
                    continue;
                }
                cumulative += pr;
                if u < cumulative {
                    choice = Some(pos);
                    break;
                }
            }
            // Float undershoot at the tail: take the last positive one.
            choice.unwrap_or_else(|| {
                undrawn
                    .iter()
                    .rposition(|&i| plan.candidates[i].pr > 0.0)
                    .expect("total > 0 implies a positive candidate")
            })
        } else {
            rng.random_range(0..undrawn.len())
        };
        let idx = undrawn.remove(picked);
        drawn.push(plan.candidates[idx].candidate.cot_id.clone());
    }
    Ok(DrawOutcome { drawn, exhausted_mass_fallback: fallback })
}

/// Compute the plan and draw `samples_per_problem` in one step, using
/// the seed-derived stream for this problem.
pub fn sample_problem(
    problem_id: &str,
    candidates: &[Candidate],
    config: &SamplerConfig,
) -> Result<SamplingPlan, SamplerError> {
    let mut plan = compute_plan(problem_id, candidates, config)?;
    let mut rng = derive_rng(config.seed, problem_id);
    let outcome = draw(&plan, config.samples_per_problem, &mut rng)?;
    plan.drawn = outcome.drawn;
    if outcome.exhausted_mass_fallback {
        plan.degenerate_flags.insert(DegenerateFlag::ExhaustedMassFallback);
    }
    Ok(plan)
}

/// Inclusive score range for the range-conformity strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRange {
    pub lo: u8,
    pub hi: u8,
}

impl ScoreRange {
    pub fn new(lo: u8, hi: u8) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, s: u8) -> bool {
        (self.lo..=self.hi).contains(&s)
    }
}

/// Distance to the range: 0 inside, otherwise distance to the nearest
/// bound.
pub fn conformity(s: u8, range: ScoreRange) -> u32 {
    if s < range.lo {
        u32::from(range.lo - s)
    } else if s > range.hi {
        u32::from(s - range.hi)
    } else {
        0
    }
}

/// The selection strategy family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    RvOptimal,
    CdOptimal,
    Combined,
    Random,
}

/// Pick one candidate by range conformity (or uniformly for `Random`).
/// Conformity ties break toward lower CD, then lower RV, then
/// lexicographically smaller id.
pub fn select_by_range(
    candidates: &[Candidate],
    rv_range: Option<ScoreRange>,
    cd_range: Option<ScoreRange>,
    mode: SelectionMode,
    rng: &mut ChaCha8Rng,
) -> Result<String, SamplerError> {
    if candidates.is_empty() {
        return Err(SamplerError::EmptyCandidates(String::new()));
    }
    let score = |c: &Candidate| -> Result<u32, SamplerError> {
        match mode {
            SelectionMode::RvOptimal => {
                let range = rv_range.ok_or(SamplerError::MissingRange("rv_optimal"))?;
                Ok(conformity(c.s_rv, range))
            }
            SelectionMode::CdOptimal => {
                let range = cd_range.ok_or(SamplerError::MissingRange("cd_optimal"))?;
                Ok(conformity(c.s_cd, range))
            }
            SelectionMode::Combined => {
                let rv = rv_range.ok_or(SamplerError::MissingRange("combined"))?;
                let cd = cd_range.ok_or(SamplerError::MissingRange("combined"))?;
                Ok(conformity(c.s_rv, rv) + conformity(c.s_cd, cd))
            }
            SelectionMode::Random => Ok(0),
        }
    };
    if mode == SelectionMode::Random {
        let idx = rng.random_range(0..candidates.len());
        return Ok(candidates[idx].cot_id.clone());
    }
    let mut best: Option<(u32, &Candidate)> = None;
    for c in candidates {
        let s = score(c)?;
        best = Some(match best {
            None => (s, c),
            Some((bs, bc)) => {
                let new_key = (s, c.s_cd, c.s_rv, c.cot_id.as_str());
                let best_key = (bs, bc.s_cd, bc.s_rv, bc.cot_id.as_str());
                if new_key < best_key {
                    (s, c)
                } else {
                    (bs, bc)
                }
            }
        });
    }
    Ok(best.expect("non-empty").1.cot_id.clone())
}

/// A chosen/rejected preference pair for one problem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DpoPair {
    pub chosen: String,
    pub rejected: String,
    pub chosen_rv: u8,
    pub rejected_rv: u8,
}

/// Build the preference pair: chosen is the best candidate whose RV lies
/// strictly inside `chosen_rv_range` (ties toward lower CD, lower RV,
/// smaller id), rejected is the maximum-RV candidate (ties toward larger
/// token count, then smaller id). Returns `None` when no in-range chosen
/// exists or the two coincide.
pub fn build_dpo_pair(candidates: &[Candidate], chosen_rv_range: ScoreRange) -> Option<DpoPair> {
    let chosen = candidates
        .iter()
        .filter(|c| chosen_rv_range.contains(c.s_rv))
        .min_by_key(|c| (c.s_cd, c.s_rv, c.cot_id.clone()))?;
    let rejected = candidates
        .iter()
        .max_by(|a, b| {
            (a.s_rv, a.token_count, std::cmp::Reverse(a.cot_id.as_str()))
                .cmp(&(b.s_rv, b.token_count, std::cmp::Reverse(b.cot_id.as_str())))
        })?;
    if chosen.cot_id == rejected.cot_id {
        return None;
    }
    Some(DpoPair {
        chosen: chosen.cot_id.clone(),
        rejected: rejected.cot_id.clone(),
        chosen_rv: chosen.s_rv,
        rejected_rv: rejected.s_rv,
    })
}
