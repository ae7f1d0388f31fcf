//! Stage runners.
//!
//! Each stage reads its input artifact, writes its output artifact plus
//! a machine-readable report, and is independently re-runnable. A
//! `.partial` marker sits next to the work dir for the duration of a
//! stage run; `pipeline` chains all stages and skips any whose report
//! exists with no marker, so a failed run resumes where it stopped.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use futures::stream::{self, StreamExt};
use serde::Serialize;
use serde_json::{json, Value};

use omni_core::corpus::{
    compute_stats, read_corpus, read_problems, write_corpus, write_problems, CoTRecord,
    CorpusStats, Problem, Strictness,
};
use omni_core::exporter::{
    export_dpo, export_sft, filter_corpus, DpoSelection, ManifestEntry, Predicate,
};
use omni_core::gateway::{Gateway, HttpTransport, MockScript, MockTransport, ModelEndpoint};
use omni_core::generator::{generate, GenerationFailure};
use omni_core::sampler::{
    build_dpo_pair, sample_problem, select_by_range, Candidate, DegenerateFlag, ScoreRange,
};
use omni_core::scoring::{compute_l_bounds, score_record, LBounds};
use omni_core::stats::token_stats;
use omni_core::templates::PromptTemplates;
use omni_core::tokenizer::Tokenizer;
use omni_core::validator::{
    apply_retention, attach_verdict, enforce_min_correct, pick_cross_judge, validate,
    QuorumStatus,
};

use crate::config::{Config, ConfigError};
use crate::paths::StagePaths;

/// The pipeline stages, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
#[clap(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Generate,
    Validate,
    Score,
    Sample,
    Export,
    Stats,
    Pipeline,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Generate => "generate",
            Stage::Validate => "validate",
            Stage::Score => "score",
            Stage::Sample => "sample",
            Stage::Export => "export",
            Stage::Stats => "stats",
            Stage::Pipeline => "pipeline",
        }
    }

    const ORDER: [Stage; 7] = [
        Stage::Ingest,
        Stage::Generate,
        Stage::Validate,
        Stage::Score,
        Stage::Sample,
        Stage::Export,
        Stage::Stats,
    ];
}

/// Stage failures, split by exit code: config errors exit 2, stage
/// failures exit 1.
#[derive(Debug, thiserror::Error)]
pub enum StageError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{stage} stage failed: {source}")]
    Failure {
        stage: &'static str,
        #[source]
        source: anyhow::Error,
    },
}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        match self {
            StageError::Config(_) => 2,
            StageError::Failure { .. } => 1,
        }
    }
}

/// The machine-readable result of one stage run.
#[derive(Debug, Clone, Serialize)]
pub struct StageReport {
    pub stage: String,
    pub ok: bool,
    pub timing_ms: u128,
    pub counts: Value,
    pub effective_config: Value,
}

struct StageCx {
    config: Config,
    paths: StagePaths,
    strictness: Strictness,
}

impl StageCx {
    fn new(config: Config) -> Result<Self, StageError> {
        let paths = StagePaths::new(&config.work_dir);
        let strictness = if config.strict { Strictness::Strict } else { Strictness::Tolerant };
        Ok(Self { config, paths, strictness })
    }

    fn gateway(&self) -> Result<Gateway, anyhow::Error> {
        let gateway = match self.config.transport.kind.as_str() {
            "mock" => {
                let script_path = self
                    .config
                    .transport
                    .script
                    .as_ref()
                    .expect("validated: mock requires script");
                let script = MockScript::from_file(script_path)?;
                Gateway::new(MockTransport::new(script))
            }
            _ => Gateway::new(Arc::new(HttpTransport::new())),
        };
        match &self.config.transport.audit_log {
            Some(path) => Ok(gateway.with_audit_log(path)?),
            None => Ok(gateway),
        }
    }

    fn tokenizer(&self) -> Box<dyn Tokenizer> {
        omni_core::tokenizer::by_name(&self.config.generation.tokenizer)
            .expect("validated: tokenizer exists")
    }

    fn templates(&self) -> Result<PromptTemplates, anyhow::Error> {
        match &self.config.templates.dir {
            Some(dir) => Ok(PromptTemplates::from_dir(dir)?),
            None => Ok(PromptTemplates::builtin()),
        }
    }

    fn read_groups(&self, path: &Path) -> Result<Vec<(Problem, Vec<CoTRecord>)>, anyhow::Error> {
        let reader = read_corpus(path, self.strictness)?;
        let groups: Result<Vec<_>, _> = reader.collect();
        Ok(groups?)
    }
}

fn fail(stage: &'static str) -> impl FnOnce(anyhow::Error) -> StageError {
    move |source| StageError::Failure { stage, source }
}

/// Run one stage (or the whole pipeline) against a loaded config.
pub async fn run_stage(stage: Stage, config: Config) -> Result<Vec<StageReport>, StageError> {
    let cx = StageCx::new(config)?;
    cx.paths.ensure_dirs().map_err(|e| StageError::Failure {
        stage: stage.name(),
        source: e.into(),
    })?;
    match stage {
        Stage::Pipeline => {
            let mut reports = Vec::new();
            for sub in Stage::ORDER {
                if stage_is_complete(&cx, sub) {
                    tracing::info!(stage = sub.name(), "checkpoint found, skipping");
                    continue;
                }
                reports.push(run_single(&cx, sub).await?);
            }
            Ok(reports)
        }
        _ => Ok(vec![run_single(&cx, stage).await?]),
    }
}

fn stage_is_complete(cx: &StageCx, stage: Stage) -> bool {
    cx.paths.report(stage.name()).exists() && !cx.paths.partial_marker(stage.name()).exists()
}

async fn run_single(cx: &StageCx, stage: Stage) -> Result<StageReport, StageError> {
    let name = stage.name();
    let marker = cx.paths.partial_marker(name);
    std::fs::write(&marker, "in progress\n")
        .map_err(|e| StageError::Failure { stage: name, source: e.into() })?;
    let started = Instant::now();

    let counts = match stage {
        Stage::Ingest => run_ingest(cx).await.map_err(fail(name))?,
        Stage::Generate => run_generate(cx).await.map_err(fail(name))?,
        Stage::Validate => run_validate(cx).await.map_err(fail(name))?,
        Stage::Score => run_score(cx).await.map_err(fail(name))?,
        Stage::Sample => run_sample(cx).await.map_err(fail(name))?,
        Stage::Export => run_export(cx).await.map_err(fail(name))?,
        Stage::Stats => run_stats(cx).await.map_err(fail(name))?,
        Stage::Pipeline => unreachable!("pipeline dispatches sub-stages"),
    };

    let report = StageReport {
        stage: name.to_string(),
        ok: true,
        timing_ms: started.elapsed().as_millis(),
        counts,
        effective_config: serde_json::to_value(&cx.config)
            .map_err(|e| StageError::Failure { stage: name, source: e.into() })?,
    };
    let report_json = serde_json::to_string_pretty(&report)
        .map_err(|e| StageError::Failure { stage: name, source: e.into() })?;
    std::fs::write(cx.paths.report(name), report_json)
        .map_err(|e| StageError::Failure { stage: name, source: e.into() })?;
    std::fs::remove_file(&marker)
        .map_err(|e| StageError::Failure { stage: name, source: e.into() })?;
    tracing::info!(stage = name, ms = report.timing_ms as u64, "stage complete");
    Ok(report)
}

async fn run_ingest(cx: &StageCx) -> Result<Value, anyhow::Error> {
    if cx.config.sources.is_empty() {
        anyhow::bail!("no sources configured");
    }
    let registry = omni_core::source::AdapterRegistry::default();
    let mut problems = Vec::new();
    let mut per_source = Vec::new();
    for source in &cx.config.sources {
        let spec = source.to_spec();
        let mut ingested = 0u64;
        let mut skipped = Vec::new();
        for item in omni_core::source::ingest(&spec, &registry)? {
            match item {
                omni_core::source::IngestItem::Problem(p) => {
                    ingested += 1;
                    problems.push(p);
                }
                omni_core::source::IngestItem::Skipped { record_index, reason } => {
                    if cx.strictness == Strictness::Strict {
                        anyhow::bail!("{}: record {record_index}: {reason}", spec.name);
                    }
                    skipped.push(json!({"record": record_index, "reason": reason}));
                }
            }
        }
        per_source.push(json!({"name": spec.name, "ingested": ingested, "skipped": skipped}));
    }

    let (survivors, dedupe_report) =
        omni_core::source::dedupe(problems, cx.config.dedupe.policy);
    write_problems(survivors.iter(), &cx.paths.problems(), cx.strictness)?;
    Ok(json!({
        "sources": per_source,
        "dedupe": dedupe_report,
        "problems_out": survivors.len(),
    }))
}

async fn run_generate(cx: &StageCx) -> Result<Value, anyhow::Error> {
    let (problems, read_report) = read_problems(&cx.paths.problems(), cx.strictness)?;
    let gateway = Arc::new(cx.gateway()?);
    let teachers = Arc::new(cx.config.teacher_endpoints()?);
    let tokenizer: Arc<dyn Tokenizer> = Arc::from(cx.tokenizer());
    let per_teacher_count = cx.config.generation.per_teacher_count;
    let system_prompt = cx.config.generation.system_prompt.clone();

    let outcomes: Vec<_> = stream::iter(problems.into_iter().map(|problem| {
        let gateway = gateway.clone();
        let teachers = teachers.clone();
        let tokenizer = tokenizer.clone();
        let system_prompt = system_prompt.clone();
        async move {
            let system = (!system_prompt.is_empty()).then_some(system_prompt.as_str());
            let outcome = generate(
                &gateway,
                &problem,
                &teachers,
                per_teacher_count,
                tokenizer.as_ref(),
                system,
                0,
            )
            .await;
            (problem, outcome)
        }
    }))
    .buffered(cx.config.workers.max(1))
    .collect()
    .await;

    let mut groups = Vec::new();
    let mut all_failures: Vec<GenerationFailure> = Vec::new();
    let mut ungenerated = 0u64;
    let mut records_out = 0u64;
    for (problem, outcome) in outcomes {
        if outcome.ungenerated() {
            ungenerated += 1;
        }
        records_out += outcome.records.len() as u64;
        all_failures.extend(outcome.failures);
        groups.push((problem, outcome.records));
    }

    let write_report = write_corpus(groups, &cx.paths.pending_cots(), cx.strictness)?;
    let mut failures_file = std::fs::File::create(cx.paths.generation_failures())?;
    for failure in &all_failures {
        writeln!(failures_file, "{}", serde_json::to_string(failure)?)?;
    }

    let unsplit = all_failures
        .iter()
        .filter(|f| matches!(f, GenerationFailure::Unsplit { .. }))
        .count();
    Ok(json!({
        "problems_in": read_report.problems,
        "records_out": records_out,
        "call_failures": all_failures.len() - unsplit,
        "unsplit": unsplit,
        "ungenerated_problems": ungenerated,
        "write": write_report,
    }))
}

async fn run_validate(cx: &StageCx) -> Result<Value, anyhow::Error> {
    let groups = cx.read_groups(&cx.paths.pending_cots())?;
    let gateway = Arc::new(cx.gateway()?);
    let teachers = Arc::new(cx.config.teacher_endpoints()?);
    let tokenizer: Arc<dyn Tokenizer> = Arc::from(cx.tokenizer());
    let templates = Arc::new(cx.templates()?);
    let fixed_judge: Option<ModelEndpoint> = match cx.config.validation.judge.as_str() {
        "cross" | "" => None,
        name => Some(cx.config.endpoint(name)?),
    };
    let re_ask_bound = cx.config.validation.re_ask_bound;
    let regen_budget = cx.config.validation.regen_budget;
    let per_teacher_count = cx.config.generation.per_teacher_count;
    let judge_temperature = cx.config.validation.temperature;

    // Validate one record against its assigned judge and attach the
    // verdict (or the quarantine marker).
    #[allow(clippy::too_many_arguments)]
    async fn judge_one(
        gateway: &Gateway,
        teachers: &[ModelEndpoint],
        fixed_judge: Option<&ModelEndpoint>,
        templates: &PromptTemplates,
        problem: &Problem,
        record: &mut CoTRecord,
        re_ask_bound: u32,
        temperature: f64,
    ) {
        let Some(judge) = fixed_judge.or_else(|| pick_cross_judge(teachers, &record.teacher))
        else {
            record.validation_failed = true;
            return;
        };
        let mut judge = judge.clone();
        judge.temperature = temperature;
        let outcome = validate(gateway, &judge, templates, problem, record, re_ask_bound).await;
        attach_verdict(record, &outcome);
    }

    struct ProblemResult {
        problem: Problem,
        retained: Vec<CoTRecord>,
        quarantined: Vec<CoTRecord>,
        discarded: u64,
        status: QuorumStatus,
    }

    let worker = |(problem, records): (Problem, Vec<CoTRecord>)| {
        let gateway = gateway.clone();
        let teachers = teachers.clone();
        let templates = templates.clone();
        let tokenizer = tokenizer.clone();
        let fixed_judge = fixed_judge.clone();
        async move {
            let mut records = records;
            for record in &mut records {
                judge_one(
                    &gateway,
                    &teachers,
                    fixed_judge.as_ref(),
                    &templates,
                    &problem,
                    record,
                    re_ask_bound,
                    judge_temperature,
                )
                .await;
            }
            let (mut retained, rejected) = apply_retention(records);
            let (mut quarantined, dropped): (Vec<_>, Vec<_>) =
                rejected.into_iter().partition(|r| r.validation_failed);
            let mut discarded = dropped.len() as u64;

            // Regeneration rounds toward the minimum-correct quorum.
            // Side effects of each round (quarantines, discards) are
            // accumulated behind a lock scoped to this problem.
            let side = std::sync::Mutex::new((Vec::new(), 0u64));
            let status = {
                let gateway = &gateway;
                let teachers = &teachers;
                let templates = &templates;
                let tokenizer = &tokenizer;
                let fixed_judge = &fixed_judge;
                let side = &side;
                let problem = &problem;
                enforce_min_correct(&mut retained, regen_budget, move |round| async move {
                    let seq_start = per_teacher_count * round as usize;
                    let outcome = generate(
                        gateway,
                        problem,
                        teachers,
                        per_teacher_count,
                        tokenizer.as_ref(),
                        None,
                        seq_start,
                    )
                    .await;
                    let mut fresh = outcome.records;
                    for record in &mut fresh {
                        judge_one(
                            gateway,
                            teachers,
                            fixed_judge.as_ref(),
                            templates,
                            problem,
                            record,
                            re_ask_bound,
                            judge_temperature,
                        )
                        .await;
                    }
                    let (kept, rejected) = apply_retention(fresh);
                    let mut side = side.lock().expect("side lock");
                    for record in rejected {
                        if record.validation_failed {
                            side.0.push(record);
                        } else {
                            side.1 += 1;
                        }
                    }
                    kept
                })
                .await
            };
            let (regen_quarantined, regen_discarded) = side.into_inner().expect("side lock");
            quarantined.extend(regen_quarantined);
            discarded += regen_discarded;
            ProblemResult { problem, retained, quarantined, discarded, status }
        }
    };

    let results: Vec<ProblemResult> = stream::iter(groups.into_iter().map(worker))
        .buffered(cx.config.workers.max(1))
        .collect()
        .await;

    let mut validated = Vec::new();
    let mut below_quorum = Vec::new();
    let mut quarantine = Vec::new();
    let mut discarded_total = 0u64;
    let mut quarantined_total = 0u64;
    let mut regen_rounds_total = 0u64;
    for result in results {
        discarded_total += result.discarded;
        quarantined_total += result.quarantined.len() as u64;
        if !result.quarantined.is_empty() {
            quarantine.push((result.problem.clone(), result.quarantined));
        }
        match result.status {
            QuorumStatus::Satisfied { regen_rounds } => {
                regen_rounds_total += u64::from(regen_rounds);
                validated.push((result.problem, result.retained));
            }
            QuorumStatus::BelowQuorum { .. } => {
                below_quorum.push((result.problem, result.retained));
            }
        }
    }

    let retained_records: u64 = validated.iter().map(|(_, r)| r.len() as u64).sum();
    let validated_problems = validated.len();
    let below = below_quorum.len();
    let write_report = write_corpus(validated, &cx.paths.validated(), cx.strictness)?;
    write_corpus(below_quorum, &cx.paths.below_quorum(), cx.strictness)?;
    write_corpus(quarantine, &cx.paths.quarantine(), cx.strictness)?;

    Ok(json!({
        "problems_validated": validated_problems,
        "below_quorum_problems": below,
        "retained_records": retained_records,
        "discarded_records": discarded_total,
        "quarantined_records": quarantined_total,
        "regen_rounds_total": regen_rounds_total,
        "write": write_report,
    }))
}

async fn run_score(cx: &StageCx) -> Result<Value, anyhow::Error> {
    let scoring_config = cx.config.scoring.to_scoring_config()?;
    // Pass 1: token-count bounds, unless fixed bounds are configured.
    let bounds = match scoring_config.fixed_bounds {
        Some((l_min, l_max)) => LBounds { l_min, l_max, degenerate: l_min == l_max },
        None => {
            let reader = read_corpus(&cx.paths.validated(), cx.strictness)?;
            let mut counts = Vec::new();
            for group in reader {
                let (_, records) = group?;
                counts.extend(records.iter().map(|r| r.token_count));
            }
            compute_l_bounds(counts)?
        }
    };

    let groups = cx.read_groups(&cx.paths.validated())?;
    let gateway = Arc::new(cx.gateway()?);
    let mut judge = cx.config.scoring_judge()?;
    judge.temperature = cx.config.scoring.temperature;
    let judge = Arc::new(judge);
    let templates = Arc::new(cx.templates()?);
    let scoring_config = Arc::new(scoring_config);

    let scored: Vec<_> = stream::iter(groups.into_iter().map(|(problem, mut records)| {
        let gateway = gateway.clone();
        let judge = judge.clone();
        let templates = templates.clone();
        let scoring_config = scoring_config.clone();
        async move {
            for record in &mut records {
                score_record(
                    &gateway,
                    &judge,
                    &templates,
                    &scoring_config,
                    &bounds,
                    &problem,
                    record,
                )
                .await?;
            }
            Ok::<_, anyhow::Error>((problem, records))
        }
    }))
    .buffered(cx.config.workers.max(1))
    .collect()
    .await;
    let scored: Result<Vec<_>, _> = scored.into_iter().collect();
    let scored = scored?;

    let rv_unscored: u64 =
        scored.iter().flat_map(|(_, rs)| rs).filter(|r| r.rv_unscored).count() as u64;
    let cd_unscored: u64 =
        scored.iter().flat_map(|(_, rs)| rs).filter(|r| r.cd_unscored).count() as u64;
    let records: u64 = scored.iter().map(|(_, rs)| rs.len() as u64).sum();
    let write_report = write_corpus(scored, &cx.paths.scored(), cx.strictness)?;

    Ok(json!({
        "records_scored": records,
        "rv_unscored": rv_unscored,
        "cd_unscored": cd_unscored,
        "bounds": bounds,
        "write": write_report,
    }))
}

async fn run_sample(cx: &StageCx) -> Result<Value, anyhow::Error> {
    let groups = cx.read_groups(&cx.paths.scored())?;
    let sampler_config = cx.config.sampler_config();
    let mode = cx.config.sampler.selection_mode()?;
    let rv_range = cx.config.sampler.rv_range.map(|[lo, hi]| ScoreRange::new(lo, hi));
    let cd_range = cx.config.sampler.cd_range.map(|[lo, hi]| ScoreRange::new(lo, hi));

    let mut plans_file = std::fs::File::create(cx.paths.plans())?;
    let mut manifest_file = std::fs::File::create(cx.paths.manifest())?;
    let mut drawn_total = 0u64;
    let mut skipped = 0u64;
    let mut eligible = 0u64;
    let mut candidate_total = 0u64;
    let mut flag_counts: BTreeMap<String, u64> = BTreeMap::new();

    for (problem, records) in &groups {
        let candidates: Vec<Candidate> = records
            .iter()
            .filter_map(|r| Candidate::from_record(r, sampler_config.candidate_filter))
            .collect();
        if candidates.is_empty() {
            skipped += 1;
            continue;
        }
        eligible += 1;
        candidate_total += candidates.len() as u64;

        let drawn: Vec<String> = match mode {
            None => {
                let plan = sample_problem(&problem.id, &candidates, &sampler_config)?;
                for flag in &plan.degenerate_flags {
                    *flag_counts.entry(flag_name(*flag).to_string()).or_insert(0) += 1;
                }
                writeln!(plans_file, "{}", serde_json::to_string(&plan)?)?;
                plan.drawn
            }
            Some(mode) => {
                let mut rng = omni_core::sampler::derive_rng(sampler_config.seed, &problem.id);
                let picked = select_by_range(&candidates, rv_range, cd_range, mode, &mut rng)?;
                vec![picked]
            }
        };
        for cot_id in drawn {
            drawn_total += 1;
            let entry = ManifestEntry { problem_id: problem.id.clone(), cot_id };
            writeln!(manifest_file, "{}", serde_json::to_string(&entry)?)?;
        }
    }

    Ok(json!({
        "problems_in": groups.len(),
        "eligible_problems": eligible,
        "skipped_problems": skipped,
        "candidates": candidate_total,
        "drawn": drawn_total,
        "strategy": cx.config.sampler.strategy,
        "degenerate_flags": flag_counts,
    }))
}

fn flag_name(flag: DegenerateFlag) -> &'static str {
    match flag {
        DegenerateFlag::F1UniformFallback => "f1_uniform_fallback",
        DegenerateFlag::F2UniformFallback => "f2_uniform_fallback",
        DegenerateFlag::SingleCandidate => "single_candidate",
        DegenerateFlag::ExhaustedMassFallback => "exhausted_mass_fallback",
    }
}

fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, anyhow::Error> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

async fn run_export(cx: &StageCx) -> Result<Value, anyhow::Error> {
    let groups = cx.read_groups(&cx.paths.scored())?;
    let mut counts = serde_json::Map::new();

    if cx.config.export.sft {
        let manifest = read_manifest(&cx.paths.manifest())?;
        let file = std::fs::File::create(cx.paths.sft())?;
        let summary = export_sft(groups.clone(), &manifest, std::io::BufWriter::new(file))?;
        counts.insert("sft".into(), serde_json::to_value(&summary)?);
    }

    if cx.config.export.dpo {
        let [lo, hi] = cx.config.export.chosen_rv_range;
        let range = ScoreRange::new(lo, hi);
        let filter = cx.config.sampler.candidate_filter;
        let selections: Vec<DpoSelection> = groups
            .iter()
            .filter_map(|(problem, records)| {
                let candidates: Vec<Candidate> = records
                    .iter()
                    .filter_map(|r| Candidate::from_record(r, filter))
                    .collect();
                build_dpo_pair(&candidates, range)
                    .map(|pair| DpoSelection { problem_id: problem.id.clone(), pair })
            })
            .collect();
        let file = std::fs::File::create(cx.paths.dpo())?;
        let summary = export_dpo(
            groups.clone(),
            &selections,
            groups.len() as u64,
            std::io::BufWriter::new(file),
        )?;
        counts.insert("dpo".into(), serde_json::to_value(&summary)?);
    }

    if let Some(expr) = &cx.config.export.filter {
        let predicate = Predicate::parse(expr)?;
        let (sub, filter_counts) = filter_corpus(groups.clone(), &predicate);
        write_corpus(sub, &cx.paths.filtered(), cx.strictness)?;
        counts.insert("filter".into(), serde_json::to_value(&filter_counts)?);
    }

    Ok(Value::Object(counts))
}

async fn run_stats(cx: &StageCx) -> Result<Value, anyhow::Error> {
    let input = match &cx.config.stats.input {
        Some(path) => cx.paths.work_dir().join(path),
        None => cx.paths.scored(),
    };
    let groups = cx.read_groups(&input)?;
    let stats = compute_stats(groups.clone());

    std::fs::write(cx.paths.stats_json(), serde_json::to_string_pretty(&stats)?)?;
    write_histogram_csv(&cx.paths.histogram_csv("cd"), "level", &stats.cd_histogram)?;
    write_histogram_csv(&cx.paths.histogram_csv("rv"), "level", &stats.rv_histogram)?;
    write_histogram_csv(&cx.paths.cots_per_problem_csv(), "cots", &stats.cots_per_problem_histogram)?;

    let group_by_tag = cx.config.stats.group_by == "domain_tag";
    let rows = token_stats(
        groups.iter().flat_map(|(p, records)| {
            records
                .iter()
                .map(|r| (p.domain_tag.clone(), r.token_count))
                .collect::<Vec<_>>()
        }),
        group_by_tag,
    );
    let mut csv_writer = csv::Writer::from_path(cx.paths.token_stats_csv())?;
    csv_writer.write_record(["group", "count", "mean", "median", "p90"])?;
    for row in &rows {
        csv_writer.write_record([
            row.group.clone(),
            row.count.to_string(),
            format!("{:.3}", row.mean),
            format!("{:.3}", row.median),
            format!("{:.3}", row.p90),
        ])?;
    }
    csv_writer.flush()?;
    write_text_histograms(&cx.paths.text_histograms(), &stats)?;

    Ok(json!({
        "stats": stats,
        "token_stats": rows,
    }))
}

fn write_histogram_csv<K: std::fmt::Display>(
    path: &Path,
    key_name: &str,
    histogram: &BTreeMap<K, u64>,
) -> Result<(), anyhow::Error> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record([key_name, "count"])?;
    for (key, count) in histogram {
        writer.write_record([key.to_string(), count.to_string()])?;
    }
    writer.flush()?;
    Ok(())
}

fn write_text_histograms(path: &Path, stats: &CorpusStats) -> Result<(), anyhow::Error> {
    let mut out = String::new();
    let render = |out: &mut String, title: &str, histogram: &BTreeMap<u8, u64>| {
        out.push_str(title);
        out.push('\n');
        let max = histogram.values().copied().max().unwrap_or(0).max(1);
        for (level, count) in histogram {
            let bar = "#".repeat(((count * 40) / max) as usize);
            out.push_str(&format!("{level} | {bar} {count}\n"));
        }
        out.push('\n');
    };
    render(&mut out, "CD levels", &stats.cd_histogram);
    render(&mut out, "RV levels", &stats.rv_histogram);
    out.push_str(&format!(
        "problems: {}  cots: {}  token range: [{}, {}]\n",
        stats.num_problems, stats.num_cots, stats.l_min, stats.l_max
    ));
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip_with_clap() {
        use clap::ValueEnum;
        for stage in [
            Stage::Ingest,
            Stage::Generate,
            Stage::Validate,
            Stage::Score,
            Stage::Sample,
            Stage::Export,
            Stage::Stats,
            Stage::Pipeline,
        ] {
            let parsed = Stage::from_str(stage.name(), true).unwrap();
            assert_eq!(parsed, stage);
        }
    }
}
