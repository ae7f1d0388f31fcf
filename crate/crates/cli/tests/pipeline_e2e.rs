//! End-to-end mock pipeline runs: stage chaining, checkpoint resume,
//! determinism, and the CLI binary's exit codes.

mod common;

use common::*;

use omni_cli::stages::{run_stage, Stage};
use omni_core::corpus::{read_corpus, Strictness};

async fn run_full(config: &omni_cli::Config) {
    run_stage(Stage::Pipeline, config.clone()).await.unwrap();
}

#[tokio::test]
async fn pipeline_produces_quorum_satisfying_scored_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture_config(dir.path(), &dir.path().join("run"), 50);
    run_full(&config).await;
    let paths = paths(&config);

    let groups: Vec<_> = read_corpus(&paths.scored(), Strictness::Strict)
        .unwrap()
        .map(|g| g.unwrap())
        .collect();
    assert_eq!(groups.len(), 47, "3 hard problems are excluded");
    for (problem, records) in &groups {
        let correct = records.iter().filter(|r| r.is_fully_correct()).count();
        assert!(correct >= 2, "problem {} has only {correct} correct records", problem.id);
        for record in records {
            let rv = record.rv.as_ref().expect("retained records are RV-scored");
            let cd = record.cd.as_ref().expect("retained records are CD-scored");
            assert!(rv.level <= 9 && cd.level <= 9);
            assert!(rv.fused && rv.l_norm.is_some());
            assert_eq!(rv.judge, TEACHER_B);
        }
    }

    // The hard problems sit in the sidecar, not the main corpus.
    let sidecar: Vec<_> = read_corpus(&paths.below_quorum(), Strictness::Strict)
        .unwrap()
        .map(|g| g.unwrap())
        .collect();
    let sidecar_ids: Vec<&str> = sidecar.iter().map(|(p, _)| p.id.as_str()).collect();
    assert_eq!(sidecar_ids, BAD_IDS);
    let main_ids: std::collections::BTreeSet<&str> =
        groups.iter().map(|(p, _)| p.id.as_str()).collect();
    for bad in BAD_IDS {
        assert!(!main_ids.contains(bad));
    }
}

#[tokio::test]
async fn scored_corpus_round_trips_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture_config(dir.path(), &dir.path().join("run"), 50);
    run_full(&config).await;
    let paths = paths(&config);

    let original = slurp(&paths.scored());
    let groups: Vec<_> = read_corpus(&paths.scored(), Strictness::Strict)
        .unwrap()
        .map(|g| g.unwrap())
        .collect();
    let rewritten_path = dir.path().join("rewritten.jsonl");
    omni_core::corpus::write_corpus(groups, &rewritten_path, Strictness::Strict).unwrap();
    assert_eq!(original, slurp(&rewritten_path));
}

#[tokio::test]
async fn identical_configs_produce_byte_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config_a = fixture_config(dir.path(), &dir.path().join("run_a"), 50);
    let config_b = fixture_config(dir.path(), &dir.path().join("run_b"), 50);
    run_full(&config_a).await;
    run_full(&config_b).await;
    let (pa, pb) = (paths(&config_a), paths(&config_b));

    for (a, b) in [
        (pa.problems(), pb.problems()),
        (pa.pending_cots(), pb.pending_cots()),
        (pa.validated(), pb.validated()),
        (pa.scored(), pb.scored()),
        (pa.manifest(), pb.manifest()),
        (pa.plans(), pb.plans()),
        (pa.sft(), pb.sft()),
        (pa.dpo(), pb.dpo()),
        (pa.filtered(), pb.filtered()),
        (pa.stats_json(), pb.stats_json()),
    ] {
        assert_eq!(slurp(&a), slurp(&b), "{} differs between runs", a.display());
    }
}

#[tokio::test]
async fn stagewise_run_matches_pipeline_run_and_resumes() {
    let dir = tempfile::tempdir().unwrap();

    // Uninterrupted pipeline.
    let full = fixture_config(dir.path(), &dir.path().join("full"), 50);
    run_full(&full).await;

    // "Crashed" run: the first three stages already completed, then the
    // pipeline is invoked to pick up from the checkpoint.
    let resumed = fixture_config(dir.path(), &dir.path().join("resumed"), 50);
    for stage in [Stage::Ingest, Stage::Generate, Stage::Validate] {
        run_stage(stage, resumed.clone()).await.unwrap();
    }
    let reports = run_stage(Stage::Pipeline, resumed.clone()).await.unwrap();
    let resumed_stages: Vec<&str> = reports.iter().map(|r| r.stage.as_str()).collect();
    assert_eq!(resumed_stages, vec!["score", "sample", "export", "stats"]);

    let (pf, pr) = (paths(&full), paths(&resumed));
    for (a, b) in [
        (pf.scored(), pr.scored()),
        (pf.manifest(), pr.manifest()),
        (pf.sft(), pr.sft()),
    ] {
        assert_eq!(slurp(&a), slurp(&b), "{} differs after resume", a.display());
    }

    // A stale partial marker forces the stage to re-run.
    std::fs::write(pr.partial_marker("stats"), "crash").unwrap();
    let reports = run_stage(Stage::Pipeline, resumed.clone()).await.unwrap();
    assert_eq!(reports.len(), 1);
    assert_eq!(reports[0].stage, "stats");
    assert!(!pr.partial_marker("stats").exists());
}

#[tokio::test]
async fn histogram_mass_matches_record_counts() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture_config(dir.path(), &dir.path().join("run"), 50);
    run_full(&config).await;
    let paths = paths(&config);

    let stats: serde_json::Value =
        serde_json::from_slice(&slurp(&paths.stats_json())).unwrap();
    let num_cots = stats["num_cots"].as_u64().unwrap();
    let cd_mass: u64 = stats["cd_histogram"]
        .as_object()
        .unwrap()
        .values()
        .map(|v| v.as_u64().unwrap())
        .sum();
    let rv_mass: u64 = stats["rv_histogram"]
        .as_object()
        .unwrap()
        .values()
        .map(|v| v.as_u64().unwrap())
        .sum();
    assert_eq!(num_cots, 94, "47 problems x 2 records");
    assert_eq!(cd_mass, num_cots);
    assert_eq!(rv_mass, num_cots);

    // CSV histograms carry the same mass.
    let cd_csv = String::from_utf8(slurp(&paths.histogram_csv("cd"))).unwrap();
    let csv_mass: u64 = cd_csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse::<u64>().unwrap())
        .sum();
    assert_eq!(csv_mass, num_cots);

    // Token stats grouped by domain tag: two groups with distinct means.
    let token_csv = String::from_utf8(slurp(&paths.token_stats_csv())).unwrap();
    let rows: Vec<&str> = token_csv.lines().collect();
    assert_eq!(rows[0], "group,count,mean,median,p90");
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("code,"));
    assert!(rows[2].starts_with("math,"));
}

#[tokio::test]
async fn sft_export_covers_manifest_and_filter_counts_match() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture_config(dir.path(), &dir.path().join("run"), 50);
    run_full(&config).await;
    let paths = paths(&config);

    let manifest = jsonl_values(&paths.manifest());
    let sft = jsonl_values(&paths.sft());
    assert_eq!(manifest.len(), 47, "one draw per quorum-satisfying problem");
    assert_eq!(sft.len(), 47);
    for row in &sft {
        assert!(row["prompt"].as_str().unwrap().starts_with("Problem q"));
        let response = row["response"].as_str().unwrap();
        assert!(response.contains("\n\n"), "response uses the join convention");
        assert!(row["meta"]["s_rv"].as_u64().unwrap() <= 9);
    }

    // Filter "s_cd <= 6 and solution_valid": even problems only, both
    // records each. 25 good even problems -> 50 records.
    let filtered: Vec<_> = read_corpus(&paths.filtered(), Strictness::Strict)
        .unwrap()
        .map(|g| g.unwrap())
        .collect();
    let filtered_records: usize = filtered.iter().map(|(_, r)| r.len()).sum();
    assert_eq!(filtered_records, 50);

    // DPO: every problem's candidates share one RV level, so no pair
    // qualifies; the export is a valid empty file with yield 0.
    assert!(slurp(&paths.dpo()).is_empty());
    let report: serde_json::Value =
        serde_json::from_slice(&slurp(&paths.report("export"))).unwrap();
    assert_eq!(report["counts"]["dpo"]["pair_yield"], 0.0);
    assert_eq!(report["counts"]["sft"]["rows"], 47);
    // Reports echo the effective config.
    assert_eq!(report["effective_config"]["seed"], 42);
}

fn omni_binary() -> std::process::Command {
    std::process::Command::new(env!("CARGO_BIN_EXE_omni"))
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();

    // Config that does not parse: exit 2.
    let bad_config = dir.path().join("bad.toml");
    std::fs::write(&bad_config, "definitely not valid = { toml").unwrap();
    let status = omni_binary()
        .args(["stats", "--config"])
        .arg(&bad_config)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    // Config that parses but fails validation: exit 2.
    let invalid = dir.path().join("invalid.toml");
    std::fs::write(&invalid, "work_dir = \"x\"\n[transport]\nkind = \"mock\"\n").unwrap();
    let status = omni_binary()
        .args(["stats", "--config"])
        .arg(&invalid)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    // Valid config but a stage whose input is missing: exit 1, and the
    // partial marker stays behind.
    let work = dir.path().join("run");
    let source = dir.path().join("foreign_problems.jsonl");
    write_problem_source(&source, 3);
    let script = dir.path().join("mock_script.json");
    write_mock_script(&script);
    let config_text = format!(
        r#"
work_dir = "{work}"
[[sources]]
name = "demo"
path = "{source}"
[sources.field_mapping]
question = "prompt"
answer = "reference_answer"
uid = "id"
[transport]
kind = "mock"
script = "{script}"
[[endpoints]]
name = "teacher-alpha"
base_url = "http://localhost:0/v1"
model_id = "a"
[[endpoints]]
name = "teacher-beta"
base_url = "http://localhost:0/v1"
model_id = "b"
[generation]
teachers = ["teacher-alpha", "teacher-beta"]
[scoring]
judge = "teacher-beta"
"#,
        work = work.display(),
        source = source.display(),
        script = script.display(),
    );
    let config_path = dir.path().join("ok.toml");
    std::fs::write(&config_path, config_text).unwrap();

    let status = omni_binary()
        .args(["generate", "--config"])
        .arg(&config_path)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1), "generate without ingest fails");
    assert!(work.join("generate.partial").exists());

    // The full pipeline through the binary: exit 0.
    let status = omni_binary()
        .args(["pipeline", "--config"])
        .arg(&config_path)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(work.join("scored.jsonl").exists());

    // Flag overrides are accepted and echoed into reports.
    let status = omni_binary()
        .args(["sample", "--config"])
        .arg(&config_path)
        .args(["--seed", "7", "--mu-cd", "3", "--beta", "0.25", "--workers", "2"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let report: serde_json::Value =
        serde_json::from_slice(&slurp(&work.join("reports/sample.json"))).unwrap();
    assert_eq!(report["effective_config"]["seed"], 7);
    assert_eq!(report["effective_config"]["sampler"]["mu_cd"], 3);
    assert_eq!(report["effective_config"]["sampler"]["beta"], 0.25);
}

/// A quorum-satisfying problem with an extra flawed-reasoning record:
/// retention keeps it, but the default candidate filter must keep it
/// out of every draw.
#[tokio::test]
async fn sampler_never_draws_records_failing_the_candidate_filter() {
    use omni_core::corpus::{write_corpus, CoTRecord, Problem, ScoreAnnotation};

    let dir = tempfile::tempdir().unwrap();
    let work = dir.path().join("run");
    std::fs::create_dir_all(&work).unwrap();

    let score = |level: u8, fused: bool| ScoreAnnotation {
        level,
        judge: "j".into(),
        raw_evaluations: vec![level],
        l_norm: fused.then_some(f64::from(level)),
        fused,
    };
    let mut groups = Vec::new();
    for p in 0..20 {
        let id = format!("p{p:02}");
        let mut records = Vec::new();
        for (i, reasoning) in [(0, true), (1, true), (2, false)] {
            let mut r = CoTRecord::pending(
                &id,
                format!("c{i}"),
                format!("thought {i}"),
                "42",
                "teacher",
                10 + i,
                "whitespace",
            );
            r.thought_correctness_verify = Some(reasoning);
            r.solution_valid = Some(true);
            r.rv = Some(score(4, true));
            r.cd = Some(score(5, false));
            records.push(r);
        }
        groups.push((Problem::new(&id, "prompt", "42", "unit"), records));
    }
    write_corpus(groups, &work.join("scored.jsonl"), Strictness::Strict).unwrap();

    let mut config = fixture_config(dir.path(), &work, 3);
    config.sampler.samples_per_problem = 3; // more than the eligible pool
    run_stage(Stage::Sample, config.clone()).await.unwrap();

    let manifest = jsonl_values(&paths(&config).manifest());
    assert_eq!(manifest.len(), 40, "two eligible candidates per problem");
    for entry in manifest {
        assert_ne!(entry["cot_id"], "c2", "flawed-reasoning record was drawn");
    }
}
