//! Artifact layout under the work directory.

use std::path::{Path, PathBuf};

/// Where each stage reads and writes. Everything lives under one work
/// directory so a run is self-contained and resumable.
#[derive(Debug, Clone)]
pub struct StagePaths {
    work_dir: PathBuf,
}

impl StagePaths {
    pub fn new(work_dir: &Path) -> Self {
        Self { work_dir: work_dir.to_path_buf() }
    }

    pub fn work_dir(&self) -> &Path {
        &self.work_dir
    }

    pub fn problems(&self) -> PathBuf {
        self.work_dir.join("problems.jsonl")
    }

    pub fn pending_cots(&self) -> PathBuf {
        self.work_dir.join("pending_cots.jsonl")
    }

    pub fn generation_failures(&self) -> PathBuf {
        self.work_dir.join("generation_failures.jsonl")
    }

    pub fn validated(&self) -> PathBuf {
        self.work_dir.join("validated.jsonl")
    }

    pub fn quarantine(&self) -> PathBuf {
        self.work_dir.join("quarantine.jsonl")
    }

    pub fn below_quorum(&self) -> PathBuf {
        self.work_dir.join("below_quorum.jsonl")
    }

    pub fn scored(&self) -> PathBuf {
        self.work_dir.join("scored.jsonl")
    }

    pub fn plans(&self) -> PathBuf {
        self.work_dir.join("plans.jsonl")
    }

    pub fn manifest(&self) -> PathBuf {
        self.work_dir.join("manifest.jsonl")
    }

    pub fn sft(&self) -> PathBuf {
        self.work_dir.join("sft.jsonl")
    }

    pub fn dpo(&self) -> PathBuf {
        self.work_dir.join("dpo.jsonl")
    }

    pub fn filtered(&self) -> PathBuf {
        self.work_dir.join("filtered.jsonl")
    }

    pub fn stats_json(&self) -> PathBuf {
        self.work_dir.join("stats.json")
    }

    pub fn histogram_csv(&self, name: &str) -> PathBuf {
        self.work_dir.join(format!("{name}_histogram.csv"))
    }

    pub fn cots_per_problem_csv(&self) -> PathBuf {
        self.work_dir.join("cots_per_problem.csv")
    }

    pub fn token_stats_csv(&self) -> PathBuf {
        self.work_dir.join("token_stats.csv")
    }

    pub fn text_histograms(&self) -> PathBuf {
        self.work_dir.join("stats.txt")
    }

    pub fn report(&self, stage: &str) -> PathBuf {
        self.work_dir.join("reports").join(format!("{stage}.json"))
    }

    pub fn partial_marker(&self, stage: &str) -> PathBuf {
        self.work_dir.join(format!("{stage}.partial"))
    }

    pub fn ensure_dirs(&self) -> std::io::Result<()> {
        std::fs::create_dir_all(self.work_dir.join("reports"))
    }
}
