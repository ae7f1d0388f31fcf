//! Judge prompt templates.
//!
//! The built-in templates ship with the crate and are used verbatim;
//! a directory of replacement `.txt` files can be supplied for
//! experimentation. Placeholders are substituted in a single pass so
//! placeholder-looking text inside problem or CoT content is never
//! re-expanded.

use std::path::Path;

/// Validation prompt with `{problem}`, `{answer}`, `{reasoning process}`
/// and `{solution}` slots.
pub const VALIDATE_COT: &str = include_str!("../templates/validate_cot.txt");
/// Reasoning-verbosity grading prompt with `{problem}`, `{thought}` and
/// `{solution}` slots.
pub const RV_SCORE: &str = include_str!("../templates/rv_score.txt");
/// Cognitive-difficulty grading prompt with `{problem}`, `{thought}` and
/// `{solution}` slots.
pub const CD_SCORE: &str = include_str!("../templates/cd_score.txt");

/// Substitute `{name}` placeholders in one left-to-right pass.
fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'outer: while let Some(open) = rest.find('{') {
        let (before, tail) = rest.split_at(open);
        out.push_str(before);
        for (name, value) in vars {
            let key_len = name.len() + 2;
            if tail.len() >= key_len && &tail[1..key_len - 1] == *name && tail.as_bytes()[key_len - 1] == b'}' {
                out.push_str(value);
                rest = &tail[key_len..];
                continue 'outer;
            }
        }
        out.push('{');
        rest = &tail[1..];
    }
    out.push_str(rest);
    out
}

/// The set of prompt templates a pipeline run uses.
#[derive(Debug, Clone)]
pub struct PromptTemplates {
    validation: String,
    rv: String,
    cd: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptTemplates {
    pub fn builtin() -> Self {
        Self {
            validation: VALIDATE_COT.to_string(),
            rv: RV_SCORE.to_string(),
            cd: CD_SCORE.to_string(),
        }
    }

    /// Load `validate_cot.txt`, `rv_score.txt` and `cd_score.txt` from a
    /// directory, falling back to the built-ins for missing files.
    pub fn from_dir(dir: &Path) -> std::io::Result<Self> {
        let load = |file: &str, fallback: &str| -> std::io::Result<String> {
            let path = dir.join(file);
            if path.exists() {
                std::fs::read_to_string(path)
            } else {
                Ok(fallback.to_string())
            }
        };
        Ok(Self {
            validation: load("validate_cot.txt", VALIDATE_COT)?,
            rv: load("rv_score.txt", RV_SCORE)?,
            cd: load("cd_score.txt", CD_SCORE)?,
        })
    }

    pub fn render_validation(
        &self,
        problem: &str,
        answer: &str,
        reasoning_process: &str,
        solution: &str,
    ) -> String {
        render(
            &self.validation,
            &[
                ("problem", problem),
                ("answer", answer),
                ("reasoning process", reasoning_process),
                ("solution", solution),
            ],
        )
    }

    pub fn render_rv(&self, problem: &str, thought: &str, solution: &str) -> String {
        render(
            &self.rv,
            &[("problem", problem), ("thought", thought), ("solution", solution)],
        )
    }

    pub fn render_cd(&self, problem: &str, thought: &str, solution: &str) -> String {
        render(
            &self.cd,
            &[("problem", problem), ("thought", thought), ("solution", solution)],
        )
    }
}
