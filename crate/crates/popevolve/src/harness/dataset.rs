//! Dataset ingestion from line-delimited JSON, with a content hash over the
//! canonicalized problems so resume and scoring can refuse drifted inputs.

use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

use crate::domain::Problem;
use crate::harness::HarnessError;
use crate::record::sha256_hex;

/// An ordered collection of problems with a content fingerprint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub name: String,
    pub problems: Vec<Problem>,
    pub sha256: String,
}

/// One `dataset.jsonl` line: `{"id": ..., "problem": ..., "answer": ...}`
/// with `answer` optional.
#[derive(Debug, Serialize, Deserialize)]
struct DatasetLine {
    id: String,
    problem: String,
    #[serde(default)]
    answer: Option<String>,
}

impl Dataset {
    /// Builds a dataset from already-validated problems. The hash covers the
    /// canonicalized content (re-serialized lines, fixed field order), so
    /// formatting drift in the source file does not change identity.
    pub fn from_problems(name: impl Into<String>, problems: Vec<Problem>) -> Self {
        let canonical = problems
            .iter()
            .map(|p| {
                serde_json::to_string(&DatasetLine {
                    id: p.id.clone(),
                    problem: p.statement.clone(),
                    answer: p.reference_answer.clone(),
                })
                .expect("dataset line serializes")
            })
            .collect::<Vec<_>>()
            .join("\n");
        Self { name: name.into(), problems, sha256: sha256_hex(canonical.as_bytes()) }
    }

    pub fn len(&self) -> usize {
        self.problems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.problems.is_empty()
    }
}

/// Reads one JSONL dataset file. Malformed lines are reported with their
/// line number; duplicate ids are rejected by name.
pub fn ingest_dataset(path: &Path) -> Result<Dataset, HarnessError> {
    ingest_datasets(std::slice::from_ref(&path.to_path_buf()))
}

/// Reads and concatenates several JSONL dataset files in order. Ids must be
/// unique across all of them.
pub fn ingest_datasets(paths: &[std::path::PathBuf]) -> Result<Dataset, HarnessError> {
    if paths.is_empty() {
        return Err(HarnessError::Dataset("no dataset file given".into()));
    }
    let mut problems: Vec<Problem> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for path in paths {
        let text = fs::read_to_string(path)
            .map_err(|e| HarnessError::Dataset(format!("{}: {e}", path.display())))?;
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: DatasetLine = serde_json::from_str(line).map_err(|e| {
                HarnessError::Dataset(format!(
                    "{}: malformed line {}: {e}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            if !seen.insert(parsed.id.clone()) {
                return Err(HarnessError::Dataset(format!(
                    "{}: duplicate problem id '{}' at line {}",
                    path.display(),
                    parsed.id,
                    lineno + 1
                )));
            }
            let problem =
                Problem::new(parsed.id, parsed.problem, parsed.answer).map_err(|e| {
                    HarnessError::Dataset(format!(
                        "{}: line {}: {e}",
                        path.display(),
                        lineno + 1
                    ))
                })?;
            problems.push(problem);
        }
    }
    let name = paths
        .iter()
        .map(|p| {
            p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "dataset".into())
        })
        .collect::<Vec<_>>()
        .join("+");
    Ok(Dataset::from_problems(name, problems))
}
