//! Dataset ingestion and JSONL persistence.
//!
//! Problems load from JSON-lines files in three layouts: a generic layout
//! with explicit answers, a grade-school layout whose answers follow a
//! `####` marker, and a competition layout whose answers sit in the last
//! `\boxed{...}` of the worked solution. Pipeline stores reuse the same
//! format: append-only JSONL with last-write-wins keyed loading for resume.

use std::collections::{BTreeMap, HashSet};
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Problem;
use crate::grader::extract_boxed;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: no canonical answer found")]
    MissingAnswer { line: usize },
    #[error("line {line}: duplicate problem id {id:?}")]
    DuplicateId { id: String, line: usize },
    #[error("serialization failed: {0}")]
    Encode(String),
}

/// Input layout of a problem file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    /// `{"id"?, "problem", "answer", "solution"?, "level"?, "subject"?}`
    GenericJsonl,
    /// `{"question", "answer"}` with the final answer after the last `####`.
    Gsm8kStyle,
    /// `{"problem", "solution", "level"?, "type"?}` with the answer boxed
    /// inside the solution.
    MathStyle,
}

impl FromStr for DatasetFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "generic" | "generic-jsonl" => Ok(DatasetFormat::GenericJsonl),
            "gsm8k" => Ok(DatasetFormat::Gsm8kStyle),
            "math" => Ok(DatasetFormat::MathStyle),
            other => Err(format!(
                "unknown dataset format {other:?} (expected generic-jsonl, gsm8k, or math)"
            )),
        }
    }
}

#[derive(Deserialize)]
struct RawGsm8k {
    question: String,
    answer: String,
}

#[derive(Deserialize)]
struct RawMath {
    #[serde(default)]
    id: Option<String>,
    problem: String,
    solution: String,
    #[serde(default)]
    level: Option<String>,
    #[serde(default, rename = "type")]
    subject: Option<String>,
}

#[derive(Deserialize)]
struct RawGeneric {
    #[serde(default)]
    id: Option<String>,
    problem: String,
    answer: String,
    #[serde(default)]
    solution: Option<String>,
    #[serde(default)]
    level: Option<serde_json::Value>,
    #[serde(default)]
    subject: Option<String>,
}

/// Parses difficulty tiers like `"Level 3"`, `"level 3"`, or `"3"`.
fn parse_level(text: &str) -> Option<u8> {
    let digits = text
        .trim()
        .trim_start_matches(['L', 'l'])
        .trim_start_matches("evel")
        .trim();
    digits.parse().ok()
}

/// Loads every problem from a JSONL file.
///
/// Line numbers are 1-based and blank lines are skipped. Problems without an
/// explicit id get `"<file stem>/<line>"`; ids must be unique within the
/// file. The file stem also becomes each problem's `source`.
pub fn load_problems(path: &Path, format: DatasetFormat) -> Result<Vec<Problem>, DatasetError> {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    let reader = BufReader::new(std::fs::File::open(path)?);

    let mut problems = Vec::new();
    let mut seen = HashSet::new();
    for (index, line) in reader.lines().enumerate() {
        let line_no = index + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse = |message: String| DatasetError::Parse {
            line: line_no,
            message,
        };
        let mut problem = match format {
            DatasetFormat::Gsm8kStyle => {
                let raw: RawGsm8k =
                    serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
                let answer = raw
                    .answer
                    .rsplit_once("####")
                    .map(|(_, after)| after.trim().to_string())
                    .filter(|a| !a.is_empty())
                    .ok_or(DatasetError::MissingAnswer { line: line_no })?;
                let mut p = Problem::new(format!("{stem}/{line_no}"), raw.question, answer, &stem);
                p.solution = Some(raw.answer);
                p
            }
            DatasetFormat::MathStyle => {
                let raw: RawMath = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
                let answer = extract_boxed(&raw.solution)
                    .map(|a| a.trim().to_string())
                    .filter(|a| !a.is_empty())
                    .ok_or(DatasetError::MissingAnswer { line: line_no })?;
                let id = raw.id.unwrap_or_else(|| format!("{stem}/{line_no}"));
                let mut p = Problem::new(id, raw.problem, answer, &stem);
                p.solution = Some(raw.solution);
                p.difficulty = raw.level.as_deref().and_then(parse_level);
                p.subject = raw.subject;
                p
            }
            DatasetFormat::GenericJsonl => {
                let raw: RawGeneric =
                    serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
                if raw.answer.trim().is_empty() {
                    return Err(DatasetError::MissingAnswer { line: line_no });
                }
                let id = raw.id.unwrap_or_else(|| format!("{stem}/{line_no}"));
                let mut p = Problem::new(id, raw.problem, raw.answer, &stem);
                p.solution = raw.solution;
                p.difficulty = match &raw.level {
                    Some(serde_json::Value::Number(n)) => n.as_u64().map(|v| v as u8),
                    Some(serde_json::Value::String(s)) => parse_level(s),
                    _ => None,
                };
                p.subject = raw.subject;
                p
            }
        };
        if problem.body.trim().is_empty() {
            return Err(parse("problem text is empty".into()));
        }
        problem.body = problem.body.trim().to_string();
        problem.length_chars = problem.body.chars().count() as u64;
        if !seen.insert(problem.id.clone()) {
            return Err(DatasetError::DuplicateId {
                id: problem.id,
                line: line_no,
            });
        }
        problems.push(problem);
    }
    Ok(problems)
}

// ---------------------------------------------------------------------------
// JSONL stores
// ---------------------------------------------------------------------------

/// Appends one value as a JSONL line, flushed before returning so a crashed
/// run loses at most the line being written.
pub fn append_jsonl<T: Serialize>(path: &Path, value: &T) -> Result<(), DatasetError> {
    let mut line = serde_json::to_string(value).map_err(|e| DatasetError::Encode(e.to_string()))?;
    line.push('\n');
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    file.write_all(line.as_bytes())?;
    file.flush()?;
    Ok(())
}

/// Loads every line of a JSONL file. A missing file is an empty store.
pub fn load_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, DatasetError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut values = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
            line: index + 1,
            message: e.to_string(),
        })?;
        values.push(value);
    }
    Ok(values)
}

/// Loads a JSONL store keyed by `key`; when a key repeats, the later line
/// wins, so re-running a stage simply supersedes earlier entries.
pub fn load_keyed_jsonl<T, F>(path: &Path, key: F) -> Result<BTreeMap<String, T>, DatasetError>
where
    T: DeserializeOwned,
    F: Fn(&T) -> String,
{
    let mut map = BTreeMap::new();
    for value in load_jsonl::<T>(path)? {
        map.insert(key(&value), value);
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_lines(dir: &tempfile::TempDir, name: &str, lines: &[&str]) -> std::path::PathBuf {
        let path = dir.path().join(name);
        std::fs::write(&path, lines.join("\n") + "\n").unwrap();
        path
    }

    #[test]
    fn gsm8k_style_answers_follow_the_hash_marker() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_lines(
            &dir,
            "train.jsonl",
            &[
                r#"{"question": "Janet has 16 eggs. She eats 3. How many remain?", "answer": "16 - 3 = <<16-3=13>>13\n#### 13"}"#,
                "",
                r#"{"question": "Two plus two?", "answer": "2 + 2 = 4\n#### 4"}"#,
            ],
        );
        let problems = load_problems(&path, DatasetFormat::Gsm8kStyle).unwrap();
        assert_eq!(problems.len(), 2);
        assert_eq!(problems[0].id, "train/1");
        assert_eq!(problems[0].answer, "13");
        assert!(problems[0].solution.as_deref().unwrap().contains("16 - 3"));
        assert_eq!(problems[0].source, "train");
        // Blank line skipped, so the second problem keeps its file line.
        assert_eq!(problems[1].id, "train/3");
        assert_eq!(
            problems[1].length_chars,
            "Two plus two?".chars().count() as u64
        );
    }

    #[test]
    fn gsm8k_style_requires_the_marker() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_lines(
            &dir,
            "bad.jsonl",
            &[r#"{"question": "q", "answer": "no marker here"}"#],
        );
        let err = load_problems(&path, DatasetFormat::Gsm8kStyle).unwrap_err();
        assert!(matches!(err, DatasetError::MissingAnswer { line: 1 }));
    }

    #[test]
    fn math_style_answers_come_from_the_boxed_expression() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_lines(
            &dir,
            "contest.jsonl",
            &[
                r#"{"problem": "What is $\\frac{1}{2} + \\frac{1}{4}$?", "solution": "Adding, we get $\\boxed{\\frac{3}{4}}$.", "level": "Level 3", "type": "Prealgebra"}"#,
                r#"{"id": "alg-7", "problem": "Solve x+1=3.", "solution": "So $x = \\boxed{2}$.", "level": "Level 1", "type": "Algebra"}"#,
            ],
        );
        let problems = load_problems(&path, DatasetFormat::MathStyle).unwrap();
        assert_eq!(problems[0].answer, r"\frac{3}{4}");
        assert_eq!(problems[0].difficulty, Some(3));
        assert_eq!(problems[0].subject.as_deref(), Some("Prealgebra"));
        assert_eq!(problems[0].id, "contest/1");
        assert_eq!(problems[1].id, "alg-7");
        assert_eq!(problems[1].answer, "2");
    }

    #[test]
    fn math_style_requires_a_boxed_answer() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_lines(
            &dir,
            "contest.jsonl",
            &[r#"{"problem": "p", "solution": "no box at all"}"#],
        );
        let err = load_problems(&path, DatasetFormat::MathStyle).unwrap_err();
        assert!(matches!(err, DatasetError::MissingAnswer { line: 1 }));
    }

    #[test]
    fn generic_layout_reads_all_optional_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_lines(
            &dir,
            "mix.jsonl",
            &[
                r#"{"id": "p1", "problem": "Ali had $21. How much now?", "answer": "71", "solution": "21+50", "level": 4, "subject": "arithmetic"}"#,
                r#"{"problem": "Quick one.", "answer": "5", "level": "Level 2"}"#,
            ],
        );
        let problems = load_problems(&path, DatasetFormat::GenericJsonl).unwrap();
        assert_eq!(problems[0].id, "p1");
        assert_eq!(problems[0].difficulty, Some(4));
        assert_eq!(problems[0].subject.as_deref(), Some("arithmetic"));
        assert_eq!(problems[1].id, "mix/2");
        assert_eq!(problems[1].difficulty, Some(2));
        assert_eq!(problems[1].solution, None);
    }

    #[test]
    fn parse_errors_carry_their_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_lines(
            &dir,
            "broken.jsonl",
            &[r#"{"problem": "ok", "answer": "1"}"#, "not json at all"],
        );
        let err = load_problems(&path, DatasetFormat::GenericJsonl).unwrap_err();
        assert!(matches!(err, DatasetError::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_lines(
            &dir,
            "dup.jsonl",
            &[
                r#"{"id": "same", "problem": "a", "answer": "1"}"#,
                r#"{"id": "same", "problem": "b", "answer": "2"}"#,
            ],
        );
        let err = load_problems(&path, DatasetFormat::GenericJsonl).unwrap_err();
        assert!(matches!(err, DatasetError::DuplicateId { line: 2, .. }));
    }

    #[test]
    fn empty_answers_and_bodies_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let no_answer = write_lines(&dir, "a.jsonl", &[r#"{"problem": "p", "answer": "  "}"#]);
        assert!(matches!(
            load_problems(&no_answer, DatasetFormat::GenericJsonl).unwrap_err(),
            DatasetError::MissingAnswer { line: 1 }
        ));
        let no_body = write_lines(&dir, "b.jsonl", &[r#"{"problem": " ", "answer": "1"}"#]);
        assert!(matches!(
            load_problems(&no_body, DatasetFormat::GenericJsonl).unwrap_err(),
            DatasetError::Parse { line: 1, .. }
        ));
    }

    #[test]
    fn format_names_parse() {
        assert_eq!(
            "gsm8k".parse::<DatasetFormat>().unwrap(),
            DatasetFormat::Gsm8kStyle
        );
        assert_eq!(
            "MATH".parse::<DatasetFormat>().unwrap(),
            DatasetFormat::MathStyle
        );
        assert_eq!(
            "generic-jsonl".parse::<DatasetFormat>().unwrap(),
            DatasetFormat::GenericJsonl
        );
        assert!("csv".parse::<DatasetFormat>().is_err());
    }

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Row {
        key: String,
        value: u32,
    }

    #[test]
    fn jsonl_store_appends_and_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        assert_eq!(load_jsonl::<Row>(&path).unwrap(), Vec::<Row>::new());

        append_jsonl(
            &path,
            &Row {
                key: "a".into(),
                value: 1,
            },
        )
        .unwrap();
        append_jsonl(
            &path,
            &Row {
                key: "b".into(),
                value: 2,
            },
        )
        .unwrap();
        append_jsonl(
            &path,
            &Row {
                key: "a".into(),
                value: 3,
            },
        )
        .unwrap();

        let all = load_jsonl::<Row>(&path).unwrap();
        assert_eq!(all.len(), 3);

        // Keyed loading: the later "a" line wins.
        let keyed = load_keyed_jsonl::<Row, _>(&path, |r| r.key.clone()).unwrap();
        assert_eq!(keyed.len(), 2);
        assert_eq!(keyed["a"].value, 3);
        assert_eq!(keyed["b"].value, 2);
    }
}
