//! JSONL corpora of questions with pre-retrieved documents.
//!
//! One object per line:
//! `{"id", "question", "golden_answers": [..], "retrieved": [{"id", "title", "text"}]}`.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("reading corpus: {0}")]
    Io(#[from] std::io::Error),
}

impl CorpusError {
    pub fn name(&self) -> &'static str {
        match self {
            CorpusError::MalformedLine { .. } => "MalformedLine",
            CorpusError::Io(_) => "Io",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievedDoc {
    pub id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAExample {
    pub id: String,
    pub question: String,
    pub golden_answers: Vec<String>,
    #[serde(default)]
    pub retrieved: Vec<RetrievedDoc>,
}

#[derive(Deserialize)]
struct RawExample {
    id: String,
    question: String,
    golden_answers: Vec<String>,
    retrieved: Option<Vec<RetrievedDoc>>,
}

pub fn parse_line(line: &str, lineno: usize) -> Result<(QAExample, Option<String>), CorpusError> {
    let malformed = |message: String| CorpusError::MalformedLine {
        line: lineno,
        message,
    };
    let raw: RawExample = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
    let mut warning = None;
    let retrieved = match raw.retrieved {
        Some(docs) => {
            let mut ids = HashSet::new();
            if let Some(dup) = docs.iter().find(|d| !ids.insert(d.id.as_str())) {
                return Err(malformed(format!("duplicate document id `{}`", dup.id)));
            }
            docs
        }
        None => {
            warning = Some(format!(
                "line {lineno}: example `{}` has no `retrieved` field",
                raw.id
            ));
            Vec::new()
        }
    };
    Ok((
        QAExample {
            id: raw.id,
            question: raw.question,
            golden_answers: raw.golden_answers,
            retrieved,
        },
        warning,
    ))
}

/// Streams examples from a JSONL reader. Blank lines are skipped.
/// Warnings accumulate in [`CorpusReader::warnings`].
pub struct CorpusReader<R> {
    lines: std::io::Lines<R>,
    lineno: usize,
    warnings: Vec<String>,
}

impl<R: BufRead> CorpusReader<R> {
    pub fn new(reader: R) -> Self {
        Self {
            lines: reader.lines(),
            lineno: 0,
            warnings: Vec::new(),
        }
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }
}

impl<R: BufRead> Iterator for CorpusReader<R> {
    type Item = Result<QAExample, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            self.lineno += 1;
            if line.trim().is_empty() {
                continue;
            }
            return Some(parse_line(&line, self.lineno).map(|(ex, warning)| {
                if let Some(w) = warning {
                    log::warn!("{w}");
                    self.warnings.push(w);
                }
                ex
            }));
        }
    }
}

pub fn open_corpus(path: &Path) -> Result<CorpusReader<BufReader<File>>, CorpusError> {
    Ok(CorpusReader::new(BufReader::new(File::open(path)?)))
}

#[derive(Debug, Default)]
pub struct LoadedCorpus {
    pub examples: Vec<QAExample>,
    pub warnings: Vec<String>,
    /// Malformed lines skipped in non-strict mode.
    pub errors: Vec<String>,
}

/// Reads a whole corpus. In strict mode the first malformed line aborts;
/// otherwise it is recorded and skipped.
pub fn load_corpus(path: &Path, strict: bool) -> Result<LoadedCorpus, CorpusError> {
    let mut reader = open_corpus(path)?;
    let mut out = LoadedCorpus::default();
    for item in reader.by_ref() {
        match item {
            Ok(ex) => out.examples.push(ex),
            Err(e @ CorpusError::MalformedLine { .. }) if !strict => {
                log::warn!("skipping {e}");
                out.errors.push(e.to_string());
            }
            Err(e) => return Err(e),
        }
    }
    out.warnings = reader.warnings;
    Ok(out)
}
