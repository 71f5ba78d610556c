//! Append-only record of what a session showed and how it was judged.
//!
//! On disk: `iteration<TAB>doc_id<TAB>first_stage_score<TAB>final_score<TAB>{1|0}`.

use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Judgment;

#[derive(Debug, Error)]
pub enum RunLogError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{source_name}:{line}: {message}")]
    Malformed {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error("iteration {found} out of sequence (expected {expected})")]
    OutOfSequence { expected: usize, found: usize },
    #[error("document {0:?} already appears in the log")]
    DuplicateDoc(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLogEntry {
    pub iteration: usize,
    pub doc_id: String,
    pub first_stage_score: f64,
    pub final_score: f64,
    pub judgment: Judgment,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<RunLogEntry>", into = "Vec<RunLogEntry>")]
pub struct RunLog {
    entries: Vec<RunLogEntry>,
    #[serde(skip)]
    seen: HashSet<String>,
}

impl TryFrom<Vec<RunLogEntry>> for RunLog {
    type Error = RunLogError;

    fn try_from(entries: Vec<RunLogEntry>) -> Result<Self, Self::Error> {
        let mut log = RunLog::new();
        for e in entries {
            log.push(e)?;
        }
        Ok(log)
    }
}

impl From<RunLog> for Vec<RunLogEntry> {
    fn from(log: RunLog) -> Self {
        log.entries
    }
}

impl RunLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a log from `(doc_id, judgment)` pairs with zero scores.
    pub fn from_judgments<'a>(items: impl IntoIterator<Item = (&'a str, Judgment)>) -> Result<Self, RunLogError> {
        let mut log = RunLog::new();
        for (doc, judgment) in items {
            log.append(doc, 0.0, 0.0, judgment)?;
        }
        Ok(log)
    }

    /// Appends an entry; its iteration must be `len() + 1` and its document new.
    pub fn push(&mut self, entry: RunLogEntry) -> Result<(), RunLogError> {
        let expected = self.entries.len() + 1;
        if entry.iteration != expected {
            return Err(RunLogError::OutOfSequence {
                expected,
                found: entry.iteration,
            });
        }
        if !self.seen.insert(entry.doc_id.clone()) {
            return Err(RunLogError::DuplicateDoc(entry.doc_id));
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn append(&mut self, doc_id: &str, first_stage_score: f64, final_score: f64, judgment: Judgment) -> Result<&RunLogEntry, RunLogError> {
        self.push(RunLogEntry {
            iteration: self.entries.len() + 1,
            doc_id: doc_id.to_string(),
            first_stage_score,
            final_score,
            judgment,
        })?;
        Ok(self.entries.last().unwrap())
    }

    pub fn entries(&self) -> &[RunLogEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.seen.contains(doc_id)
    }

    pub fn relevant_flags(&self) -> impl Iterator<Item = bool> + '_ {
        self.entries.iter().map(|e| e.judgment.is_relevant())
    }

    pub fn format_entry(e: &RunLogEntry) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}",
            e.iteration,
            e.doc_id,
            e.first_stage_score,
            e.final_score,
            u8::from(e.judgment.is_relevant())
        )
    }

    pub fn write(&self, mut out: impl Write) -> io::Result<()> {
        for e in &self.entries {
            writeln!(out, "{}", Self::format_entry(e))?;
        }
        Ok(())
    }

    pub fn to_tsv(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("log entries are UTF-8")
    }

    pub fn parse_entry(line: &str, source_name: &str, lineno: usize) -> Result<RunLogEntry, RunLogError> {
        let bad = |message: String| RunLogError::Malformed {
            source_name: source_name.to_string(),
            line: lineno,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(bad(format!("expected 5 tab-separated fields, found {}", fields.len())));
        }
        let iteration = fields[0].parse().map_err(|_| bad(format!("bad iteration {:?}", fields[0])))?;
        let first_stage_score = fields[2].parse().map_err(|_| bad(format!("bad score {:?}", fields[2])))?;
        let final_score = fields[3].parse().map_err(|_| bad(format!("bad score {:?}", fields[3])))?;
        let judgment = match fields[4] {
            "1" => Judgment::Relevant,
            "0" => Judgment::Nonrelevant,
            other => return Err(bad(format!("judgment must be 1 or 0, found {other:?}"))),
        };
        Ok(RunLogEntry {
            iteration,
            doc_id: fields[1].to_string(),
            first_stage_score,
            final_score,
            judgment,
        })
    }

    pub fn read(reader: impl BufRead, source_name: &str) -> Result<Self, RunLogError> {
        let mut log = RunLog::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| RunLogError::Io {
                path: PathBuf::from(source_name),
                source: e,
            })?;
            if line.is_empty() {
                continue;
            }
            log.push(Self::parse_entry(&line, source_name, i + 1)?)?;
        }
        Ok(log)
    }

    pub fn load(path: &Path) -> Result<Self, RunLogError> {
        let file = File::open(path).map_err(|e| RunLogError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::read(BufReader::new(file), &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<(), RunLogError> {
        let io_err = |e| RunLogError::Io {
            path: path.to_path_buf(),
            source: e,
        };
        let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
        self.write(&mut out).map_err(io_err)?;
        out.flush().map_err(io_err)
    }
}
