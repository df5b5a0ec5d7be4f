//! Synthetic requirement corpora, vocabulary and encoding.
//!
//! Labeled documents carry Priority, Severity and Type labels drawn from
//! configurable class distributions; summary text is produced from
//! class-specific keyword pools mixed with shared filler so that the strength
//! of the text→label relationship is a known, tunable quantity. A separate
//! generic corpus shares only part of the in-domain vocabulary.

mod encode;
mod generate;
mod io;
mod schema;
mod split;
mod vocab;

pub use encode::{encode, encode_for_task, EncodedExample};
pub use generate::{
    generate_generic_corpus, generate_srs_corpus, CorpusSpec, LengthProfile, Lexicon,
};
pub use io::{read_corpus, write_corpus};
pub use schema::{LabelSchema, Task};
pub use split::{split, split_indices, Fractions};
pub use vocab::{tokenize, Vocabulary, CLS, MASK, PAD, SPECIAL_TOKENS, UNK};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid corpus spec: {0}")]
    InvalidSpec(String),
    #[error("split fractions sum to {0}, expected 1")]
    Fractions(f64),
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("label {label:?} is not a {task} class")]
    UnknownLabel { task: Task, label: String },
    #[error("max_len must be at least 2, got {0}")]
    MaxLen(usize),
    #[error("vocabulary file: {0}")]
    Vocabulary(String),
    #[error("{path}:{line}: {msg}")]
    Record {
        path: String,
        line: usize,
        msg: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A requirement summary with optional labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub summary: String,
    pub priority: Option<String>,
    pub severity: Option<String>,
    pub kind: Option<String>,
}

impl Document {
    pub fn unlabeled(id: impl Into<String>, summary: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            summary: summary.into(),
            priority: None,
            severity: None,
            kind: None,
        }
    }

    pub fn label(&self, task: Task) -> Option<&str> {
        match task {
            Task::Priority => self.priority.as_deref(),
            Task::Severity => self.severity.as_deref(),
            Task::Type => self.kind.as_deref(),
        }
    }

    pub fn label_index(&self, task: Task) -> Option<usize> {
        self.label(task)
            .and_then(|l| LabelSchema::DOORS.index_of(task, l))
    }

    pub fn is_labeled(&self) -> bool {
        self.priority.is_some() && self.severity.is_some() && self.kind.is_some()
    }

    /// Checks the summary is non-empty and every present label is a schema class.
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.summary.trim().is_empty() {
            return Err(CorpusError::InvalidSpec(format!(
                "document {} has an empty summary",
                self.id
            )));
        }
        for task in Task::ALL {
            if let Some(l) = self.label(task) {
                if LabelSchema::DOORS.index_of(task, l).is_none() {
                    return Err(CorpusError::UnknownLabel {
                        task,
                        label: l.to_string(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn word_count(&self) -> usize {
        self.summary.split_whitespace().count()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub documents: Vec<Document>,
}

impl Corpus {
    pub fn new(documents: Vec<Document>) -> Self {
        Self { documents }
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn labeled(&self) -> Corpus {
        Corpus::new(
            self.documents
                .iter()
                .filter(|d| d.is_labeled())
                .cloned()
                .collect(),
        )
    }

    pub fn unlabeled(&self) -> Corpus {
        Corpus::new(
            self.documents
                .iter()
                .filter(|d| !d.is_labeled())
                .cloned()
                .collect(),
        )
    }

    /// Class counts for `task` in schema order; unlabeled documents are skipped.
    pub fn class_counts(&self, task: Task) -> Vec<usize> {
        let mut counts = vec![0; task.num_classes()];
        for d in &self.documents {
            if let Some(i) = d.label_index(task) {
                counts[i] += 1;
            }
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> Corpus {
        Corpus::new(indices.iter().map(|&i| self.documents[i].clone()).collect())
    }
}
