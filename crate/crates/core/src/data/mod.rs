//! Paired video/language samples, their on-disk formats, and the
//! synthetic corpus generator.

mod format;
mod synth;

pub use format::{
    split_paths,
    read_binary_dataset, read_dataset, write_binary_dataset, write_dataset, load_split, BINARY_MAGIC,
    FORMAT_VERSION,
};
pub use synth::{generate_corpus, Concept, Corpus, CorpusSpec, VideoLayout};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tasks::{QaAnnotation, SpanAnnotation};
use crate::tensor::Tensor;

pub const PAD_TOKEN: u32 = 0;
pub use crate::tasks::SEP_TOKEN;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Retrieval,
    Qa,
    Moment,
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TaskKind::Retrieval => "retrieval",
            TaskKind::Qa => "qa",
            TaskKind::Moment => "moment",
        })
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "retrieval" => Ok(TaskKind::Retrieval),
            "qa" => Ok(TaskKind::Qa),
            "moment" => Ok(TaskKind::Moment),
            other => Err(Error::Config(format!("unknown task kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TaskAnnotation {
    Retrieval,
    Qa(QaAnnotation),
    Moment { span: SpanAnnotation, query: Vec<u32> },
}

impl TaskAnnotation {
    pub fn kind(&self) -> TaskKind {
        match self {
            TaskAnnotation::Retrieval => TaskKind::Retrieval,
            TaskAnnotation::Qa(_) => TaskKind::Qa,
            TaskAnnotation::Moment { .. } => TaskKind::Moment,
        }
    }
}

/// Token-id to string table. Ids 0 and 1 are padding and separator.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub tokens: Vec<String>,
}

impl Vocab {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&i| self.tokens.get(i as usize).map(String::as_str).unwrap_or("<unk>"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// One paired datum: precomputed frame features and text.
///
/// `tokens` is the description (retrieval, moment) or the question (QA).
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `T_fr x (static_dim + motion_dim)`.
    pub frames: Tensor<f32>,
    pub static_dim: usize,
    pub motion_dim: usize,
    pub tokens: Vec<u32>,
    pub task: TaskAnnotation,
}

impl Sample {
    pub fn n_frames(&self) -> usize {
        self.frames.rows()
    }

    /// Text matched against the whole video at global level.
    pub fn global_text(&self) -> Vec<u32> {
        match &self.task {
            TaskAnnotation::Qa(qa) => {
                crate::tasks::join_question(&self.tokens, &qa.candidates[qa.correct_index])
            }
            TaskAnnotation::Moment { query, .. } => query.clone(),
            TaskAnnotation::Retrieval => self.tokens.clone(),
        }
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        let shape = self.frames.shape();
        if shape.len() != 2 || shape[1] != self.static_dim + self.motion_dim {
            return Err(Error::Data(format!(
                "sample {}: frame shape {shape:?} does not match static {} + motion {}",
                self.id, self.static_dim, self.motion_dim
            )));
        }
        if !self.frames.is_finite() {
            return Err(Error::Data(format!("sample {}: non-finite frame feature", self.id)));
        }
        let check = |ids: &[u32], what: &str| -> Result<()> {
            if ids.is_empty() {
                return Err(Error::Data(format!("sample {}: empty {what}", self.id)));
            }
            match ids.iter().find(|&&t| t as usize >= vocab_size) {
                Some(t) => Err(Error::Data(format!(
                    "sample {}: {what} token {t} outside vocabulary of {vocab_size}",
                    self.id
                ))),
                None => Ok(()),
            }
        };
        check(&self.tokens, "text")?;
        match &self.task {
            TaskAnnotation::Retrieval => {}
            TaskAnnotation::Qa(qa) => {
                qa.validate(self.n_frames()).map_err(|e| Error::Data(format!("sample {}: {e}", self.id)))?;
                for c in &qa.candidates {
                    check(c, "candidate")?;
                }
            }
            TaskAnnotation::Moment { span, query } => {
                span.check_within(self.n_frames())
                    .map_err(|e| Error::Data(format!("sample {}: {e}", self.id)))?;
                check(query, "query")?;
            }
        }
        Ok(())
    }
}

/// A header plus its samples, as stored in one file.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub static_dim: usize,
    pub motion_dim: usize,
    pub task: TaskKind,
    pub vocab: Vocab,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn find(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }
}
