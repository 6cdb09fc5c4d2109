use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: negative timestamp {timestamp}")]
    NegativeTimestamp { line: usize, timestamp: f64 },

    #[error("inverted window [{start}, {end}]")]
    InvertedWindow { start: f64, end: f64 },

    #[error("non-finite window bound")]
    NonFiniteWindow,

    #[error("unknown split {0:?}")]
    UnknownSplit(String),

    #[error("unknown query template {0:?}")]
    UnknownTemplate(String),

    #[error("template {template:?} needs a {slot} slot the event lacks")]
    MissingSlot { template: String, slot: &'static str },

    #[error("insufficient narrations: need at least 2, got {0}")]
    InsufficientNarrations(usize),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("window of video {video_uid} [{start}, {end}] outside duration {duration}")]
    OutsideVideo { video_uid: String, start: f64, end: f64, duration: f64 },

    #[error("unknown video {0:?}")]
    UnknownVideo(String),

    #[error("missing ground truth for queries: {0:?}")]
    MissingGroundTruth(Vec<String>),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("token id {id} out of vocabulary of size {vocab}")]
    OutOfVocab { id: usize, vocab: usize },

    #[error("span target [{start}, {end}] out of range for {steps} steps")]
    TargetOutOfRange { start: usize, end: usize, steps: usize },

    #[error("bad binary format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the error comes from invalid user input or configuration,
    /// as opposed to an environment failure.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_))
    }
}
