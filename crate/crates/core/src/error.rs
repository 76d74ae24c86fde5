use std::io;

use thiserror::Error;

/// A problem with one line of a line-delimited input file.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum LineError {
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },

    #[error("line {line}: field `{field}`: {message}")]
    Field {
        line: usize,
        field: String,
        message: String,
    },

    #[error("line {line}: duplicate key ({prompt_id}, {image_index})")]
    DuplicateKey {
        line: usize,
        prompt_id: String,
        image_index: usize,
    },

    #[error("line {line}: duplicate prompt id `{id}`")]
    DuplicateId { line: usize, id: String },
}

impl LineError {
    pub fn line(&self) -> usize {
        match self {
            LineError::Malformed { line, .. }
            | LineError::Field { line, .. }
            | LineError::DuplicateKey { line, .. }
            | LineError::DuplicateId { line, .. } => *line,
        }
    }

    pub(crate) fn field(line: usize, field: impl Into<String>, message: impl Into<String>) -> Self {
        LineError::Field {
            line,
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Error, Debug)]
pub enum Error {
    #[error(transparent)]
    Line(#[from] LineError),

    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("undefined value: {0}")]
    Undefined(String),

    #[error("unknown category `{0}`")]
    UnknownCategory(String),

    #[error("duplicate category `{0}`")]
    DuplicateCategory(String),

    #[error("prompt id mismatch: record is for `{record}`, predicate prompt is `{prompt}`")]
    IdMismatch { record: String, prompt: String },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn undefined(msg: impl Into<String>) -> Self {
        Error::Undefined(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
