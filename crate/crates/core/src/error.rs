use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV: {0}")]
    Csv(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("illegal edit: {0}")]
    IllegalEdit(String),
    #[error("edit would create a directed cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("wrong stage: {0}")]
    Stage(String),
    #[error("empty group: {0}")]
    EmptyGroup(String),
    #[error("edit record {index} rejected: {source}")]
    Script {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
