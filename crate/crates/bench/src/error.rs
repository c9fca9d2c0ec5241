use std::path::PathBuf;

use thiserror::Error;

/// A problem in a scenario or experiment description, located when possible.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{}{}{message}", source_prefix(.path), line_prefix(.line))]
pub struct ConfigError {
    pub path: Option<PathBuf>,
    /// 1-based line in the file.
    pub line: Option<usize>,
    pub message: String,
}

fn source_prefix(path: &Option<PathBuf>) -> String {
    path.as_ref().map_or(String::new(), |p| format!("{}:", p.display()))
}

fn line_prefix(line: &Option<usize>) -> String {
    line.map_or(String::new(), |l| format!("{l}:"))
        + if line.is_some() { " " } else { "" }
}

impl ConfigError {
    pub fn new(line: Option<usize>, message: impl Into<String>) -> Self {
        Self {
            path: None,
            line,
            message: message.into(),
        }
    }

    pub fn in_file(mut self, path: impl Into<PathBuf>) -> Self {
        self.path.get_or_insert(path.into());
        self
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),

    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },

    #[error("numerical failure in {filter} run {run}: {source}")]
    Numerical {
        filter: String,
        run: usize,
        source: phd_core::Error,
    },
}

impl BenchError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        BenchError::Io {
            context: context.into(),
            source,
        }
    }

    /// Process exit status: 2 for bad input or environment, 3 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) | BenchError::Io { .. } => 2,
            BenchError::Numerical { .. } => 3,
        }
    }
}

impl From<csv::Error> for BenchError {
    fn from(e: csv::Error) -> Self {
        BenchError::io("csv", std::io::Error::other(e))
    }
}

/// 1-based line of a byte offset.
pub(crate) fn line_of(text: &str, offset: usize) -> usize {
    text.as_bytes()[..offset.min(text.len())]
        .iter()
        .filter(|&&b| b == b'\n')
        .count()
        + 1
}

/// Line of the first `key = ...` assignment inside `text[range]`.
pub(crate) fn key_line(text: &str, range: std::ops::Range<usize>, key: &str) -> Option<usize> {
    let start = range.start.min(text.len());
    let end = range.end.min(text.len());
    let mut offset = start;
    for line in text[start..end].split_inclusive('\n') {
        let t = line.trim_start();
        if let Some(rest) = t.strip_prefix(key) {
            if rest.trim_start().starts_with('=') {
                return Some(line_of(text, offset));
            }
        }
        offset += line.len();
    }
    None
}

/// From `start` to the next table header after the line holding `start`.
pub(crate) fn section(text: &str, start: usize) -> std::ops::Range<usize> {
    let start = start.min(text.len());
    let body = text[start..].find('\n').map_or(text.len(), |i| start + i + 1);
    let mut offset = body;
    for line in text[body..].split_inclusive('\n') {
        if line.trim_start().starts_with('[') {
            break;
        }
        offset += line.len();
    }
    start..offset
}

pub(crate) fn from_toml(text: &str, e: &toml::de::Error) -> ConfigError {
    ConfigError::new(
        e.span().map(|s| line_of(text, s.start)),
        e.message().trim_end().to_string(),
    )
}
