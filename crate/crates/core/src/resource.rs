//! Source and sink resources bound onto a graph's open ports.
//!
//! Resource strings:
//! - `seq:1,2,3` emits the listed tokens (`seq:` is an empty stream)
//! - `file:<path>` reads or writes one decimal token per line
//! - `collect:` keeps sink output in memory

use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::str::FromStr;

use crate::operator::{EvalError, Value};

#[derive(Debug, thiserror::Error)]
pub enum ResourceError {
    #[error("unrecognized resource {0:?}")]
    Unrecognized(String),
    #[error("resource {0} cannot be used as a {1}")]
    WrongRole(String, &'static str),
    #[error("resource {resource}: {source}")]
    Io {
        resource: String,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Value(#[from] EvalError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResourceSpec {
    Seq(Vec<String>),
    File(PathBuf),
    Collect,
}

impl ResourceSpec {
    /// True for strings carrying one of the built-in schemes.
    pub fn has_scheme(text: &str) -> bool {
        ["seq:", "file:", "collect:"].iter().any(|s| text.starts_with(s))
    }
}

impl FromStr for ResourceSpec {
    type Err = ResourceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(rest) = s.strip_prefix("seq:") {
            let items = rest
                .split(',')
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .map(String::from)
                .collect();
            Ok(ResourceSpec::Seq(items))
        } else if let Some(rest) = s.strip_prefix("file:") {
            if rest.is_empty() {
                return Err(ResourceError::Unrecognized(s.to_string()));
            }
            Ok(ResourceSpec::File(PathBuf::from(rest)))
        } else if s == "collect:" {
            Ok(ResourceSpec::Collect)
        } else {
            Err(ResourceError::Unrecognized(s.to_string()))
        }
    }
}

impl fmt::Display for ResourceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ResourceSpec::Seq(items) => write!(f, "seq:{}", items.join(",")),
            ResourceSpec::File(p) => write!(f, "file:{}", p.display()),
            ResourceSpec::Collect => f.write_str("collect:"),
        }
    }
}

/// Produces the tokens of one source binding, parsed for the bound port.
pub struct SourceReader {
    datatype: String,
    inner: SourceInner,
}

enum SourceInner {
    Seq(std::vec::IntoIter<String>),
    File { name: String, lines: io::Lines<BufReader<File>> },
}

impl SourceReader {
    pub fn open(spec: &ResourceSpec, datatype: &str) -> Result<Self, ResourceError> {
        let inner = match spec {
            ResourceSpec::Seq(items) => SourceInner::Seq(items.clone().into_iter()),
            ResourceSpec::File(path) => {
                let file = File::open(path).map_err(|source| ResourceError::Io {
                    resource: spec.to_string(),
                    source,
                })?;
                SourceInner::File {
                    name: spec.to_string(),
                    lines: BufReader::new(file).lines(),
                }
            }
            ResourceSpec::Collect => return Err(ResourceError::WrongRole(spec.to_string(), "source")),
        };
        Ok(SourceReader {
            datatype: datatype.to_string(),
            inner,
        })
    }
}

impl Iterator for SourceReader {
    type Item = Result<Value, ResourceError>;

    fn next(&mut self) -> Option<Self::Item> {
        let text = match &mut self.inner {
            SourceInner::Seq(items) => items.next()?,
            SourceInner::File { name, lines } => loop {
                match lines.next()? {
                    Ok(line) if line.trim().is_empty() => continue,
                    Ok(line) => break line,
                    Err(source) => {
                        return Some(Err(ResourceError::Io {
                            resource: name.clone(),
                            source,
                        }))
                    }
                }
            },
        };
        Some(Value::parse_as(&self.datatype, &text).map_err(ResourceError::from))
    }
}

/// Destination of one sink binding. `collect:` sinks hand their values to
/// the caller through [`SinkWriter::collected`].
pub enum SinkWriter {
    Collect(Vec<Value>),
    File { name: String, out: BufWriter<File> },
}

impl SinkWriter {
    pub fn open(spec: &ResourceSpec) -> Result<Self, ResourceError> {
        match spec {
            ResourceSpec::Collect => Ok(SinkWriter::Collect(Vec::new())),
            ResourceSpec::File(path) => {
                let file = File::create(path).map_err(|source| ResourceError::Io {
                    resource: spec.to_string(),
                    source,
                })?;
                Ok(SinkWriter::File {
                    name: spec.to_string(),
                    out: BufWriter::new(file),
                })
            }
            ResourceSpec::Seq(_) => Err(ResourceError::WrongRole(spec.to_string(), "sink")),
        }
    }

    pub fn write(&mut self, value: Value) -> Result<(), ResourceError> {
        match self {
            SinkWriter::Collect(buf) => {
                buf.push(value);
                Ok(())
            }
            SinkWriter::File { name, out } => {
                writeln!(out, "{value}").map_err(|source| ResourceError::Io {
                    resource: name.clone(),
                    source,
                })
            }
        }
    }

    pub fn finish(&mut self) -> Result<(), ResourceError> {
        match self {
            SinkWriter::Collect(_) => Ok(()),
            SinkWriter::File { name, out } => out.flush().map_err(|source| ResourceError::Io {
                resource: name.clone(),
                source,
            }),
        }
    }

    pub fn collected(&self) -> Option<&[Value]> {
        match self {
            SinkWriter::Collect(buf) => Some(buf),
            SinkWriter::File { .. } => None,
        }
    }
}
