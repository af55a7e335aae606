//! JSONL architecture-accuracy datasets.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::Architecture;
use crate::compiler::TensorShape;
use crate::encoder::{parse, ParseError};
use crate::features::FeatureVector;
use crate::grammar::Grammar;
use crate::surrogate::{TrainingRow, TrainingSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRow {
    pub encoding: String,
    pub accuracy: f64,
    pub dataset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extra_features: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {message}")]
    Row {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: cannot parse encoding: {source}")]
    Encoding {
        path: PathBuf,
        line: usize,
        source: ParseError,
    },
}

fn row_error(path: &Path, line: usize, message: impl Into<String>) -> DatasetError {
    DatasetError::Row {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads and validates a dataset file. Blank lines are skipped; line numbers are 1-based.
pub fn read_dataset(path: &Path) -> Result<Vec<DatasetRow>, DatasetError> {
    let io_err = |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let mut rows = Vec::new();
    let mut extra_keys: Option<Vec<String>> = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err)?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let row: DatasetRow = serde_json::from_str(&line).map_err(|e| row_error(path, lineno, e.to_string()))?;
        if !(0.0..=1.0).contains(&row.accuracy) {
            return Err(row_error(
                path,
                lineno,
                format!("accuracy {} outside [0, 1]", row.accuracy),
            ));
        }
        let keys: Vec<String> = row.extra_features.iter().flat_map(|m| m.keys().cloned()).collect();
        if let Some(m) = &row.extra_features {
            if let Some((k, v)) = m.iter().find(|(_, v)| !v.is_finite()) {
                return Err(row_error(path, lineno, format!("extra feature `{k}` is {v}")));
            }
        }
        match &extra_keys {
            None => extra_keys = Some(keys),
            Some(expected) if *expected != keys => {
                return Err(row_error(
                    path,
                    lineno,
                    format!("extra_features columns {keys:?} differ from earlier rows {expected:?}"),
                ))
            }
            Some(_) => {}
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Writes rows to `path` via `path.partial`, renaming only once everything is flushed.
pub fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> io::Result<()> {
    write_atomic(path, |w| {
        for row in rows {
            serde_json::to_writer(&mut *w, &row)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}

/// Runs `body` against a buffered writer on `path.partial`, then renames it to `path`.
/// On failure the partial file is removed.
pub fn write_atomic(path: &Path, body: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> io::Result<()> {
    let partial = partial_path(path);
    let result = (|| {
        let mut w = BufWriter::new(File::create(&partial)?);
        body(&mut w)?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        fs::rename(&partial, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&partial);
    }
    result
}

pub fn partial_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    path.with_file_name(name)
}

/// Parses every row's encoding and derives its features.
pub fn to_training_set(
    grammar: &Grammar,
    rows: &[DatasetRow],
    input_shape: TensorShape,
    path: &Path,
) -> Result<TrainingSet, DatasetError> {
    let mut schema: Option<Arc<Vec<String>>> = None;
    let mut out = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let tree = parse(grammar, &row.encoding).map_err(|source| DatasetError::Encoding {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
        let extra = match &row.extra_features {
            Some(m) if !m.is_empty() => {
                let names: Vec<String> = m.keys().cloned().collect();
                let s = match &schema {
                    Some(s) if **s == names => Arc::clone(s),
                    _ => {
                        let s = Arc::new(names);
                        schema = Some(Arc::clone(&s));
                        s
                    }
                };
                Some(
                    FeatureVector::new(m.values().copied().collect(), s)
                        .map_err(|e| row_error(path, i + 1, e.to_string()))?,
                )
            }
            _ => None,
        };
        let arch = Architecture::build(grammar, tree, input_shape, extra.as_ref());
        out.push(TrainingRow {
            arch,
            target: row.accuracy,
            dataset: row.dataset.clone(),
        });
    }
    Ok(TrainingSet { rows: out })
}
