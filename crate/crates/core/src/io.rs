//! Newline-delimited JSON records.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::canonical::parse_error;
use crate::error::{Error, Result};

/// Parses every nonblank line; the first bad line aborts with its line number.
pub fn parse_jsonl<T: DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    parse_jsonl_lenient(text)
        .into_iter()
        .map(|(line, r)| {
            r.map_err(|e| match e {
                Error::Parse { offset, message } => Error::Parse {
                    offset,
                    message: format!("line {line}: {message}"),
                },
                other => other,
            })
        })
        .collect()
}

/// Parses every nonblank line independently, keeping 1-based line numbers.
pub fn parse_jsonl_lenient<T: DeserializeOwned>(text: &str) -> Vec<(usize, Result<T>)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, serde_json::from_str(l).map_err(|e| parse_error(l, &e))))
        .collect()
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    parse_jsonl(&fs::read_to_string(path)?)
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Appends one record as a line and flushes it to the OS.
pub fn append_jsonl<T: Serialize>(file: &mut fs::File, record: &T) -> Result<()> {
    let mut line = serde_json::to_vec(record)?;
    line.push(b'\n');
    file.write_all(&line)?;
    file.flush()?;
    Ok(())
}

/// Reads records line by line from an existing file, or nothing if it is absent.
pub fn read_jsonl_if_exists<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for (i, line) in BufReader::new(fs::File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            offset: 0,
            message: format!("{}:{}: {e}", path.display(), i + 1),
        })?);
    }
    Ok(out)
}
