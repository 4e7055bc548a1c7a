//! JSONL encoding of attempt logs and ground-truth outage files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::LogError;
use crate::model::{AttemptLog, AttemptRecord, OutageEvent};

fn read_lines<T: DeserializeOwned, R: Read>(reader: R) -> Result<Vec<T>, LogError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| LogError::Parse { line: i + 1, source })?);
    }
    Ok(out)
}

fn write_lines<'a, T: Serialize + 'a, W: Write>(items: impl IntoIterator<Item = &'a T>, writer: W) -> Result<(), LogError> {
    let mut w = BufWriter::new(writer);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Parses an attempt log. Structure is not checked; see [`AttemptLog::validate`].
pub fn read_attempt_log<R: Read>(reader: R) -> Result<AttemptLog, LogError> {
    Ok(read_lines::<AttemptRecord, _>(reader)?.into())
}

pub fn write_attempt_log<W: Write>(log: &AttemptLog, writer: W) -> Result<(), LogError> {
    write_lines(log.records(), writer)
}

pub fn read_attempt_log_file(path: &Path) -> Result<AttemptLog, LogError> {
    read_attempt_log(File::open(path)?)
}

pub fn write_attempt_log_file(log: &AttemptLog, path: &Path) -> Result<(), LogError> {
    write_attempt_log(log, File::create(path)?)
}

pub fn read_outages<R: Read>(reader: R) -> Result<Vec<OutageEvent>, LogError> {
    read_lines(reader)
}

pub fn write_outages<W: Write>(events: &[OutageEvent], writer: W) -> Result<(), LogError> {
    write_lines(events, writer)
}

pub fn read_outages_file(path: &Path) -> Result<Vec<OutageEvent>, LogError> {
    read_outages(File::open(path)?)
}

pub fn write_outages_file(events: &[OutageEvent], path: &Path) -> Result<(), LogError> {
    write_outages(events, File::create(path)?)
}

/// Serializes one record as a single JSONL line, newline included.
pub fn encode_record(record: &AttemptRecord) -> String {
    let mut line = serde_json::to_string(record).expect("attempt records always serialize");
    line.push('\n');
    line
}

/// Hex SHA-256 of a file's bytes.
pub fn file_digest(path: &Path) -> std::io::Result<String> {
    let mut hasher = Sha256::new();
    let mut file = File::open(path)?;
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}
