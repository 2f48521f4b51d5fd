//! File helpers: JSON-lines with line-numbered errors, JSON documents, and
//! the `# config_hash:` header carried by pipeline outputs.
//!
//! Blank lines and lines starting with `#` are skipped when reading JSON
//! lines, so a header never disturbs the one-object-per-line layout.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::types::{validate_instance, Instance, LabelSet, SampledInstance};

/// The header line written at the top of JSON-lines and CSV outputs.
pub fn hash_header(hash: &str) -> String {
    format!("# config_hash: {hash}")
}

/// Read a whole file; a missing file is a missing artifact.
pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

/// Write `text` to `path`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    create_parent(path)?;
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

/// Parse JSON lines, handing each value to `check` with its 1-based line
/// number. Any failure is reported against that line.
pub fn parse_jsonl_with<T, U>(text: &str, path: &Path, mut check: impl FnMut(T) -> Result<U>) -> Result<Vec<U>>
where
    T: DeserializeOwned,
{
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let at = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let value: T = serde_json::from_str(trimmed).map_err(|e| at(e.to_string()))?;
        out.push(check(value).map_err(|e| at(e.to_string()))?);
    }
    Ok(out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    parse_jsonl_with(&read_text(path)?, path, Ok)
}

/// Instances, each validated against `labels`.
pub fn read_instances(path: &Path, labels: &LabelSet) -> Result<Vec<Instance>> {
    parse_jsonl_with(&read_text(path)?, path, |i: Instance| validate_instance(i, labels))
}

/// A sample dump, each line validated against `labels`.
pub fn read_dump(path: &Path, labels: &LabelSet) -> Result<Vec<SampledInstance>> {
    parse_jsonl_with(&read_text(path)?, path, |s: SampledInstance| s.validate(labels))
}

/// One compact JSON object per line, after an optional header line.
pub fn write_jsonl<'a, T: Serialize + 'a>(
    path: &Path,
    header: Option<&str>,
    items: impl IntoIterator<Item = &'a T>,
) -> Result<()> {
    create_parent(path)?;
    let mut out = BufWriter::new(fs::File::create(path)?);
    if let Some(h) = header {
        writeln!(out, "{h}")?;
    }
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
