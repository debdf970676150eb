//! Fixed-schema CSV files: a header row, LF line endings, reals in shortest
//! round-trip form, and optional leading `#` comment lines.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub(crate) fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: &[T], comment: Option<&str>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    if let Some(comment) = comment {
        for line in comment.lines() {
            writeln!(out, "# {line}").map_err(|e| Error::io(path, e))?;
        }
    }
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let malformed = |e: csv::Error| Error::malformed(path, e.to_string());
    w.write_record(header).map_err(malformed)?;
    for row in rows {
        w.serialize(row).map_err(malformed)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads rows, checking the header matches `header` exactly.
pub(crate) fn read_rows<T: DeserializeOwned>(path: &Path, header: &[&str]) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file);
    let malformed = |e: csv::Error| Error::malformed(path, e.to_string());
    let got = r.headers().map_err(malformed)?;
    if got.iter().ne(header.iter().copied()) {
        return Err(Error::malformed(
            path,
            format!("header {:?}, expected {:?}", got.iter().collect::<Vec<_>>(), header),
        ));
    }
    r.deserialize().map(|row| row.map_err(malformed)).collect()
}

/// The `#` comment lines at the top of a file, without the marker.
pub fn read_comments(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .take_while(|l| l.starts_with('#'))
        .map(|l| l.trim_start_matches('#').trim().to_string())
        .collect())
}
