//! Streaming JSON Lines I/O.
//!
//! Readers yield one `Result` per line so a malformed record never aborts the
//! stream; callers decide whether to count or surface the error.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error("cannot open {path}: {source}")]
    Open { path: PathBuf, source: io::Error },
    #[error("read error at line {line}: {source}")]
    Read { line: usize, source: io::Error },
    #[error("malformed JSON at line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("write error: {0}")]
    Write(#[from] io::Error),
    #[error("serialize error: {0}")]
    Serialize(#[from] serde_json::Error),
}

impl JsonlError {
    pub fn is_recoverable(&self) -> bool {
        matches!(self, JsonlError::MalformedLine { .. })
    }
}

/// Iterator over the records of a JSONL source, in file order.
pub struct JsonlReader<T, R = BufReader<File>> {
    inner: R,
    line_no: usize,
    buf: String,
    malformed: usize,
    _marker: PhantomData<T>,
}

impl<T: DeserializeOwned> JsonlReader<T> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, JsonlError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| JsonlError::Open { path: path.to_owned(), source })?;
        Ok(Self::from_reader(BufReader::new(file)))
    }
}

impl<T: DeserializeOwned, R: BufRead> JsonlReader<T, R> {
    pub fn from_reader(inner: R) -> Self {
        JsonlReader { inner, line_no: 0, buf: String::new(), malformed: 0, _marker: PhantomData }
    }

    /// Number of malformed lines seen so far.
    pub fn malformed_count(&self) -> usize {
        self.malformed
    }
}

impl<T: DeserializeOwned, R: BufRead> Iterator for JsonlReader<T, R> {
    type Item = Result<T, JsonlError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            self.line_no += 1;
            match self.inner.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(source) => return Some(Err(JsonlError::Read { line: self.line_no, source })),
            }
            let line = self.buf.trim_end_matches(['\n', '\r']);
            if line.trim().is_empty() {
                continue;
            }
            return Some(serde_json::from_str(line).map_err(|e| {
                self.malformed += 1;
                JsonlError::MalformedLine { line: self.line_no, message: e.to_string() }
            }));
        }
    }
}

/// Records read from a file plus the malformed lines that were skipped.
#[derive(Debug)]
pub struct ReadOutcome<T> {
    pub records: Vec<T>,
    pub errors: Vec<JsonlError>,
}

/// Reads every record, collecting malformed lines instead of failing.
/// I/O failures (missing file, read errors) are fatal.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<ReadOutcome<T>, JsonlError> {
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for item in JsonlReader::<T>::open(path)? {
        match item {
            Ok(r) => records.push(r),
            Err(e) if e.is_recoverable() => errors.push(e),
            Err(e) => return Err(e),
        }
    }
    Ok(ReadOutcome { records, errors })
}

/// Writes one compact JSON object per line and returns the record count.
pub fn write_jsonl<'a, T, I>(path: impl AsRef<Path>, records: I) -> Result<usize, JsonlError>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let file = File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    let n = write_jsonl_to(&mut w, records)?;
    w.flush()?;
    Ok(n)
}

pub fn write_jsonl_to<'a, T, I, W>(mut w: W, records: I) -> Result<usize, JsonlError>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
    W: Write,
{
    let mut n = 0;
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
        n += 1;
    }
    Ok(n)
}
