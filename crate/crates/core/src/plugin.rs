//! Child-process JSONL protocol for external scorers and judges.
//!
//! The plugin reads one JSON object per line on stdin and writes one JSON
//! object per line on stdout, in any order, each carrying the request `id`.
//! A nonzero exit status, a malformed line, or a missing or unknown id fails
//! the whole batch.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::process::{Command, Stdio};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::document::Document;

#[derive(Debug, thiserror::Error)]
pub enum PluginError {
    #[error("cannot start plugin {program:?}: {source}")]
    Spawn { program: String, source: std::io::Error },
    #[error("plugin i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("plugin exited with {status}: {stderr}")]
    Exit { status: std::process::ExitStatus, stderr: String },
    #[error("plugin output line {line}: {message}")]
    BadOutput { line: usize, message: String },
    #[error("plugin returned no result for id {0:?}")]
    MissingId(String),
    #[error("plugin returned a result for unknown or repeated id {0:?}")]
    UnexpectedId(String),
}

/// An external program and its fixed arguments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PluginCommand {
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
}

impl PluginCommand {
    pub fn new(program: impl Into<String>, args: impl IntoIterator<Item = impl Into<String>>) -> Self {
        PluginCommand { program: program.into(), args: args.into_iter().map(Into::into).collect() }
    }
}

/// Request record sent for each document.
#[derive(Debug, Clone, Serialize)]
pub struct PluginRequest<'a> {
    pub id: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lang: Option<&'a str>,
    pub text: &'a str,
}

impl<'a> From<&'a Document> for PluginRequest<'a> {
    fn from(d: &'a Document) -> Self {
        PluginRequest { id: &d.id, lang: d.language.as_ref().map(|l| l.as_str()), text: &d.text }
    }
}

/// Implemented by response records so results can be matched to requests.
pub trait HasId {
    fn id(&self) -> &str;
}

/// Runs the plugin once over `requests` and returns raw output lines.
pub fn exchange<T: Serialize>(cmd: &PluginCommand, requests: &[T]) -> Result<Vec<String>, PluginError> {
    let mut payload = Vec::new();
    for r in requests {
        serde_json::to_writer(&mut payload, r).map_err(|e| PluginError::Io(e.into()))?;
        payload.push(b'\n');
    }
    let mut child = Command::new(&cmd.program)
        .args(&cmd.args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|source| PluginError::Spawn { program: cmd.program.clone(), source })?;
    let mut stdin = child.stdin.take().expect("piped stdin");
    // Feed stdin from a thread so a plugin that writes before reading
    // everything cannot deadlock against us.
    let writer = std::thread::spawn(move || {
        let r = stdin.write_all(&payload);
        drop(stdin);
        r
    });
    let mut stderr = child.stderr.take().expect("piped stderr");
    let err_reader = std::thread::spawn(move || {
        let mut s = String::new();
        let _ = stderr.read_to_string(&mut s);
        s
    });
    let stdout = child.stdout.take().expect("piped stdout");
    let mut lines = Vec::new();
    for line in BufReader::new(stdout).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            lines.push(line);
        }
    }
    let status = child.wait()?;
    let write_result = writer.join().expect("stdin writer panicked");
    let stderr = err_reader.join().unwrap_or_default();
    if !status.success() {
        return Err(PluginError::Exit { status, stderr: stderr.trim().to_owned() });
    }
    // A plugin may legitimately exit without reading all input only if it
    // failed, which the status check above already reports.
    write_result?;
    Ok(lines)
}

/// Runs the plugin and returns one parsed response per request, in request order.
pub fn call<T, R>(cmd: &PluginCommand, requests: &[T], id_of: impl Fn(&T) -> &str) -> Result<Vec<R>, PluginError>
where
    T: Serialize,
    R: DeserializeOwned + HasId,
{
    let lines = exchange(cmd, requests)?;
    let mut slots: HashMap<&str, Option<R>> = requests.iter().map(|r| (id_of(r), None)).collect();
    for (i, line) in lines.iter().enumerate() {
        let resp: R = serde_json::from_str(line).map_err(|e| PluginError::BadOutput { line: i + 1, message: e.to_string() })?;
        match slots.get_mut(resp.id()) {
            Some(slot @ None) => *slot = Some(resp),
            _ => return Err(PluginError::UnexpectedId(resp.id().to_owned())),
        }
    }
    requests
        .iter()
        .map(|r| {
            let id = id_of(r);
            slots.get_mut(id).and_then(Option::take).ok_or_else(|| PluginError::MissingId(id.to_owned()))
        })
        .collect()
}

/// Response carrying a single score in [0, 1].
#[derive(Debug, Clone, Deserialize)]
pub struct ScoreResponse {
    pub id: String,
    pub score: f64,
}

impl HasId for ScoreResponse {
    fn id(&self) -> &str {
        &self.id
    }
}

/// Sends documents to a scoring plugin; scores outside [0, 1] are rejected.
pub fn score_documents(cmd: &PluginCommand, docs: &[&Document]) -> Result<Vec<f64>, PluginError> {
    let requests: Vec<PluginRequest> = docs.iter().map(|d| PluginRequest::from(*d)).collect();
    let responses: Vec<ScoreResponse> = call(cmd, &requests, |r| r.id)?;
    responses
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            if (0.0..=1.0).contains(&r.score) {
                Ok(r.score)
            } else {
                Err(PluginError::BadOutput { line: i + 1, message: format!("score {} outside [0, 1]", r.score) })
            }
        })
        .collect()
}
