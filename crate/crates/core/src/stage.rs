//! The contract every pipeline stage implements.
//!
//! A stage receives the documents still alive after the previous stage and
//! either annotates each one or rejects it. Rejection is recorded on the
//! document itself, so the caller can partition afterwards and account for
//! every input.

use rayon::prelude::*;

use crate::document::Document;

#[derive(Debug, thiserror::Error)]
#[error("stage {stage} failed: {source}")]
pub struct StageError {
    pub stage: String,
    #[source]
    pub source: Box<dyn std::error::Error + Send + Sync>,
}

impl StageError {
    pub fn new(stage: &str, source: impl Into<Box<dyn std::error::Error + Send + Sync>>) -> Self {
        StageError { stage: stage.to_owned(), source: source.into() }
    }
}

pub trait Stage: Sync {
    fn name(&self) -> &str;

    /// Processes a batch of live documents. A returned error aborts the stage
    /// and leaves the caller's accounting untouched.
    fn run(&self, docs: &mut [Document]) -> Result<(), StageError>;
}

/// Applies a pure per-document function across the batch in parallel.
/// Results keep input order because each worker mutates its own slot.
pub fn par_each<F>(docs: &mut [Document], f: F)
where
    F: Fn(&mut Document) + Sync + Send,
{
    docs.par_iter_mut().filter(|d| !d.is_rejected()).for_each(f);
}

/// Documents split by verdict, each side in input order.
#[derive(Debug, Default, Clone)]
pub struct Partition {
    pub kept: Vec<Document>,
    pub rejected: Vec<Document>,
}

impl Partition {
    pub fn of(docs: Vec<Document>) -> Self {
        let (rejected, kept) = docs.into_iter().partition(|d| d.is_rejected());
        Partition { kept, rejected }
    }

    pub fn total(&self) -> usize {
        self.kept.len() + self.rejected.len()
    }
}
