//! Multilingual web-corpus curation pipeline.

pub mod clean;
pub mod config;
pub mod dedup;
pub mod document;
pub mod evalharness;
pub mod extract;
pub mod hashing;
pub mod jsonl;
pub mod langid;
pub mod lm;
pub mod pipeline;
pub mod plugin;
pub mod safety;
pub mod stage;
pub mod textclf;
pub mod theme;

pub use document::{Document, LanguageTag, RawDocument, RejectionRecord, StageAnnotation, Verdict};
