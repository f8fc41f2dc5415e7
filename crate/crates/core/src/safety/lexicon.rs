//! Sensitive-term lexicon: matching, corpus statistics and the density filter.
//!
//! Space-delimited languages match whole tokens (multi-word terms match token
//! sequences); Thai matches substrings, with one token per non-space
//! character.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::document::{Document, LanguageTag};

#[derive(Debug, thiserror::Error)]
pub enum LexiconError {
    #[error("cannot read lexicon: {0}")]
    Io(#[from] std::io::Error),
    #[error("lexicon line {line}: {message}")]
    BadLine { line: usize, message: String },
    #[error("corpus is empty")]
    EmptyCorpus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Priority {
    Low,
    Med,
    High,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub term: String,
    /// `None` applies to every language.
    pub language: Option<LanguageTag>,
    pub weight: f64,
    pub priority: Priority,
}

impl LexiconEntry {
    fn applies_to(&self, lang: Option<&LanguageTag>) -> bool {
        match &self.language {
            None => true,
            Some(l) => lang == Some(l),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SensitiveLexicon {
    entries: Vec<LexiconEntry>,
    word_forms: Vec<Vec<String>>,
    char_forms: Vec<String>,
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
        || matches!(c, '\u{0300}'..='\u{036F}' | '\u{064B}'..='\u{065F}' | '\u{0670}' | '\u{0E31}' | '\u{0E34}'..='\u{0E3A}' | '\u{0E47}'..='\u{0E4E}')
}

/// Lowercased word tokens.
pub fn word_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !is_word_char(c)).filter(|t| !t.is_empty()).map(str::to_lowercase).collect()
}

fn char_text(text: &str) -> String {
    text.chars().filter(|c| !c.is_whitespace()).flat_map(char::to_lowercase).collect()
}

fn uses_char_matching(lang: Option<&LanguageTag>) -> bool {
    lang.is_some_and(|l| l.as_str() == "th")
}

/// Term occurrences in one document.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TermHits {
    pub tokens: usize,
    /// (entry index, occurrences), only for entries that occur.
    pub hits: Vec<(usize, usize)>,
}

impl TermHits {
    pub fn occurrences(&self) -> usize {
        self.hits.iter().map(|(_, n)| n).sum()
    }

    /// Unweighted occurrences per token.
    pub fn density(&self) -> f64 {
        if self.tokens == 0 {
            0.0
        } else {
            self.occurrences() as f64 / self.tokens as f64
        }
    }
}

impl SensitiveLexicon {
    pub fn new(entries: Vec<LexiconEntry>) -> Result<Self, LexiconError> {
        for (i, e) in entries.iter().enumerate() {
            if e.term.trim().is_empty() {
                return Err(LexiconError::BadLine { line: i + 1, message: "empty term".into() });
            }
            if !(e.weight.is_finite() && e.weight >= 0.0) {
                return Err(LexiconError::BadLine { line: i + 1, message: format!("weight {} must be ≥ 0", e.weight) });
            }
        }
        let word_forms = entries.iter().map(|e| word_tokens(&e.term)).collect();
        let char_forms = entries.iter().map(|e| char_text(&e.term)).collect();
        Ok(SensitiveLexicon { entries, word_forms, char_forms })
    }

    /// Tab-separated `term, language, weight, priority`; `#` lines are comments.
    /// Language `all` or `*` applies everywhere.
    pub fn parse(src: &str) -> Result<Self, LexiconError> {
        let mut entries = Vec::new();
        for (i, line) in src.lines().enumerate() {
            let bad = |message: String| LexiconError::BadLine { line: i + 1, message };
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            let [term, lang, weight, priority] = fields[..] else {
                return Err(bad(format!("expected 4 tab-separated fields, found {}", fields.len())));
            };
            let language = match lang {
                "all" | "*" => None,
                code => Some(LanguageTag::new(code).map_err(|e| bad(e.to_string()))?),
            };
            let weight: f64 = weight.parse().map_err(|_| bad(format!("bad weight {weight:?}")))?;
            let priority = match priority.to_ascii_lowercase().as_str() {
                "low" => Priority::Low,
                "med" | "medium" => Priority::Med,
                "high" => Priority::High,
                other => return Err(bad(format!("bad priority {other:?}"))),
            };
            entries.push(LexiconEntry { term: term.to_owned(), language, weight, priority });
        }
        let lex = SensitiveLexicon::new(entries)?;
        Ok(lex)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LexiconError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn hits(&self, text: &str, lang: Option<&LanguageTag>) -> TermHits {
        let applicable = (0..self.entries.len()).filter(|&i| self.entries[i].applies_to(lang));
        if uses_char_matching(lang) {
            let t = char_text(text);
            let tokens = t.chars().count();
            let hits = applicable
                .filter_map(|i| {
                    let f = &self.char_forms[i];
                    let n = if f.is_empty() { 0 } else { t.matches(f.as_str()).count() };
                    (n > 0).then_some((i, n))
                })
                .collect();
            TermHits { tokens, hits }
        } else {
            let toks = word_tokens(text);
            let hits = applicable
                .filter_map(|i| {
                    let f = &self.word_forms[i];
                    let n = if f.is_empty() || f.len() > toks.len() {
                        0
                    } else {
                        toks.windows(f.len()).filter(|w| *w == f.as_slice()).count()
                    };
                    (n > 0).then_some((i, n))
                })
                .collect();
            TermHits { tokens: toks.len(), hits }
        }
    }

    /// Σ weight × occurrences / tokens.
    pub fn weighted_density(&self, hits: &TermHits) -> f64 {
        if hits.tokens == 0 {
            return 0.0;
        }
        let w: f64 = hits.hits.iter().map(|&(i, n)| self.entries[i].weight * n as f64).sum();
        w / hits.tokens as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermStats {
    pub term: String,
    pub language: String,
    pub priority: Priority,
    pub df: usize,
    pub idf: f64,
    /// Mean occurrences/tokens over documents containing the term.
    pub mean_density: f64,
    pub unseen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconReport {
    pub documents: usize,
    pub terms: Vec<TermStats>,
}

impl LexiconReport {
    /// Terms ordered for review: highest idf × density first, then by term.
    pub fn prioritized(&self) -> Vec<&TermStats> {
        let mut v: Vec<&TermStats> = self.terms.iter().filter(|t| !t.unseen).collect();
        v.sort_by(|a, b| (b.idf * b.mean_density).total_cmp(&(a.idf * a.mean_density)).then(a.term.cmp(&b.term)));
        v
    }
}

/// Per-term document frequency, `idf = ln(N / max(df, 1))` and mean density.
pub fn lexicon_stats(docs: &[Document], lex: &SensitiveLexicon) -> Result<LexiconReport, LexiconError> {
    if docs.is_empty() {
        return Err(LexiconError::EmptyCorpus);
    }
    let n = docs.len();
    let mut df = vec![0usize; lex.len()];
    let mut density_sum = vec![0.0f64; lex.len()];
    for d in docs {
        let h = lex.hits(&d.text, d.language.as_ref());
        for (i, c) in h.hits {
            df[i] += 1;
            density_sum[i] += c as f64 / h.tokens as f64;
        }
    }
    let terms = lex
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| TermStats {
            term: e.term.clone(),
            language: e.language.as_ref().map(|l| l.as_str().to_owned()).unwrap_or_else(|| "all".into()),
            priority: e.priority,
            df: df[i],
            idf: (n as f64 / df[i].max(1) as f64).ln(),
            mean_density: if df[i] == 0 { 0.0 } else { density_sum[i] / df[i] as f64 },
            unseen: df[i] == 0,
        })
        .collect();
    Ok(LexiconReport { documents: n, terms })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LexiconAction {
    Keep,
    Flag,
    Drop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LexiconDecision {
    pub action: LexiconAction,
    pub weighted_density: f64,
    pub matched: Vec<String>,
}

/// Drops at `weighted density ≥ weight_threshold`, flags at
/// `≥ density_threshold`; both inclusive. Documents with no match are kept.
pub fn lexicon_filter(doc: &Document, lex: &SensitiveLexicon, density_threshold: f64, weight_threshold: f64) -> LexiconDecision {
    let h = lex.hits(&doc.text, doc.language.as_ref());
    let wd = lex.weighted_density(&h);
    let matched: Vec<String> = h.hits.iter().map(|&(i, _)| lex.entries[i].term.clone()).collect();
    let action = if matched.is_empty() {
        LexiconAction::Keep
    } else if wd >= weight_threshold {
        LexiconAction::Drop
    } else if wd >= density_threshold {
        LexiconAction::Flag
    } else {
        LexiconAction::Keep
    };
    LexiconDecision { action, weighted_density: wd, matched }
}
