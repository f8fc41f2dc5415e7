//! Rule-based cleaning engine.
//!
//! A [`RuleSet`] is an ordered list of named rules, each either a *transform*
//! (rewrites text) or a *reject* check (drops the document). Rules are
//! restricted to the languages they list. Within one application the ordered
//! list is re-run until the text stops changing, so transform-only rule sets
//! are idempotent even when one transform exposes work for an earlier one.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::Deserialize;

use crate::document::{Document, LanguageTag, StageAnnotation, Verdict};
use crate::stage::{par_each, Stage, StageError};

pub const STAGE: &str = "clean";
pub const DEFAULT_MIN_CHARS: usize = 200;
pub const DEFAULT_MAX_RESIDUE_FRACTION: f64 = 0.1;

const MAX_ROUNDS: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum RuleError {
    #[error("cannot read rule pack {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("rule pack does not parse: {0}")]
    Parse(String),
    #[error("rule {name:?}: unknown kind {kind:?}")]
    UnknownKind { name: String, kind: String },
    #[error("duplicate rule name {0:?}")]
    DuplicateName(String),
    #[error("rule {name:?}: {message}")]
    BadParams { name: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleAction {
    Transform,
    Reject,
}

impl RuleAction {
    pub fn as_str(self) -> &'static str {
        match self {
            RuleAction::Transform => "transform",
            RuleAction::Reject => "reject",
        }
    }
}

/// Terminator characters accepted at the end of a document.
#[derive(Debug, Clone, PartialEq)]
pub enum TerminatorSet {
    Any,
    Chars(HashSet<char>),
}

impl TerminatorSet {
    fn parse(s: &str) -> Self {
        if s == "*" {
            TerminatorSet::Any
        } else {
            TerminatorSet::Chars(s.chars().collect())
        }
    }

    fn accepts(&self, c: char) -> bool {
        match self {
            TerminatorSet::Any => true,
            TerminatorSet::Chars(set) => set.contains(&c),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RuleKind {
    /// Reject when the text has fewer than `min_chars` characters.
    MinLength { min_chars: usize },
    /// Strip tag-like substrings; reject when they made up more than
    /// `max_fraction` of the characters.
    HtmlResidue { max_fraction: f64 },
    /// Reject when the last non-space character is not an accepted terminator.
    BadTerminator { default: TerminatorSet, per_language: BTreeMap<String, TerminatorSet> },
    /// Remove zero-width, bidi-control and control characters except `\n` and `\t`.
    InvisibleChars,
    /// No space before closing punctuation, one space after clause punctuation.
    PunctSpacing,
    /// Literal replacements, longest key first. Values are never longer than keys.
    SpecialChars { replacements: Vec<(String, String)> },
}

impl RuleKind {
    /// Primary effect. `HtmlResidue` transforms but can still reject.
    pub fn action(&self) -> RuleAction {
        match self {
            RuleKind::MinLength { .. } | RuleKind::BadTerminator { .. } => RuleAction::Reject,
            _ => RuleAction::Transform,
        }
    }

    /// Reason code recorded when this rule drops a document.
    pub fn reason(&self) -> &'static str {
        match self {
            RuleKind::MinLength { .. } => "too_short",
            RuleKind::HtmlResidue { .. } => "html_residue",
            RuleKind::BadTerminator { .. } => "bad_terminator",
            RuleKind::InvisibleChars => "invisible_chars",
            RuleKind::PunctSpacing => "punct_spacing",
            RuleKind::SpecialChars { .. } => "special_chars",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Applicability {
    All,
    Only(Vec<LanguageTag>),
}

impl Applicability {
    fn covers(&self, lang: Option<&LanguageTag>) -> bool {
        match self {
            Applicability::All => true,
            Applicability::Only(langs) => lang.is_some_and(|l| langs.contains(l)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CleaningRule {
    pub name: String,
    pub kind: RuleKind,
    pub languages: Applicability,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RuleSet {
    rules: Vec<CleaningRule>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiredRule {
    pub name: String,
    pub action: RuleAction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CleanOutcome {
    pub verdict: Verdict,
    pub text: String,
    /// Rules that changed the text or rejected it, in first-firing order.
    pub fired: Vec<FiredRule>,
    /// Reason code of the rejecting rule, when dropped.
    pub reason: Option<&'static str>,
}

// ---- rule pack parsing ----

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PackFile {
    #[serde(default)]
    rule: Vec<RuleEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleEntry {
    name: String,
    kind: String,
    #[serde(default)]
    languages: Vec<String>,
    #[serde(default)]
    params: toml::Table,
}

fn bad(name: &str, message: impl Into<String>) -> RuleError {
    RuleError::BadParams { name: name.to_owned(), message: message.into() }
}

fn take_params(name: &str, params: &toml::Table, allowed: &[&str]) -> Result<(), RuleError> {
    match params.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(bad(name, format!("unknown parameter {k:?}"))),
        None => Ok(()),
    }
}

fn parse_kind(entry: &RuleEntry) -> Result<RuleKind, RuleError> {
    let name = entry.name.as_str();
    let p = &entry.params;
    let kind = match entry.kind.as_str() {
        "min_length" => {
            take_params(name, p, &["min_chars"])?;
            let min_chars = match p.get("min_chars") {
                None => DEFAULT_MIN_CHARS,
                Some(v) => v
                    .as_integer()
                    .filter(|&n| n >= 0)
                    .ok_or_else(|| bad(name, "min_chars must be a non-negative integer"))? as usize,
            };
            RuleKind::MinLength { min_chars }
        }
        "html_residue" => {
            take_params(name, p, &["max_fraction"])?;
            let max_fraction = match p.get("max_fraction") {
                None => DEFAULT_MAX_RESIDUE_FRACTION,
                Some(v) => v
                    .as_float()
                    .filter(|f| (0.0..=1.0).contains(f))
                    .ok_or_else(|| bad(name, "max_fraction must be a float in [0, 1]"))?,
            };
            RuleKind::HtmlResidue { max_fraction }
        }
        "bad_terminator" => {
            take_params(name, p, &["terminators"])?;
            let table = p
                .get("terminators")
                .and_then(|t| t.as_table())
                .ok_or_else(|| bad(name, "terminators table is required"))?;
            let mut default = None;
            let mut per_language = BTreeMap::new();
            for (lang, chars) in table {
                let chars = chars.as_str().filter(|s| !s.is_empty()).ok_or_else(|| bad(name, "terminator sets must be non-empty strings"))?;
                let set = TerminatorSet::parse(chars);
                if lang == "default" {
                    default = Some(set);
                } else {
                    LanguageTag::new(lang).map_err(|e| bad(name, e.to_string()))?;
                    per_language.insert(lang.clone(), set);
                }
            }
            let default = default.ok_or_else(|| bad(name, "terminators.default is required"))?;
            RuleKind::BadTerminator { default, per_language }
        }
        "invisible_chars" => {
            take_params(name, p, &[])?;
            RuleKind::InvisibleChars
        }
        "punct_spacing" => {
            take_params(name, p, &[])?;
            RuleKind::PunctSpacing
        }
        "special_chars" => {
            take_params(name, p, &["replacements"])?;
            let table = p
                .get("replacements")
                .and_then(|t| t.as_table())
                .ok_or_else(|| bad(name, "replacements table is required"))?;
            let mut replacements = Vec::new();
            for (from, to) in table {
                let to = to.as_str().ok_or_else(|| bad(name, "replacement values must be strings"))?;
                if from.is_empty() {
                    return Err(bad(name, "empty replacement key"));
                }
                if to.chars().count() > from.chars().count() {
                    return Err(bad(name, format!("replacement for {from:?} is longer than the original")));
                }
                if table.keys().any(|k| to.contains(k.as_str())) {
                    return Err(bad(name, format!("replacement for {from:?} reintroduces a key")));
                }
                replacements.push((from.clone(), to.to_owned()));
            }
            // Longest key first so overlapping keys resolve deterministically.
            replacements.sort_by(|a, b| b.0.chars().count().cmp(&a.0.chars().count()).then(a.0.cmp(&b.0)));
            RuleKind::SpecialChars { replacements }
        }
        other => return Err(RuleError::UnknownKind { name: name.to_owned(), kind: other.to_owned() }),
    };
    Ok(kind)
}

impl RuleSet {
    pub fn new(rules: Vec<CleaningRule>) -> Result<Self, RuleError> {
        let mut seen = HashSet::new();
        for r in &rules {
            if !seen.insert(r.name.as_str()) {
                return Err(RuleError::DuplicateName(r.name.clone()));
            }
        }
        Ok(RuleSet { rules })
    }

    pub fn parse(src: &str) -> Result<Self, RuleError> {
        let pack: PackFile = toml::from_str(src).map_err(|e| RuleError::Parse(e.to_string()))?;
        let mut rules = Vec::with_capacity(pack.rule.len());
        for entry in &pack.rule {
            let kind = parse_kind(entry)?;
            let languages = if entry.languages.is_empty() || entry.languages.iter().any(|l| l == "all") {
                Applicability::All
            } else {
                let tags = entry
                    .languages
                    .iter()
                    .map(|l| LanguageTag::new(l).map_err(|e| bad(&entry.name, e.to_string())))
                    .collect::<Result<Vec<_>, _>>()?;
                Applicability::Only(tags)
            };
            rules.push(CleaningRule { name: entry.name.clone(), kind, languages });
        }
        RuleSet::new(rules)
    }

    pub fn bundled() -> Self {
        RuleSet::parse(include_str!("../data/rules/default.toml")).expect("bundled rule pack is valid")
    }

    pub fn rules(&self) -> &[CleaningRule] {
        &self.rules
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

pub fn load_ruleset(path: impl AsRef<Path>) -> Result<RuleSet, RuleError> {
    let path = path.as_ref();
    let src = std::fs::read_to_string(path).map_err(|source| RuleError::Io { path: path.display().to_string(), source })?;
    RuleSet::parse(&src)
}

// ---- rule behavior ----

fn tag_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"<!--.*?-->|</?[A-Za-z][A-Za-z0-9:-]*(?:\s[^<>]*)?/?>").unwrap())
}

fn strip_tags(text: &str) -> String {
    let mut cur = text.to_owned();
    loop {
        let next = tag_re().replace_all(&cur, "").into_owned();
        if next == cur {
            return cur;
        }
        cur = next;
    }
}

pub fn is_invisible(c: char) -> bool {
    matches!(c,
        '\u{00AD}' | '\u{200B}' | '\u{200E}' | '\u{200F}' | '\u{202A}'..='\u{202E}'
        | '\u{2060}'..='\u{2064}' | '\u{2066}'..='\u{2069}' | '\u{FEFF}')
        || (c.is_control() && c != '\n' && c != '\t')
}

// No space before these.
fn is_closing_punct(c: char) -> bool {
    matches!(c, ',' | '.' | '!' | '?' | ';' | ':' | ')' | ']' | '}' | '»' | '…' | '%' | '،' | '؛' | '؟')
}

// One space after these when a letter follows directly.
fn wants_space_after(c: char) -> bool {
    matches!(c, ',' | ';' | ':' | '!' | '?' | '،' | '؛' | '؟')
}

fn punct_spacing(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len() + 8);
    for (i, &c) in chars.iter().enumerate() {
        if is_closing_punct(c) {
            while out.ends_with([' ', '\t']) {
                out.pop();
            }
        }
        out.push(c);
        let next = chars.get(i + 1).copied();
        let prev = if i > 0 { chars.get(i - 1).copied() } else { None };
        let insert = match next {
            Some(n) if n.is_alphabetic() => {
                wants_space_after(c)
                    || (c == '.' && n.is_uppercase() && prev.is_some_and(|p| p.is_lowercase()))
            }
            _ => false,
        };
        if insert {
            out.push(' ');
        }
    }
    out
}

fn special_chars(text: &str, replacements: &[(String, String)]) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    'outer: while !rest.is_empty() {
        for (from, to) in replacements {
            if let Some(r) = rest.strip_prefix(from.as_str()) {
                out.push_str(to);
                rest = r;
                continue 'outer;
            }
        }
        let c = rest.chars().next().unwrap();
        out.push(c);
        rest = &rest[c.len_utf8()..];
    }
    out
}

enum RuleResult {
    Unchanged,
    Changed(String),
    Reject,
}

fn run_rule(kind: &RuleKind, text: &str, lang: Option<&LanguageTag>) -> RuleResult {
    match kind {
        RuleKind::MinLength { min_chars } => {
            if text.chars().count() < *min_chars {
                RuleResult::Reject
            } else {
                RuleResult::Unchanged
            }
        }
        RuleKind::HtmlResidue { max_fraction } => {
            let stripped = strip_tags(text);
            if stripped.len() == text.len() {
                return RuleResult::Unchanged;
            }
            let before = text.chars().count() as f64;
            let removed = before - stripped.chars().count() as f64;
            if removed / before > *max_fraction {
                RuleResult::Reject
            } else {
                RuleResult::Changed(stripped)
            }
        }
        RuleKind::BadTerminator { default, per_language } => {
            let set = lang.and_then(|l| per_language.get(l.as_str())).unwrap_or(default);
            match text.trim_end().chars().next_back() {
                Some(c) if set.accepts(c) => RuleResult::Unchanged,
                _ => RuleResult::Reject,
            }
        }
        RuleKind::InvisibleChars => {
            if text.chars().any(is_invisible) {
                RuleResult::Changed(text.chars().filter(|&c| !is_invisible(c)).collect())
            } else {
                RuleResult::Unchanged
            }
        }
        RuleKind::PunctSpacing => changed_if_different(text, punct_spacing(text)),
        RuleKind::SpecialChars { replacements } => changed_if_different(text, special_chars(text, replacements)),
    }
}

fn changed_if_different(old: &str, new: String) -> RuleResult {
    if new == old {
        RuleResult::Unchanged
    } else {
        RuleResult::Changed(new)
    }
}

/// Applies `rules` to the document text. Rules not covering the document's
/// language are skipped; the first reject short-circuits.
pub fn apply_rules(doc: &Document, rules: &RuleSet) -> CleanOutcome {
    apply_rules_to_text(&doc.text, doc.language.as_ref(), rules)
}

pub fn apply_rules_to_text(text: &str, lang: Option<&LanguageTag>, rules: &RuleSet) -> CleanOutcome {
    let mut text = text.to_owned();
    let mut fired: Vec<FiredRule> = Vec::new();
    let note = |fired: &mut Vec<FiredRule>, rule: &CleaningRule, action: RuleAction| {
        if !fired.iter().any(|f| f.name == rule.name) {
            fired.push(FiredRule { name: rule.name.clone(), action });
        }
    };
    for _ in 0..MAX_ROUNDS {
        let mut changed = false;
        for rule in rules.rules.iter().filter(|r| r.languages.covers(lang)) {
            match run_rule(&rule.kind, &text, lang) {
                RuleResult::Unchanged => {}
                RuleResult::Changed(t) => {
                    text = t;
                    changed = true;
                    note(&mut fired, rule, RuleAction::Transform);
                }
                RuleResult::Reject => {
                    note(&mut fired, rule, RuleAction::Reject);
                    return CleanOutcome { verdict: Verdict::Drop, text, fired, reason: Some(rule.kind.reason()) };
                }
            }
        }
        if !changed {
            break;
        }
    }
    CleanOutcome { verdict: Verdict::Keep, text, fired, reason: None }
}

/// Pipeline stage wrapper.
pub struct CleanStage {
    pub rules: RuleSet,
}

impl CleanStage {
    pub fn apply(&self, doc: &mut Document) {
        let out = apply_rules(doc, &self.rules);
        let fired = out.fired.iter().map(|f| f.name.as_str()).collect::<Vec<_>>().join(",");
        let before = doc.text.chars().count();
        let mut ann = StageAnnotation::new(STAGE, Verdict::Keep).score("chars_before", before as f64);
        if !fired.is_empty() {
            ann = ann.label("fired", fired);
        }
        match out.reason {
            Some(reason) => doc.reject(ann.reason(reason)),
            None => {
                if out.text != doc.text {
                    ann.verdict = Verdict::Modify;
                    doc.text = out.text;
                }
                doc.annotate(ann);
            }
        }
    }
}

impl Stage for CleanStage {
    fn name(&self) -> &str {
        STAGE
    }

    fn run(&self, docs: &mut [Document]) -> Result<(), StageError> {
        par_each(docs, |d| self.apply(d));
        Ok(())
    }
}
