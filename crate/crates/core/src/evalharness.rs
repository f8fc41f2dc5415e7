//! Seven-dimension quality judging, dataset scores, manual-inspection
//! reports and review sampling.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_rational::Ratio;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::document::Document;
use crate::hashing::fnv1a64;
use crate::plugin::{self, HasId, PluginCommand, PluginError, PluginRequest};

pub const DEFAULT_REVIEW_RATIO: f64 = 0.5;
/// Row order of per-language score tables.
pub const TABLE_LANGUAGES: [&str; 5] = ["ar", "ru", "ko", "vi", "th"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    Completeness,
    Validity,
    Comprehensibility,
    Fluency,
    Relevance,
    Similarity,
    Security,
}

impl Dimension {
    pub const ALL: [Dimension; 7] = [
        Dimension::Completeness,
        Dimension::Validity,
        Dimension::Comprehensibility,
        Dimension::Fluency,
        Dimension::Relevance,
        Dimension::Similarity,
        Dimension::Security,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Dimension::Completeness => "completeness",
            Dimension::Validity => "validity",
            Dimension::Comprehensibility => "comprehensibility",
            Dimension::Fluency => "fluency",
            Dimension::Relevance => "relevance",
            Dimension::Similarity => "similarity",
            Dimension::Security => "security",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.name() == s)
    }

    /// Issue family the dimension belongs to.
    pub fn category(self) -> &'static str {
        match self {
            Dimension::Similarity => "Duplication",
            Dimension::Security => "Safety",
            _ => "Quality",
        }
    }

    fn issue(self) -> &'static str {
        match self {
            Dimension::Completeness => "incomplete content",
            Dimension::Validity => "invalid content",
            Dimension::Comprehensibility => "incomprehensible content",
            Dimension::Fluency => "disfluent content",
            Dimension::Relevance => "irrelevant content",
            Dimension::Similarity => "duplicated content",
            Dimension::Security => "unsafe content",
        }
    }

    fn title(self) -> String {
        let n = self.name();
        n[..1].to_uppercase() + &n[1..]
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("dimension {0} is missing")]
    MissingDimension(&'static str),
    #[error("judge failed twice: {0}")]
    JudgeFailed(#[source] PluginError),
    #[error("sample size must be at least 1")]
    ZeroSample,
    #[error("review ratio {0} outside (0, 1)")]
    BadRatio(f64),
}

/// Per-dimension verdicts; `true` means good.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityDimensions {
    pub completeness: bool,
    pub validity: bool,
    pub comprehensibility: bool,
    pub fluency: bool,
    pub relevance: bool,
    pub similarity: bool,
    pub security: bool,
}

impl QualityDimensions {
    pub const ALL_GOOD: QualityDimensions = QualityDimensions {
        completeness: true,
        validity: true,
        comprehensibility: true,
        fluency: true,
        relevance: true,
        similarity: true,
        security: true,
    };

    pub fn get(&self, d: Dimension) -> bool {
        match d {
            Dimension::Completeness => self.completeness,
            Dimension::Validity => self.validity,
            Dimension::Comprehensibility => self.comprehensibility,
            Dimension::Fluency => self.fluency,
            Dimension::Relevance => self.relevance,
            Dimension::Similarity => self.similarity,
            Dimension::Security => self.security,
        }
    }

    pub fn set(&mut self, d: Dimension, good: bool) {
        let slot = match d {
            Dimension::Completeness => &mut self.completeness,
            Dimension::Validity => &mut self.validity,
            Dimension::Comprehensibility => &mut self.comprehensibility,
            Dimension::Fluency => &mut self.fluency,
            Dimension::Relevance => &mut self.relevance,
            Dimension::Similarity => &mut self.similarity,
            Dimension::Security => &mut self.security,
        };
        *slot = good;
    }

    /// Builds from a name → good map; all seven names are required.
    pub fn from_map(map: &BTreeMap<String, bool>) -> Result<Self, EvalError> {
        let mut q = Self::ALL_GOOD;
        for d in Dimension::ALL {
            q.set(d, *map.get(d.name()).ok_or(EvalError::MissingDimension(d.name()))?);
        }
        Ok(q)
    }

    pub fn bad(&self) -> Vec<Dimension> {
        Dimension::ALL.into_iter().filter(|&d| !self.get(d)).collect()
    }

    /// 1 only when every dimension is good.
    pub fn composite(&self) -> u8 {
        Dimension::ALL.iter().all(|&d| self.get(d)) as u8
    }
}

pub fn composite_score(dims: &QualityDimensions) -> u8 {
    dims.composite()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub id: String,
    pub dims: QualityDimensions,
    pub composite: u8,
    pub judge: String,
}

pub trait Judge: Send + Sync {
    fn id(&self) -> &str;
    fn judge(&self, docs: &[&Document]) -> Result<Vec<QualityDimensions>, PluginError>;
}

/// Derives dimensions from the annotations earlier stages left on a document.
#[derive(Debug, Clone)]
pub struct RuleJudge {
    pub toxicity_threshold: f64,
}

impl Default for RuleJudge {
    fn default() -> Self {
        RuleJudge { toxicity_threshold: crate::safety::DEFAULT_TOXICITY_THRESHOLD }
    }
}

impl RuleJudge {
    pub fn dims(&self, doc: &Document) -> QualityDimensions {
        let has = |codes: &[&str]| doc.all_reasons().any(|r| codes.contains(&r));
        let mut q = QualityDimensions::ALL_GOOD;
        q.similarity = !has(&["near_duplicate"]);
        let safety_drop = doc.rejected.as_ref().is_some_and(|r| r.stage == crate::safety::STAGE);
        let toxic = doc
            .annotation(crate::safety::STAGE)
            .is_some_and(|a| a.scores.iter().any(|(k, v)| k.starts_with("toxicity_") && *v >= self.toxicity_threshold));
        q.security = !(safety_drop || toxic);
        q.completeness = !has(&["bad_terminator", "too_short"]);
        q.validity = !has(&["empty_html", "decode_error", "empty_extraction", "html_residue", "no_tokens"]);
        let lossy = doc.annotation(crate::extract::STAGE).is_some_and(|a| a.scores.get("lossy_decode").is_some_and(|v| *v > 0.0));
        let residue = doc
            .annotation(crate::clean::STAGE)
            .and_then(|a| a.labels.get("fired"))
            .is_some_and(|f| f.split(',').any(|r| r == "html_residue"));
        q.comprehensibility = !(lossy || residue);
        q.fluency = !has(&["high_ppl"]);
        q.relevance = !has(&["low_quality_score", "non_target_language", "low_confidence", "too_short_for_langid"]);
        q
    }
}

impl Judge for RuleJudge {
    fn id(&self) -> &str {
        "rules"
    }

    fn judge(&self, docs: &[&Document]) -> Result<Vec<QualityDimensions>, PluginError> {
        Ok(docs.iter().map(|d| self.dims(d)).collect())
    }
}

#[derive(Debug, Deserialize)]
struct JudgeResponse {
    id: String,
    #[serde(flatten)]
    dims: QualityDimensions,
}

impl HasId for JudgeResponse {
    fn id(&self) -> &str {
        &self.id
    }
}

/// External judge: one object per document with the seven boolean fields.
pub struct PluginJudge {
    pub name: String,
    pub command: PluginCommand,
}

impl Judge for PluginJudge {
    fn id(&self) -> &str {
        &self.name
    }

    fn judge(&self, docs: &[&Document]) -> Result<Vec<QualityDimensions>, PluginError> {
        let requests: Vec<PluginRequest> = docs.iter().map(|d| PluginRequest::from(*d)).collect();
        let out: Vec<JudgeResponse> = plugin::call(&self.command, &requests, |r| r.id)?;
        Ok(out.into_iter().map(|r| r.dims).collect())
    }
}

/// Judges a batch, retrying once if the judge fails.
pub fn judge_documents(judge: &dyn Judge, docs: &[&Document]) -> Result<Vec<JudgeVerdict>, EvalError> {
    let dims = match judge.judge(docs) {
        Ok(d) => d,
        Err(_) => judge.judge(docs).map_err(EvalError::JudgeFailed)?,
    };
    Ok(docs
        .iter()
        .zip(dims)
        .map(|(d, dims)| JudgeVerdict { id: d.id.clone(), composite: dims.composite(), dims, judge: judge.id().to_owned() })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetScore {
    pub dataset: String,
    pub language: String,
    pub n: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetScores {
    pub dataset: String,
    pub scores: Vec<DatasetScore>,
    /// Requested languages with no documents.
    pub skipped: Vec<String>,
}

impl DatasetScores {
    /// Plain mean of the per-language scores.
    pub fn average(&self) -> Option<f64> {
        (!self.scores.is_empty()).then(|| self.scores.iter().map(|s| s.score).sum::<f64>() / self.scores.len() as f64)
    }

    pub fn get(&self, lang: &str) -> Option<&DatasetScore> {
        self.scores.iter().find(|s| s.language == lang)
    }
}

/// Samples up to `n` documents per language and scores them as 100 × mean
/// composite. Sampling depends only on the set of documents, not their order.
pub fn dataset_score(
    dataset: &str,
    docs: &[Document],
    languages: &[&str],
    judge: &dyn Judge,
    n: usize,
    seed: u64,
) -> Result<DatasetScores, EvalError> {
    if n == 0 {
        return Err(EvalError::ZeroSample);
    }
    let mut scores = Vec::new();
    let mut skipped = Vec::new();
    for &lang in languages {
        let mut pool: Vec<&Document> = docs.iter().filter(|d| d.language.as_ref().is_some_and(|l| l.as_str() == lang)).collect();
        if pool.is_empty() {
            skipped.push(lang.to_owned());
            continue;
        }
        pool.sort_by(|a, b| a.id.cmp(&b.id));
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a64(lang.as_bytes()));
        let take = n.min(pool.len());
        let mut idx: Vec<usize> = rand::seq::index::sample(&mut rng, pool.len(), take).into_vec();
        idx.sort_unstable();
        let sample: Vec<&Document> = idx.into_iter().map(|i| pool[i]).collect();
        let verdicts = judge_documents(judge, &sample)?;
        let good: usize = verdicts.iter().map(|v| v.composite as usize).sum();
        scores.push(DatasetScore {
            dataset: dataset.to_owned(),
            language: lang.to_owned(),
            n: take,
            score: 100.0 * good as f64 / take as f64,
        });
    }
    Ok(DatasetScores { dataset: dataset.to_owned(), scores, skipped })
}

/// Languages as table rows, datasets as columns, closing with an AVG row.
pub fn render_score_table(columns: &[DatasetScores]) -> String {
    let mut langs: Vec<&str> = TABLE_LANGUAGES.iter().copied().filter(|l| columns.iter().any(|c| c.get(l).is_some())).collect();
    let mut extra: Vec<&str> =
        columns.iter().flat_map(|c| c.scores.iter().map(|s| s.language.as_str())).filter(|l| !TABLE_LANGUAGES.contains(l)).collect();
    extra.sort_unstable();
    extra.dedup();
    langs.extend(extra);
    let mut out = String::from("language");
    for c in columns {
        write!(out, "\t{}", c.dataset).unwrap();
    }
    out.push('\n');
    let cell = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into());
    for l in langs {
        out.push_str(l);
        for c in columns {
            write!(out, "\t{}", cell(c.get(l).map(|s| s.score))).unwrap();
        }
        out.push('\n');
    }
    out.push_str("AVG");
    for c in columns {
        write!(out, "\t{}", cell(c.average())).unwrap();
    }
    out.push('\n');
    out
}

/// One adjudicated sample from manual inspection; no issues means high quality.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InspectionRecord {
    pub id: String,
    #[serde(default)]
    pub issues: Vec<Dimension>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InspectionRow {
    pub category: String,
    pub issue: String,
    pub count: usize,
    /// Share of samples; a sample with several issues counts once per issue.
    pub proportion: f64,
    #[serde(skip)]
    pub exact: Ratio<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InspectionReport {
    pub samples: usize,
    pub rows: Vec<InspectionRow>,
}

pub fn inspection_report(records: &[InspectionRecord]) -> InspectionReport {
    let n = records.len() as u64;
    let high = records.iter().filter(|r| r.issues.is_empty()).count();
    let mut counts: BTreeMap<Dimension, usize> = BTreeMap::new();
    for r in records {
        let mut issues = r.issues.clone();
        issues.sort();
        issues.dedup();
        for d in issues {
            *counts.entry(d).or_insert(0) += 1;
        }
    }
    let ratio = |c: usize| if n == 0 { Ratio::from_integer(0) } else { Ratio::new(c as u64, n) };
    let row = |category: String, issue: String, count: usize| {
        let exact = ratio(count);
        InspectionRow { category, issue, count, proportion: *exact.numer() as f64 / *exact.denom() as f64, exact }
    };
    let mut rows = vec![row("High Quality".into(), "no issues".into(), high)];
    let mut issue_rows: Vec<(Dimension, InspectionRow)> = Dimension::ALL
        .into_iter()
        .map(|d| (d, row(format!("{} - {}", d.category(), d.title()), d.issue().into(), counts.get(&d).copied().unwrap_or(0))))
        .collect();
    // Most frequent first; ties keep dimension order.
    issue_rows.sort_by(|a, b| b.1.count.cmp(&a.1.count).then(a.0.cmp(&b.0)));
    rows.extend(issue_rows.into_iter().map(|(_, r)| r));
    InspectionReport { samples: records.len(), rows }
}

impl InspectionReport {
    pub fn render(&self) -> String {
        let mut s = String::from("category\tissue\tcount\tproportion\n");
        for r in &self.rows {
            writeln!(s, "{}\t{}\t{}\t{:.2}%", r.category, r.issue, r.count, 100.0 * r.proportion).unwrap();
        }
        writeln!(s, "samples\t\t{}\t", self.samples).unwrap();
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stratum {
    High,
    Low,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub id: String,
    pub score: f64,
    pub stratum: Stratum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewSample {
    pub batch_id: String,
    pub items: Vec<ReviewItem>,
    /// Set when fewer documents than the batch size were available.
    pub short: bool,
}

/// Draws `round(batch × ratio)` items from the upper half of the score
/// ranking and the rest from the lower half.
pub fn sample_for_review(scored: &[(String, f64)], batch: usize, ratio: f64, seed: u64) -> Result<ReviewSample, EvalError> {
    if batch == 0 {
        return Err(EvalError::ZeroSample);
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(EvalError::BadRatio(ratio));
    }
    let mut ranked: Vec<&(String, f64)> = scored.iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let batch_id = format!("review-{seed:016x}");
    let item = |(id, score): &(String, f64), stratum| ReviewItem { id: id.clone(), score: *score, stratum };
    if ranked.len() <= batch {
        let half = ranked.len().div_ceil(2);
        let items = ranked
            .iter()
            .enumerate()
            .map(|(i, r)| item(r, if i < half { Stratum::High } else { Stratum::Low }))
            .collect();
        return Ok(ReviewSample { batch_id, items, short: ranked.len() < batch });
    }
    let half = ranked.len().div_ceil(2);
    let (top, bottom) = ranked.split_at(half);
    let want_high = ((batch as f64 * ratio).round() as usize).min(top.len());
    let want_low = (batch - want_high).min(bottom.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick = |pool: &[&(String, f64)], k: usize, stratum| {
        let mut idx = rand::seq::index::sample(&mut rng, pool.len(), k).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| item(pool[i], stratum)).collect::<Vec<_>>()
    };
    let mut items = pick(top, want_high, Stratum::High);
    items.extend(pick(bottom, want_low, Stratum::Low));
    Ok(ReviewSample { batch_id, items, short: false })
}

/// `(id, quality score)` for documents carrying a quality annotation.
pub fn quality_scores(docs: &[Document]) -> Vec<(String, f64)> {
    docs.iter()
        .filter_map(|d| Some((d.id.clone(), *d.annotation(crate::lm::QUALITY_STAGE)?.scores.get("quality")?)))
        .collect()
}
