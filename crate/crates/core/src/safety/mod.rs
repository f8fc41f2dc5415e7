//! Multi-level safety filtering: domain blacklist, sensitive-term lexicon,
//! four-dimension toxicity scoring and expert review hand-off.

mod blacklist;
mod lexicon;
mod metrics;
mod sampling;
mod toxicity;

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use blacklist::{host_of, BlacklistDecision, BlacklistError, DomainBlacklist};
pub use lexicon::{
    lexicon_filter, lexicon_stats, word_tokens, LexiconAction, LexiconDecision, LexiconEntry, LexiconError, LexiconReport,
    Priority, SensitiveLexicon, TermHits, TermStats,
};
pub use metrics::{safety_metrics, ClassMetrics, Confusion, Metric, MetricsError, SafetyMetrics};
pub use sampling::{stratified_sample_by_density, SamplingError, StratifiedSample, Stratum};
pub use toxicity::{
    train_toxicity_head, LinearToxicityScorer, PluginToxicityScorer, ToxicityScorer, ToxicityScores,
    DEFAULT_TOXICITY_THRESHOLD, DIMENSIONS,
};

use crate::document::{Document, StageAnnotation, Verdict};
use crate::jsonl::{self, JsonlError};
use crate::stage::{Stage, StageError};

pub const STAGE: &str = "safety";
pub const DEFAULT_DENSITY_THRESHOLD: f64 = 0.01;
pub const DEFAULT_WEIGHT_THRESHOLD: f64 = 0.05;

/// A document flagged for expert review.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lang: Option<String>,
    #[serde(default)]
    pub url: String,
    pub text: String,
    pub weighted_density: f64,
    pub matched_terms: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdjudicationVerdict {
    Keep,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Adjudication {
    pub id: String,
    pub verdict: AdjudicationVerdict,
}

#[derive(Debug, thiserror::Error)]
pub enum AdjudicationError {
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("adjudication file has {0} malformed line(s)")]
    Malformed(usize),
    #[error("document {0:?} adjudicated twice")]
    Duplicate(String),
}

pub fn load_adjudications(path: impl AsRef<Path>) -> Result<HashMap<String, AdjudicationVerdict>, AdjudicationError> {
    let out = jsonl::read_jsonl::<Adjudication>(path)?;
    if !out.errors.is_empty() {
        return Err(AdjudicationError::Malformed(out.errors.len()));
    }
    let mut map = HashMap::new();
    for a in out.records {
        if map.insert(a.id.clone(), a.verdict).is_some() {
            return Err(AdjudicationError::Duplicate(a.id));
        }
    }
    Ok(map)
}

/// The safety stage. Every component is optional; an empty stage keeps all.
pub struct SafetyStage {
    pub blacklist: Option<DomainBlacklist>,
    pub lexicon: Option<SensitiveLexicon>,
    pub density_threshold: f64,
    pub weight_threshold: f64,
    pub toxicity: Option<Box<dyn ToxicityScorer>>,
    pub toxicity_threshold: f64,
    pub adjudications: HashMap<String, AdjudicationVerdict>,
    flagged: Mutex<Vec<ReviewRecord>>,
}

impl Default for SafetyStage {
    fn default() -> Self {
        SafetyStage {
            blacklist: None,
            lexicon: None,
            density_threshold: DEFAULT_DENSITY_THRESHOLD,
            weight_threshold: DEFAULT_WEIGHT_THRESHOLD,
            toxicity: None,
            toxicity_threshold: DEFAULT_TOXICITY_THRESHOLD,
            adjudications: HashMap::new(),
            flagged: Mutex::new(Vec::new()),
        }
    }
}

struct Pending {
    index: usize,
    ann: StageAnnotation,
    reasons: Vec<String>,
    review: Option<ReviewRecord>,
}

impl SafetyStage {
    /// Review records pending adjudication from the last run, in input order.
    pub fn take_flagged(&self) -> Vec<ReviewRecord> {
        std::mem::take(&mut *self.flagged.lock().expect("review lock"))
    }

    fn screen(&self, index: usize, doc: &Document) -> Pending {
        let mut p = Pending { index, ann: StageAnnotation::new(STAGE, Verdict::Keep), reasons: Vec::new(), review: None };
        if let Some(bl) = &self.blacklist {
            match bl.check_url(&doc.source_url) {
                BlacklistDecision::Keep => {}
                BlacklistDecision::NoDomain => p.ann = p.ann.clone().label("no_domain", "true"),
                BlacklistDecision::Drop { matched } => {
                    p.ann = p.ann.clone().label("blacklisted", matched);
                    p.reasons.push("blacklisted_domain".into());
                    return p;
                }
            }
        }
        if let Some(lex) = &self.lexicon {
            let d = lexicon_filter(doc, lex, self.density_threshold, self.weight_threshold);
            if !d.matched.is_empty() {
                p.ann = p.ann.clone().score("weighted_density", d.weighted_density).label("matched_terms", d.matched.join(","));
            }
            match d.action {
                LexiconAction::Keep => {}
                LexiconAction::Drop => {
                    p.reasons.push("sensitive_lexicon".into());
                    return p;
                }
                LexiconAction::Flag => match self.adjudications.get(&doc.id) {
                    Some(AdjudicationVerdict::Reject) => {
                        p.ann = p.ann.clone().label("lexicon_flag", "adjudicated");
                        p.reasons.push("expert_rejected".into());
                        return p;
                    }
                    Some(AdjudicationVerdict::Keep) => p.ann = p.ann.clone().label("lexicon_flag", "adjudicated"),
                    None => {
                        p.ann = p.ann.clone().label("lexicon_flag", "review");
                        p.review = Some(ReviewRecord {
                            id: doc.id.clone(),
                            lang: doc.language.as_ref().map(|l| l.as_str().to_owned()),
                            url: doc.source_url.clone(),
                            text: doc.text.clone(),
                            weighted_density: d.weighted_density,
                            matched_terms: d.matched,
                        });
                    }
                },
            }
        }
        p
    }

    /// Screens live documents. Nothing is modified if the toxicity scorer fails.
    pub fn filter(&self, docs: &mut [Document]) -> Result<(), StageError> {
        let mut pending: Vec<Pending> = docs
            .par_iter()
            .enumerate()
            .filter(|(_, d)| !d.is_rejected())
            .map(|(i, d)| self.screen(i, d))
            .collect();
        if let Some(scorer) = &self.toxicity {
            let targets: Vec<usize> = (0..pending.len()).filter(|&k| pending[k].reasons.is_empty()).collect();
            let refs: Vec<&Document> = targets.iter().map(|&k| &docs[pending[k].index]).collect();
            let scores = scorer.score(&refs).map_err(|e| StageError::new(STAGE, e))?;
            for (k, s) in targets.into_iter().zip(scores) {
                let p = &mut pending[k];
                for (dim, v) in s.values() {
                    p.ann.scores.insert(format!("toxicity_{dim}"), v);
                }
                let toxic = s.exceeding(self.toxicity_threshold);
                if !toxic.is_empty() {
                    // A toxic document no longer needs lexicon review.
                    p.review = None;
                    p.reasons.extend(toxic.into_iter().map(|d| format!("toxic:{d}")));
                }
            }
        }
        let mut reviews = Vec::new();
        for p in pending {
            let doc = &mut docs[p.index];
            if p.reasons.is_empty() {
                doc.annotate(p.ann);
                reviews.extend(p.review);
            } else {
                let mut ann = p.ann;
                ann.reasons = p.reasons;
                doc.reject(ann);
            }
        }
        *self.flagged.lock().expect("review lock") = reviews;
        Ok(())
    }
}

impl Stage for SafetyStage {
    fn name(&self) -> &str {
        STAGE
    }

    fn run(&self, docs: &mut [Document]) -> Result<(), StageError> {
        self.filter(docs)
    }
}
