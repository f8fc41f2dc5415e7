//! Four-dimension toxicity scoring: a native sigmoid head or a plugin.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::document::Document;
use crate::lm::ScorerError;
use crate::plugin::{self, HasId, PluginCommand, PluginError, PluginRequest};
use crate::textclf::{self, FeatureConfig, LabeledExample, LinearTextModel, OutputMode, TextClfError, TrainParams};

pub const DIMENSIONS: [&str; 4] = ["pornography", "gambling", "drugs", "violence"];
pub const DEFAULT_TOXICITY_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToxicityScores {
    pub pornography: f64,
    pub gambling: f64,
    pub drugs: f64,
    pub violence: f64,
}

impl ToxicityScores {
    pub fn from_fn(mut f: impl FnMut(&str) -> f64) -> Self {
        ToxicityScores { pornography: f(DIMENSIONS[0]), gambling: f(DIMENSIONS[1]), drugs: f(DIMENSIONS[2]), violence: f(DIMENSIONS[3]) }
    }

    pub fn values(&self) -> [(&'static str, f64); 4] {
        [
            (DIMENSIONS[0], self.pornography),
            (DIMENSIONS[1], self.gambling),
            (DIMENSIONS[2], self.drugs),
            (DIMENSIONS[3], self.violence),
        ]
    }

    pub fn get(&self, dim: &str) -> Option<f64> {
        self.values().into_iter().find(|(d, _)| *d == dim).map(|(_, v)| v)
    }

    pub fn in_range(&self) -> bool {
        self.values().iter().all(|(_, v)| (0.0..=1.0).contains(v))
    }

    /// Dimensions scoring at or above `threshold`, in fixed order.
    pub fn exceeding(&self, threshold: f64) -> Vec<&'static str> {
        self.values().into_iter().filter(|(_, v)| *v >= threshold).map(|(d, _)| d).collect()
    }

    pub fn max(&self) -> f64 {
        self.values().iter().map(|(_, v)| *v).fold(0.0, f64::max)
    }
}

pub trait ToxicityScorer: Send + Sync {
    fn score(&self, docs: &[&Document]) -> Result<Vec<ToxicityScores>, ScorerError>;
}

/// Native multi-label head: a sigmoid linear model over the four dimensions.
pub struct LinearToxicityScorer {
    model: LinearTextModel,
}

impl LinearToxicityScorer {
    pub fn new(model: LinearTextModel) -> Result<Self, TextClfError> {
        if model.mode() != OutputMode::Sigmoid {
            return Err(TextClfError::Format("toxicity head must use sigmoid outputs".into()));
        }
        for d in DIMENSIONS {
            if !model.labels().iter().any(|l| l == d) {
                return Err(TextClfError::UnknownLabel(d.to_owned()));
            }
        }
        Ok(LinearToxicityScorer { model })
    }

    pub fn score_text(&self, text: &str) -> ToxicityScores {
        let p = self.model.predict(text);
        ToxicityScores::from_fn(|d| p.get(d).unwrap_or(0.0))
    }
}

impl ToxicityScorer for LinearToxicityScorer {
    fn score(&self, docs: &[&Document]) -> Result<Vec<ToxicityScores>, ScorerError> {
        Ok(docs.par_iter().map(|d| self.score_text(&d.text)).collect())
    }
}

/// Trains the native head. Examples list any subset of the four dimensions;
/// an empty list marks benign text.
pub fn train_toxicity_head(examples: &[LabeledExample], seed: u64) -> Result<LinearTextModel, TextClfError> {
    let cfg = FeatureConfig { word_ngrams: 1, char_ngrams: Some((3, 5)), hash_buckets: 1 << 18, lowercase: true };
    let params = TrainParams { mode: OutputMode::Sigmoid, epochs: 30, learning_rate: 1.0, seed };
    textclf::train_with_labels(examples, &cfg, DIMENSIONS.iter().map(|d| d.to_string()).collect(), &params)
}

#[derive(Debug, Deserialize)]
struct ToxicityResponse {
    id: String,
    #[serde(flatten)]
    scores: ToxicityScores,
}

impl HasId for ToxicityResponse {
    fn id(&self) -> &str {
        &self.id
    }
}

pub struct PluginToxicityScorer {
    pub command: PluginCommand,
}

impl ToxicityScorer for PluginToxicityScorer {
    fn score(&self, docs: &[&Document]) -> Result<Vec<ToxicityScores>, ScorerError> {
        let requests: Vec<PluginRequest> = docs.iter().map(|d| PluginRequest::from(*d)).collect();
        let responses: Vec<ToxicityResponse> = plugin::call(&self.command, &requests, |r| r.id)?;
        responses
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                if r.scores.in_range() {
                    Ok(r.scores)
                } else {
                    Err(PluginError::BadOutput { line: i + 1, message: "toxicity score outside [0, 1]".into() }.into())
                }
            })
            .collect()
    }
}
