//! First- and second-stage quality screening: n-gram perplexity filtering and
//! a pluggable document quality scorer.

mod calibrate;
mod ngram;

use std::collections::BTreeMap;

use rayon::prelude::*;

pub use calibrate::{
    percentile, CalibrationError, CalibrationMethod, PerplexityScore, PplCalibration, HIGH_PERCENTILE, LOW_PERCENTILE,
    MIN_CALIBRATION_SAMPLES,
};
pub use ngram::{LmError, NgramLanguageModel, Tokenizer, BOS, DEFAULT_DISCOUNT, DEFAULT_ORDER, UNK};

use crate::document::{Document, StageAnnotation, Verdict};
use crate::plugin::{self, PluginCommand, PluginError};
use crate::stage::{par_each, Stage, StageError};
use crate::textclf::{self, FeatureConfig, LabeledExample, LinearTextModel, OutputMode, TextClfError, TrainParams};

pub const PPL_STAGE: &str = "ppl";
pub const QUALITY_STAGE: &str = "quality";
pub const DEFAULT_PPL_THRESHOLD: f64 = 0.2;
pub const DEFAULT_MIN_QUALITY: f64 = 0.5;
pub const HIGH_LABEL: &str = "high";
pub const LOW_LABEL: &str = "low";

#[derive(Debug, thiserror::Error)]
pub enum PplFilterError {
    #[error("no language model for language {0:?}")]
    MissingModel(String),
    #[error("threshold {0} outside [0, 1]")]
    BadThreshold(f64),
}

/// A language's model together with its calibration.
#[derive(Debug, Clone)]
pub struct LanguageLm {
    pub model: NgramLanguageModel,
    pub calibration: PplCalibration,
}

impl LanguageLm {
    pub fn score(&self, text: &str) -> Result<PerplexityScore, LmError> {
        Ok(self.calibration.score(self.model.perplexity(text)?))
    }
}

/// Fits a calibration from the perplexities `model` assigns to `texts`.
/// Texts without tokens are skipped.
pub fn calibrate_on<'a>(
    model: &NgramLanguageModel,
    texts: impl IntoIterator<Item = &'a str>,
) -> Result<PplCalibration, CalibrationError> {
    let texts: Vec<&str> = texts.into_iter().collect();
    let scores: Vec<f64> = texts.par_iter().filter_map(|t| model.perplexity(t).ok()).collect();
    PplCalibration::fit(&scores)
}

/// `true` keeps. "Not exceeding" is inclusive.
pub fn keep_normalized(normalized: f64, threshold: f64) -> bool {
    normalized <= threshold
}

pub struct PplFilter {
    pub models: BTreeMap<String, LanguageLm>,
    pub threshold: f64,
}

impl PplFilter {
    pub fn new(models: BTreeMap<String, LanguageLm>, threshold: f64) -> Result<Self, PplFilterError> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(PplFilterError::BadThreshold(threshold));
        }
        Ok(PplFilter { models, threshold })
    }

    fn model_for(&self, doc: &Document) -> Result<&LanguageLm, PplFilterError> {
        let lang = doc.language.as_ref().map(|l| l.as_str()).unwrap_or("");
        self.models.get(lang).ok_or_else(|| PplFilterError::MissingModel(lang.to_owned()))
    }

    fn apply(&self, doc: &mut Document) {
        let lm = self.model_for(doc).expect("models checked before apply");
        let ann = StageAnnotation::new(PPL_STAGE, Verdict::Keep);
        match lm.score(&doc.text) {
            Err(_) => doc.reject(ann.reason("no_tokens")),
            Ok(s) => {
                let ann = ann.score("raw_ppl", s.raw_ppl).score("normalized", s.normalized);
                if keep_normalized(s.normalized, self.threshold) {
                    doc.annotate(ann);
                } else {
                    doc.reject(ann.reason("high_ppl"));
                }
            }
        }
    }

    /// Filters live documents. Fails before touching any document if one has
    /// no model for its language.
    pub fn filter(&self, docs: &mut [Document]) -> Result<(), PplFilterError> {
        for d in docs.iter().filter(|d| !d.is_rejected()) {
            self.model_for(d)?;
        }
        par_each(docs, |d| self.apply(d));
        Ok(())
    }
}

impl Stage for PplFilter {
    fn name(&self) -> &str {
        PPL_STAGE
    }

    fn run(&self, docs: &mut [Document]) -> Result<(), StageError> {
        self.filter(docs).map_err(|e| StageError::new(PPL_STAGE, e))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScorerError {
    #[error(transparent)]
    Plugin(#[from] PluginError),
    #[error(transparent)]
    Model(#[from] TextClfError),
}

/// Scores documents in [0, 1], higher meaning better quality.
pub trait QualityScorer: Send + Sync {
    fn score(&self, docs: &[&Document]) -> Result<Vec<f64>, ScorerError>;
}

/// Probability of the `high` label under a linear text classifier.
pub struct LinearQualityScorer {
    model: LinearTextModel,
}

impl LinearQualityScorer {
    pub fn new(model: LinearTextModel) -> Result<Self, TextClfError> {
        if !model.labels().iter().any(|l| l == HIGH_LABEL) {
            return Err(TextClfError::UnknownLabel(HIGH_LABEL.to_owned()));
        }
        Ok(LinearQualityScorer { model })
    }

    pub fn model(&self) -> &LinearTextModel {
        &self.model
    }
}

impl QualityScorer for LinearQualityScorer {
    fn score(&self, docs: &[&Document]) -> Result<Vec<f64>, ScorerError> {
        Ok(docs.par_iter().map(|d| self.model.predict(&d.text).get(HIGH_LABEL).unwrap_or(0.0)).collect())
    }
}

/// Trains the linear quality head from high- and low-quality examples.
pub fn train_quality_head(high: &[&str], low: &[&str], seed: u64) -> Result<LinearTextModel, TextClfError> {
    let data: Vec<LabeledExample> = high
        .iter()
        .map(|t| LabeledExample::new(*t, HIGH_LABEL))
        .chain(low.iter().map(|t| LabeledExample::new(*t, LOW_LABEL)))
        .collect();
    let cfg = FeatureConfig { word_ngrams: 2, char_ngrams: Some((2, 4)), hash_buckets: 1 << 18, lowercase: true };
    let params = TrainParams { mode: OutputMode::Softmax, epochs: 15, learning_rate: 0.5, seed };
    textclf::train_with_labels(&data, &cfg, vec![HIGH_LABEL.to_owned(), LOW_LABEL.to_owned()], &params)
}

/// External scorer reached over the plugin protocol.
pub struct PluginQualityScorer {
    pub command: PluginCommand,
}

impl QualityScorer for PluginQualityScorer {
    fn score(&self, docs: &[&Document]) -> Result<Vec<f64>, ScorerError> {
        Ok(plugin::score_documents(&self.command, docs)?)
    }
}

/// Drops documents whose quality score falls below `min_score`.
pub struct QualityStage {
    pub scorer: Box<dyn QualityScorer>,
    pub min_score: f64,
}

impl QualityStage {
    pub fn filter(&self, docs: &mut [Document]) -> Result<(), ScorerError> {
        let live: Vec<usize> = (0..docs.len()).filter(|&i| !docs[i].is_rejected()).collect();
        let scores = {
            let refs: Vec<&Document> = live.iter().map(|&i| &docs[i]).collect();
            self.scorer.score(&refs)?
        };
        for (i, s) in live.into_iter().zip(scores) {
            let ann = StageAnnotation::new(QUALITY_STAGE, Verdict::Keep).score("quality", s);
            if s >= self.min_score {
                docs[i].annotate(ann);
            } else {
                docs[i].reject(ann.reason("low_quality_score"));
            }
        }
        Ok(())
    }
}

impl Stage for QualityStage {
    fn name(&self) -> &str {
        QUALITY_STAGE
    }

    fn run(&self, docs: &mut [Document]) -> Result<(), StageError> {
        self.filter(docs).map_err(|e| StageError::new(QUALITY_STAGE, e))
    }
}
