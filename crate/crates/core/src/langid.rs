//! Language identification and target-language filtering.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::document::{Document, LanguageTag, StageAnnotation, Verdict};
use crate::stage::{par_each, Stage, StageError};
use crate::textclf::{self, FeatureConfig, LabeledExample, LinearTextModel, OutputMode, TextClfError, TrainParams};

pub const STAGE: &str = "langid";
pub const DEFAULT_MIN_CHARS: usize = 20;
pub const DEFAULT_MIN_CONFIDENCE: f64 = 0.5;

/// Languages with bundled seed sentences. The first five are the default
/// targets; the rest give the model something to call "other".
pub const SEED_LANGUAGES: [&str; 8] = ["ar", "ko", "ru", "th", "vi", "en", "fr", "de"];
pub const TARGET_LANGUAGES: [&str; 5] = ["ar", "ko", "ru", "th", "vi"];

#[derive(Debug, thiserror::Error)]
pub enum LangIdError {
    #[error("text has {chars} characters, need at least {min}")]
    InsufficientText { chars: usize, min: usize },
    #[error("model label {0:?} is not a language code")]
    BadLabel(String),
    #[error(transparent)]
    Model(#[from] TextClfError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LanguageVerdict {
    pub language: LanguageTag,
    pub confidence: f64,
}

/// Bundled one-sentence-per-line seed text for `lang`.
pub fn seed_sentences(lang: &str) -> Option<Vec<&'static str>> {
    let raw = match lang {
        "ar" => include_str!("../data/seed/ar.txt"),
        "ko" => include_str!("../data/seed/ko.txt"),
        "ru" => include_str!("../data/seed/ru.txt"),
        "th" => include_str!("../data/seed/th.txt"),
        "vi" => include_str!("../data/seed/vi.txt"),
        "en" => include_str!("../data/seed/en.txt"),
        "fr" => include_str!("../data/seed/fr.txt"),
        "de" => include_str!("../data/seed/de.txt"),
        _ => return None,
    };
    Some(raw.lines().map(str::trim).filter(|l| !l.is_empty()).collect())
}

/// Deterministic per-language train/holdout split of the seed corpora.
pub fn seed_split(languages: &[&str], holdout_fraction: f64, seed: u64) -> (Vec<LabeledExample>, Vec<LabeledExample>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut holdout = Vec::new();
    for &lang in languages {
        let mut sentences = seed_sentences(lang).unwrap_or_default();
        sentences.shuffle(&mut rng);
        let n_hold = (sentences.len() as f64 * holdout_fraction).round() as usize;
        for (i, s) in sentences.into_iter().enumerate() {
            let ex = LabeledExample::new(s, lang);
            if i < n_hold {
                holdout.push(ex);
            } else {
                train.push(ex);
            }
        }
    }
    (train, holdout)
}

pub fn default_feature_config() -> FeatureConfig {
    FeatureConfig { word_ngrams: 1, char_ngrams: Some((1, 3)), hash_buckets: 1 << 18, lowercase: true }
}

pub fn train_model(examples: &[LabeledExample], seed: u64) -> Result<LinearTextModel, TextClfError> {
    let params = TrainParams { mode: OutputMode::Softmax, epochs: 30, learning_rate: 1.0, seed };
    textclf::train(examples, &default_feature_config(), &params)
}

fn char_count_collapsed(text: &str) -> usize {
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.is_empty() {
        return 0;
    }
    words.iter().map(|w| w.chars().count()).sum::<usize>() + words.len() - 1
}

pub fn detect_language(model: &LinearTextModel, text: &str, min_chars: usize) -> Result<LanguageVerdict, LangIdError> {
    let chars = char_count_collapsed(text);
    if chars < min_chars {
        return Err(LangIdError::InsufficientText { chars, min: min_chars });
    }
    let pred = model.predict(text);
    let (label, confidence) = pred.argmax();
    let language = LanguageTag::new(label).map_err(|_| LangIdError::BadLabel(label.to_owned()))?;
    Ok(LanguageVerdict { language, confidence })
}

/// Keeps documents whose detected language is a target with enough confidence.
pub struct LanguageFilter {
    pub model: LinearTextModel,
    pub targets: Vec<LanguageTag>,
    pub min_confidence: f64,
    pub min_chars: usize,
}

impl LanguageFilter {
    pub fn new(model: LinearTextModel, targets: Vec<LanguageTag>) -> Result<Self, LangIdError> {
        if let Some(bad) = model.labels().iter().find(|l| LanguageTag::new(l).is_err()) {
            return Err(LangIdError::BadLabel(bad.clone()));
        }
        Ok(LanguageFilter { model, targets, min_confidence: DEFAULT_MIN_CONFIDENCE, min_chars: DEFAULT_MIN_CHARS })
    }

    pub fn apply(&self, doc: &mut Document) {
        let verdict = match detect_language(&self.model, &doc.text, self.min_chars) {
            Ok(v) => v,
            Err(_) => {
                doc.reject(StageAnnotation::new(STAGE, Verdict::Drop).reason("too_short_for_langid"));
                return;
            }
        };
        let ann = StageAnnotation::new(STAGE, Verdict::Keep)
            .score("confidence", verdict.confidence)
            .label("language", verdict.language.as_str());
        if !self.targets.contains(&verdict.language) {
            doc.reject(ann.reason("non_target_language"));
        } else if verdict.confidence < self.min_confidence {
            doc.reject(ann.reason("low_confidence"));
        } else {
            doc.language = Some(verdict.language);
            doc.annotate(ann);
        }
    }
}

impl Stage for LanguageFilter {
    fn name(&self) -> &str {
        STAGE
    }

    fn run(&self, docs: &mut [Document]) -> Result<(), StageError> {
        par_each(docs, |d| self.apply(d));
        Ok(())
    }
}

/// Convenience wrapper over [`LanguageFilter`] for a whole batch.
pub fn filter_by_language(
    docs: Vec<Document>,
    model: &LinearTextModel,
    targets: &[LanguageTag],
    min_confidence: f64,
) -> Result<crate::stage::Partition, LangIdError> {
    let mut filter = LanguageFilter::new(model.clone(), targets.to_vec())?;
    filter.min_confidence = min_confidence;
    let mut docs = docs;
    par_each(&mut docs, |d| filter.apply(d));
    Ok(crate::stage::Partition::of(docs))
}
