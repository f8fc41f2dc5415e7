//! Pipeline configuration: a TOML file naming the stage order and each
//! stage's parameters. Relative paths resolve against the file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dedup::{DedupParams, DedupScope};
use crate::document::LanguageTag;

/// Every stage in dependency order.
pub const STAGE_ORDER: [&str; 8] = ["extract", "langid", "clean", "ppl", "quality", "dedup", "safety", "theme"];

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unknown stage {0:?}")]
    UnknownStage(String),
    #[error("invalid stage order: {later} must come before {earlier}")]
    StageOrder { earlier: String, later: String },
    #[error("stage {0} listed twice")]
    DuplicateStage(String),
    #[error("{name} = {value} is outside [{lo}, {hi}]")]
    OutOfRange { name: &'static str, value: f64, lo: f64, hi: f64 },
    #[error("invalid value for {name}: {message}")]
    Invalid { name: &'static str, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LangIdConfig {
    /// Trained from the bundled seed corpora when absent.
    pub model: Option<PathBuf>,
    pub min_confidence: f64,
    pub min_chars: usize,
}

impl Default for LangIdConfig {
    fn default() -> Self {
        LangIdConfig { model: None, min_confidence: crate::langid::DEFAULT_MIN_CONFIDENCE, min_chars: crate::langid::DEFAULT_MIN_CHARS }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CleanConfig {
    /// Bundled rule pack when absent.
    pub rules: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LanguageModelPaths {
    pub model: PathBuf,
    pub calibration: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PplConfig {
    pub threshold: f64,
    pub models: BTreeMap<String, LanguageModelPaths>,
}

impl Default for PplConfig {
    fn default() -> Self {
        PplConfig { threshold: crate::lm::DEFAULT_PPL_THRESHOLD, models: BTreeMap::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QualityConfig {
    pub model: Option<PathBuf>,
    /// Program and arguments of an external scorer.
    pub plugin: Option<Vec<String>>,
    pub min_score: f64,
}

impl Default for QualityConfig {
    fn default() -> Self {
        QualityConfig { model: None, plugin: None, min_score: crate::lm::DEFAULT_MIN_QUALITY }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DedupConfig {
    pub shingle_width: usize,
    pub perms: usize,
    pub bands: usize,
    pub rows: usize,
    pub verify: f64,
    pub scope: DedupScope,
}

impl Default for DedupConfig {
    fn default() -> Self {
        let p = DedupParams::default();
        DedupConfig {
            shingle_width: p.shingle_width,
            perms: p.num_perm,
            bands: p.bands,
            rows: p.rows,
            verify: p.verify_threshold,
            scope: p.scope,
        }
    }
}

impl DedupConfig {
    pub fn params(&self, seed: u64) -> DedupParams {
        DedupParams {
            shingle_width: self.shingle_width,
            num_perm: self.perms,
            bands: self.bands,
            rows: self.rows,
            verify_threshold: self.verify,
            seed,
            scope: self.scope,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SafetyConfig {
    pub blacklist: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub density_threshold: f64,
    pub weight_threshold: f64,
    pub toxicity_model: Option<PathBuf>,
    pub toxicity_plugin: Option<Vec<String>>,
    pub toxicity_threshold: f64,
    pub adjudications: Option<PathBuf>,
}

impl Default for SafetyConfig {
    fn default() -> Self {
        SafetyConfig {
            blacklist: None,
            lexicon: None,
            density_threshold: crate::safety::DEFAULT_DENSITY_THRESHOLD,
            weight_threshold: crate::safety::DEFAULT_WEIGHT_THRESHOLD,
            toxicity_model: None,
            toxicity_plugin: None,
            toxicity_threshold: crate::safety::DEFAULT_TOXICITY_THRESHOLD,
            adjudications: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThemeConfig {
    pub model: Option<PathBuf>,
    /// Bundled taxonomy when absent.
    pub taxonomy: Option<PathBuf>,
    pub general_floor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub review_batch: usize,
    pub review_ratio: f64,
    pub eval_per_language: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig { review_batch: 100, review_ratio: crate::evalharness::DEFAULT_REVIEW_RATIO, eval_per_language: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub target_languages: Vec<LanguageTag>,
    pub stages: Vec<String>,
    pub seed: u64,
    /// Worker threads; 0 picks one per core.
    pub workers: usize,
    pub langid: LangIdConfig,
    pub clean: CleanConfig,
    pub ppl: PplConfig,
    pub quality: QualityConfig,
    pub dedup: DedupConfig,
    pub safety: SafetyConfig,
    pub theme: ThemeConfig,
    pub sampling: SamplingConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            target_languages: crate::langid::TARGET_LANGUAGES.iter().map(|c| LanguageTag::new(c).unwrap()).collect(),
            stages: STAGE_ORDER.iter().map(|s| s.to_string()).collect(),
            seed: 0,
            workers: 0,
            langid: LangIdConfig::default(),
            clean: CleanConfig::default(),
            ppl: PplConfig::default(),
            quality: QualityConfig::default(),
            dedup: DedupConfig::default(),
            safety: SafetyConfig::default(),
            theme: ThemeConfig::default(),
            sampling: SamplingConfig::default(),
        }
    }
}

fn check_range(name: &'static str, value: f64, lo: f64, hi: f64) -> Result<(), ConfigError> {
    if (lo..=hi).contains(&value) {
        Ok(())
    } else {
        Err(ConfigError::OutOfRange { name, value, lo, hi })
    }
}

/// Checks that `stages` is a subsequence of [`STAGE_ORDER`].
pub fn validate_stage_order(stages: &[String]) -> Result<(), ConfigError> {
    let mut ranks: Vec<(usize, &str)> = Vec::with_capacity(stages.len());
    for s in stages {
        let rank = STAGE_ORDER.iter().position(|x| x == s).ok_or_else(|| ConfigError::UnknownStage(s.clone()))?;
        if ranks.iter().any(|(r, _)| *r == rank) {
            return Err(ConfigError::DuplicateStage(s.clone()));
        }
        if let Some((_, prev)) = ranks.iter().find(|(r, _)| *r > rank) {
            return Err(ConfigError::StageOrder { earlier: prev.to_string(), later: s.clone() });
        }
        ranks.push((rank, s));
    }
    Ok(())
}

impl PipelineConfig {
    pub fn parse(src: &str) -> Result<Self, ConfigError> {
        let cfg: PipelineConfig = toml::from_str(src)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn has_stage(&self, stage: &str) -> bool {
        self.stages.iter().any(|s| s == stage)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        validate_stage_order(&self.stages)?;
        check_range("ppl.threshold", self.ppl.threshold, 0.0, 1.0)?;
        check_range("quality.min_score", self.quality.min_score, 0.0, 1.0)?;
        check_range("langid.min_confidence", self.langid.min_confidence, 0.0, 1.0)?;
        check_range("safety.toxicity_threshold", self.safety.toxicity_threshold, 0.0, 1.0)?;
        check_range("safety.density_threshold", self.safety.density_threshold, 0.0, 1.0)?;
        check_range("sampling.review_ratio", self.sampling.review_ratio, 0.0, 1.0)?;
        if let Some(f) = self.theme.general_floor {
            check_range("theme.general_floor", f, 0.0, 1.0)?;
        }
        self.dedup.params(self.seed).validate().map_err(|e| ConfigError::Invalid { name: "dedup", message: e.to_string() })?;
        if self.quality.model.is_some() && self.quality.plugin.is_some() {
            return Err(ConfigError::Invalid { name: "quality", message: "set either model or plugin, not both".into() });
        }
        if self.safety.toxicity_model.is_some() && self.safety.toxicity_plugin.is_some() {
            return Err(ConfigError::Invalid { name: "safety", message: "set either toxicity_model or toxicity_plugin".into() });
        }
        for (name, cmd) in [("quality.plugin", &self.quality.plugin), ("safety.toxicity_plugin", &self.safety.toxicity_plugin)] {
            if cmd.as_ref().is_some_and(|c| c.is_empty()) {
                return Err(ConfigError::Invalid { name, message: "empty command".into() });
            }
        }
        for lang in self.ppl.models.keys() {
            LanguageTag::new(lang).map_err(|e| ConfigError::Invalid { name: "ppl.models", message: e.to_string() })?;
        }
        Ok(())
    }

    /// Makes every relative path absolute against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let fix_opt = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                fix(p);
            }
        };
        fix_opt(&mut self.langid.model);
        fix_opt(&mut self.clean.rules);
        for m in self.ppl.models.values_mut() {
            fix(&mut m.model);
            fix(&mut m.calibration);
        }
        fix_opt(&mut self.quality.model);
        fix_opt(&mut self.safety.blacklist);
        fix_opt(&mut self.safety.lexicon);
        fix_opt(&mut self.safety.toxicity_model);
        fix_opt(&mut self.safety.adjudications);
        fix_opt(&mut self.theme.model);
        fix_opt(&mut self.theme.taxonomy);
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<PipelineConfig, ConfigError> {
    let path = path.as_ref();
    let src = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
    let mut cfg = PipelineConfig::parse(&src)?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    Ok(cfg)
}
