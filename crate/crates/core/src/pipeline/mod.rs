//! End-to-end orchestration: builds every configured stage up front, runs
//! them in order over the surviving documents and writes outputs, rejection
//! sidecars and retention reports.

mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use report::{chain_reports, percent_1dp, retention_report, retention_report_json, StageReport};

use crate::clean::{self, CleanStage, RuleSet};
use crate::config::PipelineConfig;
use crate::dedup::{DedupStage, DuplicateCluster};
use crate::document::{Document, RawDocument};
use crate::jsonl::{self, JsonlError};
use crate::langid::{self, LanguageFilter};
use crate::lm::{LanguageLm, LinearQualityScorer, NgramLanguageModel, PluginQualityScorer, PplCalibration, PplFilter, QualityScorer, QualityStage};
use crate::plugin::PluginCommand;
use crate::safety::{self, DomainBlacklist, LinearToxicityScorer, PluginToxicityScorer, ReviewRecord, SafetyStage, SensitiveLexicon, ToxicityScorer};
use crate::stage::{Partition, Stage, StageError};
use crate::textclf::LinearTextModel;
use crate::theme::{ThemeClassifier, ThemeTaxonomy};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("stage {stage} failed to initialize: {message}")]
    Init { stage: String, message: String },
    #[error("cannot read input: {0}")]
    Input(#[source] JsonlError),
    #[error(transparent)]
    Stage(#[from] StageError),
    #[error("cannot write {path}: {message}")]
    Output { path: PathBuf, message: String },
}

impl PipelineError {
    /// Configuration and initialization failures, as opposed to failures
    /// while processing documents.
    pub fn is_init(&self) -> bool {
        matches!(self, PipelineError::Init { .. } | PipelineError::Input(_))
    }
}

fn init_err(stage: &str, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Init { stage: stage.to_owned(), message: e.to_string() }
}

fn out_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Output { path: path.to_owned(), message: e.to_string() }
}

fn command(parts: &[String]) -> PluginCommand {
    PluginCommand::new(parts[0].clone(), parts[1..].iter().cloned())
}

/// A stage ready to run. Extraction is special because it consumes raw pages.
pub enum BuiltStage {
    Extract,
    Dedup(DedupStage),
    Safety(SafetyStage),
    Other(Box<dyn Stage + Send>),
}

impl BuiltStage {
    pub fn name(&self) -> &str {
        match self {
            BuiltStage::Extract => crate::extract::STAGE,
            BuiltStage::Dedup(s) => s.name(),
            BuiltStage::Safety(s) => s.name(),
            BuiltStage::Other(s) => s.name(),
        }
    }

    /// Runs a non-extraction stage over live documents.
    pub fn run(&self, docs: &mut [Document]) -> Result<(), StageError> {
        match self {
            BuiltStage::Extract => Err(StageError::new(crate::extract::STAGE, "extraction consumes raw pages")),
            BuiltStage::Dedup(s) => s.run(docs),
            BuiltStage::Safety(s) => s.run(docs),
            BuiltStage::Other(s) => s.run(docs),
        }
    }
}

/// Loads models and resources for one stage.
pub fn build_stage(name: &str, cfg: &PipelineConfig) -> Result<BuiltStage, PipelineError> {
    let stage = match name {
        "extract" => BuiltStage::Extract,
        "langid" => {
            let c = &cfg.langid;
            let model = match &c.model {
                Some(p) => LinearTextModel::load(p).map_err(|e| init_err(name, e))?,
                None => {
                    let (train, _) = langid::seed_split(&langid::SEED_LANGUAGES, 0.0, cfg.seed);
                    langid::train_model(&train, cfg.seed).map_err(|e| init_err(name, e))?
                }
            };
            let mut f = LanguageFilter::new(model, cfg.target_languages.clone()).map_err(|e| init_err(name, e))?;
            f.min_confidence = c.min_confidence;
            f.min_chars = c.min_chars;
            BuiltStage::Other(Box::new(f))
        }
        "clean" => {
            let rules = match &cfg.clean.rules {
                Some(p) => clean::load_ruleset(p).map_err(|e| init_err(name, e))?,
                None => RuleSet::bundled(),
            };
            BuiltStage::Other(Box::new(CleanStage { rules }))
        }
        "ppl" => {
            let mut models = BTreeMap::new();
            for (lang, paths) in &cfg.ppl.models {
                let model = NgramLanguageModel::load(&paths.model).map_err(|e| init_err(name, format!("{lang}: {e}")))?;
                let calibration = PplCalibration::load(&paths.calibration).map_err(|e| init_err(name, format!("{lang}: {e}")))?;
                models.insert(lang.clone(), LanguageLm { model, calibration });
            }
            for lang in &cfg.target_languages {
                if !models.contains_key(lang.as_str()) {
                    return Err(init_err(name, format!("no language model configured for {lang}")));
                }
            }
            BuiltStage::Other(Box::new(PplFilter::new(models, cfg.ppl.threshold).map_err(|e| init_err(name, e))?))
        }
        "quality" => {
            let c = &cfg.quality;
            let scorer: Box<dyn QualityScorer> = match (&c.model, &c.plugin) {
                (Some(p), _) => {
                    let model = LinearTextModel::load(p).map_err(|e| init_err(name, e))?;
                    Box::new(LinearQualityScorer::new(model).map_err(|e| init_err(name, e))?)
                }
                (None, Some(cmd)) => Box::new(PluginQualityScorer { command: command(cmd) }),
                (None, None) => return Err(init_err(name, "quality needs a model or a plugin")),
            };
            BuiltStage::Other(Box::new(QualityStage { scorer, min_score: c.min_score }))
        }
        "dedup" => BuiltStage::Dedup(DedupStage::new(cfg.dedup.params(cfg.seed)).map_err(|e| init_err(name, e))?),
        "safety" => {
            let c = &cfg.safety;
            let toxicity: Option<Box<dyn ToxicityScorer>> = match (&c.toxicity_model, &c.toxicity_plugin) {
                (Some(p), _) => {
                    let model = LinearTextModel::load(p).map_err(|e| init_err(name, e))?;
                    Some(Box::new(LinearToxicityScorer::new(model).map_err(|e| init_err(name, e))?))
                }
                (None, Some(cmd)) => Some(Box::new(PluginToxicityScorer { command: command(cmd) })),
                (None, None) => None,
            };
            let mut s = SafetyStage::default();
            s.blacklist = c.blacklist.as_ref().map(DomainBlacklist::load).transpose().map_err(|e| init_err(name, e))?;
            s.lexicon = c.lexicon.as_ref().map(SensitiveLexicon::load).transpose().map_err(|e| init_err(name, e))?;
            s.density_threshold = c.density_threshold;
            s.weight_threshold = c.weight_threshold;
            s.toxicity = toxicity;
            s.toxicity_threshold = c.toxicity_threshold;
            if let Some(p) = &c.adjudications {
                s.adjudications = safety::load_adjudications(p).map_err(|e| init_err(name, e))?;
            }
            BuiltStage::Safety(s)
        }
        "theme" => {
            let taxonomy = match &cfg.theme.taxonomy {
                Some(p) => ThemeTaxonomy::load(p).map_err(|e| init_err(name, e))?,
                None => ThemeTaxonomy::bundled(),
            };
            let path = cfg.theme.model.as_ref().ok_or_else(|| init_err(name, "theme needs a model"))?;
            let model = LinearTextModel::load(path).map_err(|e| init_err(name, e))?;
            let mut c = ThemeClassifier::new(model, taxonomy).map_err(|e| init_err(name, e))?;
            c.general_floor = cfg.theme.general_floor;
            BuiltStage::Other(Box::new(c))
        }
        other => return Err(init_err(other, "unknown stage")),
    };
    Ok(stage)
}

/// Runs `stage` over the live documents and splits the result.
fn step(stage: &BuiltStage, live: Vec<Document>, original: u64) -> Result<(Partition, StageReport), PipelineError> {
    let mut docs = live;
    let input = docs.len() as u64;
    stage.run(&mut docs)?;
    let part = Partition::of(docs);
    let report = stage_report(stage.name(), input, &part.kept, &part.rejected, original)?;
    Ok((part, report))
}

/// Builds and checks the report for one stage's split.
fn stage_report(stage: &str, input: u64, kept: &[Document], rejected: &[Document], original: u64) -> Result<StageReport, PipelineError> {
    if kept.len() as u64 + rejected.len() as u64 != input {
        return Err(StageError::new(stage, format!("{input} documents in, {} out", kept.len() + rejected.len())).into());
    }
    let mut r = StageReport::new(stage, input, kept.len() as u64, original);
    for d in rejected {
        let rec = d.rejected.as_ref().expect("partitioned as rejected");
        if rec.stage != stage {
            return Err(StageError::new(stage, format!("document {} rejected under stage {}", d.id, rec.stage)).into());
        }
        for reason in &rec.reasons {
            *r.reasons.entry(reason.clone()).or_insert(0) += 1;
        }
    }
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutputs {
    pub output: PathBuf,
    pub rejected: BTreeMap<String, PathBuf>,
    pub clusters: Option<PathBuf>,
    pub review: Option<PathBuf>,
    pub report_text: PathBuf,
    pub report_json: PathBuf,
    pub run: PathBuf,
}

impl RunOutputs {
    pub fn in_dir(dir: &Path) -> Self {
        RunOutputs {
            output: dir.join("output.jsonl"),
            rejected: BTreeMap::new(),
            clusters: None,
            review: None,
            report_text: dir.join("report.txt"),
            report_json: dir.join("report.json"),
            run: dir.join("run.json"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRun {
    pub config: PipelineConfig,
    pub input: PathBuf,
    pub malformed_lines: usize,
    pub reports: Vec<StageReport>,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub outputs: RunOutputs,
}

/// In-memory result of running the stages, before anything is written.
pub struct StagedRun {
    pub kept: Vec<Document>,
    pub rejected: Vec<(String, Vec<Document>)>,
    pub reports: Vec<StageReport>,
    pub clusters: Option<Vec<DuplicateCluster>>,
    pub review: Option<Vec<ReviewRecord>>,
}

/// Input records: raw pages when extraction is configured, documents otherwise.
pub enum PipelineInput {
    Raw(Vec<RawDocument>),
    Documents(Vec<Document>),
}

impl PipelineInput {
    pub fn read(path: &Path, raw: bool) -> Result<(Self, usize), PipelineError> {
        if raw {
            let out = jsonl::read_jsonl::<RawDocument>(path).map_err(PipelineError::Input)?;
            Ok((PipelineInput::Raw(out.records), out.errors.len()))
        } else {
            let out = jsonl::read_jsonl::<Document>(path).map_err(PipelineError::Input)?;
            Ok((PipelineInput::Documents(out.records), out.errors.len()))
        }
    }

    pub fn len(&self) -> usize {
        match self {
            PipelineInput::Raw(r) => r.len(),
            PipelineInput::Documents(d) => d.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Runs already-built stages in order. Documents rejected by a stage never
/// reach a later one.
pub fn run_stages(stages: &[BuiltStage], input: PipelineInput) -> Result<StagedRun, PipelineError> {
    let original = input.len() as u64;
    let mut reports = Vec::with_capacity(stages.len());
    let mut rejected = Vec::with_capacity(stages.len());
    let mut clusters = None;
    let mut review = None;
    let mut live = match input {
        PipelineInput::Documents(docs) => {
            if let Some(BuiltStage::Extract) = stages.first() {
                return Err(init_err("extract", "extraction needs raw page input"));
            }
            docs
        }
        PipelineInput::Raw(raw) => {
            if !matches!(stages.first(), Some(BuiltStage::Extract)) {
                return Err(init_err("extract", "raw page input needs the extract stage first"));
            }
            let docs: Vec<Document> = raw.par_iter().map(crate::extract::standardize).collect();
            let part = Partition::of(docs);
            reports.push(stage_report(crate::extract::STAGE, original, &part.kept, &part.rejected, original)?);
            rejected.push((crate::extract::STAGE.to_owned(), part.rejected));
            part.kept
        }
    };
    for stage in stages.iter().filter(|s| !matches!(s, BuiltStage::Extract)) {
        let (part, report) = step(stage, live, original)?;
        match stage {
            BuiltStage::Dedup(d) => clusters = Some(d.take_clusters()),
            BuiltStage::Safety(s) => review = Some(s.take_flagged()),
            _ => {}
        }
        reports.push(report);
        rejected.push((stage.name().to_owned(), part.rejected));
        live = part.kept;
    }
    Ok(StagedRun { kept: live, rejected, reports, clusters, review })
}

/// Loads every configured stage; fails before any document is touched.
pub fn build_stages(cfg: &PipelineConfig) -> Result<Vec<BuiltStage>, PipelineError> {
    cfg.validate().map_err(|e| init_err("config", e))?;
    cfg.stages.iter().map(|s| build_stage(s, cfg)).collect()
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), PipelineError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| out_err(path, e))?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| out_err(path, e))
}

fn write_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<(), PipelineError> {
    jsonl::write_jsonl(path, items.iter()).map(|_| ()).map_err(|e| out_err(path, e))
}

/// Builds a thread pool with `workers` threads (0 = one per core).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Runs the whole pipeline from `input` and writes every artifact under
/// `out_dir`. Everything except `run.json` is a pure function of config and
/// input.
pub fn run_pipeline(cfg: &PipelineConfig, input: &Path, out_dir: &Path) -> Result<PipelineRun, PipelineError> {
    let started_at = Utc::now();
    let stages = build_stages(cfg)?;
    let raw = cfg.has_stage(crate::extract::STAGE);
    let (records, malformed_lines) = PipelineInput::read(input, raw)?;
    let staged = with_workers(cfg.workers, || run_stages(&stages, records))?;

    std::fs::create_dir_all(out_dir.join("rejected")).map_err(|e| out_err(out_dir, e))?;
    let mut outputs = RunOutputs::in_dir(out_dir);
    write_lines(&outputs.output, &staged.kept)?;
    for (stage, docs) in &staged.rejected {
        let p = out_dir.join("rejected").join(format!("{stage}.jsonl"));
        write_lines(&p, docs)?;
        outputs.rejected.insert(stage.clone(), p);
    }
    if let Some(c) = &staged.clusters {
        let p = out_dir.join("clusters.jsonl");
        write_lines(&p, c)?;
        outputs.clusters = Some(p);
    }
    if let Some(r) = &staged.review {
        let p = out_dir.join("review.jsonl");
        write_lines(&p, r)?;
        outputs.review = Some(p);
    }
    std::fs::write(&outputs.report_text, retention_report(&staged.reports)).map_err(|e| out_err(&outputs.report_text, e))?;
    write_json(&outputs.report_json, &retention_report_json(&staged.reports))?;
    let run = PipelineRun {
        config: cfg.clone(),
        input: input.to_owned(),
        malformed_lines,
        reports: staged.reports,
        started_at,
        finished_at: Utc::now(),
        outputs,
    };
    write_json(&run.outputs.run, &run)?;
    Ok(run)
}

/// Runs one stage from file to file: kept documents go to `output`, the
/// stage's rejections to `<output>.rejected.jsonl`.
pub fn run_single_stage(cfg: &PipelineConfig, stage: &str, input: &Path, output: &Path) -> Result<StageReport, PipelineError> {
    let built = build_stage(stage, cfg)?;
    let (records, _) = PipelineInput::read(input, matches!(built, BuiltStage::Extract))?;
    let staged = with_workers(cfg.workers, || run_stages(std::slice::from_ref(&built), records))?;
    write_lines(output, &staged.kept)?;
    let sidecar = rejected_sidecar(output);
    write_lines(&sidecar, &staged.rejected[0].1)?;
    if let Some(c) = &staged.clusters {
        write_lines(&output.with_extension("clusters.jsonl"), c)?;
    }
    if let Some(r) = &staged.review {
        write_lines(&output.with_extension("review.jsonl"), r)?;
    }
    Ok(staged.reports.into_iter().next().expect("one stage"))
}

pub fn rejected_sidecar(output: &Path) -> PathBuf {
    output.with_extension("rejected.jsonl")
}
