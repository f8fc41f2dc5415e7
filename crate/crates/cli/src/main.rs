use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use curate_core::config::{load_config, PipelineConfig};
use curate_core::evalharness::{self, InspectionRecord, Judge, PluginJudge, RuleJudge};
use curate_core::jsonl;
use curate_core::lm::{self, NgramLanguageModel, Tokenizer};
use curate_core::pipeline::{self, retention_report, PipelineError, PipelineRun};
use curate_core::plugin::PluginCommand;
use curate_core::textclf::{self, FeatureConfig, LabeledExample, OutputMode, TrainParams};
use curate_core::{Document, LanguageTag};

#[derive(Parser)]
#[command(name = "curate", version, about = "Multilingual web-corpus curation pipeline")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Pipeline config (TOML). Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses one per core.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Raw pages to documents.
    Extract,
    /// Target-language filtering.
    Langid {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Comma-separated language codes.
        #[arg(long, value_delimiter = ',')]
        targets: Option<Vec<String>>,
        #[arg(long)]
        min_confidence: Option<f64>,
    },
    /// Rule-based cleaning.
    Clean {
        #[arg(long)]
        rules: Option<PathBuf>,
    },
    /// MinHash LSH near-duplicate removal.
    Dedup {
        #[arg(long)]
        perms: Option<usize>,
        #[arg(long)]
        bands: Option<usize>,
        #[arg(long)]
        rows: Option<usize>,
        #[arg(long)]
        verify: Option<f64>,
    },
    /// Train an n-gram language model from document text.
    PplTrain {
        #[arg(long)]
        lang: String,
        #[arg(long, default_value_t = lm::DEFAULT_ORDER)]
        order: usize,
        #[arg(long, default_value_t = lm::DEFAULT_DISCOUNT)]
        discount: f64,
    },
    /// Fit a perplexity calibration for a trained model.
    PplCalibrate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        lang: Option<String>,
    },
    /// Perplexity filtering with the configured models.
    PplFilter {
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Classifier quality filtering.
    QualityScore {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        min_score: Option<f64>,
    },
    /// Blacklist, lexicon and toxicity screening.
    Safety,
    /// Two-level theme labeling.
    Theme {
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Train a linear text classifier from JSONL of {text, labels}.
    TrainClassifier {
        #[arg(long, value_enum, default_value_t = Mode::Softmax)]
        mode: Mode,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long, default_value_t = 0.5)]
        lr: f64,
        #[arg(long, default_value_t = 1)]
        word_ngrams: usize,
        /// Character n-gram range such as 2-4; "none" disables.
        #[arg(long, default_value = "1-4")]
        char_ngrams: String,
        #[arg(long, default_value_t = 1 << 20)]
        buckets: usize,
        /// Fixed label set, comma-separated; inferred from data otherwise.
        #[arg(long, value_delimiter = ',')]
        labels: Option<Vec<String>>,
    },
    /// Seven-dimension dataset score per language, or a manual-inspection
    /// summary with --inspection.
    Evaluate {
        #[arg(long, default_value = "dataset")]
        dataset: String,
        #[arg(long)]
        per_language: Option<usize>,
        /// External judge command; the rule judge is used otherwise.
        #[arg(long, num_args = 1.., allow_hyphen_values = true)]
        judge: Option<Vec<String>>,
        /// Adjudication JSONL of {id, issues}.
        #[arg(long)]
        inspection: Option<PathBuf>,
    },
    /// Draw a high/low review batch from quality-scored documents.
    SampleReview {
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        ratio: Option<f64>,
    },
    /// End-to-end run into an output directory.
    Run,
    /// Render the retention table of a finished run.
    Report,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Softmax,
    Sigmoid,
}

/// Maps to the process exit code.
enum Failure {
    Init(anyhow::Error),
    Stage(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Init(e)
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        if e.is_init() {
            Failure::Init(e.into())
        } else {
            Failure::Stage(e.into())
        }
    }
}

fn stage_failure(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Stage(e.into())
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> anyhow::Result<&'a Path> {
    p.as_deref().ok_or_else(|| anyhow!("--{flag} is required"))
}

fn load(global: &Global) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &global.config {
        Some(p) => load_config(p).with_context(|| format!("loading {}", p.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = global.seed {
        cfg.seed = s;
    }
    if let Some(w) = global.workers {
        cfg.workers = w;
    }
    Ok(cfg)
}

fn read_docs(path: &Path) -> anyhow::Result<Vec<Document>> {
    let out = jsonl::read_jsonl::<Document>(path).with_context(|| format!("reading {}", path.display()))?;
    if !out.errors.is_empty() {
        eprintln!("skipped {} malformed line(s) in {}", out.errors.len(), path.display());
    }
    Ok(out.records)
}

fn single_stage(cfg: &PipelineConfig, stage: &str, g: &Global) -> Result<(), Failure> {
    cfg.validate().map_err(anyhow::Error::from)?;
    let input = required(&g.input, "input")?;
    let output = required(&g.output, "output")?;
    let report = pipeline::run_single_stage(cfg, stage, input, output)?;
    print!("{}", retention_report(std::slice::from_ref(&report)));
    Ok(())
}

fn parse_char_ngrams(s: &str) -> anyhow::Result<Option<(usize, usize)>> {
    if s == "none" {
        return Ok(None);
    }
    let (lo, hi) = s.split_once('-').ok_or_else(|| anyhow!("expected LO-HI, got {s:?}"))?;
    Ok(Some((lo.parse()?, hi.parse()?)))
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let g = &cli.global;
    let mut cfg = load(g)?;
    match cli.command {
        Command::Extract => single_stage(&cfg, "extract", g),
        Command::Langid { model, targets, min_confidence } => {
            if model.is_some() {
                cfg.langid.model = model;
            }
            if let Some(t) = targets {
                cfg.target_languages = t.iter().map(|c| LanguageTag::new(c)).collect::<Result<_, _>>().map_err(anyhow::Error::from)?;
            }
            if let Some(c) = min_confidence {
                cfg.langid.min_confidence = c;
            }
            single_stage(&cfg, "langid", g)
        }
        Command::Clean { rules } => {
            if rules.is_some() {
                cfg.clean.rules = rules;
            }
            single_stage(&cfg, "clean", g)
        }
        Command::Dedup { perms, bands, rows, verify } => {
            let d = &mut cfg.dedup;
            d.perms = perms.unwrap_or(d.perms);
            d.bands = bands.unwrap_or(d.bands);
            d.rows = rows.unwrap_or(d.rows);
            d.verify = verify.unwrap_or(d.verify);
            single_stage(&cfg, "dedup", g)
        }
        Command::PplFilter { threshold } => {
            if let Some(t) = threshold {
                cfg.ppl.threshold = t;
            }
            single_stage(&cfg, "ppl", g)
        }
        Command::QualityScore { model, min_score } => {
            if model.is_some() {
                cfg.quality.model = model;
                cfg.quality.plugin = None;
            }
            if let Some(m) = min_score {
                cfg.quality.min_score = m;
            }
            single_stage(&cfg, "quality", g)
        }
        Command::Safety => single_stage(&cfg, "safety", g),
        Command::Theme { model } => {
            if model.is_some() {
                cfg.theme.model = model;
            }
            single_stage(&cfg, "theme", g)
        }
        Command::PplTrain { lang, order, discount } => {
            let docs = read_docs(required(&g.input, "input")?)?;
            let texts: Vec<&str> =
                docs.iter().filter(|d| d.language.as_ref().is_none_or(|l| l.as_str() == lang)).map(|d| d.text.as_str()).collect();
            let model = NgramLanguageModel::train(texts, order, discount, Tokenizer::for_language(&lang)).map_err(stage_failure)?;
            model.save(required(&g.output, "output")?).map_err(stage_failure)?;
            println!("trained {lang} model: order {order}, {} outcomes", model.outcome_count());
            Ok(())
        }
        Command::PplCalibrate { model, lang } => {
            let model = NgramLanguageModel::load(&model).context("loading language model")?;
            let docs = read_docs(required(&g.input, "input")?)?;
            let texts = docs
                .iter()
                .filter(|d| lang.as_ref().is_none_or(|l| d.language.as_ref().is_some_and(|x| x.as_str() == l)))
                .map(|d| d.text.as_str());
            let cal = lm::calibrate_on(&model, texts).map_err(stage_failure)?;
            cal.save(required(&g.output, "output")?).map_err(stage_failure)?;
            println!("calibration lo={} hi={}", cal.lo, cal.hi);
            Ok(())
        }
        Command::TrainClassifier { mode, epochs, lr, word_ngrams, char_ngrams, buckets, labels } => {
            let input = required(&g.input, "input")?;
            let data = jsonl::read_jsonl::<LabeledExample>(input).context("reading training data")?.records;
            let feat = FeatureConfig { word_ngrams, char_ngrams: parse_char_ngrams(&char_ngrams)?, hash_buckets: buckets, lowercase: true };
            let mode = match mode {
                Mode::Softmax => OutputMode::Softmax,
                Mode::Sigmoid => OutputMode::Sigmoid,
            };
            let params = TrainParams { mode, epochs, learning_rate: lr, seed: cfg.seed };
            let model = match labels {
                Some(l) => textclf::train_with_labels(&data, &feat, l, &params),
                None => textclf::train(&data, &feat, &params),
            }
            .map_err(stage_failure)?;
            model.save(required(&g.output, "output")?).map_err(stage_failure)?;
            println!("trained on {} examples, labels: {}", data.len(), model.labels().join(","));
            Ok(())
        }
        Command::Evaluate { dataset, per_language, judge, inspection } => {
            let output = required(&g.output, "output")?;
            if let Some(path) = inspection {
                let records = jsonl::read_jsonl::<InspectionRecord>(&path).context("reading adjudications")?.records;
                let report = evalharness::inspection_report(&records);
                std::fs::write(output, report.render()).context("writing report")?;
                let json = serde_json::to_string_pretty(&report).context("serializing report")?;
                std::fs::write(output.with_extension("json"), json + "\n").context("writing report")?;
                print!("{}", report.render());
                return Ok(());
            }
            let docs = read_docs(required(&g.input, "input")?)?;
            let judge: Box<dyn Judge> = match judge {
                Some(cmd) if !cmd.is_empty() => Box::new(PluginJudge {
                    name: cmd[0].clone(),
                    command: PluginCommand::new(cmd[0].clone(), cmd[1..].iter().cloned()),
                }),
                _ => Box::new(RuleJudge { toxicity_threshold: cfg.safety.toxicity_threshold }),
            };
            let langs: Vec<&str> = cfg.target_languages.iter().map(|l| l.as_str()).collect();
            let n = per_language.unwrap_or(cfg.sampling.eval_per_language);
            let scores = evalharness::dataset_score(&dataset, &docs, &langs, judge.as_ref(), n, cfg.seed).map_err(stage_failure)?;
            for l in &scores.skipped {
                eprintln!("no documents for {l}; skipped");
            }
            let table = evalharness::render_score_table(std::slice::from_ref(&scores));
            std::fs::write(output, &table).context("writing table")?;
            let json = serde_json::to_string_pretty(&scores).context("serializing scores")?;
            std::fs::write(output.with_extension("json"), json + "\n").context("writing scores")?;
            print!("{table}");
            Ok(())
        }
        Command::SampleReview { batch, ratio } => {
            let docs = read_docs(required(&g.input, "input")?)?;
            let scored = evalharness::quality_scores(&docs);
            let batch = batch.unwrap_or(cfg.sampling.review_batch);
            let ratio = ratio.unwrap_or(cfg.sampling.review_ratio);
            let sample = evalharness::sample_for_review(&scored, batch, ratio, cfg.seed).map_err(stage_failure)?;
            if sample.short {
                eprintln!("only {} scored documents for a batch of {batch}", sample.items.len());
            }
            jsonl::write_jsonl(required(&g.output, "output")?, sample.items.iter()).context("writing sample")?;
            println!("{}: {} items", sample.batch_id, sample.items.len());
            Ok(())
        }
        Command::Run => {
            let input = required(&g.input, "input")?;
            let output = required(&g.output, "output")?;
            let run = pipeline::run_pipeline(&cfg, input, output)?;
            if run.malformed_lines > 0 {
                eprintln!("skipped {} malformed input line(s)", run.malformed_lines);
            }
            print!("{}", retention_report(&run.reports));
            Ok(())
        }
        Command::Report => {
            let input = required(&g.input, "input")?;
            let path = if input.is_dir() { input.join("run.json") } else { input.to_owned() };
            let src = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let run: PipelineRun = serde_json::from_str(&src).context("parsing run record")?;
            let table = retention_report(&run.reports);
            if let Some(out) = &g.output {
                std::fs::write(out, &table).context("writing report")?;
            }
            print!("{table}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Init(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Stage(e)) => {
            eprintln!("stage failure: {e:#}");
            ExitCode::from(2)
        }
    }
}
