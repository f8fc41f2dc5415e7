//! Corpus generators and fixture builders for the acceptance suite.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use curate_core::document::RawDocument;
use curate_core::jsonl;
use curate_core::langid::{seed_sentences, SEED_LANGUAGES, TARGET_LANGUAGES};
use curate_core::lm::{self, NgramLanguageModel, Tokenizer};
use curate_core::safety::{train_toxicity_head, DIMENSIONS};
use curate_core::textclf::LabeledExample;
use curate_core::theme::{train_theme_model, ThemeTaxonomy};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Pseudo-words built from syllables, all distinct.
pub fn vocabulary(n: usize, seed: u64) -> Vec<String> {
    const SYL: [&str; 20] = ["ka", "lo", "mi", "ne", "ru", "sa", "to", "vi", "zo", "pe", "da", "fu", "gi", "ho", "ju", "ba", "ce", "wy", "qu", "xi"];
    let mut r = rng(seed);
    let mut out = std::collections::BTreeSet::new();
    while out.len() < n {
        let len = r.random_range(2..=4);
        out.insert((0..len).map(|_| SYL[r.random_range(0..SYL.len())]).collect::<String>());
    }
    let mut v: Vec<String> = out.into_iter().collect();
    v.shuffle(&mut r);
    v
}

/// Random word sequence.
pub fn random_words(r: &mut ChaCha8Rng, vocab: &[String], n: usize) -> Vec<String> {
    (0..n).map(|_| vocab[r.random_range(0..vocab.len())].clone()).collect()
}

/// A first-order Markov "language": each word has a few fixed successors.
pub struct MarkovLanguage {
    pub vocab: Vec<String>,
    successors: Vec<Vec<usize>>,
}

impl MarkovLanguage {
    pub fn new(vocab_size: usize, branching: usize, seed: u64) -> Self {
        let vocab = vocabulary(vocab_size, seed);
        let mut r = rng(seed ^ 0x5eed);
        let successors = (0..vocab_size).map(|_| (0..branching).map(|_| r.random_range(0..vocab_size)).collect()).collect();
        MarkovLanguage { vocab, successors }
    }

    pub fn sentence(&self, r: &mut ChaCha8Rng, len: usize) -> Vec<String> {
        let mut w = r.random_range(0..self.vocab.len());
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            out.push(self.vocab[w].clone());
            let next = &self.successors[w];
            w = next[r.random_range(0..next.len())];
        }
        out
    }

    /// Several sentences, one per line.
    pub fn document(&self, r: &mut ChaCha8Rng) -> String {
        let lines = r.random_range(4..=7);
        (0..lines)
            .map(|_| {
                let n = r.random_range(8..=14);
                self.sentence(r, n).join(" ")
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// The same tokens in random order, keeping the line layout.
pub fn shuffle_tokens(text: &str, tokenizer: Tokenizer, r: &mut ChaCha8Rng) -> String {
    let lines: Vec<&str> = text.lines().collect();
    match tokenizer {
        Tokenizer::Whitespace => {
            let mut toks: Vec<&str> = text.split_whitespace().collect();
            toks.shuffle(r);
            let mut out = Vec::new();
            let mut it = toks.into_iter();
            for l in &lines {
                let n = l.split_whitespace().count();
                out.push(it.by_ref().take(n).collect::<Vec<_>>().join(" "));
            }
            out.join("\n")
        }
        Tokenizer::Chars => {
            let mut chars: Vec<char> = text.chars().filter(|c| *c != '\n').collect();
            chars.shuffle(r);
            let mut out = Vec::new();
            let mut it = chars.into_iter();
            for l in &lines {
                out.push(it.by_ref().take(l.chars().count()).collect::<String>());
            }
            out.join("\n")
        }
    }
}

/// `k` seed sentences of `lang`, one per line.
pub fn seed_document(lang: &str, k: usize, r: &mut ChaCha8Rng) -> String {
    let s = seed_sentences(lang).expect("bundled language");
    (0..k).map(|_| s[r.random_range(0..s.len())]).collect::<Vec<_>>().join("\n")
}

/// At least eight seed sentences and comfortably past the cleaner's length floor.
pub fn fluent_seed_document(lang: &str, r: &mut ChaCha8Rng) -> String {
    let s = seed_sentences(lang).expect("bundled language");
    let mut lines: Vec<&str> = Vec::new();
    while lines.len() < 8 || lines.iter().map(|l| l.chars().count()).sum::<usize>() < 320 {
        lines.push(s[r.random_range(0..s.len())]);
    }
    lines.join("\n")
}

/// Shuffled text ending on a sentence terminator, so only fluency gives it away.
fn terminated(mut text: String) -> String {
    if !text.ends_with('.') {
        text.push('.');
    }
    text
}

fn html_page(text: &str) -> Vec<u8> {
    let body: String = text.lines().map(|l| format!("<p>{}</p>", html_escape::encode_text(l))).collect();
    format!("<html><head><title>t</title></head><body><nav>Home | About</nav>{body}<footer>©</footer></body></html>").into_bytes()
}

fn raw(id: String, host: &str, html: Vec<u8>) -> RawDocument {
    let fetched_at = chrono::DateTime::parse_from_rfc3339("2024-03-01T12:00:00Z").unwrap().with_timezone(&chrono::Utc);
    RawDocument { source_url: format!("https://{host}/{id}"), id, fetched_at, raw_html: html }
}

/// What a planted document is expected to trip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Planted {
    Fluent,
    NonTarget,
    EmptyHtml,
    Short,
    HtmlResidue,
    Shuffled,
    Duplicate,
    Blacklisted,
}

pub struct EndToEndFixture {
    pub config: PathBuf,
    pub input: PathBuf,
    pub planted: Vec<(String, Planted)>,
}

/// Writes a 1000-page crawl with planted defects plus every model and
/// resource a full pipeline run needs.
pub fn end_to_end_fixture(dir: &Path, seed: u64) -> EndToEndFixture {
    let mut r = rng(seed);
    let models = dir.join("models");
    std::fs::create_dir_all(&models).unwrap();

    // Per-language n-gram models, calibrated on fluent and shuffled text.
    let mut ppl_cfg = String::new();
    for lang in TARGET_LANGUAGES {
        let tok = Tokenizer::for_language(lang);
        let text = seed_sentences(lang).unwrap().join("\n");
        let model = NgramLanguageModel::train([text.as_str()], lm::DEFAULT_ORDER, lm::DEFAULT_DISCOUNT, tok).unwrap();
        let mut calib = Vec::new();
        for i in 0..150 {
            let d = fluent_seed_document(lang, &mut r);
            calib.push(if i % 3 == 0 { shuffle_tokens(&d, tok, &mut r) } else { d });
        }
        let cal = lm::calibrate_on(&model, calib.iter().map(String::as_str)).unwrap();
        model.save(models.join(format!("{lang}.lm"))).unwrap();
        cal.save(models.join(format!("{lang}.cal.json"))).unwrap();
        ppl_cfg.push_str(&format!("[ppl.models.{lang}]\nmodel = \"models/{lang}.lm\"\ncalibration = \"models/{lang}.cal.json\"\n"));
    }

    // Quality head: coherent text against word salad.
    let mut high = Vec::new();
    let mut low = Vec::new();
    for lang in TARGET_LANGUAGES {
        for _ in 0..30 {
            let d = fluent_seed_document(lang, &mut r);
            low.push(shuffle_tokens(&d, Tokenizer::for_language(lang), &mut r));
            high.push(d);
        }
    }
    let hi: Vec<&str> = high.iter().map(String::as_str).collect();
    let lo: Vec<&str> = low.iter().map(String::as_str).collect();
    lm::train_quality_head(&hi, &lo, seed).unwrap().save(models.join("quality.bin")).unwrap();

    // Theme head over the bundled taxonomy.
    let tax = ThemeTaxonomy::bundled();
    let mut theme_examples = Vec::new();
    for l2 in tax.level2() {
        for lang in TARGET_LANGUAGES {
            theme_examples.push(LabeledExample::new(format!("{} {}", l2.to_lowercase(), seed_document(lang, 1, &mut r)), l2));
        }
    }
    train_theme_model(&theme_examples, &tax, seed).unwrap().save(models.join("theme.bin")).unwrap();

    // Toxicity head.
    let mut tox = Vec::new();
    for (i, d) in DIMENSIONS.iter().enumerate() {
        for j in 0..4 {
            tox.push(LabeledExample { text: format!("{d} {d} signal{i}{j} {d}"), labels: vec![d.to_string()] });
        }
    }
    for lang in TARGET_LANGUAGES {
        for _ in 0..4 {
            tox.push(LabeledExample { text: fluent_seed_document(lang, &mut r), labels: vec![] });
        }
    }
    train_toxicity_head(&tox, seed).unwrap().save(models.join("toxicity.bin")).unwrap();

    std::fs::write(dir.join("blacklist.txt"), "# planted\nbad.example\n").unwrap();
    std::fs::write(dir.join("lexicon.tsv"), "казино\tru\t1.0\thigh\n카지노\tko\t1.0\thigh\ngambling\tall\t0.5\tlow\n").unwrap();

    let config = dir.join("curate.toml");
    std::fs::write(
        &config,
        format!(
            "seed = {seed}\n\
             [quality]\nmodel = \"models/quality.bin\"\n\
             [theme]\nmodel = \"models/theme.bin\"\n\
             [safety]\nblacklist = \"blacklist.txt\"\nlexicon = \"lexicon.tsv\"\ntoxicity_model = \"models/toxicity.bin\"\n\
             {ppl_cfg}"
        ),
    )
    .unwrap();

    // The crawl: mostly off-target pages, as in real web data.
    let mut pages = Vec::new();
    let mut planted = Vec::new();
    let mut fluent_texts: Vec<String> = Vec::new();
    let plan: [(Planted, usize); 8] = [
        (Planted::NonTarget, 550),
        (Planted::EmptyHtml, 20),
        (Planted::Short, 30),
        (Planted::HtmlResidue, 15),
        (Planted::Shuffled, 60),
        (Planted::Blacklisted, 20),
        (Planted::Fluent, 265),
        (Planted::Duplicate, 40),
    ];
    let mut n = 0;
    for (kind, count) in plan {
        for _ in 0..count {
            let id = format!("doc{n:04}");
            n += 1;
            let lang = TARGET_LANGUAGES[r.random_range(0..TARGET_LANGUAGES.len())];
            let (host, html) = match kind {
                Planted::NonTarget => {
                    let other = ["en", "fr", "de"][r.random_range(0..3)];
                    ("news.example", html_page(&fluent_seed_document(other, &mut r)))
                }
                Planted::EmptyHtml => ("empty.example", Vec::new()),
                Planted::Short => ("site.example", html_page(&seed_document(lang, 1, &mut r))),
                Planted::HtmlResidue => {
                    let d = fluent_seed_document(lang, &mut r);
                    let junk = "<div class=\"x\"><span><a href=\"#\"><img src=\"a.png\"></a></span></div>".repeat(4);
                    ("site.example", html_page(&format!("{junk}\n{d}")))
                }
                Planted::Shuffled => {
                    let d = fluent_seed_document(lang, &mut r);
                    ("site.example", html_page(&terminated(shuffle_tokens(&d, Tokenizer::for_language(lang), &mut r))))
                }
                Planted::Blacklisted => ("bad.example", html_page(&fluent_seed_document(lang, &mut r))),
                Planted::Fluent => {
                    let d = fluent_seed_document(lang, &mut r);
                    fluent_texts.push(d.clone());
                    ("site.example", html_page(&d))
                }
                Planted::Duplicate => {
                    let src = &fluent_texts[r.random_range(0..fluent_texts.len())];
                    ("mirror.example", html_page(src))
                }
            };
            planted.push((id.clone(), kind));
            pages.push(raw(id, host, html));
        }
    }
    // Interleave so that no stage sees planted kinds in blocks.
    let mut order: Vec<usize> = (0..pages.len()).collect();
    order.shuffle(&mut r);
    let pages: Vec<RawDocument> = order.iter().map(|&i| pages[i].clone()).collect();
    let input = dir.join("crawl.jsonl");
    jsonl::write_jsonl(&input, pages.iter()).unwrap();
    EndToEndFixture { config, input, planted }
}

/// Every seed language, for langid checks.
pub fn seed_languages() -> &'static [&'static str] {
    &SEED_LANGUAGES
}
