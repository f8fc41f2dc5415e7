//! Main-content extraction from raw HTML.
//!
//! A tolerant tag-soup scanner: it never builds a DOM and never fails on
//! malformed markup. Content inside `script`/`style` is skipped outright;
//! `nav`, `header`, `footer`, `aside` and similar page chrome count as visible
//! text but are left out of the extracted body. Block-level elements become
//! line breaks.

use std::sync::OnceLock;

use encoding_rs::{Encoding, UTF_8};
use regex::bytes::Regex;

use crate::document::{Document, RawDocument, StageAnnotation, Verdict};

pub const STAGE: &str = "extract";

/// Fraction of replacement characters above which a lossy UTF-8 decode is
/// treated as undecodable (binary payloads, wrong content type).
const MAX_REPLACEMENT_FRACTION: f64 = 0.3;

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionResult {
    pub text: String,
    pub title: Option<String>,
    /// Extracted text bytes over visible text bytes, in [0, 1].
    pub extracted_ratio: f64,
    /// True when invalid UTF-8 was replaced during decoding.
    pub lossy_decode: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DecodeError {
    #[error("unsupported charset {0:?}")]
    UnsupportedCharset(String),
    #[error("input is not text ({0:.0}% replacement characters)")]
    NotText(f64),
}

fn meta_charset_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r#"(?i)<meta[^>]*?charset\s*=\s*["']?\s*([A-Za-z0-9_:.\-]+)"#).unwrap()
    })
}

/// Decodes page bytes, honoring a BOM or a `<meta charset>` declaration in
/// the first 2 KiB and falling back to lossy UTF-8.
pub fn decode_html(bytes: &[u8]) -> Result<(String, bool), DecodeError> {
    if let Some((enc, bom_len)) = Encoding::for_bom(bytes) {
        let (text, had_errors) = enc.decode_without_bom_handling(&bytes[bom_len..]);
        return Ok((text.into_owned(), had_errors));
    }
    let head = &bytes[..bytes.len().min(2048)];
    let declared = meta_charset_re()
        .captures(head)
        .map(|c| String::from_utf8_lossy(&c[1]).into_owned());
    let encoding = match declared {
        Some(label) => Encoding::for_label(label.as_bytes()).ok_or(DecodeError::UnsupportedCharset(label))?,
        None => UTF_8,
    };
    let (text, had_errors) = encoding.decode_without_bom_handling(bytes);
    if had_errors {
        let total = text.chars().count().max(1);
        let bad = text.chars().filter(|&c| c == char::REPLACEMENT_CHARACTER).count();
        let fraction = bad as f64 / total as f64;
        if fraction > MAX_REPLACEMENT_FRACTION {
            return Err(DecodeError::NotText(fraction * 100.0));
        }
    }
    Ok((text.into_owned(), had_errors))
}

// Content of these elements is never text.
const RAW_TEXT: &[&str] = &["script", "style", "noscript", "template", "textarea", "xmp", "svg", "math", "iframe", "object"];

// Visible page chrome excluded from the main content.
const BOILERPLATE: &[&str] = &["nav", "header", "footer", "aside", "form", "menu", "button", "select", "label"];

const BLOCK: &[&str] = &[
    "address", "article", "blockquote", "body", "br", "dd", "details", "dialog", "div", "dl", "dt", "fieldset",
    "figcaption", "figure", "h1", "h2", "h3", "h4", "h5", "h6", "hr", "li", "main", "ol", "p", "pre", "section",
    "summary", "table", "tbody", "td", "tfoot", "th", "thead", "tr", "ul",
];

#[derive(Default)]
struct Sink {
    content: String,
    visible: String,
}

impl Sink {
    fn text(&mut self, s: &str, boilerplate: bool) {
        self.visible.push_str(s);
        if !boilerplate {
            self.content.push_str(s);
        }
    }

    fn newline(&mut self) {
        self.visible.push('\n');
        self.content.push('\n');
    }
}

struct Tag {
    name: String,
    closing: bool,
    self_closing: bool,
    end: usize,
}

/// Parses a tag starting at `start` (which holds `<`). Returns `None` if the
/// `<` does not open a tag, in which case it is literal text.
fn parse_tag(html: &str, start: usize) -> Option<Tag> {
    let rest = &html[start + 1..];
    let (closing, name_start) = if let Some(r) = rest.strip_prefix('/') { (true, r) } else { (false, rest) };
    let first = name_start.chars().next()?;
    if !first.is_ascii_alphabetic() {
        return None;
    }
    let name_len = name_start
        .find(|c: char| !(c.is_ascii_alphanumeric() || c == '-' || c == ':'))
        .unwrap_or(name_start.len());
    let name = name_start[..name_len].to_ascii_lowercase();
    // Find the closing '>' while respecting quoted attribute values. An
    // unterminated tag swallows the rest of the input.
    let body_off = start + 1 + usize::from(closing) + name_len;
    let mut quote: Option<u8> = None;
    let bytes = html.as_bytes();
    let mut i = body_off;
    let mut end = html.len();
    while i < bytes.len() {
        let b = bytes[i];
        match quote {
            Some(q) if b == q => quote = None,
            Some(_) => {}
            None if b == b'"' || b == b'\'' => quote = Some(b),
            None if b == b'>' => {
                end = i + 1;
                break;
            }
            None => {}
        }
        i += 1;
    }
    if i >= bytes.len() && quote.is_some() {
        // Unbalanced quote: fall back to the first '>' after the name.
        end = html[body_off..].find('>').map_or(html.len(), |p| body_off + p + 1);
    }
    let self_closing = html[..end].ends_with("/>");
    Some(Tag { name, closing, self_closing, end })
}

fn find_ci(haystack: &str, from: usize, needle: &str) -> Option<usize> {
    let hb = haystack.as_bytes();
    let nb = needle.as_bytes();
    if nb.is_empty() || hb.len() < nb.len() {
        return None;
    }
    (from..=hb.len() - nb.len()).find(|&i| hb[i..i + nb.len()].eq_ignore_ascii_case(nb))
}

fn push_text(sink: &mut Sink, title: &mut Option<String>, raw: &str, in_title: bool, in_head: bool, boilerplate: usize) {
    // Source line breaks are plain whitespace; only block tags break lines.
    let decoded = html_escape::decode_html_entities(raw).replace(['\n', '\r'], " ");
    if in_title {
        title.get_or_insert_with(String::new).push_str(&decoded);
    } else if !in_head {
        sink.text(&decoded, boilerplate > 0);
    }
}

fn normalize_lines(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for line in s.split('\n') {
        let mut first = true;
        for word in line.split_whitespace() {
            if first {
                if !out.is_empty() {
                    out.push('\n');
                }
                first = false;
            } else {
                out.push(' ');
            }
            out.push_str(word);
        }
    }
    neutralize_tag_openers(out)
}

// Entity-decoded text like "&lt;div" must not read back as markup.
fn neutralize_tag_openers(s: String) -> String {
    if !s.as_bytes().windows(2).any(|w| w[0] == b'<' && w[1].is_ascii_alphabetic()) {
        return s;
    }
    let mut out = String::with_capacity(s.len() + 8);
    let mut chars = s.chars().peekable();
    while let Some(c) = chars.next() {
        out.push(c);
        if c == '<' && chars.peek().is_some_and(|n| n.is_ascii_alphabetic()) {
            out.push(' ');
        }
    }
    out
}

/// Extracts main content from already-decoded HTML.
pub fn extract_from_str(html: &str) -> (String, Option<String>, f64) {
    let mut sink = Sink::default();
    let mut title: Option<String> = None;
    let mut boilerplate = 0usize;
    let mut in_title = false;
    let mut in_head = false;
    let mut pos = 0;
    let mut text_start = 0;

    while let Some(off) = html[pos..].find('<') {
        let lt = pos + off;
        let rest = &html[lt..];
        if rest.starts_with("<!--") {
            push_text(&mut sink, &mut title, &html[text_start..lt], in_title, in_head, boilerplate);
            pos = html[lt + 4..].find("-->").map_or(html.len(), |p| lt + 4 + p + 3);
            text_start = pos;
            continue;
        }
        if rest.starts_with("<!") || rest.starts_with("<?") {
            push_text(&mut sink, &mut title, &html[text_start..lt], in_title, in_head, boilerplate);
            pos = rest.find('>').map_or(html.len(), |p| lt + p + 1);
            text_start = pos;
            continue;
        }
        let Some(tag) = parse_tag(html, lt) else {
            pos = lt + 1;
            continue;
        };
        push_text(&mut sink, &mut title, &html[text_start..lt], in_title, in_head, boilerplate);
        pos = tag.end;
        let name = tag.name.as_str();

        if !tag.closing && !tag.self_closing && RAW_TEXT.contains(&name) {
            // Skip to the matching end tag, or to end of input.
            let close = format!("</{name}");
            pos = match find_ci(html, pos, &close) {
                Some(p) => html[p..].find('>').map_or(html.len(), |q| p + q + 1),
                None => html.len(),
            };
        } else if name == "title" {
            in_title = !tag.closing && !tag.self_closing;
        } else if name == "head" {
            in_head = !tag.closing;
        } else if name == "body" {
            in_head = false;
        } else if BOILERPLATE.contains(&name) {
            if tag.closing {
                boilerplate = boilerplate.saturating_sub(1);
            } else if !tag.self_closing {
                boilerplate += 1;
            }
            sink.newline();
        } else if BLOCK.contains(&name) {
            sink.newline();
        } else if !in_title {
            // Inline elements still separate words when adjacent text has no space.
            if matches!(name, "img" | "td" | "th" | "wbr") {
                sink.text(" ", boilerplate > 0);
            }
        }
        text_start = pos;
    }
    if text_start < html.len() {
        push_text(&mut sink, &mut title, &html[text_start..], in_title, in_head, boilerplate);
    }

    let text = normalize_lines(&sink.content);
    let visible = normalize_lines(&sink.visible);
    let ratio = if visible.is_empty() { 0.0 } else { (text.len() as f64 / visible.len() as f64).min(1.0) };
    let title = title.map(|t| t.split_whitespace().collect::<Vec<_>>().join(" ")).filter(|t| !t.is_empty());
    (text, title, ratio)
}

/// Decodes and extracts one page.
pub fn extract_text(html: &[u8]) -> Result<ExtractionResult, DecodeError> {
    let (decoded, lossy_decode) = decode_html(html)?;
    let (text, title, extracted_ratio) = extract_from_str(&decoded);
    Ok(ExtractionResult { text, title, extracted_ratio, lossy_decode })
}

/// Turns a crawled page into a [`Document`]. Failures become rejections.
pub fn standardize(raw: &RawDocument) -> Document {
    let mut doc = Document::new(raw.id.clone(), String::new()).with_url(raw.source_url.clone());
    if raw.raw_html.is_empty() {
        doc.reject(StageAnnotation::new(STAGE, Verdict::Drop).score("extracted_ratio", 0.0).reason("empty_html"));
        return doc;
    }
    match extract_text(&raw.raw_html) {
        Err(_) => {
            doc.reject(StageAnnotation::new(STAGE, Verdict::Drop).score("extracted_ratio", 0.0).reason("decode_error"));
        }
        Ok(res) => {
            let mut ann = StageAnnotation::new(STAGE, Verdict::Keep)
                .score("extracted_ratio", res.extracted_ratio)
                .score("lossy_decode", if res.lossy_decode { 1.0 } else { 0.0 });
            if let Some(t) = &res.title {
                ann = ann.label("title", t.clone());
            }
            doc.text = res.text;
            if doc.text.is_empty() {
                doc.reject(ann.reason("empty_extraction"));
            } else {
                doc.annotate(ann);
            }
        }
    }
    doc
}
