//! Document data model shared by every stage.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A crawled page before extraction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawDocument {
    pub id: String,
    pub source_url: String,
    pub fetched_at: DateTime<Utc>,
    pub raw_html: Vec<u8>,
}

// Wire form: `html` when the payload is valid UTF-8, `html_base64` otherwise.
#[derive(Serialize, Deserialize)]
struct RawDocumentWire {
    id: String,
    url: String,
    fetched_at: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    html: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    html_base64: Option<String>,
}

impl Serialize for RawDocument {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let (html, html_base64) = match std::str::from_utf8(&self.raw_html) {
            Ok(s) => (Some(s.to_owned()), None),
            Err(_) => (None, Some(BASE64.encode(&self.raw_html))),
        };
        RawDocumentWire {
            id: self.id.clone(),
            url: self.source_url.clone(),
            fetched_at: self.fetched_at.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            html,
            html_base64,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for RawDocument {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let wire = RawDocumentWire::deserialize(deserializer)?;
        if wire.id.is_empty() {
            return Err(D::Error::custom("empty document id"));
        }
        let fetched_at = DateTime::parse_from_rfc3339(&wire.fetched_at)
            .map_err(|e| D::Error::custom(format!("fetched_at: {e}")))?
            .with_timezone(&Utc);
        let raw_html = match (wire.html, wire.html_base64) {
            (Some(s), None) => s.into_bytes(),
            (None, Some(b)) => BASE64.decode(b).map_err(|e| D::Error::custom(format!("html_base64: {e}")))?,
            (None, None) => Vec::new(),
            (Some(_), Some(_)) => return Err(D::Error::custom("both html and html_base64 present")),
        };
        Ok(RawDocument { id: wire.id, source_url: wire.url, fetched_at, raw_html })
    }
}

/// ISO-639-1 language code: two lowercase ASCII letters.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LanguageTag(String);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid language tag {0:?}: expected two lowercase ASCII letters")]
pub struct InvalidLanguageTag(pub String);

impl LanguageTag {
    pub fn new(code: &str) -> Result<Self, InvalidLanguageTag> {
        if code.len() == 2 && code.bytes().all(|b| b.is_ascii_lowercase()) {
            Ok(LanguageTag(code.to_owned()))
        } else {
            Err(InvalidLanguageTag(code.to_owned()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl FromStr for LanguageTag {
    type Err = InvalidLanguageTag;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LanguageTag::new(s)
    }
}

impl fmt::Display for LanguageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Serialize for LanguageTag {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for LanguageTag {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        LanguageTag::new(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Keep,
    Drop,
    Modify,
}

/// What one stage recorded about one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageAnnotation {
    pub stage: String,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub scores: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reasons: Vec<String>,
    /// Categorical outputs such as theme labels.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub labels: BTreeMap<String, String>,
}

impl StageAnnotation {
    pub fn new(stage: impl Into<String>, verdict: Verdict) -> Self {
        StageAnnotation {
            stage: stage.into(),
            verdict,
            scores: BTreeMap::new(),
            reasons: Vec::new(),
            labels: BTreeMap::new(),
        }
    }

    pub fn score(mut self, key: impl Into<String>, value: f64) -> Self {
        self.scores.insert(key.into(), value);
        self
    }

    pub fn reason(mut self, code: impl Into<String>) -> Self {
        self.reasons.push(code.into());
        self
    }

    pub fn label(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.labels.insert(key.into(), value.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionRecord {
    pub stage: String,
    pub reasons: Vec<String>,
}

/// The unit of processing after extraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    #[serde(rename = "url", default)]
    pub source_url: String,
    pub text: String,
    #[serde(rename = "lang", default, skip_serializing_if = "Option::is_none")]
    pub language: Option<LanguageTag>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub annotations: BTreeMap<String, StageAnnotation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejected: Option<RejectionRecord>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Document {
            id: id.into(),
            source_url: String::new(),
            text: text.into(),
            language: None,
            annotations: BTreeMap::new(),
            rejected: None,
        }
    }

    pub fn with_url(mut self, url: impl Into<String>) -> Self {
        self.source_url = url.into();
        self
    }

    pub fn with_language(mut self, lang: LanguageTag) -> Self {
        self.language = Some(lang);
        self
    }

    pub fn is_rejected(&self) -> bool {
        self.rejected.is_some()
    }

    /// Records a stage annotation, replacing any earlier one for the same stage.
    pub fn annotate(&mut self, annotation: StageAnnotation) {
        self.annotations.insert(annotation.stage.clone(), annotation);
    }

    pub fn annotation(&self, stage: &str) -> Option<&StageAnnotation> {
        self.annotations.get(stage)
    }

    /// Marks the document as dropped by `annotation.stage`.
    ///
    /// The annotation's verdict is forced to `Drop`; its reason codes become the
    /// rejection record. Panics if the document is already rejected or no
    /// reason is given, both of which are programming errors in a stage.
    pub fn reject(&mut self, mut annotation: StageAnnotation) {
        assert!(self.rejected.is_none(), "document {} rejected twice", self.id);
        assert!(!annotation.reasons.is_empty(), "drop without reason code");
        annotation.verdict = Verdict::Drop;
        self.rejected = Some(RejectionRecord {
            stage: annotation.stage.clone(),
            reasons: annotation.reasons.clone(),
        });
        self.annotate(annotation);
    }

    /// Reason codes recorded by any stage, in stage-name order.
    pub fn all_reasons(&self) -> impl Iterator<Item = &str> {
        self.annotations.values().flat_map(|a| a.reasons.iter().map(String::as_str))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn language_tag_validation() {
        assert!(LanguageTag::new("ko").is_ok());
        assert!(LanguageTag::new("KO").is_err());
        assert!(LanguageTag::new("kor").is_err());
        assert!(LanguageTag::new("").is_err());
    }

    #[test]
    fn raw_document_non_utf8_payload_uses_base64() {
        let raw = RawDocument {
            id: "a".into(),
            source_url: "https://x.test/".into(),
            fetched_at: DateTime::parse_from_rfc3339("2024-01-02T03:04:05Z").unwrap().with_timezone(&Utc),
            raw_html: vec![0xff, 0xfe, b'<'],
        };
        let json = serde_json::to_string(&raw).unwrap();
        assert!(json.contains("html_base64"));
        assert!(json.contains("2024-01-02T03:04:05Z"));
        let back: RawDocument = serde_json::from_str(&json).unwrap();
        assert_eq!(back, raw);
    }

    #[test]
    fn document_field_names_are_fixed() {
        let mut doc = Document::new("d1", "hello").with_url("u").with_language(LanguageTag::new("vi").unwrap());
        doc.reject(StageAnnotation::new("clean", Verdict::Keep).reason("too_short"));
        let v: serde_json::Value = serde_json::to_value(&doc).unwrap();
        let keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys, ["annotations", "id", "lang", "rejected", "text", "url"]);
        assert_eq!(doc.annotation("clean").unwrap().verdict, Verdict::Drop);
    }

    #[test]
    #[should_panic(expected = "drop without reason code")]
    fn reject_requires_reason() {
        Document::new("x", "t").reject(StageAnnotation::new("clean", Verdict::Drop));
    }
}
