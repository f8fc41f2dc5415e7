//! Two-level theme labeling.
//!
//! The classifier predicts a level-2 label over the flat set of all children;
//! the level-1 label is its parent, so every emitted label is consistent with
//! the taxonomy by construction.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::document::{Document, StageAnnotation, Verdict};
use crate::stage::{par_each, Stage, StageError};
use crate::textclf::{self, FeatureConfig, LabeledExample, LinearTextModel, OutputMode, TextClfError, TrainParams};

pub const STAGE: &str = "theme";
pub const EXPECTED_LEVEL1: usize = 7;
pub const EXPECTED_LEVEL2: usize = 34;
pub const GENERAL: &str = "General";

#[derive(Debug, thiserror::Error)]
pub enum ThemeError {
    #[error("cannot read taxonomy: {0}")]
    Io(#[from] std::io::Error),
    #[error("taxonomy line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("taxonomy is invalid: {0:?}")]
    Invalid(Vec<TaxonomyViolation>),
    #[error("model labels differ from taxonomy level-2 labels (missing {missing:?}, extra {extra:?})")]
    LabelMismatch { missing: Vec<String>, extra: Vec<String> },
    #[error(transparent)]
    Model(#[from] TextClfError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TaxonomyViolation {
    Level1Count { found: usize, expected: usize },
    Level2Count { found: usize, expected: usize },
    DuplicateLevel1(String),
    DuplicateChild { child: String, parents: Vec<String> },
    EmptyParent(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThemeTaxonomy {
    sections: Vec<(String, Vec<String>)>,
}

impl ThemeTaxonomy {
    pub fn new(sections: Vec<(String, Vec<String>)>) -> Self {
        ThemeTaxonomy { sections }
    }

    /// Lines of `Level1: child; child`; `#` lines are comments.
    pub fn parse(src: &str) -> Result<Self, ThemeError> {
        let mut sections = Vec::new();
        for (i, line) in src.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (parent, children) =
                line.split_once(':').ok_or_else(|| ThemeError::Parse { line: i + 1, message: "missing ':'".into() })?;
            let parent = parent.trim();
            if parent.is_empty() {
                return Err(ThemeError::Parse { line: i + 1, message: "empty level-1 label".into() });
            }
            let children = children.split(';').map(str::trim).filter(|c| !c.is_empty()).map(str::to_owned).collect();
            sections.push((parent.to_owned(), children));
        }
        Ok(ThemeTaxonomy { sections })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ThemeError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn bundled() -> Self {
        Self::parse(include_str!("../data/taxonomy.txt")).expect("bundled taxonomy parses")
    }

    pub fn level1(&self) -> impl Iterator<Item = &str> {
        self.sections.iter().map(|(p, _)| p.as_str())
    }

    pub fn children(&self, level1: &str) -> Option<&[String]> {
        self.sections.iter().find(|(p, _)| p == level1).map(|(_, c)| c.as_slice())
    }

    /// All level-2 labels in taxonomy order.
    pub fn level2(&self) -> impl Iterator<Item = &str> {
        self.sections.iter().flat_map(|(_, c)| c.iter().map(String::as_str))
    }

    pub fn parent_of(&self, level2: &str) -> Option<&str> {
        self.sections.iter().find(|(_, c)| c.iter().any(|x| x == level2)).map(|(p, _)| p.as_str())
    }

    pub fn counts(&self) -> (usize, usize) {
        (self.sections.len(), self.level2().count())
    }

    pub fn validate(&self) -> Result<(), Vec<TaxonomyViolation>> {
        let mut v = Vec::new();
        let (n1, n2) = self.counts();
        if n1 != EXPECTED_LEVEL1 {
            v.push(TaxonomyViolation::Level1Count { found: n1, expected: EXPECTED_LEVEL1 });
        }
        if n2 != EXPECTED_LEVEL2 {
            v.push(TaxonomyViolation::Level2Count { found: n2, expected: EXPECTED_LEVEL2 });
        }
        let mut seen = HashSet::new();
        for (p, c) in &self.sections {
            if !seen.insert(p.as_str()) {
                v.push(TaxonomyViolation::DuplicateLevel1(p.clone()));
            }
            if c.is_empty() {
                v.push(TaxonomyViolation::EmptyParent(p.clone()));
            }
        }
        let mut parents: BTreeMap<&str, Vec<String>> = BTreeMap::new();
        for (p, c) in &self.sections {
            for child in c {
                parents.entry(child).or_default().push(p.clone());
            }
        }
        for (child, ps) in parents {
            if ps.len() > 1 {
                v.push(TaxonomyViolation::DuplicateChild { child: child.to_owned(), parents: ps });
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(v)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThemeLabel {
    pub level1: String,
    pub level2: String,
    pub confidence: f64,
}

pub struct ThemeClassifier {
    model: LinearTextModel,
    taxonomy: ThemeTaxonomy,
    parents: HashMap<String, String>,
    /// Predictions below this confidence become General/General. Off when `None`.
    pub general_floor: Option<f64>,
}

impl ThemeClassifier {
    pub fn new(model: LinearTextModel, taxonomy: ThemeTaxonomy) -> Result<Self, ThemeError> {
        taxonomy.validate().map_err(ThemeError::Invalid)?;
        let want: HashSet<&str> = taxonomy.level2().collect();
        let have: HashSet<&str> = model.labels().iter().map(String::as_str).collect();
        if want != have {
            let mut missing: Vec<String> = want.difference(&have).map(|s| s.to_string()).collect();
            let mut extra: Vec<String> = have.difference(&want).map(|s| s.to_string()).collect();
            missing.sort();
            extra.sort();
            return Err(ThemeError::LabelMismatch { missing, extra });
        }
        let parents = taxonomy.level2().map(|c| (c.to_owned(), taxonomy.parent_of(c).unwrap().to_owned())).collect();
        Ok(ThemeClassifier { model, taxonomy, parents, general_floor: None })
    }

    pub fn taxonomy(&self) -> &ThemeTaxonomy {
        &self.taxonomy
    }

    pub fn classify(&self, text: &str) -> ThemeLabel {
        let pred = self.model.predict(text);
        let (level2, confidence) = pred.argmax();
        if self.general_floor.is_some_and(|f| confidence < f) && self.parents.contains_key(GENERAL) {
            return ThemeLabel { level1: GENERAL.into(), level2: GENERAL.into(), confidence };
        }
        ThemeLabel { level1: self.parents[level2].clone(), level2: level2.to_owned(), confidence }
    }
}

/// Trains a flat softmax head over the taxonomy's level-2 labels.
pub fn train_theme_model(examples: &[LabeledExample], taxonomy: &ThemeTaxonomy, seed: u64) -> Result<LinearTextModel, TextClfError> {
    let cfg = FeatureConfig { word_ngrams: 1, char_ngrams: Some((3, 5)), hash_buckets: 1 << 18, lowercase: true };
    let params = TrainParams { mode: OutputMode::Softmax, epochs: 20, learning_rate: 0.5, seed };
    textclf::train_with_labels(examples, &cfg, taxonomy.level2().map(str::to_owned).collect(), &params)
}

impl Stage for ThemeClassifier {
    fn name(&self) -> &str {
        STAGE
    }

    fn run(&self, docs: &mut [Document]) -> Result<(), StageError> {
        par_each(docs, |d| {
            let l = self.classify(&d.text);
            d.annotate(
                StageAnnotation::new(STAGE, Verdict::Keep)
                    .label("level1", l.level1)
                    .label("level2", l.level2)
                    .score("confidence", l.confidence),
            );
        });
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThemeDistribution {
    pub level1: BTreeMap<String, usize>,
    /// Keyed by level-1, then level-2.
    pub level2: BTreeMap<String, BTreeMap<String, usize>>,
    pub unlabeled: usize,
}

/// Counts theme annotations. Unlabeled documents, or labels outside the
/// taxonomy, are counted separately.
pub fn theme_distribution<'a>(docs: impl IntoIterator<Item = &'a Document>, taxonomy: &ThemeTaxonomy) -> ThemeDistribution {
    let mut dist = ThemeDistribution {
        level1: taxonomy.level1().map(|p| (p.to_owned(), 0)).collect(),
        level2: taxonomy
            .level1()
            .map(|p| (p.to_owned(), taxonomy.children(p).unwrap().iter().map(|c| (c.clone(), 0)).collect()))
            .collect(),
        unlabeled: 0,
    };
    for d in docs {
        let label = d.annotation(STAGE).and_then(|a| Some((a.labels.get("level1")?, a.labels.get("level2")?)));
        match label {
            Some((l1, l2)) if taxonomy.parent_of(l2) == Some(l1.as_str()) => {
                *dist.level1.get_mut(l1.as_str()).unwrap() += 1;
                *dist.level2.get_mut(l1.as_str()).unwrap().get_mut(l2.as_str()).unwrap() += 1;
            }
            _ => dist.unlabeled += 1,
        }
    }
    dist
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bundled_taxonomy_is_valid() {
        let t = ThemeTaxonomy::bundled();
        assert_eq!(t.validate(), Ok(()));
        assert_eq!(t.counts(), (7, 34));
        assert_eq!(t.parent_of("Weather"), Some("Local Life"));
        assert_eq!(t.parent_of("Encyclopedia"), Some("Encyclopedia"));
        assert_eq!(t.parent_of("Code"), Some("Professional Field"));
    }

    #[test]
    fn violations_are_reported() {
        let src = include_str!("../data/taxonomy.txt").replace("Culture: Sports", "Culture: News; Sports");
        let v = ThemeTaxonomy::parse(&src).unwrap().validate().unwrap_err();
        assert!(v.contains(&TaxonomyViolation::DuplicateChild { child: "News".into(), parents: vec!["News".into(), "Culture".into()] }));
        let src: String = include_str!("../data/taxonomy.txt").lines().filter(|l| !l.starts_with("General")).map(|l| format!("{l}\n")).collect();
        let v = ThemeTaxonomy::parse(&src).unwrap().validate().unwrap_err();
        assert!(v.contains(&TaxonomyViolation::Level1Count { found: 6, expected: 7 }));
        assert!(matches!(ThemeTaxonomy::parse("no colon here"), Err(ThemeError::Parse { line: 1, .. })));
    }

    fn keyword_model(t: &ThemeTaxonomy) -> LinearTextModel {
        // Each level-2 label gets its own synthetic keywords.
        let mut ex = Vec::new();
        for (k, label) in t.level2().enumerate() {
            for j in 0..4 {
                ex.push(LabeledExample::new(format!("kw{k}a kw{k}b topic{k} filler{j}"), label));
            }
        }
        train_theme_model(&ex, t, 1).unwrap()
    }

    #[test]
    fn holdout_keywords_are_classified() {
        let t = ThemeTaxonomy::bundled();
        let c = ThemeClassifier::new(keyword_model(&t), t.clone()).unwrap();
        for (k, label) in t.level2().enumerate() {
            let l = c.classify(&format!("kw{k}a topic{k} something"));
            assert_eq!(l.level2, label);
            assert_eq!(Some(l.level1.as_str()), t.parent_of(label));
            assert!(l.confidence > 1.0 / 34.0);
        }
    }

    #[test]
    fn general_floor_routes_low_confidence() {
        let t = ThemeTaxonomy::bundled();
        let mut c = ThemeClassifier::new(keyword_model(&t), t).unwrap();
        c.general_floor = Some(0.99);
        let l = c.classify("nothing recognisable");
        assert_eq!((l.level1.as_str(), l.level2.as_str()), (GENERAL, GENERAL));
    }

    #[test]
    fn label_set_must_match() {
        let t = ThemeTaxonomy::bundled();
        let m = LinearTextModel::new(FeatureConfig::default(), vec!["News".into(), "Other".into()], OutputMode::Softmax).unwrap();
        match ThemeClassifier::new(m, t) {
            Err(ThemeError::LabelMismatch { missing, extra }) => {
                assert_eq!(missing.len(), 33);
                assert_eq!(extra, ["Other"]);
            }
            _ => panic!("expected mismatch"),
        }
    }

    fn labeled(id: usize, l1: &str, l2: &str) -> Document {
        let mut d = Document::new(format!("d{id}"), "");
        d.annotate(StageAnnotation::new(STAGE, Verdict::Keep).label("level1", l1).label("level2", l2));
        d
    }

    #[test]
    fn distribution_counts() {
        let t = ThemeTaxonomy::bundled();
        let empty = theme_distribution(&[], &t);
        assert!(empty.level1.values().all(|&n| n == 0) && empty.unlabeled == 0);
        let docs: Vec<Document> = (0..10).map(|i| labeled(i, "News", "News")).collect();
        assert_eq!(theme_distribution(&docs, &t).level1["News"], 10);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let l2: Vec<&str> = t.level2().collect();
        let mut docs: Vec<Document> = (0..300)
            .map(|i| {
                let c = l2[rng.random_range(0..l2.len())];
                labeled(i, t.parent_of(c).unwrap(), c)
            })
            .collect();
        docs.push(Document::new("plain", ""));
        let d = theme_distribution(&docs, &t);
        assert_eq!(d.unlabeled, 1);
        for p in t.level1() {
            let brute = docs.iter().filter(|x| x.annotation(STAGE).is_some_and(|a| a.labels["level1"] == p)).count();
            assert_eq!(d.level1[p], brute);
            assert_eq!(d.level2[p].values().sum::<usize>(), d.level1[p]);
        }
    }
}
