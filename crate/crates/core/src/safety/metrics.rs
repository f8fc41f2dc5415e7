//! Recall and precision per class, computed exactly before conversion.

use std::collections::BTreeMap;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("id {0:?} appears in only one of predictions and gold labels")]
    IdMismatch(String),
    #[error("id {0:?} appears twice")]
    DuplicateId(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

/// A ratio metric; `undefined` when its denominator is zero (value then 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub value: f64,
    pub undefined: bool,
    #[serde(skip)]
    pub exact: Option<Ratio<u64>>,
}

impl Metric {
    fn of(num: u64, den: u64) -> Self {
        if den == 0 {
            Metric { value: 0.0, undefined: true, exact: None }
        } else {
            let r = Ratio::new(num, den);
            Metric { value: *r.numer() as f64 / *r.denom() as f64, undefined: false, exact: Some(r) }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub recall: Metric,
    pub precision: Metric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyMetrics {
    pub counts: Confusion,
    pub toxic: ClassMetrics,
    pub non_toxic: ClassMetrics,
}

impl SafetyMetrics {
    pub fn from_counts(c: Confusion) -> Self {
        SafetyMetrics {
            counts: c,
            toxic: ClassMetrics { recall: Metric::of(c.tp, c.tp + c.fn_), precision: Metric::of(c.tp, c.tp + c.fp) },
            non_toxic: ClassMetrics { recall: Metric::of(c.tn, c.tn + c.fp), precision: Metric::of(c.tn, c.tn + c.fn_) },
        }
    }

    /// Two-row text table: class, recall, precision.
    pub fn render(&self) -> String {
        let cell = |m: &Metric| if m.undefined { "n/a".to_owned() } else { format!("{:.4}", m.value) };
        let mut s = String::from("class\trecall\tprecision\n");
        for (name, c) in [("toxic", &self.toxic), ("non-toxic", &self.non_toxic)] {
            s.push_str(&format!("{name}\t{}\t{}\n", cell(&c.recall), cell(&c.precision)));
        }
        s
    }
}

/// Compares predicted against gold toxic flags (`true` = toxic) by id.
pub fn safety_metrics(predictions: &[(String, bool)], gold: &[(String, bool)]) -> Result<SafetyMetrics, MetricsError> {
    let mut g: BTreeMap<&str, bool> = BTreeMap::new();
    for (id, t) in gold {
        if g.insert(id, *t).is_some() {
            return Err(MetricsError::DuplicateId(id.clone()));
        }
    }
    let mut c = Confusion::default();
    let mut seen = 0;
    let mut pred_ids = std::collections::HashSet::new();
    for (id, p) in predictions {
        if !pred_ids.insert(id.as_str()) {
            return Err(MetricsError::DuplicateId(id.clone()));
        }
        let truth = *g.get(id.as_str()).ok_or_else(|| MetricsError::IdMismatch(id.clone()))?;
        seen += 1;
        match (p, truth) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    if seen != g.len() {
        let missing = g.keys().find(|k| !pred_ids.contains(*k)).expect("some gold id unmatched");
        return Err(MetricsError::IdMismatch(missing.to_string()));
    }
    Ok(SafetyMetrics::from_counts(c))
}
