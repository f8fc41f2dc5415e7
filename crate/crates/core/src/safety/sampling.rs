//! Stratified review sampling by sensitive-term density.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lexicon::SensitiveLexicon;
use crate::document::Document;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SamplingError {
    #[error("stratum boundaries must be at least two strictly increasing values")]
    BadBoundaries,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub lo: f64,
    pub hi: f64,
    pub population: usize,
    /// Sampled ids in corpus order.
    pub ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedSample {
    pub strata: Vec<Stratum>,
    /// Indices of strata with no documents.
    pub empty_strata: Vec<usize>,
}

impl StratifiedSample {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.strata.iter().flat_map(|s| s.ids.iter().map(String::as_str))
    }
}

/// Strata are `[b_i, b_{i+1})`, the last one closed. Each contributes
/// `min(per_stratum, population)` documents drawn uniformly.
pub fn stratified_sample_by_density(
    docs: &[Document],
    lex: &SensitiveLexicon,
    boundaries: &[f64],
    per_stratum: usize,
    seed: u64,
) -> Result<StratifiedSample, SamplingError> {
    if boundaries.len() < 2 || boundaries.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(SamplingError::BadBoundaries);
    }
    let k = boundaries.len() - 1;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, d) in docs.iter().enumerate() {
        let density = lex.hits(&d.text, d.language.as_ref()).density();
        let last = boundaries[k];
        let s = (0..k).find(|&s| density >= boundaries[s] && (density < boundaries[s + 1] || (s == k - 1 && density <= last)));
        if let Some(s) = s {
            members[s].push(i);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut strata = Vec::with_capacity(k);
    let mut empty_strata = Vec::new();
    for (s, m) in members.into_iter().enumerate() {
        if m.is_empty() {
            empty_strata.push(s);
        }
        let take = per_stratum.min(m.len());
        let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, m.len(), take).into_iter().map(|j| m[j]).collect();
        picked.sort_unstable();
        strata.push(Stratum {
            lo: boundaries[s],
            hi: boundaries[s + 1],
            population: m.len(),
            ids: picked.into_iter().map(|i| docs[i].id.clone()).collect(),
        });
    }
    Ok(StratifiedSample { strata, empty_strata })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lex() -> SensitiveLexicon {
        SensitiveLexicon::parse("casino\tall\t1\tlow").unwrap()
    }

    fn corpus() -> Vec<Document> {
        // 30 documents at density 0, 12 at density 0.1.
        let mut docs: Vec<Document> = (0..30).map(|i| Document::new(format!("z{i}"), "one two three four five six seven eight nine ten")).collect();
        docs.extend((0..12).map(|i| Document::new(format!("h{i}"), "casino two three four five six seven eight nine ten")));
        docs
    }

    #[test]
    fn single_stratum_returns_everything() {
        let docs = corpus();
        let s = stratified_sample_by_density(&docs, &lex(), &[0.0, 1.0], 1000, 1).unwrap();
        assert_eq!(s.ids().count(), docs.len());
        assert!(s.empty_strata.is_empty());
    }

    #[test]
    fn per_stratum_counts_follow_construction() {
        let s = stratified_sample_by_density(&corpus(), &lex(), &[0.0, 0.05, 1.0], 10, 2).unwrap();
        assert_eq!(s.strata[0].population, 30);
        assert_eq!(s.strata[1].population, 12);
        assert_eq!(s.strata[0].ids.len(), 10);
        assert_eq!(s.strata[1].ids.len(), 10);
        assert!(s.strata[0].ids.iter().all(|i| i.starts_with('z')));
        assert!(s.strata[1].ids.iter().all(|i| i.starts_with('h')));
    }

    #[test]
    fn deterministic_and_reports_empty_strata() {
        let a = stratified_sample_by_density(&corpus(), &lex(), &[0.0, 0.05, 0.5, 1.0], 5, 9).unwrap();
        let b = stratified_sample_by_density(&corpus(), &lex(), &[0.0, 0.05, 0.5, 1.0], 5, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.empty_strata, [2]);
    }

    #[test]
    fn boundaries_validated() {
        assert_eq!(stratified_sample_by_density(&[], &lex(), &[0.5], 1, 0), Err(SamplingError::BadBoundaries));
        assert_eq!(stratified_sample_by_density(&[], &lex(), &[0.5, 0.5], 1, 0), Err(SamplingError::BadBoundaries));
    }
}
