//! MinHash near-duplicate detection with banded LSH.
//!
//! Signatures are computed in parallel; index insertion walks the stream in
//! order on one thread, which is what makes the earliest document of each
//! cluster its representative.

use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::document::{Document, StageAnnotation, Verdict};
use crate::hashing::{fmix64, fnv1a64, fnv1a64_extend, splitmix64, FNV1A64_OFFSET};
use crate::stage::{Stage, StageError};

pub const STAGE: &str = "dedup";
pub const DEFAULT_SHINGLE_WIDTH: usize = 5;
pub const DEFAULT_NUM_PERM: usize = 128;
pub const DEFAULT_BANDS: usize = 16;
pub const DEFAULT_ROWS: usize = 8;
pub const DEFAULT_VERIFY_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DedupError {
    #[error("shingle width must be at least 1")]
    ZeroWidth,
    #[error("cannot sign an empty shingle set")]
    EmptyShingleSet,
    #[error("num_perm must be at least 1")]
    ZeroPermutations,
    #[error("signatures differ in num_perm ({0} vs {1})")]
    PermMismatch(usize, usize),
    #[error("signatures use different seeds")]
    SeedMismatch,
    #[error("bands × rows = {product} but num_perm = {num_perm}")]
    BandShape { product: usize, num_perm: usize },
    #[error("verify threshold {0} outside (0, 1]")]
    BadThreshold(f64),
}

/// Sorted, distinct hashes of the k-character windows of a text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShingleSet {
    hashes: Vec<u64>,
    k: usize,
}

impl ShingleSet {
    pub fn from_hashes(mut hashes: Vec<u64>, k: usize) -> Self {
        hashes.sort_unstable();
        hashes.dedup();
        ShingleSet { hashes, k }
    }

    pub fn hashes(&self) -> &[u64] {
        &self.hashes
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.hashes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hashes.is_empty()
    }

    pub fn exact_jaccard(&self, other: &ShingleSet) -> f64 {
        let (a, b) = (&self.hashes, &other.hashes);
        let (mut i, mut j, mut inter) = (0, 0, 0usize);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    inter += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        let union = a.len() + b.len() - inter;
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Lowercases and collapses whitespace runs to single spaces.
pub fn normalize_for_shingles(text: &str) -> Vec<char> {
    let mut out = Vec::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(word.chars().flat_map(char::to_lowercase));
    }
    out
}

pub fn shingle(text: &str, k: usize) -> Result<ShingleSet, DedupError> {
    if k == 0 {
        return Err(DedupError::ZeroWidth);
    }
    let chars = normalize_for_shingles(text);
    let mut buf = String::new();
    let hashes = chars
        .windows(k)
        .map(|w| {
            buf.clear();
            buf.extend(w);
            fnv1a64(buf.as_bytes())
        })
        .collect();
    Ok(ShingleSet::from_hashes(hashes, k))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinHashSignature {
    pub values: Vec<u64>,
    pub seed: u64,
}

impl MinHashSignature {
    pub fn num_perm(&self) -> usize {
        self.values.len()
    }
}

/// The seeded hash family: `h_i(x) = fmix64((x ^ b_i) * a_i)` with odd `a_i`.
/// Each member is a bijection on u64.
#[derive(Debug, Clone)]
pub struct MinHasher {
    mul: Vec<u64>,
    xor: Vec<u64>,
    seed: u64,
}

impl MinHasher {
    pub fn new(num_perm: usize, seed: u64) -> Result<Self, DedupError> {
        if num_perm == 0 {
            return Err(DedupError::ZeroPermutations);
        }
        let mut state = seed;
        let mut mul = Vec::with_capacity(num_perm);
        let mut xor = Vec::with_capacity(num_perm);
        for _ in 0..num_perm {
            mul.push(splitmix64(&mut state) | 1);
            xor.push(splitmix64(&mut state));
        }
        Ok(MinHasher { mul, xor, seed })
    }

    pub fn num_perm(&self) -> usize {
        self.mul.len()
    }

    pub fn sign(&self, set: &ShingleSet) -> Result<MinHashSignature, DedupError> {
        if set.is_empty() {
            return Err(DedupError::EmptyShingleSet);
        }
        let mut values = vec![u64::MAX; self.mul.len()];
        for &x in set.hashes() {
            for (v, (&a, &b)) in values.iter_mut().zip(self.mul.iter().zip(&self.xor)) {
                let h = fmix64((x ^ b).wrapping_mul(a));
                if h < *v {
                    *v = h;
                }
            }
        }
        Ok(MinHashSignature { values, seed: self.seed })
    }
}

pub fn minhash_signature(set: &ShingleSet, num_perm: usize, seed: u64) -> Result<MinHashSignature, DedupError> {
    MinHasher::new(num_perm, seed)?.sign(set)
}

pub fn estimate_jaccard(a: &MinHashSignature, b: &MinHashSignature) -> Result<f64, DedupError> {
    if a.num_perm() != b.num_perm() {
        return Err(DedupError::PermMismatch(a.num_perm(), b.num_perm()));
    }
    if a.seed != b.seed {
        return Err(DedupError::SeedMismatch);
    }
    let equal = a.values.iter().zip(&b.values).filter(|(x, y)| x == y).count();
    Ok(equal as f64 / a.num_perm() as f64)
}

/// Probability that a pair with Jaccard `s` collides in at least one band.
pub fn band_collision_probability(s: f64, bands: usize, rows: usize) -> f64 {
    1.0 - (1.0 - s.powi(rows as i32)).powi(bands as i32)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplicateCluster {
    pub representative: String,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DedupScope {
    /// Separate index per document language.
    Language,
    Global,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DedupParams {
    pub shingle_width: usize,
    pub num_perm: usize,
    pub bands: usize,
    pub rows: usize,
    pub verify_threshold: f64,
    pub seed: u64,
    pub scope: DedupScope,
}

impl Default for DedupParams {
    fn default() -> Self {
        DedupParams {
            shingle_width: DEFAULT_SHINGLE_WIDTH,
            num_perm: DEFAULT_NUM_PERM,
            bands: DEFAULT_BANDS,
            rows: DEFAULT_ROWS,
            verify_threshold: DEFAULT_VERIFY_THRESHOLD,
            seed: 0,
            scope: DedupScope::Language,
        }
    }
}

impl DedupParams {
    pub fn validate(&self) -> Result<(), DedupError> {
        if self.shingle_width == 0 {
            return Err(DedupError::ZeroWidth);
        }
        if self.num_perm == 0 {
            return Err(DedupError::ZeroPermutations);
        }
        if self.bands * self.rows != self.num_perm {
            return Err(DedupError::BandShape { product: self.bands * self.rows, num_perm: self.num_perm });
        }
        if !(self.verify_threshold > 0.0 && self.verify_threshold <= 1.0) {
            return Err(DedupError::BadThreshold(self.verify_threshold));
        }
        Ok(())
    }
}

/// Banded LSH index over cluster representatives.
#[derive(Debug)]
pub struct LshIndex {
    bands: usize,
    rows: usize,
    verify_threshold: f64,
    buckets: HashMap<(usize, u64), Vec<usize>>,
    clusters: Vec<IndexedCluster>,
}

#[derive(Debug)]
struct IndexedCluster {
    ids: Vec<String>,
    signatures: Vec<MinHashSignature>,
}

/// Where an inserted signature landed.
#[derive(Debug, Clone, PartialEq)]
pub enum Insertion {
    Representative,
    /// Joined an existing cluster; carries the representative id and the
    /// lowest estimated similarity to any member.
    Duplicate { representative: String, similarity: f64 },
}

impl LshIndex {
    pub fn new(bands: usize, rows: usize, verify_threshold: f64) -> Self {
        LshIndex { bands, rows, verify_threshold, buckets: HashMap::new(), clusters: Vec::new() }
    }

    fn band_keys(&self, sig: &MinHashSignature) -> impl Iterator<Item = (usize, u64)> + '_ {
        let values = sig.values.clone();
        (0..self.bands).map(move |band| {
            let mut h = FNV1A64_OFFSET;
            for v in &values[band * self.rows..(band + 1) * self.rows] {
                h = fnv1a64_extend(h, &v.to_le_bytes());
            }
            (band, h)
        })
    }

    pub fn insert(&mut self, id: &str, sig: MinHashSignature) -> Result<Insertion, DedupError> {
        if sig.num_perm() != self.bands * self.rows {
            return Err(DedupError::BandShape { product: self.bands * self.rows, num_perm: sig.num_perm() });
        }
        let keys: Vec<_> = self.band_keys(&sig).collect();
        let mut candidates: Vec<usize> =
            keys.iter().filter_map(|k| self.buckets.get(k)).flatten().copied().collect();
        candidates.sort_unstable();
        candidates.dedup();
        for c in candidates {
            let cluster = &self.clusters[c];
            let mut min_sim = f64::INFINITY;
            for member in &cluster.signatures {
                min_sim = min_sim.min(estimate_jaccard(&sig, member)?);
                if min_sim < self.verify_threshold {
                    break;
                }
            }
            if min_sim >= self.verify_threshold {
                let cluster = &mut self.clusters[c];
                cluster.ids.push(id.to_owned());
                cluster.signatures.push(sig);
                return Ok(Insertion::Duplicate { representative: cluster.ids[0].clone(), similarity: min_sim });
            }
        }
        let index = self.clusters.len();
        for k in keys {
            self.buckets.entry(k).or_default().push(index);
        }
        self.clusters.push(IndexedCluster { ids: vec![id.to_owned()], signatures: vec![sig] });
        Ok(Insertion::Representative)
    }

    /// Clusters with at least two members, in representative stream order.
    pub fn clusters(&self) -> Vec<DuplicateCluster> {
        self.clusters
            .iter()
            .filter(|c| c.ids.len() > 1)
            .map(|c| DuplicateCluster { representative: c.ids[0].clone(), members: c.ids.clone() })
            .collect()
    }
}

/// Deduplicates the live documents in `docs`, rejecting later cluster
/// members with reason `near_duplicate`. Documents with no shingles are kept
/// and flagged `exempt`.
pub fn lsh_dedup(docs: &mut [Document], params: &DedupParams) -> Result<Vec<DuplicateCluster>, DedupError> {
    params.validate()?;
    let hasher = MinHasher::new(params.num_perm, params.seed)?;
    let signatures: Vec<Option<MinHashSignature>> = docs
        .par_iter()
        .map(|d| {
            if d.is_rejected() {
                return Ok(None);
            }
            let set = shingle(&d.text, params.shingle_width)?;
            if set.is_empty() {
                Ok(None)
            } else {
                hasher.sign(&set).map(Some)
            }
        })
        .collect::<Result<_, DedupError>>()?;

    let mut indexes: BTreeMap<String, LshIndex> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for (doc, sig) in docs.iter_mut().zip(signatures) {
        if doc.is_rejected() {
            continue;
        }
        let Some(sig) = sig else {
            doc.annotate(StageAnnotation::new(STAGE, Verdict::Keep).label("exempt", "empty_shingle_set"));
            continue;
        };
        let scope_key = match params.scope {
            DedupScope::Global => String::new(),
            DedupScope::Language => doc.language.as_ref().map(|l| l.as_str().to_owned()).unwrap_or_default(),
        };
        let index = indexes.entry(scope_key.clone()).or_insert_with(|| {
            order.push(scope_key.clone());
            LshIndex::new(params.bands, params.rows, params.verify_threshold)
        });
        match index.insert(&doc.id, sig)? {
            Insertion::Representative => doc.annotate(StageAnnotation::new(STAGE, Verdict::Keep)),
            Insertion::Duplicate { representative, similarity } => doc.reject(
                StageAnnotation::new(STAGE, Verdict::Drop)
                    .reason("near_duplicate")
                    .score("similarity", similarity)
                    .label("duplicate_of", representative),
            ),
        }
    }

    // Report clusters in representative stream order across scopes.
    let position: HashMap<&str, usize> = docs.iter().enumerate().map(|(i, d)| (d.id.as_str(), i)).collect();
    let mut clusters: Vec<DuplicateCluster> = order.iter().flat_map(|k| indexes[k].clusters()).collect();
    clusters.sort_by_key(|c| position.get(c.representative.as_str()).copied().unwrap_or(usize::MAX));
    Ok(clusters)
}

/// Pipeline stage; the clusters of the last run are kept for the report.
pub struct DedupStage {
    pub params: DedupParams,
    clusters: Mutex<Vec<DuplicateCluster>>,
}

impl DedupStage {
    pub fn new(params: DedupParams) -> Result<Self, DedupError> {
        params.validate()?;
        Ok(DedupStage { params, clusters: Mutex::new(Vec::new()) })
    }

    pub fn take_clusters(&self) -> Vec<DuplicateCluster> {
        std::mem::take(&mut *self.clusters.lock().expect("cluster lock"))
    }
}

impl Stage for DedupStage {
    fn name(&self) -> &str {
        STAGE
    }

    fn run(&self, docs: &mut [Document]) -> Result<(), StageError> {
        let clusters = lsh_dedup(docs, &self.params).map_err(|e| StageError::new(STAGE, e))?;
        *self.clusters.lock().expect("cluster lock") = clusters;
        Ok(())
    }
}
