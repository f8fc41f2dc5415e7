//! Linear text classifier over hashed word and character n-grams.
//!
//! One model type backs language ID, the second-stage quality head, the
//! four-way toxicity head and the theme head. Features are bag-of-n-grams
//! hashed into a fixed bucket count with FNV-1a and L2-normalized; the model is
//! a dense `labels x buckets` weight matrix plus per-label bias, trained by
//! plain SGD with linearly decaying learning rate.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::hashing::{fnv1a64_extend, FNV1A64_OFFSET};

#[derive(Debug, thiserror::Error)]
pub enum TextClfError {
    #[error("invalid feature config: {0}")]
    InvalidFeatureConfig(String),
    #[error("training data is empty")]
    EmptyData,
    #[error("need at least {needed} distinct labels, found {found}")]
    InsufficientLabels { needed: usize, found: usize },
    #[error("example {index} has no labels or repeats a label")]
    BadExample { index: usize },
    #[error("label {0:?} is not known to the model")]
    UnknownLabel(String),
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Longest word n-gram; 0 disables word features.
    pub word_ngrams: usize,
    /// Inclusive character n-gram length range; `None` disables.
    pub char_ngrams: Option<(usize, usize)>,
    /// Power of two, at least 2^10.
    pub hash_buckets: usize,
    pub lowercase: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig { word_ngrams: 1, char_ngrams: Some((1, 4)), hash_buckets: 1 << 20, lowercase: true }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<(), TextClfError> {
        let bad = |m: &str| Err(TextClfError::InvalidFeatureConfig(m.to_owned()));
        if !self.hash_buckets.is_power_of_two() || self.hash_buckets < 1 << 10 || self.hash_buckets > 1 << 30 {
            return bad("hash_buckets must be a power of two in [2^10, 2^30]");
        }
        if let Some((lo, hi)) = self.char_ngrams {
            if lo == 0 || lo > hi {
                return bad("char n-gram range must satisfy 1 <= min <= max");
            }
        }
        if self.word_ngrams == 0 && self.char_ngrams.is_none() {
            return bad("at least one feature family must be enabled");
        }
        Ok(())
    }
}

/// Sparse feature vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVector {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseVector {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().map(|&i| i as usize).zip(self.values.iter().copied())
    }
}

/// Hashed n-gram counts, L2-normalized.
pub fn featurize(text: &str, cfg: &FeatureConfig) -> SparseVector {
    let owned;
    let text = if cfg.lowercase {
        owned = text.to_lowercase();
        owned.as_str()
    } else {
        text
    };
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.is_empty() {
        return SparseVector::default();
    }
    let mask = (cfg.hash_buckets - 1) as u64;
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    let mut add = |h: u64| *counts.entry((h & mask) as u32).or_insert(0.0) += 1.0;

    for n in 1..=cfg.word_ngrams.min(tokens.len()) {
        for window in tokens.windows(n) {
            let mut h = fnv1a64_extend(FNV1A64_OFFSET, &[b'w', n as u8]);
            for (i, t) in window.iter().enumerate() {
                if i > 0 {
                    h = fnv1a64_extend(h, &[0x1f]);
                }
                h = fnv1a64_extend(h, t.as_bytes());
            }
            add(h);
        }
    }

    if let Some((lo, hi)) = cfg.char_ngrams {
        let joined = tokens.join(" ");
        // Byte offsets of every char boundary, so windows slice cheaply.
        let bounds: Vec<usize> = joined.char_indices().map(|(i, _)| i).chain([joined.len()]).collect();
        let nchars = bounds.len() - 1;
        for n in lo..=hi.min(nchars) {
            for start in 0..=nchars - n {
                let gram = &joined[bounds[start]..bounds[start + n]];
                let h = fnv1a64_extend(FNV1A64_OFFSET, &[b'c', n as u8]);
                add(fnv1a64_extend(h, gram.as_bytes()));
            }
        }
    }

    let norm = counts.values().map(|v| v * v).sum::<f64>().sqrt();
    let (indices, values) = counts.into_iter().map(|(i, v)| (i, v / norm)).unzip();
    SparseVector { indices, values }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub text: String,
    pub labels: Vec<String>,
}

impl LabeledExample {
    pub fn new(text: impl Into<String>, label: impl Into<String>) -> Self {
        LabeledExample { text: text.into(), labels: vec![label.into()] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputMode {
    /// Single-label: scores form a probability distribution.
    Softmax,
    /// Multi-label: independent per-label probabilities.
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainParams {
    pub mode: OutputMode,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams { mode: OutputMode::Softmax, epochs: 10, learning_rate: 0.5, seed: 0 }
    }
}

/// Per-label scores in model label order.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub scores: Vec<(String, f64)>,
}

impl Prediction {
    /// Highest-scoring label; ties go to the earlier label.
    pub fn argmax(&self) -> (&str, f64) {
        let mut best = 0;
        for (i, (_, s)) in self.scores.iter().enumerate() {
            if *s > self.scores[best].1 {
                best = i;
            }
        }
        (&self.scores[best].0, self.scores[best].1)
    }

    pub fn get(&self, label: &str) -> Option<f64> {
        self.scores.iter().find(|(l, _)| l == label).map(|(_, s)| *s)
    }
}

/// Gradient of mean training loss with respect to model parameters.
#[derive(Debug, Clone)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearTextModel {
    feature_config: FeatureConfig,
    labels: Vec<String>,
    /// Label-major: `weights[label * buckets + bucket]`.
    weights: Vec<f64>,
    bias: Vec<f64>,
    mode: OutputMode,
}

struct Encoded {
    features: SparseVector,
    target: Vec<f64>,
}

impl LinearTextModel {
    /// A zero-weight model; mostly useful for tests and as a training start.
    pub fn new(feature_config: FeatureConfig, labels: Vec<String>, mode: OutputMode) -> Result<Self, TextClfError> {
        feature_config.validate()?;
        let unique: HashSet<_> = labels.iter().collect();
        if unique.len() != labels.len() || labels.is_empty() {
            return Err(TextClfError::InsufficientLabels { needed: 1, found: unique.len() });
        }
        let n = labels.len() * feature_config.hash_buckets;
        Ok(LinearTextModel { weights: vec![0.0; n], bias: vec![0.0; labels.len()], feature_config, labels, mode })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn mode(&self) -> OutputMode {
        self.mode
    }

    pub fn feature_config(&self) -> &FeatureConfig {
        &self.feature_config
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Mutable access to `(weights, bias)`, e.g. for finite-difference checks.
    pub fn params_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.weights, &mut self.bias)
    }

    fn logits(&self, x: &SparseVector) -> Vec<f64> {
        let b = self.feature_config.hash_buckets;
        (0..self.labels.len())
            .map(|l| {
                let row = &self.weights[l * b..(l + 1) * b];
                self.bias[l] + x.iter().map(|(j, v)| row[j] * v).sum::<f64>()
            })
            .collect()
    }

    fn activate(&self, mut z: Vec<f64>) -> Vec<f64> {
        match self.mode {
            OutputMode::Softmax => {
                let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for v in z.iter_mut() {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                z.iter_mut().for_each(|v| *v /= sum);
                z
            }
            OutputMode::Sigmoid => z.into_iter().map(sigmoid).collect(),
        }
    }

    fn probabilities(&self, x: &SparseVector) -> Vec<f64> {
        self.activate(self.logits(x))
    }

    pub fn predict(&self, text: &str) -> Prediction {
        let p = self.probabilities(&featurize(text, &self.feature_config));
        Prediction { scores: self.labels.iter().cloned().zip(p).collect() }
    }

    fn encode(&self, data: &[LabeledExample]) -> Result<Vec<Encoded>, TextClfError> {
        data.iter()
            .enumerate()
            .map(|(index, ex)| {
                let mut target = vec![0.0; self.labels.len()];
                let unique: HashSet<_> = ex.labels.iter().collect();
                // Sigmoid examples may carry no labels: all-negative targets.
                let empty_ok = self.mode == OutputMode::Sigmoid;
                if (ex.labels.is_empty() && !empty_ok) || unique.len() != ex.labels.len() {
                    return Err(TextClfError::BadExample { index });
                }
                // Softmax spreads unit mass over the listed labels.
                let mass = match self.mode {
                    OutputMode::Softmax => 1.0 / ex.labels.len() as f64,
                    OutputMode::Sigmoid => 1.0,
                };
                for l in &ex.labels {
                    let k = self
                        .labels
                        .iter()
                        .position(|m| m == l)
                        .ok_or_else(|| TextClfError::UnknownLabel(l.clone()))?;
                    target[k] = mass;
                }
                Ok(Encoded { features: featurize(&ex.text, &self.feature_config), target })
            })
            .collect()
    }

    fn example_loss(&self, p: &[f64], target: &[f64]) -> f64 {
        const EPS: f64 = 1e-300;
        match self.mode {
            OutputMode::Softmax => -target.iter().zip(p).map(|(y, p)| y * p.max(EPS).ln()).sum::<f64>(),
            OutputMode::Sigmoid => -target
                .iter()
                .zip(p)
                .map(|(y, p)| y * p.max(EPS).ln() + (1.0 - y) * (1.0 - p).max(EPS).ln())
                .sum::<f64>(),
        }
    }

    /// Mean cross-entropy over `data`.
    pub fn loss(&self, data: &[LabeledExample]) -> Result<f64, TextClfError> {
        let enc = self.encode(data)?;
        Ok(self.encoded_loss(&enc))
    }

    fn encoded_loss(&self, enc: &[Encoded]) -> f64 {
        let total: f64 = enc.iter().map(|e| self.example_loss(&self.probabilities(&e.features), &e.target)).sum();
        total / enc.len().max(1) as f64
    }

    /// Mean loss and its analytic gradient. For both output modes the
    /// derivative of the loss with respect to logit `l` is `p_l - y_l`.
    pub fn loss_and_gradient(&self, data: &[LabeledExample]) -> Result<(f64, Gradient), TextClfError> {
        let enc = self.encode(data)?;
        let b = self.feature_config.hash_buckets;
        let mut grad = Gradient { weights: vec![0.0; self.weights.len()], bias: vec![0.0; self.bias.len()] };
        let scale = 1.0 / enc.len().max(1) as f64;
        let mut loss = 0.0;
        for e in &enc {
            let p = self.probabilities(&e.features);
            loss += self.example_loss(&p, &e.target);
            for l in 0..self.labels.len() {
                let g = (p[l] - e.target[l]) * scale;
                grad.bias[l] += g;
                for (j, v) in e.features.iter() {
                    grad.weights[l * b + j] += g * v;
                }
            }
        }
        Ok((loss * scale, grad))
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Trains a model from zero weights. Labels are ordered by first appearance.
pub fn train(data: &[LabeledExample], cfg: &FeatureConfig, params: &TrainParams) -> Result<LinearTextModel, TextClfError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(TextClfError::EmptyData);
    }
    let mut labels: Vec<String> = Vec::new();
    for ex in data {
        for l in &ex.labels {
            if !labels.contains(l) {
                labels.push(l.clone());
            }
        }
    }
    let needed = match params.mode {
        OutputMode::Softmax => 2,
        OutputMode::Sigmoid => 1,
    };
    // A single-class softmax is degenerate but well defined; accept it only
    // when every example agrees, so "train on one language" still works.
    if labels.len() < needed && !(params.mode == OutputMode::Softmax && labels.len() == 1) {
        return Err(TextClfError::InsufficientLabels { needed, found: labels.len() });
    }
    train_with_labels(data, cfg, labels, params)
}

/// Trains with a fixed label order (labels absent from `data` are allowed).
pub fn train_with_labels(
    data: &[LabeledExample],
    cfg: &FeatureConfig,
    labels: Vec<String>,
    params: &TrainParams,
) -> Result<LinearTextModel, TextClfError> {
    if data.is_empty() {
        return Err(TextClfError::EmptyData);
    }
    let mut model = LinearTextModel::new(cfg.clone(), labels, params.mode)?;
    let enc = model.encode(data)?;
    let b = cfg.hash_buckets;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut order: Vec<usize> = (0..enc.len()).collect();
    let total_steps = (params.epochs * enc.len()).max(1) as f64;
    let mut step = 0usize;
    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let lr = params.learning_rate * (1.0 - step as f64 / total_steps);
            step += 1;
            let e = &enc[i];
            let p = model.probabilities(&e.features);
            for l in 0..model.labels.len() {
                let g = p[l] - e.target[l];
                if g == 0.0 {
                    continue;
                }
                model.bias[l] -= lr * g;
                let row = &mut model.weights[l * b..(l + 1) * b];
                for (j, v) in e.features.iter() {
                    row[j] -= lr * g * v;
                }
            }
        }
    }
    Ok(model)
}

const MAGIC: &[u8; 8] = b"CURTXCLF";
const VERSION: u32 = 1;

impl LinearTextModel {
    /// Writes the versioned binary format; weights are stored as little-endian f32.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), TextClfError> {
        let fc = &self.feature_config;
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u8(match self.mode {
            OutputMode::Softmax => 0,
            OutputMode::Sigmoid => 1,
        })?;
        w.write_u32::<LittleEndian>(fc.word_ngrams as u32)?;
        let (lo, hi) = fc.char_ngrams.unwrap_or((0, 0));
        w.write_u32::<LittleEndian>(lo as u32)?;
        w.write_u32::<LittleEndian>(hi as u32)?;
        w.write_u32::<LittleEndian>(fc.hash_buckets as u32)?;
        w.write_u8(u8::from(fc.lowercase))?;
        w.write_u32::<LittleEndian>(self.labels.len() as u32)?;
        for l in &self.labels {
            w.write_u32::<LittleEndian>(l.len() as u32)?;
            w.write_all(l.as_bytes())?;
        }
        for &b in &self.bias {
            w.write_f32::<LittleEndian>(b as f32)?;
        }
        for &x in &self.weights {
            w.write_f32::<LittleEndian>(x as f32)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, TextClfError> {
        let fmt = |m: &str| TextClfError::Format(m.to_owned());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(fmt("bad magic bytes"));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(TextClfError::Format(format!("unsupported version {version}")));
        }
        let mode = match r.read_u8()? {
            0 => OutputMode::Softmax,
            1 => OutputMode::Sigmoid,
            m => return Err(TextClfError::Format(format!("unknown output mode {m}"))),
        };
        let word_ngrams = r.read_u32::<LittleEndian>()? as usize;
        let lo = r.read_u32::<LittleEndian>()? as usize;
        let hi = r.read_u32::<LittleEndian>()? as usize;
        let hash_buckets = r.read_u32::<LittleEndian>()? as usize;
        let lowercase = r.read_u8()? != 0;
        let feature_config = FeatureConfig {
            word_ngrams,
            char_ngrams: if lo == 0 && hi == 0 { None } else { Some((lo, hi)) },
            hash_buckets,
            lowercase,
        };
        feature_config.validate()?;
        let nlabels = r.read_u32::<LittleEndian>()? as usize;
        if nlabels == 0 || nlabels > 1 << 16 {
            return Err(fmt("implausible label count"));
        }
        let mut labels = Vec::with_capacity(nlabels);
        for _ in 0..nlabels {
            let len = r.read_u32::<LittleEndian>()? as usize;
            if len > 1 << 16 {
                return Err(fmt("implausible label length"));
            }
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf)?;
            labels.push(String::from_utf8(buf).map_err(|_| fmt("label is not UTF-8"))?);
        }
        let mut model = LinearTextModel::new(feature_config, labels, mode)?;
        for b in model.bias.iter_mut() {
            *b = r.read_f32::<LittleEndian>()? as f64;
        }
        let mut buf = vec![0f32; model.weights.len()];
        r.read_f32_into::<LittleEndian>(&mut buf)?;
        for (w, x) in model.weights.iter_mut().zip(buf) {
            if !x.is_finite() {
                return Err(fmt("non-finite weight"));
            }
            *w = x as f64;
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TextClfError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TextClfError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}
