//! Interpolated absolute-discounting n-gram model.
//!
//! `P_m(w | h) = max(c(h w) − D, 0) / c(h) + D · N1+(h ·) / c(h) · P_{m−1}(w | h')`
//! where `h'` drops the oldest context token, contexts never seen fall
//! through to the shorter context, and the base case is uniform over the
//! vocabulary plus `<unk>`. The end-of-sentence event is not modelled, so
//! every conditional distribution sums to one over the words and `<unk>`.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

pub const DEFAULT_ORDER: usize = 5;
pub const DEFAULT_DISCOUNT: f64 = 0.75;

const MAGIC: &[u8; 8] = b"CURNGRAM";
const VERSION: u32 = 1;

/// Token ids: `<unk>` is 0, `<s>` is 1 (context only), words from 2.
pub const UNK: u32 = 0;
pub const BOS: u32 = 1;
const FIRST_WORD: u32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum LmError {
    #[error("training corpus has no tokens")]
    EmptyCorpus,
    #[error("order must be at least 1")]
    ZeroOrder,
    #[error("discount {0} outside (0, 1)")]
    BadDiscount(f64),
    #[error("text has no tokens")]
    EmptyText,
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tokenizer {
    /// Lowercased whitespace-separated words.
    Whitespace,
    /// Lowercased non-space characters, for scripts without word spacing.
    Chars,
}

impl Tokenizer {
    pub fn for_language(lang: &str) -> Self {
        match lang {
            "th" => Tokenizer::Chars,
            _ => Tokenizer::Whitespace,
        }
    }

    /// Splits text into sentences (non-empty lines) of tokens.
    pub fn sentences(self, text: &str) -> Vec<Vec<String>> {
        text.lines()
            .map(|line| match self {
                Tokenizer::Whitespace => line.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>(),
                Tokenizer::Chars => line
                    .chars()
                    .filter(|c| !c.is_whitespace())
                    .flat_map(char::to_lowercase)
                    .map(String::from)
                    .collect(),
            })
            .filter(|s| !s.is_empty())
            .collect()
    }

    fn code(self) -> u8 {
        match self {
            Tokenizer::Whitespace => 0,
            Tokenizer::Chars => 1,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Tokenizer::Whitespace),
            1 => Some(Tokenizer::Chars),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct ContextCounts {
    total: u64,
    followers: HashMap<u32, u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NgramLanguageModel {
    order: usize,
    discount: f64,
    tokenizer: Tokenizer,
    words: Vec<String>,
    ids: HashMap<String, u32>,
    /// `levels[m]` maps contexts of length `m` to follower counts.
    levels: Vec<HashMap<Vec<u32>, ContextCounts>>,
}

impl NgramLanguageModel {
    fn empty(order: usize, discount: f64, tokenizer: Tokenizer) -> Self {
        NgramLanguageModel {
            order,
            discount,
            tokenizer,
            words: Vec::new(),
            ids: HashMap::new(),
            levels: vec![HashMap::new(); order],
        }
    }

    /// Uniform unigram model over `words` plus `<unk>`.
    pub fn uniform<S: AsRef<str>>(words: &[S]) -> Self {
        let mut m = Self::empty(1, DEFAULT_DISCOUNT, Tokenizer::Whitespace);
        for w in words {
            m.intern(&w.as_ref().to_lowercase());
        }
        m
    }

    /// Trains on sentences, one per line of each text.
    pub fn train<'a, I>(texts: I, order: usize, discount: f64, tokenizer: Tokenizer) -> Result<Self, LmError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        if order == 0 {
            return Err(LmError::ZeroOrder);
        }
        if !(discount > 0.0 && discount < 1.0) {
            return Err(LmError::BadDiscount(discount));
        }
        let mut m = Self::empty(order, discount, tokenizer);
        let mut any = false;
        for text in texts {
            for sentence in tokenizer.sentences(text) {
                any = true;
                let ids: Vec<u32> = sentence.iter().map(|t| m.intern(t)).collect();
                let padded = m.pad(&ids);
                for i in order - 1..padded.len() {
                    let w = padded[i];
                    for len in 0..order {
                        let ctx = padded[i - len..i].to_vec();
                        let c = m.levels[len].entry(ctx).or_default();
                        c.total += 1;
                        *c.followers.entry(w).or_insert(0) += 1;
                    }
                }
            }
        }
        if !any {
            return Err(LmError::EmptyCorpus);
        }
        Ok(m)
    }

    fn intern(&mut self, w: &str) -> u32 {
        if let Some(&id) = self.ids.get(w) {
            return id;
        }
        let id = FIRST_WORD + self.words.len() as u32;
        self.words.push(w.to_owned());
        self.ids.insert(w.to_owned(), id);
        id
    }

    fn pad(&self, ids: &[u32]) -> Vec<u32> {
        let mut padded = vec![BOS; self.order - 1];
        padded.extend_from_slice(ids);
        padded
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn tokenizer(&self) -> Tokenizer {
        self.tokenizer
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.words
    }

    /// Number of predictable outcomes: words plus `<unk>`.
    pub fn outcome_count(&self) -> usize {
        self.words.len() + 1
    }

    pub fn token_id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    /// All predictable token ids, `<unk>` first.
    pub fn outcomes(&self) -> impl Iterator<Item = u32> {
        std::iter::once(UNK).chain(FIRST_WORD..FIRST_WORD + self.words.len() as u32)
    }

    /// Conditional probability of `w` after `context` (oldest first). Only the
    /// last `order − 1` context ids are used.
    pub fn prob(&self, context: &[u32], w: u32) -> f64 {
        let keep = context.len().min(self.order - 1);
        let ctx = &context[context.len() - keep..];
        let mut p = 1.0 / self.outcome_count() as f64;
        for len in 0..=ctx.len() {
            let h = &ctx[ctx.len() - len..];
            if let Some(c) = self.levels[len].get(h) {
                let total = c.total as f64;
                let cw = c.followers.get(&w).copied().unwrap_or(0) as f64;
                let types = c.followers.len() as f64;
                p = (cw - self.discount).max(0.0) / total + self.discount * types / total * p;
            }
        }
        p
    }

    /// Sum of log-probabilities and token count over all sentences of `text`.
    pub fn log_prob(&self, text: &str) -> (f64, usize) {
        let mut lp = 0.0;
        let mut n = 0;
        for sentence in self.tokenizer.sentences(text) {
            let ids: Vec<u32> = sentence.iter().map(|t| self.token_id(t)).collect();
            let padded = self.pad(&ids);
            for i in self.order - 1..padded.len() {
                lp += self.prob(&padded[i + 1 - self.order..i], padded[i]).ln();
                n += 1;
            }
        }
        (lp, n)
    }

    /// Per-token perplexity of `text`.
    pub fn perplexity(&self, text: &str) -> Result<f64, LmError> {
        match self.log_prob(text) {
            (_, 0) => Err(LmError::EmptyText),
            (lp, n) => Ok((-lp / n as f64).exp()),
        }
    }

    /// Contexts seen in training at each length, for property checks.
    pub fn contexts(&self, len: usize) -> Vec<Vec<u32>> {
        let mut v: Vec<_> = self.levels.get(len).map(|l| l.keys().cloned().collect()).unwrap_or_default();
        v.sort();
        v
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), LmError> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u32::<LittleEndian>(self.order as u32)?;
        w.write_f64::<LittleEndian>(self.discount)?;
        w.write_u8(self.tokenizer.code())?;
        w.write_u32::<LittleEndian>(self.words.len() as u32)?;
        for word in &self.words {
            w.write_u32::<LittleEndian>(word.len() as u32)?;
            w.write_all(word.as_bytes())?;
        }
        for level in &self.levels {
            // Sorted for byte-stable files.
            let sorted: BTreeMap<&Vec<u32>, &ContextCounts> = level.iter().collect();
            w.write_u64::<LittleEndian>(sorted.len() as u64)?;
            for (ctx, counts) in sorted {
                for &id in ctx {
                    w.write_u32::<LittleEndian>(id)?;
                }
                let followers: BTreeMap<_, _> = counts.followers.iter().collect();
                w.write_u32::<LittleEndian>(followers.len() as u32)?;
                for (&id, &c) in followers {
                    w.write_u32::<LittleEndian>(id)?;
                    w.write_u64::<LittleEndian>(c)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, LmError> {
        let fmt = |m: &str| LmError::Format(m.to_owned());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(fmt("not an n-gram model file"));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(LmError::Format(format!("unsupported version {version}")));
        }
        let order = r.read_u32::<LittleEndian>()? as usize;
        if order == 0 || order > 64 {
            return Err(fmt("bad order"));
        }
        let discount = r.read_f64::<LittleEndian>()?;
        let tokenizer = Tokenizer::from_code(r.read_u8()?).ok_or_else(|| fmt("bad tokenizer code"))?;
        let mut m = Self::empty(order, discount, tokenizer);
        let n_words = r.read_u32::<LittleEndian>()?;
        for _ in 0..n_words {
            let len = r.read_u32::<LittleEndian>()? as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf)?;
            let word = String::from_utf8(buf).map_err(|_| fmt("word is not UTF-8"))?;
            m.intern(&word);
        }
        let max_id = FIRST_WORD + n_words;
        for len in 0..order {
            let n_ctx = r.read_u64::<LittleEndian>()?;
            for _ in 0..n_ctx {
                let ctx = (0..len).map(|_| r.read_u32::<LittleEndian>()).collect::<Result<Vec<_>, _>>()?;
                let n_f = r.read_u32::<LittleEndian>()?;
                let mut counts = ContextCounts::default();
                for _ in 0..n_f {
                    let id = r.read_u32::<LittleEndian>()?;
                    let c = r.read_u64::<LittleEndian>()?;
                    if id >= max_id || c == 0 {
                        return Err(fmt("bad follower entry"));
                    }
                    counts.total += c;
                    counts.followers.insert(id, c);
                }
                m.levels[len].insert(ctx, counts);
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LmError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LmError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}
