//! Subword-augmented skip-gram embeddings.
//!
//! A word's input representation is the mean of its own vector and the
//! vectors of its hashed character n-gram buckets. Words absent from the
//! vocabulary are represented by their buckets alone, so every non-empty
//! string has a vector.
//!
//! Binary model layout (`CSEMB1`), all integers and floats little-endian:
//!
//! ```text
//! "CSEMB1"
//! config   : u32 dim, u32 window, u32 negatives, u32 epochs, f64 initial_lr,
//!            u32 min_ngram, u32 max_ngram, u64 bucket_count, f64 subsample_t,
//!            u64 min_word_count, u64 seed, u8 oov_combine (0 mean, 1 sum),
//!            u32 workers
//! vocab    : u64 n, then n x (u32 len, utf-8 bytes, u64 count)
//! matrices : word input, bucket, word output; each u64 rows, u64 cols,
//!            rows*cols f32 row-major
//! ```

mod compose;
mod ngram;
mod train;

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Vocabulary};
use crate::io::{BinReader, BinWriter};

pub use compose::{compose_corpus, CompositionKind, CompositionRecipe};
pub use ngram::{extract_ngrams, fnv1a_32, hash_ngram};
pub use train::{train_embeddings, train_embeddings_with_stats, TrainStats};

pub const EMBEDDING_MAGIC: &[u8; 6] = b"CSEMB1";

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("malformed embedding file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// How an out-of-vocabulary word combines its bucket vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OovCombine {
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub initial_lr: f64,
    pub min_ngram: usize,
    pub max_ngram: usize,
    pub bucket_count: usize,
    /// Frequent-word subsampling threshold; 0 disables subsampling.
    pub subsample_t: f64,
    pub min_word_count: usize,
    pub seed: u64,
    pub oov_combine: OovCombine,
    /// Number of training threads. 1 is deterministic; more threads share
    /// parameters without synchronization.
    pub workers: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            dim: 100,
            window: 5,
            negatives: 5,
            epochs: 5,
            initial_lr: 0.025,
            min_ngram: 3,
            max_ngram: 6,
            bucket_count: 100_000,
            subsample_t: 1e-4,
            min_word_count: 1,
            seed: 1,
            oov_combine: OovCombine::Mean,
            workers: 1,
        }
    }
}

impl EmbeddingConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        let bad = |m: &str| Err(EmbedError::Config(m.to_string()));
        if self.dim < 1 {
            return bad("dim must be at least 1");
        }
        if self.min_ngram < 1 || self.min_ngram > self.max_ngram {
            return bad("need 1 <= min_ngram <= max_ngram");
        }
        if self.bucket_count < 1 {
            return bad("bucket_count must be at least 1");
        }
        if self.window < 1 {
            return bad("window must be at least 1");
        }
        if self.workers < 1 {
            return bad("workers must be at least 1");
        }
        if self.min_word_count < 1 {
            return bad("min_word_count must be at least 1");
        }
        if !(self.initial_lr >= 0.0) || !(self.subsample_t >= 0.0) {
            return bad("learning rate and subsampling threshold must be non-negative");
        }
        Ok(())
    }
}

/// Trained embedding model: word input vectors, n-gram bucket vectors and
/// word output (context) vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    config: EmbeddingConfig,
    vocab: Vocabulary,
    word_in: Vec<f32>,
    buckets: Vec<f32>,
    word_out: Vec<f32>,
    subwords: Vec<Vec<u32>>,
}

fn subword_table(vocab: &Vocabulary, config: &EmbeddingConfig) -> Vec<Vec<u32>> {
    vocab
        .words()
        .iter()
        .enumerate()
        .map(|(i, w)| {
            if i < 2 {
                Vec::new()
            } else {
                ngram::bucket_ids(w, config.min_ngram, config.max_ngram, config.bucket_count)
            }
        })
        .collect()
}

impl EmbeddingTable {
    /// Assembles a table from raw matrices (row-major, `dim` columns).
    pub fn from_parts(
        config: EmbeddingConfig,
        vocab: Vocabulary,
        word_in: Vec<f32>,
        buckets: Vec<f32>,
        word_out: Vec<f32>,
    ) -> Result<EmbeddingTable, EmbedError> {
        config.validate()?;
        let d = config.dim;
        if word_in.len() != vocab.len() * d
            || word_out.len() != vocab.len() * d
            || buckets.len() != config.bucket_count * d
        {
            return Err(EmbedError::Usage("matrix shapes do not match vocab/config".into()));
        }
        let subwords = subword_table(&vocab, &config);
        Ok(EmbeddingTable {
            config,
            vocab,
            word_in,
            buckets,
            word_out,
            subwords,
        })
    }

    pub fn config(&self) -> &EmbeddingConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn contains(&self, word: &str) -> bool {
        self.vocab.contains(word)
    }

    pub fn word_input_row(&self, idx: usize) -> &[f32] {
        let d = self.dim();
        &self.word_in[idx * d..(idx + 1) * d]
    }

    pub fn word_output_row(&self, idx: usize) -> &[f32] {
        let d = self.dim();
        &self.word_out[idx * d..(idx + 1) * d]
    }

    pub fn bucket_row(&self, b: usize) -> &[f32] {
        let d = self.dim();
        &self.buckets[b * d..(b + 1) * d]
    }

    pub fn bucket_row_mut(&mut self, b: usize) -> &mut [f32] {
        let d = self.dim();
        &mut self.buckets[b * d..(b + 1) * d]
    }

    pub fn word_input_row_mut(&mut self, idx: usize) -> &mut [f32] {
        let d = self.dim();
        &mut self.word_in[idx * d..(idx + 1) * d]
    }

    /// Bucket ids used to compose `word`.
    pub fn bucket_ids(&self, word: &str) -> Vec<u32> {
        match self.vocab.get(word) {
            Some(i) => self.subwords[i].clone(),
            None => ngram::bucket_ids(
                word,
                self.config.min_ngram,
                self.config.max_ngram,
                self.config.bucket_count,
            ),
        }
    }

    /// Composed vector of vocabulary entry `idx`.
    pub fn composed_row(&self, idx: usize) -> Vec<f32> {
        let mut v = self.word_input_row(idx).to_vec();
        let subs = &self.subwords[idx];
        for &b in subs {
            for (x, y) in v.iter_mut().zip(self.bucket_row(b as usize)) {
                *x += *y;
            }
        }
        let scale = 1.0 / (1 + subs.len()) as f32;
        v.iter_mut().for_each(|x| *x *= scale);
        v
    }

    /// Vector for any non-empty string: composed vector when in vocabulary,
    /// otherwise the mean (or sum, per config) of its bucket vectors.
    pub fn lookup(&self, word: &str) -> Vec<f32> {
        if let Some(i) = self.vocab.get(word) {
            return self.composed_row(i);
        }
        let ids = ngram::bucket_ids(
            word,
            self.config.min_ngram,
            self.config.max_ngram,
            self.config.bucket_count,
        );
        let mut v = vec![0.0f32; self.dim()];
        if ids.is_empty() {
            return v;
        }
        for &b in &ids {
            for (x, y) in v.iter_mut().zip(self.bucket_row(b as usize)) {
                *x += *y;
            }
        }
        if self.config.oov_combine == OovCombine::Mean {
            let scale = 1.0 / ids.len() as f32;
            v.iter_mut().for_each(|x| *x *= scale);
        }
        v
    }

    pub fn is_finite(&self) -> bool {
        self.word_in
            .iter()
            .chain(&self.buckets)
            .chain(&self.word_out)
            .all(|x| x.is_finite())
    }

    /// Applies `f` to every stored vector (word input, bucket and output rows).
    pub(crate) fn map_rows(&mut self, mut f: impl FnMut(&[f32]) -> Vec<f32>) {
        let d = self.dim();
        for m in [&mut self.word_in, &mut self.buckets, &mut self.word_out] {
            for row in m.chunks_exact_mut(d) {
                let out = f(row);
                row.copy_from_slice(&out);
            }
        }
    }

    /// Copy whose vocabulary vectors have zero mean and unit variance per
    /// dimension. The map is applied to word and bucket rows, so it commutes
    /// with mean composition and OOV vectors land in the same space.
    pub fn standardized(&self) -> EmbeddingTable {
        let d = self.dim();
        let n = self.vocab.len().saturating_sub(2);
        let mut mean = vec![0.0f64; d];
        let mut sq = vec![0.0f64; d];
        for i in 2..self.vocab.len() {
            for (k, &x) in self.composed_row(i).iter().enumerate() {
                mean[k] += x as f64;
                sq[k] += (x as f64) * (x as f64);
            }
        }
        let (shift, scale): (Vec<f32>, Vec<f32>) = (0..d)
            .map(|k| {
                if n == 0 {
                    return (0.0, 1.0);
                }
                let m = mean[k] / n as f64;
                let var = (sq[k] / n as f64 - m * m).max(0.0);
                let sd = if var > 1e-12 { var.sqrt() } else { 1.0 };
                (m as f32, (1.0 / sd) as f32)
            })
            .unzip();
        let mut out = self.clone();
        let map = |row: &mut [f32]| {
            for ((x, m), s) in row.iter_mut().zip(&shift).zip(&scale) {
                *x = (*x - m) * s;
            }
        };
        out.word_in.chunks_exact_mut(d).for_each(map);
        out.buckets.chunks_exact_mut(d).for_each(map);
        out
    }

    pub(crate) fn raw_parts(&self) -> (&[f32], &[f32], &[f32]) {
        (&self.word_in, &self.buckets, &self.word_out)
    }

    /// Text vector format: header `<vocab_size> <dim>` then one composed
    /// vector per word with 6 decimals.
    pub fn write_text<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{} {}", self.vocab.len() - 2, self.dim())?;
        for i in 2..self.vocab.len() {
            let v = self.composed_row(i);
            write!(out, "{}", self.vocab.word(i))?;
            for x in v {
                write!(out, " {:.6}", x)?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn write_binary<W: Write>(&self, out: W) -> io::Result<()> {
        let mut w = BinWriter::new(out);
        w.bytes(EMBEDDING_MAGIC)?;
        let c = &self.config;
        w.u32(c.dim as u32)?;
        w.u32(c.window as u32)?;
        w.u32(c.negatives as u32)?;
        w.u32(c.epochs as u32)?;
        w.f64(c.initial_lr)?;
        w.u32(c.min_ngram as u32)?;
        w.u32(c.max_ngram as u32)?;
        w.u64(c.bucket_count as u64)?;
        w.f64(c.subsample_t)?;
        w.u64(c.min_word_count as u64)?;
        w.u64(c.seed)?;
        w.u8(match c.oov_combine {
            OovCombine::Mean => 0,
            OovCombine::Sum => 1,
        })?;
        w.u32(c.workers as u32)?;
        w.u64(self.vocab.len() as u64)?;
        for (word, count) in self.vocab.words().iter().zip(self.vocab.counts()) {
            w.str(word)?;
            w.u64(*count)?;
        }
        let d = self.dim();
        w.matrix_f32(self.vocab.len(), d, self.word_in.iter().copied())?;
        w.matrix_f32(c.bucket_count, d, self.buckets.iter().copied())?;
        w.matrix_f32(self.vocab.len(), d, self.word_out.iter().copied())?;
        Ok(())
    }

    pub fn read_binary<R: Read>(input: R) -> Result<EmbeddingTable, EmbedError> {
        let mut r = BinReader::new(input);
        r.expect_magic(EMBEDDING_MAGIC)?;
        let config = EmbeddingConfig {
            dim: r.u32()? as usize,
            window: r.u32()? as usize,
            negatives: r.u32()? as usize,
            epochs: r.u32()? as usize,
            initial_lr: r.f64()?,
            min_ngram: r.u32()? as usize,
            max_ngram: r.u32()? as usize,
            bucket_count: r.u64()? as usize,
            subsample_t: r.f64()?,
            min_word_count: r.u64()? as usize,
            seed: r.u64()?,
            oov_combine: match r.u8()? {
                0 => OovCombine::Mean,
                1 => OovCombine::Sum,
                x => return Err(EmbedError::Format(format!("bad oov_combine code {x}"))),
            },
            workers: r.u32()? as usize,
        };
        let n = r.u64()? as usize;
        let mut words = Vec::with_capacity(n);
        let mut counts = Vec::with_capacity(n);
        for _ in 0..n {
            words.push(r.str()?);
            counts.push(r.u64()?);
        }
        if n < 2 {
            return Err(EmbedError::Format("vocabulary lacks special entries".into()));
        }
        let vocab = Vocabulary::from_parts(words, counts);
        let mut mat = |rows: usize| -> Result<Vec<f32>, EmbedError> {
            let (r_, c_, data) = r.matrix_f32()?;
            if r_ != rows || c_ != config.dim {
                return Err(EmbedError::Format(format!(
                    "matrix {r_}x{c_}, expected {rows}x{}",
                    config.dim
                )));
            }
            Ok(data)
        };
        let word_in = mat(n)?;
        let buckets = mat(config.bucket_count)?;
        let word_out = mat(n)?;
        EmbeddingTable::from_parts(config, vocab, word_in, buckets, word_out)
    }

    pub fn save(&self, path: &Path) -> Result<(), EmbedError> {
        let mut buf = Vec::new();
        self.write_binary(&mut buf)?;
        crate::io::publish_atomically(path, &buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<EmbeddingTable, EmbedError> {
        let bytes = fs::read(path)?;
        EmbeddingTable::read_binary(&bytes[..])
    }
}

/// Fraction of corpus tokens whose form is not in the table's vocabulary.
/// N-gram backoff does not count as coverage.
pub fn oov_rate(table: &EmbeddingTable, corpus: &Corpus) -> f64 {
    let total = corpus.token_count();
    if total == 0 {
        return 0.0;
    }
    let oov = corpus.tokens().filter(|t| !table.contains(t.form())).count();
    oov as f64 / total as f64
}
